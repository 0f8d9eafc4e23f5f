#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "apfl/errors.hpp"

namespace apfl {

struct Sample {
    std::vector<double> features;
    int label = 0;
};

// One client's labelled data. All feature vectors share a dimension and every
// label is in [0, num_classes).
struct LocalDataset {
    std::vector<Sample> samples;
    int num_classes = 0;

    std::size_t size() const { return samples.size(); }

    int feature_dim() const { return samples.empty() ? 0 : static_cast<int>(samples.front().features.size()); }

    void validate() const {
        if (num_classes <= 0) throw RejectedInput("LocalDataset: num_classes must be positive");
        const int dim = feature_dim();
        for (const Sample& s : samples) {
            if (static_cast<int>(s.features.size()) != dim)
                throw RejectedInput("LocalDataset: inconsistent feature dimension");
            if (s.label < 0 || s.label >= num_classes)
                throw RejectedInput("LocalDataset: label out of range");
        }
    }
};

// Observed class counts alongside mean predicted class probabilities.
struct LabelDistributions {
    std::vector<std::int64_t> hard;
    std::vector<double> soft;
};

inline std::vector<std::int64_t> label_histogram(const LocalDataset& data) {
    std::vector<std::int64_t> counts(static_cast<std::size_t>(data.num_classes), 0);
    for (const Sample& s : data.samples) counts[static_cast<std::size_t>(s.label)]++;
    return counts;
}

// Text serialization: "feature_dim J n" header line, then one "label f0 f1 ..."
// line per sample. %.17g keeps features exact on reload.
inline std::string serialize_dataset(const LocalDataset& data) {
    std::string out;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%d %d %zu\n", data.feature_dim(), data.num_classes, data.samples.size());
    out += buf;
    for (const Sample& s : data.samples) {
        std::snprintf(buf, sizeof(buf), "%d", s.label);
        out += buf;
        for (double f : s.features) {
            std::snprintf(buf, sizeof(buf), " %.17g", f);
            out += buf;
        }
        out += '\n';
    }
    return out;
}

inline LocalDataset deserialize_dataset(const std::string& text) {
    std::istringstream in(text);
    int dim = 0, classes = 0;
    std::size_t n = 0;
    if (!(in >> dim >> classes >> n)) throw RejectedInput("dataset: bad header");
    LocalDataset data;
    data.num_classes = classes;
    data.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        Sample& s = data.samples[i];
        if (!(in >> s.label)) throw RejectedInput("dataset: truncated row");
        s.features.resize(static_cast<std::size_t>(dim));
        for (int d = 0; d < dim; ++d)
            if (!(in >> s.features[static_cast<std::size_t>(d)])) throw RejectedInput("dataset: truncated row");
    }
    data.validate();
    return data;
}

inline void save_dataset(const LocalDataset& data, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RejectedInput("dataset: cannot open " + path);
    out << serialize_dataset(data);
}

inline LocalDataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RejectedInput("dataset: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_dataset(ss.str());
}

}  // namespace apfl
