#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "apfl/dataset.hpp"
#include "apfl/errors.hpp"
#include "apfl/rng.hpp"

namespace apfl {

// Generation plan for a synthetic non-IID population with known ground-truth
// cluster identities.
struct PopulationSpec {
    int clusters = 0;                              // ground-truth cluster count
    std::vector<int> clients_per_cluster;
    int feature_dim = 16;
    int classes = 0;
    int samples_per_client = 0;
    std::vector<std::vector<double>> class_skew;   // one length-J probability vector per cluster
    double noise_std = 0.35;
    std::uint64_t seed = 0;

    int total_clients() const { return std::accumulate(clients_per_cluster.begin(), clients_per_cluster.end(), 0); }

    void validate() const {
        if (clusters <= 0) throw RejectedInput("PopulationSpec: clusters must be positive");
        if (static_cast<int>(clients_per_cluster.size()) != clusters)
            throw RejectedInput("PopulationSpec: clients_per_cluster length != clusters");
        for (int n : clients_per_cluster)
            if (n <= 0) throw RejectedInput("PopulationSpec: zero clients in a cluster");
        if (feature_dim <= 0) throw RejectedInput("PopulationSpec: feature_dim must be positive");
        if (classes <= 0) throw RejectedInput("PopulationSpec: classes must be positive");
        if (samples_per_client <= 0) throw RejectedInput("PopulationSpec: zero samples per client");
        if (noise_std < 0.0) throw RejectedInput("PopulationSpec: negative noise_std");
        if (static_cast<int>(class_skew.size()) != clusters)
            throw RejectedInput("PopulationSpec: class_skew length != clusters");
        for (const auto& skew : class_skew) {
            if (static_cast<int>(skew.size()) != classes)
                throw RejectedInput("PopulationSpec: skew vector length != classes");
            double sum = 0.0;
            for (double p : skew) {
                if (p < 0.0) throw RejectedInput("PopulationSpec: negative skew entry");
                sum += p;
            }
            if (std::abs(sum - 1.0) > 1e-9) throw RejectedInput("PopulationSpec: skew must sum to 1");
        }
    }
};

// A mid-run change of one client's label preferences.
struct DriftSpec {
    int client_id = -1;
    double trigger_time = 0.0;
    std::vector<double> new_class_skew;

    void validate(int classes) const {
        if (trigger_time < 0.0) throw RejectedInput("DriftSpec: negative trigger time");
        if (static_cast<int>(new_class_skew.size()) != classes)
            throw RejectedInput("DriftSpec: skew length != classes");
        double sum = 0.0;
        for (double p : new_class_skew) {
            if (p < 0.0) throw RejectedInput("DriftSpec: negative skew entry");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw RejectedInput("DriftSpec: skew must sum to 1");
    }
};

// Per-(cluster, class) Gaussian means retained so drifted data can be redrawn
// from the same feature model.
struct Population {
    std::vector<LocalDataset> datasets;                          // per client
    std::vector<int> ground_truth;                               // cluster id per client
    std::vector<std::vector<std::vector<double>>> class_means;   // [cluster][class][dim]
    double noise_std = 0.0;
};

// Clients of one ground-truth cluster share a Gaussian mixture: one component
// per class, means drawn once per (cluster, class). Deterministic per seed.
inline Population generate_population(const PopulationSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    Population pop;
    pop.noise_std = spec.noise_std;
    pop.class_means.resize(static_cast<std::size_t>(spec.clusters));
    for (int g = 0; g < spec.clusters; ++g) {
        auto& means = pop.class_means[static_cast<std::size_t>(g)];
        means.resize(static_cast<std::size_t>(spec.classes));
        for (int j = 0; j < spec.classes; ++j) {
            means[static_cast<std::size_t>(j)].resize(static_cast<std::size_t>(spec.feature_dim));
            for (int d = 0; d < spec.feature_dim; ++d)
                means[static_cast<std::size_t>(j)][static_cast<std::size_t>(d)] = rng.normal();
        }
    }
    for (int g = 0; g < spec.clusters; ++g) {
        const auto& skew = spec.class_skew[static_cast<std::size_t>(g)];
        const auto& means = pop.class_means[static_cast<std::size_t>(g)];
        for (int c = 0; c < spec.clients_per_cluster[static_cast<std::size_t>(g)]; ++c) {
            LocalDataset data;
            data.num_classes = spec.classes;
            data.samples.resize(static_cast<std::size_t>(spec.samples_per_client));
            for (auto& s : data.samples) {
                s.label = static_cast<int>(rng.categorical(skew));
                const auto& mu = means[static_cast<std::size_t>(s.label)];
                s.features.resize(static_cast<std::size_t>(spec.feature_dim));
                for (int d = 0; d < spec.feature_dim; ++d)
                    s.features[static_cast<std::size_t>(d)] =
                        mu[static_cast<std::size_t>(d)] + spec.noise_std * rng.normal();
            }
            pop.datasets.push_back(std::move(data));
            pop.ground_truth.push_back(g);
        }
    }
    return pop;
}

// Redraws every sample with labels from the new skew and class-conditional
// features from the given mixture. Sample count is preserved.
inline LocalDataset apply_drift(const LocalDataset& dataset, const DriftSpec& spec,
                                const std::vector<std::vector<double>>& class_means, double noise_std,
                                Rng& rng) {
    spec.validate(dataset.num_classes);
    if (static_cast<int>(class_means.size()) != dataset.num_classes)
        throw RejectedInput("apply_drift: class_means length != classes");
    LocalDataset out;
    out.num_classes = dataset.num_classes;
    out.samples.resize(dataset.samples.size());
    const int dim = dataset.feature_dim();
    for (auto& s : out.samples) {
        s.label = static_cast<int>(rng.categorical(spec.new_class_skew));
        const auto& mu = class_means[static_cast<std::size_t>(s.label)];
        s.features.resize(static_cast<std::size_t>(dim));
        for (int d = 0; d < dim; ++d)
            s.features[static_cast<std::size_t>(d)] = mu[static_cast<std::size_t>(d)] + noise_std * rng.normal();
    }
    return out;
}

// Chi-squared statistic between two count histograms with the same smoothing
// rule the feedback path uses (expected counts floored at 0.5).
inline double chi_squared_statistic(const std::vector<std::int64_t>& observed,
                                    const std::vector<std::int64_t>& expected) {
    if (observed.size() != expected.size()) throw RejectedInput("chi_squared_statistic: length mismatch");
    double stat = 0.0;
    for (std::size_t j = 0; j < observed.size(); ++j) {
        const double o = static_cast<double>(observed[j]);
        const double e = std::max(static_cast<double>(expected[j]), 0.5);
        stat += (o - e) * (o - e) / e;
    }
    return stat;
}

}  // namespace apfl
