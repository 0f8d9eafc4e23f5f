#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "apfl/errors.hpp"

namespace apfl {

// Partition of a flat weight vector into contiguous layer spans.
// `bounds` is ascending, starts at 0 and ends at the total length;
// `output_begin` is the first index belonging to the final output layer.
struct ParamLayout {
    std::vector<std::size_t> bounds;
    std::size_t output_begin = 0;

    std::size_t size() const { return bounds.empty() ? 0 : bounds.back(); }

    bool valid() const {
        if (bounds.size() < 2 || bounds.front() != 0) return false;
        for (std::size_t i = 1; i < bounds.size(); ++i)
            if (bounds[i] <= bounds[i - 1]) return false;
        if (output_begin >= size()) return false;
        // output layer must start on a span boundary
        for (std::size_t b : bounds)
            if (b == output_begin) return true;
        return false;
    }

    bool operator==(const ParamLayout&) const = default;
};

// Flat model weights; the unit of upload, aggregation, distance and broadcast.
struct ParamVector {
    std::vector<double> values;
    ParamLayout layout;

    std::size_t size() const { return values.size(); }

    bool finite() const {
        for (double v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void validate() const {
        if (values.empty()) throw RejectedInput("ParamVector: empty");
        if (layout.size() != values.size()) throw RejectedInput("ParamVector: layout does not cover values");
        if (!layout.valid()) throw RejectedInput("ParamVector: invalid layout");
        if (!finite()) throw RejectedInput("ParamVector: non-finite entry");
    }

    bool operator==(const ParamVector&) const = default;
};

inline double l1_distance(const ParamVector& a, const ParamVector& b) {
    if (a.values.size() != b.values.size() || a.layout != b.layout)
        throw RejectedInput("l1_distance: dimension or layout mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) sum += std::abs(a.values[i] - b.values[i]);
    return sum;
}

}  // namespace apfl
