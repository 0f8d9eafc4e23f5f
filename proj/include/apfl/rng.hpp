#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace apfl {

// Seeded random source. The engine sequence is fixed by the standard; the
// distribution transforms are implemented here so that streams do not depend
// on the standard library's distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal, Box-Muller, pairs cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * uniform();
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    std::size_t index(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

    // Class index sampled from a probability vector by inverse CDF.
    std::size_t categorical(const std::vector<double>& probs) {
        const double u = uniform();
        double acc = 0.0;
        for (std::size_t j = 0; j + 1 < probs.size(); ++j) {
            acc += probs[j];
            if (u < acc) return j;
        }
        return probs.empty() ? 0 : probs.size() - 1;
    }

    std::uint64_t raw() { return engine_(); }

    // Independent child stream; consumes one draw from this stream.
    Rng fork(std::uint64_t salt) {
        return Rng(engine_() ^ (salt * 0x9E3779B97F4A7C15ull));
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace apfl
