#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "apfl/errors.hpp"
#include "apfl/rng.hpp"

namespace apfl {

// Two-layer Elman recurrent classifier over a scalar sequence, softmax pair
// output (index 1 = broadcast). Inputs are log1p-compressed so large L1
// change magnitudes do not saturate the tanh units.
class BroadcastPredictor {
public:
    BroadcastPredictor() = default;

    BroadcastPredictor(int hidden, std::uint64_t seed) : hidden_(hidden) {
        if (hidden <= 0) throw RejectedInput("BroadcastPredictor: hidden must be positive");
        const auto h = static_cast<std::size_t>(hidden);
        weights_.assign(h + 3 * h * h + 2 * h + 2 * h + 2, 0.0);
        Rng rng(seed);
        const double scale = 1.0 / std::sqrt(static_cast<double>(hidden));
        // input column gets unit scale, square matrices 1/sqrt(h)
        for (std::size_t k = 0; k < h; ++k) weights_[wx1() + k] = 0.5 * rng.normal();
        for (std::size_t k = 0; k < h * h; ++k) weights_[wh1() + k] = scale * rng.normal();
        for (std::size_t k = 0; k < h * h; ++k) weights_[w12() + k] = scale * rng.normal();
        for (std::size_t k = 0; k < h * h; ++k) weights_[wh2() + k] = scale * rng.normal();
        for (std::size_t k = 0; k < 2 * h; ++k) weights_[wo() + k] = scale * rng.normal();
    }

    int hidden() const { return hidden_; }
    bool initialized() const { return hidden_ > 0; }

    bool pretrained = false;

    // P(broadcast) for a sequence given oldest first. Deterministic.
    double predict(const std::vector<double>& sequence) const {
        return output_pair(sequence)[1];
    }

    // Softmax output pair (no-broadcast, broadcast).
    std::array<double, 2> output_pair(const std::vector<double>& sequence) const {
        Cache c;
        forward(sequence, c);
        return {c.probs[0], c.probs[1]};
    }

    double loss(const std::vector<double>& sequence, bool broadcast_label) const {
        Cache c;
        forward(sequence, c);
        const double p = std::max(c.probs[broadcast_label ? 1 : 0], 1e-300);
        return -std::log(p);
    }

    // One backpropagation-through-time step against cross-entropy; returns the
    // pre-update loss.
    double train_step(const std::vector<double>& sequence, bool broadcast_label, double lr) {
        Cache c;
        forward(sequence, c);
        const double p = std::max(c.probs[broadcast_label ? 1 : 0], 1e-300);
        const double loss_value = -std::log(p);
        if (!std::isfinite(loss_value)) throw DivergedPredictor("broadcast predictor loss is not finite");

        const auto h = static_cast<std::size_t>(hidden_);
        const std::size_t steps = sequence.size();
        std::vector<double> grad(weights_.size(), 0.0);

        double dlogits[2];
        dlogits[0] = c.probs[0] - (broadcast_label ? 0.0 : 1.0);
        dlogits[1] = c.probs[1] - (broadcast_label ? 1.0 : 0.0);

        std::vector<double> dh1_next(h, 0.0), dh2_next(h, 0.0);
        for (int out = 0; out < 2; ++out) {
            grad[bo() + static_cast<std::size_t>(out)] += dlogits[out];
            for (std::size_t k = 0; k < h; ++k) {
                grad[wo() + static_cast<std::size_t>(out) * h + k] += dlogits[out] * c.h2[(steps - 1) * h + k];
                dh2_next[k] += dlogits[out] * weights_[wo() + static_cast<std::size_t>(out) * h + k];
            }
        }

        std::vector<double> da1(h), da2(h);
        for (std::size_t t = steps; t-- > 0;) {
            const double x = compress(sequence[t]);
            for (std::size_t k = 0; k < h; ++k) {
                const double act = c.h2[t * h + k];
                da2[k] = dh2_next[k] * (1.0 - act * act);
            }
            std::fill(dh2_next.begin(), dh2_next.end(), 0.0);
            for (std::size_t k = 0; k < h; ++k) {
                grad[b2() + k] += da2[k];
                for (std::size_t m = 0; m < h; ++m) {
                    grad[w12() + k * h + m] += da2[k] * c.h1[t * h + m];
                    dh1_next[m] += da2[k] * weights_[w12() + k * h + m];
                    const double h2_prev = t > 0 ? c.h2[(t - 1) * h + m] : 0.0;
                    grad[wh2() + k * h + m] += da2[k] * h2_prev;
                    if (t > 0) dh2_next[m] += da2[k] * weights_[wh2() + k * h + m];
                }
            }
            for (std::size_t k = 0; k < h; ++k) {
                const double act = c.h1[t * h + k];
                da1[k] = dh1_next[k] * (1.0 - act * act);
            }
            std::fill(dh1_next.begin(), dh1_next.end(), 0.0);
            for (std::size_t k = 0; k < h; ++k) {
                grad[b1() + k] += da1[k];
                grad[wx1() + k] += da1[k] * x;
                for (std::size_t m = 0; m < h; ++m) {
                    const double h1_prev = t > 0 ? c.h1[(t - 1) * h + m] : 0.0;
                    grad[wh1() + k * h + m] += da1[k] * h1_prev;
                    if (t > 0) dh1_next[m] += da1[k] * weights_[wh1() + k * h + m];
                }
            }
        }

        for (std::size_t k = 0; k < weights_.size(); ++k) weights_[k] -= lr * grad[k];
        return loss_value;
    }

    // Weight-space mean of two predictors with matching dimensions.
    static BroadcastPredictor average(const BroadcastPredictor& a, const BroadcastPredictor& b) {
        if (a.hidden_ != b.hidden_) throw RejectedInput("BroadcastPredictor::average: width mismatch");
        BroadcastPredictor out = a;
        for (std::size_t k = 0; k < out.weights_.size(); ++k)
            out.weights_[k] = 0.5 * (a.weights_[k] + b.weights_[k]);
        out.pretrained = a.pretrained || b.pretrained;
        return out;
    }

    std::vector<double>& raw_weights() { return weights_; }
    const std::vector<double>& raw_weights() const { return weights_; }

private:
    struct Cache {
        std::vector<double> h1, h2;   // steps x hidden activations
        double probs[2] = {0.0, 0.0};
    };

    static double compress(double v) { return std::log1p(v); }

    // flat weight offsets
    std::size_t wx1() const { return 0; }
    std::size_t wh1() const { return static_cast<std::size_t>(hidden_); }
    std::size_t b1() const { return wh1() + static_cast<std::size_t>(hidden_) * static_cast<std::size_t>(hidden_); }
    std::size_t w12() const { return b1() + static_cast<std::size_t>(hidden_); }
    std::size_t wh2() const { return w12() + static_cast<std::size_t>(hidden_) * static_cast<std::size_t>(hidden_); }
    std::size_t b2() const { return wh2() + static_cast<std::size_t>(hidden_) * static_cast<std::size_t>(hidden_); }
    std::size_t wo() const { return b2() + static_cast<std::size_t>(hidden_); }
    std::size_t bo() const { return wo() + 2 * static_cast<std::size_t>(hidden_); }

    void forward(const std::vector<double>& sequence, Cache& c) const {
        if (hidden_ <= 0) throw RejectedInput("BroadcastPredictor: not initialized");
        if (sequence.empty()) throw RejectedInput("BroadcastPredictor: empty sequence");
        const auto h = static_cast<std::size_t>(hidden_);
        const std::size_t steps = sequence.size();
        c.h1.assign(steps * h, 0.0);
        c.h2.assign(steps * h, 0.0);
        for (std::size_t t = 0; t < steps; ++t) {
            const double x = compress(sequence[t]);
            for (std::size_t k = 0; k < h; ++k) {
                double a = weights_[b1() + k] + weights_[wx1() + k] * x;
                if (t > 0) {
                    const std::size_t row = wh1() + k * h;
                    for (std::size_t m = 0; m < h; ++m) a += weights_[row + m] * c.h1[(t - 1) * h + m];
                }
                c.h1[t * h + k] = std::tanh(a);
            }
            for (std::size_t k = 0; k < h; ++k) {
                double a = weights_[b2() + k];
                const std::size_t row12 = w12() + k * h;
                for (std::size_t m = 0; m < h; ++m) a += weights_[row12 + m] * c.h1[t * h + m];
                if (t > 0) {
                    const std::size_t row = wh2() + k * h;
                    for (std::size_t m = 0; m < h; ++m) a += weights_[row + m] * c.h2[(t - 1) * h + m];
                }
                c.h2[t * h + k] = std::tanh(a);
            }
        }
        double z0 = weights_[bo()];
        double z1 = weights_[bo() + 1];
        for (std::size_t k = 0; k < h; ++k) {
            z0 += weights_[wo() + k] * c.h2[(steps - 1) * h + k];
            z1 += weights_[wo() + h + k] * c.h2[(steps - 1) * h + k];
        }
        const double m = std::max(z0, z1);
        const double e0 = std::exp(z0 - m);
        const double e1 = std::exp(z1 - m);
        c.probs[0] = e0 / (e0 + e1);
        c.probs[1] = e1 / (e0 + e1);
    }

    int hidden_ = 0;
    std::vector<double> weights_;
};

}  // namespace apfl
