#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "apfl/dataset.hpp"
#include "apfl/errors.hpp"
#include "apfl/params.hpp"
#include "apfl/rng.hpp"

namespace apfl {

enum class TrainMode { Full, LastLayerOnly };

// Dense softmax classifier over flat weights. hidden > 0 gives a two-layer
// MLP with ReLU; hidden == 0 gives a plain linear classifier.
//
// Flattening is layer-major, row-major within a layer:
//   MLP:    [W1 (hidden x in), b1 (hidden), W2 (classes x hidden), b2 (classes)]
//   linear: [W (classes x in), b (classes)]
// The output layer span starts at W2 (or W for the linear case).
struct ModelSpec {
    int input_dim = 0;
    int hidden = 16;
    int classes = 0;

    std::size_t param_count() const {
        const auto d = static_cast<std::size_t>(input_dim);
        const auto h = static_cast<std::size_t>(hidden);
        const auto j = static_cast<std::size_t>(classes);
        if (hidden == 0) return j * d + j;
        return h * d + h + j * h + j;
    }

    ParamLayout layout() const {
        const auto d = static_cast<std::size_t>(input_dim);
        const auto h = static_cast<std::size_t>(hidden);
        const auto j = static_cast<std::size_t>(classes);
        ParamLayout lay;
        if (hidden == 0) {
            lay.bounds = {0, j * d, j * d + j};
            lay.output_begin = 0;
        } else {
            lay.bounds = {0, h * d, h * d + h, h * d + h + j * h, h * d + h + j * h + j};
            lay.output_begin = h * d + h;
        }
        return lay;
    }

    ParamVector zero_params() const {
        ParamVector p;
        p.values.assign(param_count(), 0.0);
        p.layout = layout();
        return p;
    }

    // He-style scaled normal init; biases zero.
    ParamVector init_params(Rng& rng) const {
        ParamVector p = zero_params();
        const auto d = static_cast<std::size_t>(input_dim);
        const auto h = static_cast<std::size_t>(hidden);
        const auto j = static_cast<std::size_t>(classes);
        if (hidden == 0) {
            const double s = std::sqrt(2.0 / static_cast<double>(input_dim));
            for (std::size_t k = 0; k < j * d; ++k) p.values[k] = s * rng.normal();
        } else {
            const double s1 = std::sqrt(2.0 / static_cast<double>(input_dim));
            for (std::size_t k = 0; k < h * d; ++k) p.values[k] = s1 * rng.normal();
            const double s2 = std::sqrt(2.0 / static_cast<double>(hidden));
            const std::size_t w2 = h * d + h;
            for (std::size_t k = 0; k < j * h; ++k) p.values[w2 + k] = s2 * rng.normal();
        }
        return p;
    }

    bool matches(const ParamVector& p) const {
        return p.values.size() == param_count() && p.layout == layout();
    }
};

// Recovers the architecture from a parameter vector and a dataset shape.
inline ModelSpec infer_spec(const ParamVector& params, int feature_dim, int classes) {
    if (feature_dim <= 0 || classes <= 0) throw RejectedInput("infer_spec: bad dataset shape");
    if (params.layout.bounds.size() == 3) {
        ModelSpec spec{feature_dim, 0, classes};
        if (!spec.matches(params)) throw RejectedInput("infer_spec: params do not match a linear model");
        return spec;
    }
    if (params.layout.bounds.size() == 5) {
        const std::size_t h = params.layout.bounds[2] - params.layout.bounds[1];
        ModelSpec spec{feature_dim, static_cast<int>(h), classes};
        if (!spec.matches(params)) throw RejectedInput("infer_spec: params do not match an MLP");
        return spec;
    }
    throw RejectedInput("infer_spec: unrecognised layout");
}

namespace detail {

inline void softmax_inplace(std::vector<double>& z) {
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
        v = std::exp(v - m);
        sum += v;
    }
    for (double& v : z) v /= sum;
}

struct ForwardCache {
    std::vector<double> hidden_pre;   // pre-activation, MLP only
    std::vector<double> hidden_act;
    std::vector<double> probs;
};

inline void forward(const ModelSpec& spec, const std::vector<double>& w, const std::vector<double>& x,
                    ForwardCache& c) {
    const auto d = static_cast<std::size_t>(spec.input_dim);
    const auto j = static_cast<std::size_t>(spec.classes);
    c.probs.assign(j, 0.0);
    if (spec.hidden == 0) {
        const std::size_t boff = j * d;
        for (std::size_t cj = 0; cj < j; ++cj) {
            double z = w[boff + cj];
            const std::size_t row = cj * d;
            for (std::size_t i = 0; i < d; ++i) z += w[row + i] * x[i];
            c.probs[cj] = z;
        }
    } else {
        const auto h = static_cast<std::size_t>(spec.hidden);
        const std::size_t b1 = h * d;
        const std::size_t w2 = b1 + h;
        const std::size_t b2 = w2 + j * h;
        c.hidden_pre.assign(h, 0.0);
        c.hidden_act.assign(h, 0.0);
        for (std::size_t hh = 0; hh < h; ++hh) {
            double a = w[b1 + hh];
            const std::size_t row = hh * d;
            for (std::size_t i = 0; i < d; ++i) a += w[row + i] * x[i];
            c.hidden_pre[hh] = a;
            c.hidden_act[hh] = a > 0.0 ? a : 0.0;
        }
        for (std::size_t cj = 0; cj < j; ++cj) {
            double z = w[b2 + cj];
            const std::size_t row = w2 + cj * h;
            for (std::size_t hh = 0; hh < h; ++hh) z += w[row + hh] * c.hidden_act[hh];
            c.probs[cj] = z;
        }
    }
    softmax_inplace(c.probs);
}

// Mean cross-entropy over samples [first, last); gradient accumulated into
// `grad` when non-null (same length as weights, caller-zeroed).
inline double range_loss_grad(const ModelSpec& spec, const std::vector<double>& w, const LocalDataset& data,
                              std::size_t first, std::size_t last, std::vector<double>* grad) {
    const auto d = static_cast<std::size_t>(spec.input_dim);
    const auto j = static_cast<std::size_t>(spec.classes);
    const auto h = static_cast<std::size_t>(spec.hidden);
    const double inv_n = 1.0 / static_cast<double>(last - first);
    double loss = 0.0;
    ForwardCache c;
    std::vector<double> dz(j), dhid;
    for (std::size_t idx = first; idx < last; ++idx) {
        const Sample& s = data.samples[idx];
        forward(spec, w, s.features, c);
        const double p = std::max(c.probs[static_cast<std::size_t>(s.label)], 1e-300);
        loss -= std::log(p) * inv_n;
        if (!grad) continue;
        for (std::size_t cj = 0; cj < j; ++cj)
            dz[cj] = (c.probs[cj] - (static_cast<int>(cj) == s.label ? 1.0 : 0.0)) * inv_n;
        std::vector<double>& g = *grad;
        if (spec.hidden == 0) {
            const std::size_t boff = j * d;
            for (std::size_t cj = 0; cj < j; ++cj) {
                const std::size_t row = cj * d;
                for (std::size_t i = 0; i < d; ++i) g[row + i] += dz[cj] * s.features[i];
                g[boff + cj] += dz[cj];
            }
        } else {
            const std::size_t b1 = h * d;
            const std::size_t w2 = b1 + h;
            const std::size_t b2 = w2 + j * h;
            dhid.assign(h, 0.0);
            for (std::size_t cj = 0; cj < j; ++cj) {
                const std::size_t row = w2 + cj * h;
                for (std::size_t hh = 0; hh < h; ++hh) {
                    g[row + hh] += dz[cj] * c.hidden_act[hh];
                    dhid[hh] += dz[cj] * w[row + hh];
                }
                g[b2 + cj] += dz[cj];
            }
            for (std::size_t hh = 0; hh < h; ++hh) {
                if (c.hidden_pre[hh] <= 0.0) continue;
                const std::size_t row = hh * d;
                for (std::size_t i = 0; i < d; ++i) g[row + i] += dhid[hh] * s.features[i];
                g[b1 + hh] += dhid[hh];
            }
        }
    }
    return loss;
}

inline double batch_loss_grad(const ModelSpec& spec, const std::vector<double>& w, const LocalDataset& data,
                              std::vector<double>* grad) {
    return range_loss_grad(spec, w, data, 0, data.samples.size(), grad);
}

}  // namespace detail

// Deterministic local training: mini-batch gradient steps on the mean
// cross-entropy, samples taken in dataset order (no shuffling, so identical
// inputs give bit-identical outputs). batch_size <= 0 trains full-batch. In
// LastLayerOnly mode entries below layout.output_begin are never touched.
inline ParamVector sgd_train(const ParamVector& params, const LocalDataset& data, int epochs, double lr,
                             TrainMode mode = TrainMode::Full, int batch_size = 16) {
    params.validate();
    data.validate();
    if (data.samples.empty()) throw RejectedInput("sgd_train: empty dataset");
    if (epochs < 0) throw RejectedInput("sgd_train: negative epochs");
    if (lr < 0.0) throw RejectedInput("sgd_train: negative learning rate");
    const ModelSpec spec = infer_spec(params, data.feature_dim(), data.num_classes);
    ParamVector out = params;
    const std::size_t start = mode == TrainMode::LastLayerOnly ? out.layout.output_begin : 0;
    const std::size_t n = data.samples.size();
    const std::size_t step = batch_size <= 0 ? n : static_cast<std::size_t>(batch_size);
    std::vector<double> grad(out.values.size());
    for (int e = 0; e < epochs; ++e) {
        for (std::size_t first = 0; first < n; first += step) {
            const std::size_t last = std::min(first + step, n);
            std::fill(grad.begin(), grad.end(), 0.0);
            const double loss = detail::range_loss_grad(spec, out.values, data, first, last, &grad);
            if (!std::isfinite(loss)) throw DivergedTraining(e);
            for (std::size_t k = start; k < out.values.size(); ++k) out.values[k] -= lr * grad[k];
        }
    }
    return out;
}

// Hard counts are argmax tallies (ties resolve to the lowest class index);
// soft is the per-class mean of the softmax outputs.
inline LabelDistributions infer_distributions(const ParamVector& params, const LocalDataset& data) {
    params.validate();
    data.validate();
    if (data.samples.empty()) throw RejectedInput("infer_distributions: empty dataset");
    const ModelSpec spec = infer_spec(params, data.feature_dim(), data.num_classes);
    LabelDistributions dist;
    dist.hard.assign(static_cast<std::size_t>(data.num_classes), 0);
    dist.soft.assign(static_cast<std::size_t>(data.num_classes), 0.0);
    detail::ForwardCache c;
    const double inv_n = 1.0 / static_cast<double>(data.samples.size());
    for (const Sample& s : data.samples) {
        detail::forward(spec, params.values, s.features, c);
        std::size_t best = 0;
        for (std::size_t j = 1; j < c.probs.size(); ++j)
            if (c.probs[j] > c.probs[best]) best = j;
        dist.hard[best]++;
        for (std::size_t j = 0; j < c.probs.size(); ++j) dist.soft[j] += c.probs[j] * inv_n;
    }
    return dist;
}

inline double accuracy(const ParamVector& params, const LocalDataset& data) {
    if (data.samples.empty()) throw RejectedInput("accuracy: empty dataset");
    const ModelSpec spec = infer_spec(params, data.feature_dim(), data.num_classes);
    detail::ForwardCache c;
    std::size_t correct = 0;
    for (const Sample& s : data.samples) {
        detail::forward(spec, params.values, s.features, c);
        std::size_t best = 0;
        for (std::size_t j = 1; j < c.probs.size(); ++j)
            if (c.probs[j] > c.probs[best]) best = j;
        if (static_cast<int>(best) == s.label) correct++;
    }
    return static_cast<double>(correct) / static_cast<double>(data.samples.size());
}

inline double mean_loss(const ParamVector& params, const LocalDataset& data) {
    const ModelSpec spec = infer_spec(params, data.feature_dim(), data.num_classes);
    return detail::batch_loss_grad(spec, params.values, data, nullptr);
}

// Worst relative error between the analytic batch gradient and central finite
// differences (step 1e-4, denominator max(1, |g|)).
inline double gradient_check(const ParamVector& params, const LocalDataset& data) {
    params.validate();
    data.validate();
    if (data.samples.empty()) throw RejectedInput("gradient_check: empty dataset");
    const ModelSpec spec = infer_spec(params, data.feature_dim(), data.num_classes);
    std::vector<double> grad(params.values.size(), 0.0);
    detail::batch_loss_grad(spec, params.values, data, &grad);
    const double step = 1e-4;
    double worst = 0.0;
    std::vector<double> w = params.values;
    for (std::size_t k = 0; k < w.size(); ++k) {
        const double orig = w[k];
        w[k] = orig + step;
        const double lp = detail::batch_loss_grad(spec, w, data, nullptr);
        w[k] = orig - step;
        const double lm = detail::batch_loss_grad(spec, w, data, nullptr);
        w[k] = orig;
        const double fd = (lp - lm) / (2.0 * step);
        const double rel = std::abs(grad[k] - fd) / std::max(1.0, std::abs(fd));
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace apfl
