#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "apfl/errors.hpp"
#include "apfl/params.hpp"
#include "apfl/rnn.hpp"

namespace apfl {

// Ring buffer of the most recent per-aggregation L1 change magnitudes,
// zero-padded at the old end until filled. Length is always the capacity.
class ChangeHistory {
public:
    explicit ChangeHistory(int capacity) {
        if (capacity <= 0) throw RejectedInput("ChangeHistory: capacity must be positive");
        entries_.assign(static_cast<std::size_t>(capacity), 0.0);
    }

    void record(double delta) {
        if (!(delta >= 0.0) || !std::isfinite(delta))
            throw RejectedInput("ChangeHistory: delta must be finite and non-negative");
        entries_.erase(entries_.begin());
        entries_.push_back(delta);
    }

    // Keeps the newest entries when shrinking; zero-pads the old end when
    // growing.
    void set_capacity(int capacity) {
        if (capacity <= 0) throw RejectedInput("ChangeHistory: capacity must be positive");
        const auto k = static_cast<std::size_t>(capacity);
        if (k == entries_.size()) return;
        if (k < entries_.size()) {
            entries_.erase(entries_.begin(), entries_.end() - static_cast<std::ptrdiff_t>(k));
        } else {
            entries_.insert(entries_.begin(), k - entries_.size(), 0.0);
        }
    }

    int capacity() const { return static_cast<int>(entries_.size()); }

    // Oldest first.
    const std::vector<double>& entries() const { return entries_; }

    double variance() const {
        double mean = 0.0;
        for (double v : entries_) mean += v;
        mean /= static_cast<double>(entries_.size());
        double var = 0.0;
        for (double v : entries_) var += (v - mean) * (v - mean);
        return var / static_cast<double>(entries_.size());
    }

private:
    std::vector<double> entries_;
};

// Broadcast truth rule: worth broadcasting when the staleness gap accumulated
// by v_prev exceeds the change the next aggregation brings.
inline bool ground_truth_label(const ParamVector& v_prev, const ParamVector& v_next,
                               const ParamVector& v_broadcast) {
    return l1_distance(v_prev, v_broadcast) - l1_distance(v_prev, v_next) >= 0.0;
}

enum class BroadcastMode { Predictor, Oracle, OracleFlipped, Always, Never };

inline const char* to_string(BroadcastMode mode) {
    switch (mode) {
        case BroadcastMode::Predictor: return "predictor";
        case BroadcastMode::Oracle: return "oracle";
        case BroadcastMode::OracleFlipped: return "oracle-flipped";
        case BroadcastMode::Always: return "always";
        case BroadcastMode::Never: return "never";
    }
    return "?";
}

inline BroadcastMode parse_broadcast_mode(const std::string& text) {
    if (text == "predictor") return BroadcastMode::Predictor;
    if (text == "oracle") return BroadcastMode::Oracle;
    if (text == "oracle-flipped") return BroadcastMode::OracleFlipped;
    if (text == "always") return BroadcastMode::Always;
    if (text == "never") return BroadcastMode::Never;
    throw RejectedInput("unknown broadcast mode: " + text);
}

struct BroadcastDecision {
    bool broadcast = false;
    double probability = -1.0;   // predictor mode only
    double train_loss = -1.0;    // delayed-label step, predictor mode only
};

// A (history snapshot, label) pair harvested for predictor pretraining.
using LabeledSequence = std::pair<std::vector<double>, bool>;

// Merged history for a cluster merge: per-buffer quotas proportional to each
// buffer's variance (ceil on the first buffer at an even split), largest
// entries first within a buffer, chronological order preserved in the result.
inline ChangeHistory merge_histories(const ChangeHistory& a, const ChangeHistory& b, int capacity) {
    const double va = a.variance();
    const double vb = b.variance();
    const auto k = static_cast<std::size_t>(capacity);
    std::size_t quota_a;
    if (va + vb > 0.0) {
        quota_a = static_cast<std::size_t>(
            std::ceil(static_cast<double>(capacity) * va / (va + vb) - 1e-12));
    } else {
        quota_a = (k + 1) / 2;
    }
    quota_a = std::min(quota_a, k);
    std::size_t quota_b = k - quota_a;
    quota_a = std::min(quota_a, a.entries().size());
    quota_b = std::min(quota_b, b.entries().size());

    struct Tagged {
        std::size_t position;
        int source;
        double value;
    };
    auto select = [](const ChangeHistory& h, std::size_t quota, int source) {
        std::vector<Tagged> tagged;
        tagged.reserve(h.entries().size());
        for (std::size_t i = 0; i < h.entries().size(); ++i) tagged.push_back({i, source, h.entries()[i]});
        std::sort(tagged.begin(), tagged.end(), [](const Tagged& x, const Tagged& y) {
            if (x.value != y.value) return x.value > y.value;
            return x.position > y.position;
        });
        tagged.resize(quota);
        return tagged;
    };
    std::vector<Tagged> chosen = select(a, quota_a, 0);
    std::vector<Tagged> from_b = select(b, quota_b, 1);
    chosen.insert(chosen.end(), from_b.begin(), from_b.end());
    std::sort(chosen.begin(), chosen.end(), [](const Tagged& x, const Tagged& y) {
        if (x.position != y.position) return x.position < y.position;
        return x.source < y.source;
    });
    ChangeHistory merged(capacity);
    for (const Tagged& t : chosen) merged.record(t.value);
    return merged;
}

// Per-cluster broadcast state machine. Invoked once per completed aggregation;
// produces the broadcast decision and, in predictor mode, one delayed training
// step for the previous decision now that its ground truth is known.
class BroadcastController {
public:
    BroadcastController(int capacity, BroadcastPredictor predictor, ParamVector initial_center)
        : history_(capacity), predictor_(std::move(predictor)), v_broadcast_(std::move(initial_center)) {}

    BroadcastDecision on_aggregation(const ParamVector& before, const ParamVector& after,
                                     BroadcastMode mode, double predictor_lr, double now,
                                     std::vector<LabeledSequence>* harvest = nullptr) {
        BroadcastDecision decision;
        const bool truth = ground_truth_label(before, after, v_broadcast_);
        if (has_prev_) {
            if (harvest) harvest->push_back({prev_sequence_, truth});
            if (mode == BroadcastMode::Predictor)
                decision.train_loss = predictor_.train_step(prev_sequence_, truth, predictor_lr);
        }
        history_.record(l1_distance(after, before));
        switch (mode) {
            case BroadcastMode::Predictor:
                decision.probability = predictor_.predict(history_.entries());
                decision.broadcast = decision.probability >= 0.5;
                break;
            case BroadcastMode::Oracle: decision.broadcast = truth; break;
            case BroadcastMode::OracleFlipped: decision.broadcast = !truth; break;
            case BroadcastMode::Always: decision.broadcast = true; break;
            case BroadcastMode::Never: decision.broadcast = false; break;
        }
        if (decision.broadcast) {
            v_broadcast_ = after;
            last_decision_at_ = now;
        }
        prev_sequence_ = history_.entries();
        has_prev_ = true;
        return decision;
    }

    // History capacity tracks max(min_capacity, member count).
    void fit_capacity(int member_count, int min_capacity) {
        history_.set_capacity(std::max(min_capacity, member_count));
    }

    // Fresh state for an expanded cluster: zeroed history seeded with the
    // expansion's own change, inherited predictor weights, no broadcast.
    static BroadcastController after_expand(const BroadcastController& parent, const ParamVector& child_center,
                                            const ParamVector& parent_center, int capacity) {
        BroadcastController child(capacity, parent.predictor_, child_center);
        child.history_.record(l1_distance(child_center, parent_center));
        return child;
    }

    // Merged state: sampled history, weight-averaged predictor. The caller is
    // expected to broadcast the merged center immediately; the bookkeeping
    // already treats it as delivered.
    static BroadcastController after_merge(const BroadcastController& a, const BroadcastController& b,
                                           const ParamVector& merged_center, int capacity) {
        BroadcastController merged(capacity, BroadcastPredictor::average(a.predictor_, b.predictor_),
                                   merged_center);
        merged.history_ = merge_histories(a.history_, b.history_, capacity);
        return merged;
    }

    const ChangeHistory& history() const { return history_; }
    BroadcastPredictor& predictor() { return predictor_; }
    const BroadcastPredictor& predictor() const { return predictor_; }
    const ParamVector& last_broadcast_center() const { return v_broadcast_; }
    double last_decision_at() const { return last_decision_at_; }

    // Recomputed on demand, never cached.
    double accumulated_gap(const ParamVector& current_center) const {
        return l1_distance(current_center, v_broadcast_);
    }

private:
    ChangeHistory history_;
    BroadcastPredictor predictor_;
    ParamVector v_broadcast_;
    double last_decision_at_ = 0.0;
    std::vector<double> prev_sequence_;
    bool has_prev_ = false;
};

}  // namespace apfl
