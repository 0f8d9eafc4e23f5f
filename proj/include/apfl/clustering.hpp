#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <vector>

#include "apfl/dataset.hpp"
#include "apfl/errors.hpp"
#include "apfl/model.hpp"
#include "apfl/params.hpp"

namespace apfl {

// One personalized branch: center weights, member set, version counter and the
// set of members restricted to last-layer-only training.
struct ClusterState {
    int id = -1;
    ParamVector center;
    std::set<int> members;
    std::uint64_t version = 0;
    double created_at = 0.0;
    double updated_at = 0.0;
    std::set<int> partial_ft_members;
};

struct FeedbackReport {
    int client_id = -1;
    int cluster_id = -1;
    double score = 0.0;
    double computed_at = 0.0;
};

struct AssignResult {
    int cluster_id = -1;
    bool created = false;
};

// Assigns an arriving model to a branch. While fewer than `initial_clusters`
// branches exist a new one is created with center u; afterwards the nearest
// center by L1 wins, ties to the lowest cluster id.
inline AssignResult init_or_assign(std::map<int, ClusterState>& clusters, int client_id, const ParamVector& u,
                                   int initial_clusters, int& next_cluster_id, double now) {
    u.validate();
    if (static_cast<int>(clusters.size()) < initial_clusters) {
        const int id = next_cluster_id++;
        ClusterState state;
        state.id = id;
        state.center = u;
        state.members.insert(client_id);
        state.created_at = now;
        state.updated_at = now;
        clusters.emplace(id, std::move(state));
        return {id, true};
    }
    int best = -1;
    double best_dist = 0.0;
    for (const auto& [id, state] : clusters) {
        const double dist = l1_distance(u, state.center);
        if (best < 0 || dist < best_dist) {
            best = id;
            best_dist = dist;
        }
    }
    clusters.at(best).members.insert(client_id);
    return {best, false};
}

// Population variance of a probability vector's entries.
inline double soft_variance(const std::vector<double>& soft) {
    if (soft.empty()) return 0.0;
    double mean = 0.0;
    for (double v : soft) mean += v;
    mean /= static_cast<double>(soft.size());
    double var = 0.0;
    for (double v : soft) var += (v - mean) * (v - mean);
    return var / static_cast<double>(soft.size());
}

// Feedback formula: chi-squared distance between predicted and actual label
// counts, scaled by the soft-label variance as a training-sufficiency proxy.
// Expected counts are floored at 0.5 so absent classes never divide by zero.
inline double feedback_score(const std::vector<std::int64_t>& predicted_counts,
                             const std::vector<std::int64_t>& actual_counts,
                             const std::vector<double>& soft) {
    if (predicted_counts.size() != actual_counts.size())
        throw RejectedInput("feedback_score: histogram length mismatch");
    double chi2 = 0.0;
    for (std::size_t j = 0; j < predicted_counts.size(); ++j) {
        const double diff = static_cast<double>(predicted_counts[j]) - static_cast<double>(actual_counts[j]);
        const double denom = std::max(static_cast<double>(actual_counts[j]), 0.5);
        chi2 += diff * diff / denom;
    }
    return chi2 * soft_variance(soft);
}

inline double compute_feedback(const ParamVector& center, const LocalDataset& data) {
    if (data.samples.empty()) throw RejectedInput("compute_feedback: empty dataset");
    const LabelDistributions dist = infer_distributions(center, data);
    return feedback_score(dist.hard, label_histogram(data), dist.soft);
}

struct MergeAction {
    int main_id = -1;   // the branch with more members keeps its identity
    int aux_id = -1;
};

struct ExpandAction {
    int parent_id = -1;
    std::vector<int> members;
};

struct RefinementActions {
    std::vector<MergeAction> merges;
    std::vector<ExpandAction> expansions;

    bool empty() const { return merges.empty() && expansions.empty(); }
};

// Symmetric KL divergence between probability vectors, eps-clamped.
inline double symmetric_kl(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw RejectedInput("symmetric_kl: length mismatch");
    double total = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
        const double a = std::max(p[j], 1e-12);
        const double b = std::max(q[j], 1e-12);
        total += a * std::log(a / b) + b * std::log(b / a);
    }
    return total;
}

// Periodic refinement pass. Returns actions without applying them.
//
// Expansion: per cluster, members whose feedback strictly exceeds the 80th
// percentile (nearest-rank) are marked, each into its own new cluster so
// misfits of different origins never share one; equal scores never expand.
// Merging: while the active cluster count exceeds hm * C, the pair
// with the smallest symmetric KL divergence between the centers' soft-label
// distributions on the shared probe set is marked; each cluster joins at most
// one merge per pass, and merging clusters are excluded from expansion.
//
// `merge_eligible`, when given, restricts merge candidates; the coordination
// layer uses it to keep freshly expanded clusters out of merges until they
// have aggregated enough uploads to be judged on their own output.
// `merge_threshold` caps the divergence a forced merge may bridge: above it
// the pair is left alone even when the count exceeds the limit, which stops
// concentrated clusters from being absorbed into spread-out ones.
// `score_resolution` is the tolerance under which two feedback scores count
// as equal for the tie rule; scores within it of the percentile never expand.
inline RefinementActions refine(const std::map<int, ClusterState>& clusters,
                                const std::vector<FeedbackReport>& feedback, int merge_factor,
                                int initial_clusters,
                                const std::map<int, std::vector<double>>& probe_soft,
                                const std::set<int>* merge_eligible = nullptr,
                                double merge_threshold = std::numeric_limits<double>::infinity(),
                                double score_resolution = 0.0) {
    RefinementActions actions;

    // merges
    const int limit = merge_factor * initial_clusters;
    int excess = static_cast<int>(clusters.size()) - limit;
    std::set<int> merging;
    if (excess > 0) {
        struct Pair {
            double divergence;
            int a, b;
        };
        std::vector<Pair> pairs;
        for (auto ia = clusters.begin(); ia != clusters.end(); ++ia) {
            auto ib = ia;
            for (++ib; ib != clusters.end(); ++ib) {
                if (merge_eligible && (!merge_eligible->count(ia->first) || !merge_eligible->count(ib->first)))
                    continue;
                const auto pa = probe_soft.find(ia->first);
                const auto pb = probe_soft.find(ib->first);
                if (pa == probe_soft.end() || pb == probe_soft.end())
                    throw RejectedInput("refine: missing probe distribution for a cluster");
                pairs.push_back({symmetric_kl(pa->second, pb->second), ia->first, ib->first});
            }
        }
        std::sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) {
            if (x.divergence != y.divergence) return x.divergence < y.divergence;
            if (x.a != y.a) return x.a < y.a;
            return x.b < y.b;
        });
        for (const Pair& p : pairs) {
            if (excess <= 0) break;
            if (p.divergence >= merge_threshold) break;
            if (merging.count(p.a) || merging.count(p.b)) continue;
            const auto& ca = clusters.at(p.a);
            const auto& cb = clusters.at(p.b);
            MergeAction m;
            if (cb.members.size() > ca.members.size()) {
                m.main_id = p.b;
                m.aux_id = p.a;
            } else {
                m.main_id = p.a;
                m.aux_id = p.b;
            }
            actions.merges.push_back(m);
            merging.insert(p.a);
            merging.insert(p.b);
            excess--;
        }
    }

    // expansions (per cluster, strict 80th percentile)
    std::map<int, std::vector<const FeedbackReport*>> by_cluster;
    for (const FeedbackReport& fb : feedback) {
        const auto it = clusters.find(fb.cluster_id);
        if (it == clusters.end() || !it->second.members.count(fb.client_id)) continue;
        by_cluster[fb.cluster_id].push_back(&fb);
    }
    for (auto& [cid, reports] : by_cluster) {
        if (merging.count(cid) || reports.size() < 2) continue;
        std::vector<double> scores;
        scores.reserve(reports.size());
        for (const auto* r : reports) scores.push_back(r->score);
        std::sort(scores.begin(), scores.end());
        const std::size_t rank =
            static_cast<std::size_t>(std::ceil(0.8 * static_cast<double>(scores.size())));
        const double threshold = scores[rank - 1] + score_resolution;
        std::vector<int> marked;
        for (const auto* r : reports)
            if (r->score > threshold) marked.push_back(r->client_id);
        std::sort(marked.begin(), marked.end());
        for (int client : marked) actions.expansions.push_back({cid, {client}});
    }
    return actions;
}

// Attention-weighted blend of two centers given a prior direction (aux - main)
// and a posterior direction from local training. Coordinates where the two
// directions agree move toward the auxiliary center; alpha stays in [0, 1].
inline ParamVector merge_by_direction(const ParamVector& v_main, const ParamVector& v_aux,
                                      const std::vector<double>& posterior_direction) {
    if (v_main.values.size() != v_aux.values.size() || v_main.layout != v_aux.layout)
        throw RejectedInput("merge_by_direction: dimension mismatch");
    if (posterior_direction.size() != v_main.values.size())
        throw RejectedInput("merge_by_direction: direction length mismatch");
    const std::size_t n = v_main.values.size();
    std::vector<double> agreement(n);
    double peak = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double prior = v_aux.values[k] - v_main.values[k];
        agreement[k] = prior * posterior_direction[k];
        peak = std::max(peak, agreement[k]);
    }
    ParamVector merged = v_main;
    if (peak <= 0.0) return merged;
    for (std::size_t k = 0; k < n; ++k) {
        const double alpha = std::max(agreement[k], 0.0) / peak;
        merged.values[k] = alpha * v_aux.values[k] + (1.0 - alpha) * v_main.values[k];
    }
    return merged;
}

// Full merge: the posterior direction comes from one local training pass of
// the main center on `posterior_data`.
inline ParamVector merge_centers(const ParamVector& v_main, const ParamVector& v_aux,
                                 const LocalDataset& posterior_data, double lr, int batch_size = 16) {
    if (posterior_data.samples.empty()) throw RejectedInput("merge_centers: empty posterior dataset");
    const ParamVector trained = sgd_train(v_main, posterior_data, 1, lr, TrainMode::Full, batch_size);
    std::vector<double> posterior(v_main.values.size());
    for (std::size_t k = 0; k < posterior.size(); ++k)
        posterior[k] = trained.values[k] - v_main.values[k];
    return merge_by_direction(v_main, v_aux, posterior);
}

// Splits `new_members` out of `parent` into a fresh cluster whose center is
// the parent center adapted by a short last-layer-only pass. The moved members
// stay restricted to last-layer training until the next merge is applied.
inline ClusterState expand_cluster(ClusterState& parent, const std::vector<int>& new_members,
                                   const LocalDataset& adaptation_data, double lr, int new_id, double now,
                                   int adapt_epochs = 8, int batch_size = 16) {
    if (new_members.empty()) throw RejectedInput("expand_cluster: no members to move");
    for (int m : new_members)
        if (!parent.members.count(m)) throw RejectedInput("expand_cluster: member not in parent cluster");
    if (adaptation_data.samples.empty()) throw RejectedInput("expand_cluster: empty adaptation dataset");
    ClusterState child;
    child.id = new_id;
    child.center = sgd_train(parent.center, adaptation_data, adapt_epochs, lr, TrainMode::LastLayerOnly,
                             batch_size);
    child.created_at = now;
    child.updated_at = now;
    for (int m : new_members) {
        parent.members.erase(m);
        parent.partial_ft_members.erase(m);
        child.members.insert(m);
        child.partial_ft_members.insert(m);
    }
    return child;
}

}  // namespace apfl
