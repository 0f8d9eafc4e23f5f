#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "apfl/broadcast.hpp"
#include "apfl/clustering.hpp"
#include "apfl/dataset.hpp"
#include "apfl/errors.hpp"
#include "apfl/model.hpp"
#include "apfl/params.hpp"
#include "apfl/rng.hpp"

namespace apfl {

struct VersionedModel {
    ParamVector params;
    int cluster_id = -1;
    std::uint64_t version = 0;
    double produced_at = 0.0;
};

struct StalenessMetrics {
    std::uint64_t q_max = 0;
    double q_avg = 0.0;
    double rate_proxy = 0.0;   // sqrt(q_max * q_avg), reported for comparison only
};

// Per-upload version gaps. Every accepted push records exactly one entry;
// nothing is ever dropped for being stale.
class StalenessLedger {
public:
    void record(std::uint64_t staleness) {
        q_max_ = std::max(q_max_, staleness);
        sum_ += static_cast<double>(staleness);
        count_++;
    }

    std::size_t count() const { return count_; }

    StalenessMetrics metrics() const {
        if (count_ == 0) return {};
        const double avg = sum_ / static_cast<double>(count_);
        return {q_max_, avg, std::sqrt(static_cast<double>(q_max_) * avg)};
    }

private:
    std::uint64_t q_max_ = 0;
    double sum_ = 0.0;
    std::size_t count_ = 0;
};

struct ClientRecord {
    int id = -1;
    int device_class = 4;                 // 1..5
    std::optional<int> cluster_id;
    std::uint64_t base_version = 0;       // last branch version synced to the client
    bool partial_ft = false;
    bool needs_fetch = false;             // set when refinement moved the client
    bool staleness_reset = false;         // next push counts as a fresh join
};

// Message records mirrored by any future service port.
struct PushAck {
    int cluster_id = -1;
    std::uint64_t version = 0;
    std::uint64_t staleness = 0;
    bool newly_assigned = false;
};

struct BroadcastOrder {
    int cluster_id = -1;
    std::uint64_t version = 0;
    ParamVector params;
    std::vector<int> members;
};

struct PushResult {
    PushAck ack;
    BroadcastDecision decision;
    std::vector<BroadcastOrder> broadcasts;
    bool refinement_due = false;
};

struct PollResponse {
    bool fetch = false;
    bool partial_ft = false;
    int cluster_id = -1;
    std::uint64_t version = 0;
    ParamVector params;
};

struct ServerConfig {
    int initial_clusters = 2;     // C
    int merge_factor = 2;         // hm: merge when active clusters exceed hm * C
    int min_history = 10;         // history capacity floor; actual is max(floor, cluster size)
    double mix_rate = 0.5;        // eta
    int refine_period = 10;       // aggregations per cluster between refinements
    int adapt_epochs = 8;         // last-layer transfer pass for expanded clusters
    double merge_threshold = 0.5; // max probe-soft divergence a forced merge may bridge
    double score_resolution = 0.02;   // feedback scores within this count as tied
    BroadcastMode broadcast_mode = BroadcastMode::Predictor;
    double predictor_lr = 0.01;
    int predictor_hidden = 128;
    double local_lr = 0.05;       // merge posterior / expansion adaptation passes
    int local_batch = 16;
    int probe_samples = 256;
    std::uint64_t seed = 1;
};

struct RefinementOutcome {
    RefinementActions actions;
    std::vector<BroadcastOrder> broadcasts;
    std::size_t clusters_after = 0;
    bool merged = false;
};

// In-cluster asynchronous aggregation: mix the upload into the center and
// advance the branch version.
inline void aggregate(ClusterState& cluster, const ParamVector& upload, double mix_rate, double now) {
    if (upload.values.size() != cluster.center.values.size() || upload.layout != cluster.center.layout)
        throw RejectedInput("aggregate: dimension mismatch");
    for (std::size_t k = 0; k < cluster.center.values.size(); ++k)
        cluster.center.values[k] = (1.0 - mix_rate) * cluster.center.values[k] + mix_rate * upload.values[k];
    cluster.version++;
    cluster.updated_at = now;
}

// Versioned-branch server: one branch per cluster, aggregation on arrival,
// broadcast decisions per aggregation, periodic merge/expand refinement.
//
// Concurrency contract (realized trivially by single-threaded event
// execution here): writes to a branch are mutually exclusive, reads of a
// branch head see a consistent version, and cross-branch operations take
// both branches in ascending-id order.
class Server {
public:
    using DataAccessor = std::function<const LocalDataset&(int)>;

    Server(ServerConfig cfg, ModelSpec model, DataAccessor data_of,
           BroadcastPredictor pretrained = BroadcastPredictor())
        : cfg_(cfg), model_(model), data_of_(std::move(data_of)) {
        if (pretrained.initialized()) {
            base_predictor_ = std::move(pretrained);
        } else {
            base_predictor_ = BroadcastPredictor(cfg_.predictor_hidden, cfg_.seed ^ 0x9e3779b9ull);
        }
        Rng rng(cfg_.seed ^ 0x7f4a7c15ull);
        probe_.num_classes = model_.classes;
        probe_.samples.resize(static_cast<std::size_t>(cfg_.probe_samples));
        for (auto& s : probe_.samples) {
            s.label = 0;
            s.features.resize(static_cast<std::size_t>(model_.input_dim));
            for (auto& f : s.features) f = rng.normal();
        }
    }

    void register_client(int id, int device_class) {
        ClientRecord rec;
        rec.id = id;
        rec.device_class = device_class;
        clients_[id] = rec;
    }

    // Harvested (history, label) pairs for predictor pretraining.
    void set_harvest_sink(std::vector<LabeledSequence>* sink) { harvest_ = sink; }

    PushResult push(int client_id, const ParamVector& upload, std::uint64_t base_version, double now) {
        auto it = clients_.find(client_id);
        if (it == clients_.end()) throw RejectedInput("push: unknown client");
        upload.validate();
        if (!model_.matches(upload)) throw RejectedInput("push: parameter shape mismatch");
        ClientRecord& client = it->second;

        PushResult res;
        if (!client.cluster_id) {
            const AssignResult assigned =
                init_or_assign(clusters_, client_id, upload, cfg_.initial_clusters, next_cluster_id_, now);
            client.cluster_id = assigned.cluster_id;
            if (assigned.created) {
                Side side;
                side.controller.emplace(
                    std::max(cfg_.min_history, 1), base_predictor_,
                    clusters_.at(assigned.cluster_id).center);
                sides_.emplace(assigned.cluster_id, std::move(side));
            }
            // the upload was not trained from this branch: join at head
            client.base_version = clusters_.at(assigned.cluster_id).version;
            base_version = client.base_version;
            client.staleness_reset = false;
            res.ack.newly_assigned = true;
        }

        const int cid = *client.cluster_id;
        ClusterState& cluster = clusters_.at(cid);
        Side& side = sides_.at(cid);

        std::uint64_t staleness = cluster.version - std::min(base_version, cluster.version);
        if (client.staleness_reset) {
            staleness = 0;
            client.staleness_reset = false;
        }
        ledger_.record(staleness);
        accepted_pushes_++;

        const ParamVector before = cluster.center;
        aggregate(cluster, upload, cfg_.mix_rate, now);
        side.last_uploader = client_id;
        side.controller->fit_capacity(static_cast<int>(cluster.members.size()), cfg_.min_history);
        res.decision = side.controller->on_aggregation(before, cluster.center, cfg_.broadcast_mode,
                                                       cfg_.predictor_lr, now, harvest_);
        if (res.decision.broadcast) {
            side.last_broadcast_version = cluster.version;
            res.broadcasts.push_back(make_order(cid));
        }

        side.aggs_since_refine++;
        side.aggs_lifetime++;
        if (side.aggs_since_refine >= cfg_.refine_period) refinement_due_ = true;
        res.refinement_due = refinement_due_;
        res.ack.cluster_id = cid;
        res.ack.version = cluster.version;
        res.ack.staleness = staleness;
        return res;
    }

    // Client-initiated fetch: branch head when it moved past the client's base
    // version, otherwise no-change. Never blocks.
    std::optional<VersionedModel> pull(int client_id) {
        auto it = clients_.find(client_id);
        if (it == clients_.end()) throw RejectedInput("pull: unknown client");
        ClientRecord& client = it->second;
        if (!client.cluster_id) throw RejectedInput("pull: client not assigned to a branch");
        const ClusterState& cluster = clusters_.at(*client.cluster_id);
        if (cluster.version <= client.base_version) return std::nullopt;
        client.base_version = cluster.version;
        client.needs_fetch = false;
        return VersionedModel{cluster.center, cluster.id, cluster.version, cluster.updated_at};
    }

    // Cadence query: fetches only when the client missed a broadcast on its
    // branch or a refinement moved it. Keeps "never" mode genuinely silent.
    PollResponse poll(int client_id) {
        auto it = clients_.find(client_id);
        if (it == clients_.end()) throw RejectedInput("poll: unknown client");
        ClientRecord& client = it->second;
        PollResponse resp;
        if (!client.cluster_id) return resp;
        const int cid = *client.cluster_id;
        const ClusterState& cluster = clusters_.at(cid);
        const Side& side = sides_.at(cid);
        resp.cluster_id = cid;
        resp.partial_ft = client.partial_ft;
        const bool due = client.needs_fetch || client.base_version < side.last_broadcast_version;
        if (due && cluster.version > client.base_version) {
            resp.fetch = true;
            resp.version = cluster.version;
            resp.params = cluster.center;
            client.base_version = cluster.version;
        }
        client.needs_fetch = false;
        return resp;
    }

    // A broadcast payload reached the client.
    void confirm_delivery(int client_id, std::uint64_t version) {
        auto it = clients_.find(client_id);
        if (it == clients_.end()) throw RejectedInput("confirm_delivery: unknown client");
        it->second.base_version = std::max(it->second.base_version, version);
    }

    StalenessMetrics staleness_metrics() const { return ledger_.metrics(); }
    const StalenessLedger& ledger() const { return ledger_; }
    std::size_t accepted_pushes() const { return accepted_pushes_; }
    bool refinement_due() const { return refinement_due_; }

    std::vector<FeedbackReport> collect_feedback(double now) const {
        std::vector<FeedbackReport> feedback;
        for (const auto& [cid, cluster] : clusters_)
            for (int member : cluster.members)
                feedback.push_back({member, cid, compute_feedback(cluster.center, data_of_(member)), now});
        return feedback;
    }

    RefinementActions plan_refinement(const std::vector<FeedbackReport>& feedback) const {
        std::map<int, std::vector<double>> probe_soft;
        for (const auto& [cid, cluster] : clusters_)
            probe_soft[cid] = infer_distributions(cluster.center, probe_).soft;
        // a cluster may merge only once enough uploads have shaped its center
        std::set<int> mature;
        for (const auto& [cid, side] : sides_) {
            const auto members = static_cast<int>(clusters_.at(cid).members.size());
            if (side.aggs_lifetime >= std::min(cfg_.refine_period, members)) mature.insert(cid);
        }
        return refine(clusters_, feedback, cfg_.merge_factor, cfg_.initial_clusters, probe_soft, &mature,
                      cfg_.merge_threshold, cfg_.score_resolution);
    }

    // Executes planned actions. Throws StaleActions when an action references
    // state that no longer exists; the caller may replan and retry.
    std::vector<BroadcastOrder> apply_refinement(const RefinementActions& actions, double now) {
        for (const MergeAction& m : actions.merges)
            if (!clusters_.count(m.main_id) || !clusters_.count(m.aux_id))
                throw StaleActions("apply_refinement: merge references a removed cluster");

        std::vector<BroadcastOrder> orders;
        std::map<int, int> merged_into;
        for (const MergeAction& m : actions.merges) {
            ClusterState& main = clusters_.at(m.main_id);
            ClusterState& aux = clusters_.at(m.aux_id);
            Side& main_side = sides_.at(m.main_id);
            Side& aux_side = sides_.at(m.aux_id);

            const LocalDataset& posterior = data_of_(posterior_source(m.main_id));
            main.center = merge_centers(main.center, aux.center, posterior, cfg_.local_lr, cfg_.local_batch);
            main.version++;
            main.updated_at = now;
            for (int member : aux.members) {
                main.members.insert(member);
                ClientRecord& rec = clients_.at(member);
                rec.cluster_id = m.main_id;
                rec.staleness_reset = true;
            }
            const int capacity = std::max(cfg_.min_history, static_cast<int>(main.members.size()));
            main_side.controller = BroadcastController::after_merge(*main_side.controller,
                                                                    *aux_side.controller, main.center, capacity);
            main_side.last_broadcast_version = main.version;
            orders.push_back(make_order(m.main_id));   // merged centers broadcast immediately
            merged_into[m.aux_id] = m.main_id;
            clusters_.erase(m.aux_id);
            sides_.erase(m.aux_id);
        }
        if (!actions.merges.empty()) {
            // partial fine-tuning restrictions lift at the merge refinement
            for (auto& [cid, cluster] : clusters_) cluster.partial_ft_members.clear();
            for (auto& [cid, rec] : clients_) rec.partial_ft = false;
        }

        for (const ExpandAction& e : actions.expansions) {
            int target = e.parent_id;
            if (auto it = merged_into.find(target); it != merged_into.end()) target = it->second;
            if (!clusters_.count(target)) throw StaleActions("apply_refinement: expansion parent is gone");
            ClusterState& parent = clusters_.at(target);
            for (int member : e.members)
                if (!parent.members.count(member))
                    throw StaleActions("apply_refinement: expansion member left the parent");
            if (e.members.size() >= parent.members.size()) continue;   // never empty a branch

            LocalDataset pooled;
            pooled.num_classes = model_.classes;
            for (int member : e.members) {
                const LocalDataset& d = data_of_(member);
                pooled.samples.insert(pooled.samples.end(), d.samples.begin(), d.samples.end());
            }
            const ParamVector parent_center = parent.center;
            const int new_id = next_cluster_id_++;
            ClusterState child = expand_cluster(parent, e.members, pooled, cfg_.local_lr, new_id, now,
                                                cfg_.adapt_epochs, cfg_.local_batch);
            child.version = 1;   // the adapted center counts as the first change
            Side side;
            side.controller = BroadcastController::after_expand(
                *sides_.at(target).controller, child.center, parent_center,
                std::max(cfg_.min_history, static_cast<int>(child.members.size())));
            for (int member : e.members) {
                ClientRecord& rec = clients_.at(member);
                rec.cluster_id = new_id;
                rec.partial_ft = true;
                rec.needs_fetch = true;
                rec.base_version = 0;
                rec.staleness_reset = true;
            }
            clusters_.emplace(new_id, std::move(child));
            sides_.emplace(new_id, std::move(side));
        }
        return orders;
    }

    RefinementOutcome run_refinement(double now) {
        RefinementOutcome out;
        out.actions = plan_refinement(collect_feedback(now));
        out.broadcasts = apply_refinement(out.actions, now);
        out.clusters_after = clusters_.size();
        out.merged = !out.actions.merges.empty();
        for (auto& [cid, side] : sides_) side.aggs_since_refine = 0;
        refinement_due_ = false;
        return out;
    }

    const std::map<int, ClusterState>& clusters() const { return clusters_; }
    const std::map<int, ClientRecord>& clients() const { return clients_; }
    const BroadcastController& controller(int cluster_id) const { return *sides_.at(cluster_id).controller; }
    std::uint64_t last_broadcast_version(int cluster_id) const {
        return sides_.at(cluster_id).last_broadcast_version;
    }
    const LocalDataset& probe_set() const { return probe_; }

private:
    struct Side {
        std::optional<BroadcastController> controller;
        std::uint64_t last_broadcast_version = 0;
        int aggs_since_refine = 0;
        int aggs_lifetime = 0;
        std::optional<int> last_uploader;
    };

    BroadcastOrder make_order(int cluster_id) const {
        const ClusterState& cluster = clusters_.at(cluster_id);
        BroadcastOrder order;
        order.cluster_id = cluster_id;
        order.version = cluster.version;
        order.params = cluster.center;
        order.members.assign(cluster.members.begin(), cluster.members.end());
        return order;
    }

    int posterior_source(int cluster_id) const {
        const Side& side = sides_.at(cluster_id);
        if (side.last_uploader) return *side.last_uploader;
        return *clusters_.at(cluster_id).members.begin();
    }

    ServerConfig cfg_;
    ModelSpec model_;
    DataAccessor data_of_;
    BroadcastPredictor base_predictor_;
    LocalDataset probe_;
    std::map<int, ClusterState> clusters_;
    std::map<int, Side> sides_;
    std::map<int, ClientRecord> clients_;
    StalenessLedger ledger_;
    int next_cluster_id_ = 0;
    std::size_t accepted_pushes_ = 0;
    bool refinement_due_ = false;
    std::vector<LabeledSequence>* harvest_ = nullptr;
};

}  // namespace apfl
