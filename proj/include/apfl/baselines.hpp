#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <vector>

#include "apfl/clustering.hpp"
#include "apfl/config.hpp"
#include "apfl/coordination.hpp"
#include "apfl/sim.hpp"

namespace apfl {

// Individual training, no federation, no network traffic.
inline RunTrace run_standalone(const ExperimentConfig& cfg) {
    SimWorld world(cfg);
    EventQueue queue;
    const double budget = cfg.time_budget_s;
    bool stop_new_rounds = false;
    double end_time = 0.0;
    for (std::size_t i = 0; i < cfg.drifts.size(); ++i) {
        SimEvent ev;
        ev.at = cfg.drifts[i].trigger_time;
        ev.kind = EventKind::DriftTrigger;
        ev.drift_index = static_cast<int>(i);
        queue.push(std::move(ev));
    }
    for (const auto& c : world.clients())
        queue.push(SimEvent(world.train_time(c.id), EventKind::TrainingComplete, c.id));
    while (!queue.empty() && queue.top().at <= budget) {
        const SimEvent ev = queue.pop();
        end_time = ev.at;
        if (ev.kind == EventKind::DriftTrigger) {
            world.apply_drift_now(ev.drift_index, ev.at, 0);
            continue;
        }
        world.train_client(ev.client);
        world.log_row(ev.at, to_string(ev.kind), ev.client, -1, -1, 0);
        if (world.target_reached()) stop_new_rounds = true;
        const double next = ev.at + world.train_time(ev.client);
        if (!stop_new_rounds && next <= budget + 0.0)
            queue.push(SimEvent(next, EventKind::TrainingComplete, ev.client));
    }
    return world.finish("standalone", end_time, StalenessMetrics{}, 0, 0, 0, {});
}

// Synchronous federated averaging: a global barrier per round, uniform
// averaging, simultaneous broadcast to every client.
inline RunTrace run_sync_fedavg(const ExperimentConfig& cfg) {
    SimWorld world(cfg);
    EventQueue queue;
    const double budget = cfg.time_budget_s;
    const int n = cfg.total_clients();
    ParamVector global = world.init_params();
    std::vector<ParamVector> uploads(static_cast<std::size_t>(n));
    int collected = 0;
    StalenessLedger ledger;
    std::size_t pushes = 0;
    bool stop_new_rounds = false;
    double end_time = 0.0;

    for (std::size_t i = 0; i < cfg.drifts.size(); ++i) {
        SimEvent ev;
        ev.at = cfg.drifts[i].trigger_time;
        ev.kind = EventKind::DriftTrigger;
        ev.drift_index = static_cast<int>(i);
        queue.push(std::move(ev));
    }
    for (const auto& c : world.clients())
        queue.push(SimEvent(world.train_time(c.id), EventKind::TrainingComplete, c.id));

    while (!queue.empty() && queue.top().at <= budget) {
        const SimEvent ev = queue.pop();
        end_time = ev.at;
        switch (ev.kind) {
            case EventKind::TrainingComplete: {
                world.train_client(ev.client);
                world.log_row(ev.at, to_string(ev.kind), ev.client, 0, -1, 1);
                world.record_up(ev.at, ev.client);
                queue.push(SimEvent(ev.at + world.up_time(), EventKind::UploadArrive, ev.client));
                break;
            }
            case EventKind::UploadArrive: {
                uploads[static_cast<std::size_t>(ev.client)] =
                    world.clients()[static_cast<std::size_t>(ev.client)].local_params;
                ledger.record(0);
                pushes++;
                collected++;
                world.log_row(ev.at, to_string(ev.kind), ev.client, 0, 0, 1);
                if (collected == n) {   // barrier: average and broadcast to all
                    collected = 0;
                    for (std::size_t k = 0; k < global.values.size(); ++k) {
                        double sum = 0.0;
                        for (const ParamVector& u : uploads) sum += u.values[k];
                        global.values[k] = sum / static_cast<double>(n);
                    }
                    auto payload = std::make_shared<const ParamVector>(global);
                    for (int i = 0; i < n; ++i) {
                        world.record_down(ev.at, i);
                        SimEvent deliver;
                        deliver.at = ev.at + world.down_time();
                        deliver.kind = EventKind::BroadcastDeliver;
                        deliver.client = i;
                        deliver.payload = payload;
                        queue.push(std::move(deliver));
                    }
                }
                break;
            }
            case EventKind::BroadcastDeliver: {
                auto& c = world.clients()[static_cast<std::size_t>(ev.client)];
                c.local_params = *ev.payload;
                world.refresh_accuracy(ev.client);
                world.log_row(ev.at, to_string(ev.kind), ev.client, 0, -1, 1);
                if (world.target_reached()) stop_new_rounds = true;
                if (!stop_new_rounds)
                    queue.push(SimEvent(ev.at + world.train_time(ev.client), EventKind::TrainingComplete, ev.client));
                break;
            }
            case EventKind::DriftTrigger: world.apply_drift_now(ev.drift_index, ev.at, 1); break;
            default: break;
        }
    }
    return world.finish("sync-fedavg", end_time, ledger.metrics(), pushes, ledger.count(), 1, {});
}

// Asynchronous single-model baseline: aggregate each upload on arrival with a
// staleness-decayed rate and unicast the updated model back to the uploader.
inline RunTrace run_async_decay(const ExperimentConfig& cfg) {
    SimWorld world(cfg);
    EventQueue queue;
    const double budget = cfg.time_budget_s;
    ParamVector global = world.init_params();
    std::uint64_t version = 0;
    std::vector<std::uint64_t> base(static_cast<std::size_t>(cfg.total_clients()), 0);
    StalenessLedger ledger;
    std::size_t pushes = 0;
    bool stop_new_rounds = false;
    double end_time = 0.0;

    for (std::size_t i = 0; i < cfg.drifts.size(); ++i) {
        SimEvent ev;
        ev.at = cfg.drifts[i].trigger_time;
        ev.kind = EventKind::DriftTrigger;
        ev.drift_index = static_cast<int>(i);
        queue.push(std::move(ev));
    }
    for (const auto& c : world.clients())
        queue.push(SimEvent(world.train_time(c.id), EventKind::TrainingComplete, c.id));

    while (!queue.empty() && queue.top().at <= budget) {
        const SimEvent ev = queue.pop();
        end_time = ev.at;
        switch (ev.kind) {
            case EventKind::TrainingComplete: {
                world.train_client(ev.client);
                world.log_row(ev.at, to_string(ev.kind), ev.client, 0, -1, 1);
                world.record_up(ev.at, ev.client);
                queue.push(SimEvent(ev.at + world.up_time(), EventKind::UploadArrive, ev.client));
                break;
            }
            case EventKind::UploadArrive: {
                const auto idx = static_cast<std::size_t>(ev.client);
                const std::uint64_t staleness = version - std::min(base[idx], version);
                const double alpha = cfg.async_alpha0 *
                                     std::pow(static_cast<double>(staleness) + 1.0, -cfg.async_decay_exponent);
                const ParamVector& u = world.clients()[idx].local_params;
                for (std::size_t k = 0; k < global.values.size(); ++k)
                    global.values[k] = (1.0 - alpha) * global.values[k] + alpha * u.values[k];
                version++;
                ledger.record(staleness);
                pushes++;
                world.log_row(ev.at, to_string(ev.kind), ev.client, 0,
                              static_cast<std::int64_t>(staleness), 1);
                world.record_down(ev.at, ev.client);   // unicast to the uploader only
                SimEvent deliver;
                deliver.at = ev.at + world.down_time();
                deliver.kind = EventKind::BroadcastDeliver;
                deliver.client = ev.client;
                deliver.version = version;
                deliver.payload = std::make_shared<const ParamVector>(global);
                queue.push(std::move(deliver));
                break;
            }
            case EventKind::BroadcastDeliver: {
                auto& c = world.clients()[static_cast<std::size_t>(ev.client)];
                c.local_params = *ev.payload;
                base[static_cast<std::size_t>(ev.client)] = ev.version;
                world.refresh_accuracy(ev.client);
                world.log_row(ev.at, to_string(ev.kind), ev.client, 0, -1, 1);
                if (world.target_reached()) stop_new_rounds = true;
                if (!stop_new_rounds)
                    queue.push(SimEvent(ev.at + world.train_time(ev.client), EventKind::TrainingComplete, ev.client));
                break;
            }
            case EventKind::DriftTrigger: world.apply_drift_now(ev.drift_index, ev.at, 1); break;
            default: break;
        }
    }
    return world.finish("async-decay", end_time, ledger.metrics(), pushes, ledger.count(), 1, {});
}

namespace detail {

// Batch clustering over one round of uploads: farthest-point seeding in
// arrival order, Lloyd iterations under L1 assignment, then KL-divergence
// merging of near-duplicate clusters (and down to the hm * C cap).
inline std::vector<int> batch_cluster(const std::vector<ParamVector>& uploads,
                                      const std::vector<int>& arrival_order, const LocalDataset& probe,
                                      int max_clusters, double merge_tau,
                                      std::vector<ParamVector>* centers_out) {
    const int n = static_cast<int>(uploads.size());
    const int k = std::min(max_clusters, n);

    std::vector<int> seeds = {arrival_order.front()};
    while (static_cast<int>(seeds.size()) < k) {
        int best = -1;
        double best_dist = -1.0;
        for (int i = 0; i < n; ++i) {
            double nearest = std::numeric_limits<double>::max();
            for (int s : seeds) nearest = std::min(nearest, l1_distance(uploads[static_cast<std::size_t>(i)],
                                                                        uploads[static_cast<std::size_t>(s)]));
            if (nearest > best_dist) {
                best_dist = nearest;
                best = i;
            }
        }
        seeds.push_back(best);
    }

    std::vector<ParamVector> centers;
    for (int s : seeds) centers.push_back(uploads[static_cast<std::size_t>(s)]);
    std::vector<int> assign(static_cast<std::size_t>(n), 0);
    for (int pass = 0; pass < 10; ++pass) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_dist = l1_distance(uploads[static_cast<std::size_t>(i)], centers[0]);
            for (int c = 1; c < static_cast<int>(centers.size()); ++c) {
                const double d = l1_distance(uploads[static_cast<std::size_t>(i)],
                                             centers[static_cast<std::size_t>(c)]);
                if (d < best_dist) {
                    best_dist = d;
                    best = c;
                }
            }
            if (assign[static_cast<std::size_t>(i)] != best) {
                assign[static_cast<std::size_t>(i)] = best;
                changed = true;
            }
        }
        std::vector<int> counts(centers.size(), 0);
        std::vector<ParamVector> sums(centers.size(), uploads.front());
        for (auto& s : sums) std::fill(s.values.begin(), s.values.end(), 0.0);
        for (int i = 0; i < n; ++i) {
            const auto c = static_cast<std::size_t>(assign[static_cast<std::size_t>(i)]);
            counts[c]++;
            for (std::size_t w = 0; w < sums[c].values.size(); ++w)
                sums[c].values[w] += uploads[static_cast<std::size_t>(i)].values[w];
        }
        for (std::size_t c = 0; c < centers.size(); ++c) {
            if (counts[c] == 0) continue;
            for (std::size_t w = 0; w < centers[c].values.size(); ++w)
                centers[c].values[w] = sums[c].values[w] / static_cast<double>(counts[c]);
        }
        if (!changed) break;
    }

    // compact away empty clusters
    std::vector<int> remap(centers.size(), -1);
    std::vector<ParamVector> live;
    std::vector<int> members(centers.size(), 0);
    for (int i = 0; i < n; ++i) members[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])]++;
    for (std::size_t c = 0; c < centers.size(); ++c) {
        if (members[c] == 0) continue;
        remap[c] = static_cast<int>(live.size());
        live.push_back(centers[c]);
    }
    for (int i = 0; i < n; ++i)
        assign[static_cast<std::size_t>(i)] = remap[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    centers = std::move(live);

    // merge near-duplicates, and keep within the cap
    while (centers.size() > 1) {
        std::vector<std::vector<double>> soft;
        soft.reserve(centers.size());
        for (const ParamVector& c : centers) soft.push_back(infer_distributions(c, probe).soft);
        double best = std::numeric_limits<double>::max();
        int ba = -1, bb = -1;
        for (std::size_t a = 0; a < centers.size(); ++a)
            for (std::size_t b = a + 1; b < centers.size(); ++b) {
                const double d = symmetric_kl(soft[a], soft[b]);
                if (d < best) {
                    best = d;
                    ba = static_cast<int>(a);
                    bb = static_cast<int>(b);
                }
            }
        const bool over_cap = static_cast<int>(centers.size()) > max_clusters;
        if (!over_cap && best >= merge_tau) break;
        std::vector<int> counts(centers.size(), 0);
        for (int i = 0; i < n; ++i) counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])]++;
        const double wa = counts[static_cast<std::size_t>(ba)];
        const double wb = counts[static_cast<std::size_t>(bb)];
        for (std::size_t w = 0; w < centers[static_cast<std::size_t>(ba)].values.size(); ++w)
            centers[static_cast<std::size_t>(ba)].values[w] =
                (wa * centers[static_cast<std::size_t>(ba)].values[w] +
                 wb * centers[static_cast<std::size_t>(bb)].values[w]) /
                (wa + wb);
        centers.erase(centers.begin() + bb);
        for (int i = 0; i < n; ++i) {
            int& a = assign[static_cast<std::size_t>(i)];
            if (a == bb) a = ba;
            else if (a > bb) a--;
        }
    }

    if (centers_out) *centers_out = centers;
    return assign;
}

}  // namespace detail

// Synchronous clustered baseline: one global round to collect all weights,
// batch clustering, then independent per-cluster barrier rounds with
// per-cluster averaging and broadcast. Cluster membership is fixed after the
// first round; the batch pass doubles as the clustering-quality oracle.
inline RunTrace run_sync_clustered(const ExperimentConfig& cfg) {
    SimWorld world(cfg);
    EventQueue queue;
    const double budget = cfg.time_budget_s;
    const int n = cfg.total_clients();
    const int max_clusters = cfg.merge_factor * cfg.initial_clusters;

    LocalDataset probe;
    {
        Rng rng(cfg.seed ^ 0x7f4a7c15ull);
        probe.num_classes = cfg.population.classes;
        probe.samples.resize(256);
        for (auto& s : probe.samples) {
            s.label = 0;
            s.features.resize(static_cast<std::size_t>(cfg.population.feature_dim));
            for (auto& f : s.features) f = rng.normal();
        }
    }

    std::vector<ParamVector> uploads(static_cast<std::size_t>(n));
    std::vector<int> arrival_order;
    std::vector<int> assignment(static_cast<std::size_t>(n), -1);
    std::vector<ParamVector> centers;
    std::vector<std::vector<int>> cluster_members;
    std::vector<int> cluster_collected;
    bool clustered = false;
    int phase1_collected = 0;
    StalenessLedger ledger;
    std::size_t pushes = 0;
    bool stop_new_rounds = false;
    double end_time = 0.0;

    for (std::size_t i = 0; i < cfg.drifts.size(); ++i) {
        SimEvent ev;
        ev.at = cfg.drifts[i].trigger_time;
        ev.kind = EventKind::DriftTrigger;
        ev.drift_index = static_cast<int>(i);
        queue.push(std::move(ev));
    }
    for (const auto& c : world.clients())
        queue.push(SimEvent(world.train_time(c.id), EventKind::TrainingComplete, c.id));

    auto broadcast_cluster = [&](int cluster, double now) {
        auto payload = std::make_shared<const ParamVector>(centers[static_cast<std::size_t>(cluster)]);
        for (int member : cluster_members[static_cast<std::size_t>(cluster)]) {
            world.record_down(now, member);
            SimEvent deliver;
            deliver.at = now + world.down_time();
            deliver.kind = EventKind::BroadcastDeliver;
            deliver.client = member;
            deliver.cluster_id = cluster;
            deliver.payload = payload;
            queue.push(std::move(deliver));
        }
    };

    auto cluster_mean = [&](int cluster) {
        ParamVector mean = centers[static_cast<std::size_t>(cluster)];
        std::fill(mean.values.begin(), mean.values.end(), 0.0);
        const auto& members = cluster_members[static_cast<std::size_t>(cluster)];
        for (int member : members)
            for (std::size_t w = 0; w < mean.values.size(); ++w)
                mean.values[w] += uploads[static_cast<std::size_t>(member)].values[w];
        for (auto& v : mean.values) v /= static_cast<double>(members.size());
        return mean;
    };

    while (!queue.empty() && queue.top().at <= budget) {
        const SimEvent ev = queue.pop();
        end_time = ev.at;
        switch (ev.kind) {
            case EventKind::TrainingComplete: {
                world.train_client(ev.client);
                world.log_row(ev.at, to_string(ev.kind), ev.client,
                              assignment[static_cast<std::size_t>(ev.client)],
                              -1, static_cast<int>(centers.size()));
                world.record_up(ev.at, ev.client);
                queue.push(SimEvent(ev.at + world.up_time(), EventKind::UploadArrive, ev.client));
                break;
            }
            case EventKind::UploadArrive: {
                uploads[static_cast<std::size_t>(ev.client)] =
                    world.clients()[static_cast<std::size_t>(ev.client)].local_params;
                ledger.record(0);
                pushes++;
                world.log_row(ev.at, to_string(ev.kind), ev.client,
                              assignment[static_cast<std::size_t>(ev.client)], 0,
                              static_cast<int>(centers.size()));
                if (!clustered) {
                    arrival_order.push_back(ev.client);
                    phase1_collected++;
                    if (phase1_collected == n) {
                        assignment = detail::batch_cluster(uploads, arrival_order, probe, max_clusters,
                                                           0.2, &centers);
                        cluster_members.assign(centers.size(), {});
                        for (int i = 0; i < n; ++i)
                            cluster_members[static_cast<std::size_t>(assignment[static_cast<std::size_t>(i)])]
                                .push_back(i);
                        cluster_collected.assign(centers.size(), 0);
                        for (std::size_t c = 0; c < centers.size(); ++c)
                            centers[c] = cluster_mean(static_cast<int>(c));
                        clustered = true;
                        for (std::size_t c = 0; c < centers.size(); ++c)
                            broadcast_cluster(static_cast<int>(c), ev.at);
                    }
                } else {
                    const int cluster = assignment[static_cast<std::size_t>(ev.client)];
                    int& got = cluster_collected[static_cast<std::size_t>(cluster)];
                    got++;
                    if (got == static_cast<int>(cluster_members[static_cast<std::size_t>(cluster)].size())) {
                        got = 0;   // per-cluster barrier reached
                        centers[static_cast<std::size_t>(cluster)] = cluster_mean(cluster);
                        broadcast_cluster(cluster, ev.at);
                    }
                }
                break;
            }
            case EventKind::BroadcastDeliver: {
                auto& c = world.clients()[static_cast<std::size_t>(ev.client)];
                c.local_params = *ev.payload;
                world.refresh_accuracy(ev.client);
                world.log_row(ev.at, to_string(ev.kind), ev.client, ev.cluster_id, -1,
                              static_cast<int>(centers.size()));
                if (world.target_reached()) stop_new_rounds = true;
                if (!stop_new_rounds)
                    queue.push(SimEvent(ev.at + world.train_time(ev.client), EventKind::TrainingComplete, ev.client));
                break;
            }
            case EventKind::DriftTrigger:
                world.apply_drift_now(ev.drift_index, ev.at, static_cast<int>(centers.size()));
                break;
            default: break;
        }
    }

    std::map<int, int> client_cluster;
    for (int i = 0; i < n; ++i) client_cluster[i] = assignment[static_cast<std::size_t>(i)];
    return world.finish("sync-clustered", end_time, ledger.metrics(), pushes, ledger.count(),
                        static_cast<int>(centers.size()), client_cluster);
}

}  // namespace apfl
