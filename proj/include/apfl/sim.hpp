#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <queue>
#include <string>
#include <vector>

#include "apfl/config.hpp"
#include "apfl/coordination.hpp"
#include "apfl/metrics.hpp"
#include "apfl/model.hpp"
#include "apfl/network.hpp"
#include "apfl/synth.hpp"

namespace apfl {

enum class EventKind { TrainingComplete, UploadArrive, BroadcastDeliver, PullPoll, RefinementTick, DriftTrigger };

inline const char* to_string(EventKind kind) {
    switch (kind) {
        case EventKind::TrainingComplete: return "TrainingComplete";
        case EventKind::UploadArrive: return "UploadArrive";
        case EventKind::BroadcastDeliver: return "BroadcastDeliver";
        case EventKind::PullPoll: return "PullPoll";
        case EventKind::RefinementTick: return "RefinementTick";
        case EventKind::DriftTrigger: return "DriftTrigger";
    }
    return "?";
}

struct SimEvent {
    double at = 0.0;
    EventKind kind = EventKind::TrainingComplete;
    std::uint64_t seq = 0;
    int client = -1;
    int cluster_id = -1;
    std::uint64_t version = 0;
    std::shared_ptr<const ParamVector> payload;
    int drift_index = -1;

    SimEvent() = default;
    SimEvent(double at_, EventKind kind_, int client_ = -1) : at(at_), kind(kind_), client(client_) {}
};

// (at, seq) lexicographic execution order.
struct EventAfter {
    bool operator()(const SimEvent& a, const SimEvent& b) const {
        if (a.at != b.at) return a.at > b.at;
        return a.seq > b.seq;
    }
};

class EventQueue {
public:
    void push(SimEvent ev) {
        if (ev.at < 0.0) throw RejectedInput("EventQueue: event at negative time");
        ev.seq = next_seq_++;
        queue_.push(std::move(ev));
    }

    bool empty() const { return queue_.empty(); }
    const SimEvent& top() const { return queue_.top(); }

    SimEvent pop() {
        SimEvent ev = queue_.top();
        queue_.pop();
        return ev;
    }

private:
    std::priority_queue<SimEvent, std::vector<SimEvent>, EventAfter> queue_;
    std::uint64_t next_seq_ = 0;
};

// Shared fleet state for every protocol driver: live datasets and splits,
// device profiles, byte accounting, the metrics timeline, and drift handling.
class SimWorld {
public:
    struct Client {
        int id = -1;
        int device_class = 4;
        LocalDataset data;
        LocalDataset train_split;
        LocalDataset eval_split;
        ParamVector local_params;
        std::uint64_t round_base_version = 0;
        bool partial_ft = false;
        bool has_pending = false;
        ParamVector pending_params;
        std::uint64_t pending_version = 0;
        int pending_deliveries = 0;
        double acc = 0.0;
    };

    explicit SimWorld(const ExperimentConfig& cfg)
        : cfg_(cfg),
          model_(cfg.model_spec()),
          jitter_rng_(cfg.seed ^ 0x51ed270b1ull),
          drift_rng_(cfg.seed ^ 0xd1f7a9c3ull) {
        population_ = generate_population(cfg.population);
        Rng init_rng(cfg.seed ^ 0xa02bdbf7bbull);
        init_params_ = model_.init_params(init_rng);
        payload_bytes_ = model_payload_bytes(model_.param_count());
        clients_.resize(static_cast<std::size_t>(cfg.total_clients()));
        for (int i = 0; i < cfg.total_clients(); ++i) {
            Client& c = clients_[static_cast<std::size_t>(i)];
            c.id = i;
            c.device_class = cfg.device_classes[static_cast<std::size_t>(i)];
            c.data = population_.datasets[static_cast<std::size_t>(i)];
            c.local_params = init_params_;
            split(c);
            c.acc = accuracy(c.local_params, c.eval_split);
        }
        log_row(0.0, "Init", -1, -1, -1, 0);
    }

    const ExperimentConfig& config() const { return cfg_; }
    const ModelSpec& model() const { return model_; }
    const ParamVector& init_params() const { return init_params_; }
    const Population& population() const { return population_; }
    std::vector<Client>& clients() { return clients_; }
    std::size_t payload_bytes() const { return payload_bytes_; }

    double train_time(int client_id) {
        const Client& c = clients_[static_cast<std::size_t>(client_id)];
        const double base = static_cast<double>(cfg_.train_epochs) * cfg_.base_epoch_seconds *
                            device_speed_multiplier(c.device_class);
        const double factor =
            cfg_.jitter > 0.0 ? jitter_rng_.uniform(1.0 - cfg_.jitter, 1.0 + cfg_.jitter) : 1.0;
        return base * factor;
    }

    double up_time() const { return transfer_time(payload_bytes_, Direction::Up, cfg_.link); }
    double down_time() const { return transfer_time(payload_bytes_, Direction::Down, cfg_.link); }

    void record_up(double at, int client_id) {
        transfers_.push_back({at, Direction::Up, payload_bytes_, client_id});
        up_cum_ += payload_bytes_;
    }

    void record_down(double at, int client_id) {
        transfers_.push_back({at, Direction::Down, payload_bytes_, client_id});
        down_cum_ += payload_bytes_;
    }

    void train_client(int client_id) {
        Client& c = clients_[static_cast<std::size_t>(client_id)];
        c.local_params = sgd_train(c.local_params, c.train_split, cfg_.train_epochs, cfg_.train_lr,
                                   c.partial_ft ? TrainMode::LastLayerOnly : TrainMode::Full,
                                   cfg_.train_batch);
        c.acc = accuracy(c.local_params, c.eval_split);
    }

    void refresh_accuracy(int client_id) {
        Client& c = clients_[static_cast<std::size_t>(client_id)];
        c.acc = accuracy(c.local_params, c.eval_split);
    }

    double mean_accuracy() const {
        double sum = 0.0;
        for (const Client& c : clients_) sum += c.acc;
        return sum / static_cast<double>(clients_.size());
    }

    double min_accuracy() const {
        double lo = clients_.front().acc;
        for (const Client& c : clients_) lo = std::min(lo, c.acc);
        return lo;
    }

    void log_row(double t, const std::string& event, int client, int cluster, std::int64_t staleness,
                 int cluster_count) {
        MetricsRow row;
        row.sim_time_s = t;
        row.event = event;
        row.client_id = client;
        row.cluster_id = cluster;
        row.staleness = staleness;
        row.mean_accuracy = mean_accuracy();
        row.min_accuracy = min_accuracy();
        row.up_bytes_cum = up_cum_;
        row.down_bytes_cum = down_cum_;
        row.cluster_count = cluster_count;
        if (cfg_.target_accuracy > 0.0 && time_to_target_ < 0.0 && row.mean_accuracy >= cfg_.target_accuracy)
            time_to_target_ = t;
        rows_.push_back(std::move(row));
    }

    bool target_reached() const { return cfg_.target_accuracy > 0.0 && time_to_target_ >= 0.0; }

    // Replaces the client's dataset per the drift spec, drawing features from
    // its ground-truth cluster's mixture.
    void apply_drift_now(int drift_index, double now, int cluster_count) {
        const DriftSpec& spec = cfg_.drifts[static_cast<std::size_t>(drift_index)];
        Client& c = clients_[static_cast<std::size_t>(spec.client_id)];
        const int g = population_.ground_truth[static_cast<std::size_t>(spec.client_id)];
        c.data = apply_drift(c.data, spec, population_.class_means[static_cast<std::size_t>(g)],
                             population_.noise_std, drift_rng_);
        split(c);
        refresh_accuracy(spec.client_id);
        log_row(now, to_string(EventKind::DriftTrigger), spec.client_id, -1, -1, cluster_count);
    }

    // For round-driven protocols without an event queue.
    void apply_due_drifts(double now, int cluster_count) {
        for (std::size_t i = 0; i < cfg_.drifts.size(); ++i) {
            if (drift_applied_.size() < cfg_.drifts.size()) drift_applied_.resize(cfg_.drifts.size(), false);
            if (!drift_applied_[i] && cfg_.drifts[i].trigger_time <= now) {
                drift_applied_[i] = true;
                apply_drift_now(static_cast<int>(i), cfg_.drifts[i].trigger_time, cluster_count);
            }
        }
    }

    RunTrace finish(const std::string& protocol, double end_time, const StalenessMetrics& staleness,
                    std::size_t pushes, std::size_t ledger_entries, int cluster_count,
                    const std::map<int, int>& client_cluster) {
        RunTrace trace;
        trace.rows = std::move(rows_);
        trace.transfers = std::move(transfers_);
        RunSummary& s = trace.summary;
        s.protocol = protocol;
        s.seed = cfg_.seed;
        double sum = 0.0, lo = 1.0;
        for (const Client& c : clients_) {
            s.client_accuracy[c.id] = c.acc;
            sum += c.acc;
            lo = std::min(lo, c.acc);
        }
        s.final_mean_accuracy = sum / static_cast<double>(clients_.size());
        s.final_min_accuracy = lo;
        s.q_max = staleness.q_max;
        s.q_avg = staleness.q_avg;
        s.total_up_bytes = up_cum_;
        s.total_down_bytes = down_cum_;
        s.up_peak_1s = peak_concurrency(trace.transfers, Direction::Up, 1.0);
        s.down_peak_1s = peak_concurrency(trace.transfers, Direction::Down, 1.0);
        s.time_to_target_s = time_to_target_;
        s.end_time_s = end_time;
        s.accepted_pushes = pushes;
        s.ledger_entries = ledger_entries;
        s.cluster_count = cluster_count;
        s.client_cluster = client_cluster;
        return trace;
    }

private:
    void split(Client& c) {
        const std::size_t n = c.data.samples.size();
        const auto eval_n = static_cast<std::size_t>(
            std::max(1.0, std::floor(cfg_.eval_fraction * static_cast<double>(n))));
        const std::size_t train_n = n - eval_n;
        c.train_split.num_classes = c.data.num_classes;
        c.eval_split.num_classes = c.data.num_classes;
        c.train_split.samples.assign(c.data.samples.begin(),
                                     c.data.samples.begin() + static_cast<std::ptrdiff_t>(train_n));
        c.eval_split.samples.assign(c.data.samples.begin() + static_cast<std::ptrdiff_t>(train_n),
                                    c.data.samples.end());
    }

    ExperimentConfig cfg_;
    ModelSpec model_;
    Population population_;
    ParamVector init_params_;
    std::vector<Client> clients_;
    std::size_t payload_bytes_ = 0;
    Rng jitter_rng_;
    Rng drift_rng_;
    std::vector<MetricsRow> rows_;
    std::vector<TransferRecord> transfers_;
    std::uint64_t up_cum_ = 0;
    std::uint64_t down_cum_ = 0;
    double time_to_target_ = -1.0;
    std::vector<bool> drift_applied_;
};

// Asynchronous personalized protocol on the discrete-event engine. Clients
// loop train -> upload -> poll; the server aggregates on arrival, decides
// broadcasts per aggregation and refines clusters periodically. Broadcast
// deliveries take effect at the receiving client's next round.
inline RunTrace run_apfl(const ExperimentConfig& cfg, const BroadcastPredictor* pretrained = nullptr,
                         std::vector<LabeledSequence>* harvest = nullptr) {
    SimWorld world(cfg);
    Server server(cfg.server_config(), world.model(),
                  [&world](int id) -> const LocalDataset& {
                      return world.clients()[static_cast<std::size_t>(id)].data;
                  },
                  pretrained ? *pretrained : BroadcastPredictor());
    if (harvest) server.set_harvest_sink(harvest);
    for (auto& c : world.clients()) server.register_client(c.id, c.device_class);

    EventQueue queue;
    const double budget = cfg.time_budget_s;
    bool stop_new_rounds = false;
    double end_time = 0.0;

    auto cluster_count = [&server]() { return static_cast<int>(server.clusters().size()); };

    auto schedule_training = [&](int client_id, double start) {
        if (start > budget || stop_new_rounds) return;
        queue.push(SimEvent(start + world.train_time(client_id), EventKind::TrainingComplete, client_id));
    };

    auto schedule_orders = [&](const std::vector<BroadcastOrder>& orders, double now) {
        for (const BroadcastOrder& order : orders) {
            auto payload = std::make_shared<const ParamVector>(order.params);
            for (int member : order.members) {
                world.record_down(now, member);
                world.clients()[static_cast<std::size_t>(member)].pending_deliveries++;
                SimEvent ev;
                ev.at = now + world.down_time();
                ev.kind = EventKind::BroadcastDeliver;
                ev.client = member;
                ev.cluster_id = order.cluster_id;
                ev.version = order.version;
                ev.payload = payload;
                queue.push(std::move(ev));
            }
        }
    };

    for (std::size_t i = 0; i < cfg.drifts.size(); ++i) {
        SimEvent ev;
        ev.at = cfg.drifts[i].trigger_time;
        ev.kind = EventKind::DriftTrigger;
        ev.drift_index = static_cast<int>(i);
        queue.push(std::move(ev));
    }
    for (const auto& c : world.clients()) schedule_training(c.id, 0.0);

    while (!queue.empty() && queue.top().at <= budget) {
        const SimEvent ev = queue.pop();
        end_time = ev.at;
        auto& clients = world.clients();
        switch (ev.kind) {
            case EventKind::TrainingComplete: {
                world.train_client(ev.client);
                const auto& rec = server.clients().at(ev.client);
                world.log_row(ev.at, to_string(ev.kind), ev.client, rec.cluster_id.value_or(-1), -1,
                              cluster_count());
                world.record_up(ev.at, ev.client);
                queue.push(SimEvent(ev.at + world.up_time(), EventKind::UploadArrive, ev.client));
                break;
            }
            case EventKind::UploadArrive: {
                auto& c = clients[static_cast<std::size_t>(ev.client)];
                const PushResult res = server.push(ev.client, c.local_params, c.round_base_version, ev.at);
                world.log_row(ev.at, to_string(ev.kind), ev.client, res.ack.cluster_id,
                              static_cast<std::int64_t>(res.ack.staleness), cluster_count());
                schedule_orders(res.broadcasts, ev.at);
                if (res.refinement_due) queue.push(SimEvent(ev.at, EventKind::RefinementTick));
                queue.push(SimEvent(ev.at, EventKind::PullPoll, ev.client));
                break;
            }
            case EventKind::PullPoll: {
                auto& c = clients[static_cast<std::size_t>(ev.client)];
                if (c.has_pending) {
                    c.local_params = c.pending_params;
                    c.round_base_version = c.pending_version;
                    c.has_pending = false;
                    world.refresh_accuracy(ev.client);
                }
                double start = ev.at;
                bool fetched = false;
                if (c.pending_deliveries == 0) {
                    const PollResponse resp = server.poll(ev.client);
                    c.partial_ft = resp.partial_ft;
                    if (resp.fetch) {
                        world.record_down(ev.at, ev.client);
                        start += world.down_time();
                        c.local_params = resp.params;
                        c.round_base_version = resp.version;
                        world.refresh_accuracy(ev.client);
                        fetched = true;
                    }
                } else {
                    c.partial_ft = server.clients().at(ev.client).partial_ft;
                }
                const auto& rec = server.clients().at(ev.client);
                world.log_row(ev.at, to_string(ev.kind), ev.client, rec.cluster_id.value_or(-1),
                              fetched ? 0 : -1, cluster_count());
                schedule_training(ev.client, start);
                break;
            }
            case EventKind::BroadcastDeliver: {
                auto& c = clients[static_cast<std::size_t>(ev.client)];
                server.confirm_delivery(ev.client, ev.version);
                if (c.pending_deliveries > 0) c.pending_deliveries--;
                if (!c.has_pending || ev.version >= c.pending_version) {
                    c.pending_params = *ev.payload;
                    c.pending_version = ev.version;
                    c.has_pending = true;
                }
                world.log_row(ev.at, to_string(ev.kind), ev.client, ev.cluster_id, -1, cluster_count());
                break;
            }
            case EventKind::RefinementTick: {
                if (server.refinement_due()) {
                    const RefinementOutcome outcome = server.run_refinement(ev.at);
                    schedule_orders(outcome.broadcasts, ev.at);
                }
                world.log_row(ev.at, to_string(ev.kind), -1, -1, -1, cluster_count());
                break;
            }
            case EventKind::DriftTrigger: {
                world.apply_drift_now(ev.drift_index, ev.at, cluster_count());
                break;
            }
        }
        if (world.target_reached()) stop_new_rounds = true;
    }

    std::map<int, int> assignment;
    for (const auto& [id, rec] : server.clients()) assignment[id] = rec.cluster_id.value_or(-1);
    return world.finish("apfl", end_time, server.staleness_metrics(), server.accepted_pushes(),
                        server.ledger().count(), static_cast<int>(server.clusters().size()), assignment);
}

}  // namespace apfl
