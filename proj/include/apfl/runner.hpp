#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "apfl/baselines.hpp"
#include "apfl/config.hpp"
#include "apfl/metrics.hpp"
#include "apfl/sim.hpp"

namespace apfl {

// Warm-up run that harvests (history, label) pairs with oracle labels, then
// offline training of the broadcast predictor on them. The warm-up corpus is a
// fixed seeded fleet so the pretrained predictor is a pure function of the
// predictor dimensions, rate and pair budget.
inline BroadcastPredictor pretrain_broadcast_predictor(int hidden, double lr, int pairs_target) {
    constexpr std::uint64_t kWarmSeed = 0xec40u;
    ExperimentConfig warm;
    warm.seed = kWarmSeed;
    warm.population.clusters = 2;
    warm.population.clients_per_cluster = {4, 4};
    warm.population.feature_dim = 8;
    warm.population.classes = 6;
    warm.population.samples_per_client = 60;
    warm.population.seed = kWarmSeed;
    warm.population.class_skew = build_skews("disjoint-pairs", 2, 6);
    warm.device_classes = {4, 4, 2, 2, 4, 4, 2, 2};
    warm.base_epoch_seconds = 0.5;
    warm.broadcast_mode = BroadcastMode::Oracle;
    warm.model_hidden = 8;
    warm.time_budget_s = 60.0 + 2.2 * static_cast<double>(pairs_target);
    warm.validate();

    std::vector<LabeledSequence> pairs;
    run_apfl(warm, nullptr, &pairs);
    if (static_cast<int>(pairs.size()) > pairs_target)
        pairs.resize(static_cast<std::size_t>(pairs_target));

    BroadcastPredictor predictor(hidden, kWarmSeed ^ 0x5bd1e995ull);
    const int epochs = 8;
    for (int e = 0; e < epochs; ++e)
        for (const LabeledSequence& p : pairs) predictor.train_step(p.first, p.second, lr);
    predictor.pretrained = true;
    return predictor;
}

// Process-wide cache; pretraining is deterministic per key, so reuse only
// saves time.
inline const BroadcastPredictor& pretrained_predictor(int hidden, double lr, int pairs_target) {
    static std::map<std::tuple<int, double, int>, BroadcastPredictor> cache;
    const auto key = std::make_tuple(hidden, lr, pairs_target);
    auto it = cache.find(key);
    if (it == cache.end())
        it = cache.emplace(key, pretrain_broadcast_predictor(hidden, lr, pairs_target)).first;
    return it->second;
}

inline RunTrace run_protocol(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.protocol == "apfl") {
        if (cfg.broadcast_mode == BroadcastMode::Predictor && cfg.pretrain_pairs > 0) {
            const BroadcastPredictor& p =
                pretrained_predictor(cfg.predictor_hidden, cfg.predictor_lr, cfg.pretrain_pairs);
            return run_apfl(cfg, &p);
        }
        return run_apfl(cfg);
    }
    if (cfg.protocol == "sync-fedavg") return run_sync_fedavg(cfg);
    if (cfg.protocol == "async-decay") return run_async_decay(cfg);
    if (cfg.protocol == "sync-clustered") return run_sync_clustered(cfg);
    if (cfg.protocol == "standalone") return run_standalone(cfg);
    throw ConfigError("run_protocol: unknown protocol '" + cfg.protocol + "'");
}

// Runs the configured experiment and writes metrics.csv + summary.csv under
// out_dir. Deterministic per (config, seed): reruns produce byte-identical
// files.
inline RunSummary run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
    const RunTrace trace = run_protocol(cfg);
    std::filesystem::create_directories(out_dir);
    write_file(out_dir + "/metrics.csv", metrics_csv(trace.rows));
    write_file(out_dir + "/summary.csv", summary_csv(trace.summary));
    return trace.summary;
}

}  // namespace apfl
