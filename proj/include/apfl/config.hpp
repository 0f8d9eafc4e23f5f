#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "apfl/broadcast.hpp"
#include "apfl/coordination.hpp"
#include "apfl/errors.hpp"
#include "apfl/metrics.hpp"
#include "apfl/model.hpp"
#include "apfl/network.hpp"
#include "apfl/synth.hpp"

namespace apfl {

// Full experiment description. Defaults match the protocol's standard
// hyperparameters; `seed` is the only required key.
struct ExperimentConfig {
    std::string protocol = "apfl";
    std::uint64_t seed = 0;

    PopulationSpec population;
    std::string skew_mode = "disjoint-pairs";   // disjoint-pairs | uniform | explicit

    std::vector<int> device_classes;            // per client, 1..5
    double base_epoch_seconds = 1.0;
    double jitter = 0.1;
    LinkModel link{16000.0, 160000.0};

    int initial_clusters = 2;                   // C
    int merge_factor = 2;                       // hm
    int refine_period = 10;                     // R
    double eta = 0.5;

    BroadcastMode broadcast_mode = BroadcastMode::Predictor;
    int history_k = 10;
    int predictor_hidden = 128;
    double predictor_lr = 0.01;
    int pretrain_pairs = 1200;

    double train_lr = 0.05;
    int train_epochs = 2;
    int train_batch = 16;
    int model_hidden = 16;

    double time_budget_s = 1200.0;
    double target_accuracy = 0.0;               // <= 0 disables the accuracy stop
    double eval_fraction = 0.2;

    double async_alpha0 = 0.6;
    double async_decay_exponent = 0.5;

    std::vector<DriftSpec> drifts;

    int total_clients() const { return population.total_clients(); }

    ModelSpec model_spec() const {
        return ModelSpec{population.feature_dim, model_hidden, population.classes};
    }

    ServerConfig server_config() const {
        ServerConfig cfg;
        cfg.initial_clusters = initial_clusters;
        cfg.merge_factor = merge_factor;
        cfg.min_history = history_k;
        cfg.mix_rate = eta;
        cfg.refine_period = refine_period;
        cfg.broadcast_mode = broadcast_mode;
        cfg.predictor_lr = predictor_lr;
        cfg.predictor_hidden = predictor_hidden;
        cfg.local_lr = train_lr;
        cfg.local_batch = train_batch;
        cfg.seed = seed;
        return cfg;
    }

    void validate() const {
        static const std::set<std::string> protocols = {"apfl", "sync-fedavg", "async-decay",
                                                        "sync-clustered", "standalone"};
        if (!protocols.count(protocol)) throw ConfigError("config: unknown protocol '" + protocol + "'");
        population.validate();
        if (static_cast<int>(device_classes.size()) != total_clients())
            throw ConfigError("config: fleet.device_classes length != total clients");
        for (int c : device_classes)
            if (c < 1 || c > 5) throw ConfigError("config: device class out of range");
        if (base_epoch_seconds <= 0.0) throw ConfigError("config: fleet.base_epoch_seconds must be positive");
        if (jitter < 0.0 || jitter >= 1.0) throw ConfigError("config: fleet.jitter must be in [0, 1)");
        if (link.upstream_bytes_per_s <= 0.0 || link.downstream_bytes_per_s <= 0.0)
            throw ConfigError("config: link rates must be positive");
        if (initial_clusters <= 0) throw ConfigError("config: clustering.initial_clusters must be positive");
        if (merge_factor <= 0) throw ConfigError("config: clustering.merge_factor must be positive");
        if (refine_period <= 0) throw ConfigError("config: clustering.refine_period must be positive");
        if (eta < 0.0 || eta > 1.0) throw ConfigError("config: aggregate.eta must be in [0, 1]");
        if (history_k <= 0) throw ConfigError("config: broadcast.k must be positive");
        if (predictor_hidden <= 0) throw ConfigError("config: predictor.hidden must be positive");
        if (predictor_lr <= 0.0) throw ConfigError("config: predictor.lr must be positive");
        if (pretrain_pairs < 0) throw ConfigError("config: predictor.pretrain_pairs must be non-negative");
        if (train_lr < 0.0) throw ConfigError("config: train.lr must be non-negative");
        if (train_epochs <= 0) throw ConfigError("config: train.epochs must be positive");
        if (train_batch < 0) throw ConfigError("config: train.batch_size must be non-negative");
        if (model_hidden < 0) throw ConfigError("config: model.hidden must be non-negative");
        if (time_budget_s <= 0.0) throw ConfigError("config: stop.time_budget_s must be positive");
        if (eval_fraction <= 0.0 || eval_fraction >= 1.0)
            throw ConfigError("config: eval.fraction must be in (0, 1)");
        if (async_alpha0 <= 0.0 || async_alpha0 > 1.0)
            throw ConfigError("config: async.alpha0 must be in (0, 1]");
        for (const DriftSpec& d : drifts) {
            if (d.client_id < 0 || d.client_id >= total_clients())
                throw ConfigError("config: drift client out of range");
            d.validate(population.classes);
        }
    }
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& text) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= text.size(); ++i) {
        if (i == text.size() || text[i] == ',') {
            std::string part = text.substr(start, i - start);
            const auto b = part.find_first_not_of(" \t");
            const auto e = part.find_last_not_of(" \t");
            parts.push_back(b == std::string::npos ? "" : part.substr(b, e - b + 1));
            start = i + 1;
        }
    }
    return parts;
}

struct KeyValue {
    std::string key;
    std::string value;
    int line = 0;
};

inline std::vector<KeyValue> tokenize_config(const std::string& text) {
    std::vector<KeyValue> entries;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
        line_no++;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        const auto e = line.find_last_not_of(" \t\r");
        line = line.substr(b, e - b + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        auto trim = [](std::string s) {
            const auto x = s.find_first_not_of(" \t");
            const auto y = s.find_last_not_of(" \t");
            return x == std::string::npos ? std::string() : s.substr(x, y - x + 1);
        };
        KeyValue kv{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no};
        if (kv.key.empty())
            throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        if (!seen.insert(kv.key).second)
            throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + kv.key + "'");
        entries.push_back(std::move(kv));
    }
    return entries;
}

inline double parse_double(const KeyValue& kv) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(kv.value, &pos);
        if (pos != kv.value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config line " + std::to_string(kv.line) + ": bad number for '" + kv.key + "'");
    }
}

inline long long parse_int(const KeyValue& kv) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(kv.value, &pos);
        if (pos != kv.value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config line " + std::to_string(kv.line) + ": bad integer for '" + kv.key + "'");
    }
}

inline std::vector<double> parse_double_list(const KeyValue& kv) {
    std::vector<double> out;
    for (const std::string& part : split_csv(kv.value)) {
        try {
            out.push_back(std::stod(part));
        } catch (const std::exception&) {
            throw ConfigError("config line " + std::to_string(kv.line) + ": bad list entry for '" + kv.key +
                              "'");
        }
    }
    return out;
}

inline int parse_device_class(const std::string& token, int line) {
    if (token.size() == 2 && token[0] == 'D' && token[1] >= '1' && token[1] <= '5') return token[1] - '0';
    throw ConfigError("config line " + std::to_string(line) + ": bad device class '" + token +
                      "' (expected D1..D5)");
}

}  // namespace detail

// Builds the per-cluster skew table for the non-explicit modes.
inline std::vector<std::vector<double>> build_skews(const std::string& mode, int clusters, int classes) {
    std::vector<std::vector<double>> skews(static_cast<std::size_t>(clusters),
                                           std::vector<double>(static_cast<std::size_t>(classes), 0.0));
    if (mode == "uniform") {
        for (auto& s : skews)
            for (auto& p : s) p = 1.0 / static_cast<double>(classes);
    } else if (mode == "disjoint-pairs") {
        for (int g = 0; g < clusters; ++g) {
            skews[static_cast<std::size_t>(g)][static_cast<std::size_t>((2 * g) % classes)] = 0.5;
            skews[static_cast<std::size_t>(g)][static_cast<std::size_t>((2 * g + 1) % classes)] += 0.5;
        }
    } else {
        throw ConfigError("config: unknown population.skew_mode '" + mode + "'");
    }
    return skews;
}

// Parses the key=value experiment format. Unknown and duplicate keys are
// errors; every message names the offending key and line.
inline ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    bool seed_seen = false;
    bool clients_seen = false;
    double link_up = 16000.0;
    double link_asym = 10.0;
    std::vector<std::string> device_tokens;
    int device_line = 0;
    std::map<int, std::vector<double>> explicit_skews;
    struct DriftDraft {
        int client = -1;
        double time = -1.0;
        std::vector<double> skew;
        int line = 0;
    };
    std::map<int, DriftDraft> drifts;

    using detail::KeyValue;
    for (const KeyValue& kv : detail::tokenize_config(text)) {
        const std::string& k = kv.key;
        if (k == "protocol") cfg.protocol = kv.value;
        else if (k == "seed") {
            cfg.seed = static_cast<std::uint64_t>(detail::parse_int(kv));
            seed_seen = true;
        } else if (k == "population.clusters") cfg.population.clusters = static_cast<int>(detail::parse_int(kv));
        else if (k == "population.clients_per_cluster") {
            cfg.population.clients_per_cluster.clear();
            for (const std::string& part : detail::split_csv(kv.value))
                cfg.population.clients_per_cluster.push_back(
                    static_cast<int>(detail::parse_int({k, part, kv.line})));
            clients_seen = true;
        } else if (k == "population.feature_dim") cfg.population.feature_dim = static_cast<int>(detail::parse_int(kv));
        else if (k == "population.classes") cfg.population.classes = static_cast<int>(detail::parse_int(kv));
        else if (k == "population.samples_per_client")
            cfg.population.samples_per_client = static_cast<int>(detail::parse_int(kv));
        else if (k == "population.noise_std") cfg.population.noise_std = detail::parse_double(kv);
        else if (k == "population.skew_mode") cfg.skew_mode = kv.value;
        else if (k.rfind("population.skew.", 0) == 0) {
            int g = 0;
            try {
                g = std::stoi(k.substr(16));
            } catch (const std::exception&) {
                throw ConfigError("config line " + std::to_string(kv.line) + ": bad skew index in '" + k + "'");
            }
            explicit_skews[g] = detail::parse_double_list(kv);
        } else if (k == "fleet.device_classes") {
            device_tokens = detail::split_csv(kv.value);
            device_line = kv.line;
        } else if (k == "fleet.base_epoch_seconds") cfg.base_epoch_seconds = detail::parse_double(kv);
        else if (k == "fleet.jitter") cfg.jitter = detail::parse_double(kv);
        else if (k == "link.upstream_bytes_per_s") link_up = detail::parse_double(kv);
        else if (k == "link.asymmetry") link_asym = detail::parse_double(kv);
        else if (k == "clustering.initial_clusters") cfg.initial_clusters = static_cast<int>(detail::parse_int(kv));
        else if (k == "clustering.merge_factor") cfg.merge_factor = static_cast<int>(detail::parse_int(kv));
        else if (k == "clustering.refine_period") cfg.refine_period = static_cast<int>(detail::parse_int(kv));
        else if (k == "aggregate.eta") cfg.eta = detail::parse_double(kv);
        else if (k == "broadcast.mode") {
            try {
                cfg.broadcast_mode = parse_broadcast_mode(kv.value);
            } catch (const RejectedInput& e) {
                throw ConfigError("config line " + std::to_string(kv.line) + ": " + e.what());
            }
        } else if (k == "broadcast.k") cfg.history_k = static_cast<int>(detail::parse_int(kv));
        else if (k == "predictor.hidden") cfg.predictor_hidden = static_cast<int>(detail::parse_int(kv));
        else if (k == "predictor.lr") cfg.predictor_lr = detail::parse_double(kv);
        else if (k == "predictor.pretrain_pairs") cfg.pretrain_pairs = static_cast<int>(detail::parse_int(kv));
        else if (k == "train.lr") cfg.train_lr = detail::parse_double(kv);
        else if (k == "train.epochs") cfg.train_epochs = static_cast<int>(detail::parse_int(kv));
        else if (k == "train.batch_size") cfg.train_batch = static_cast<int>(detail::parse_int(kv));
        else if (k == "model.hidden") cfg.model_hidden = static_cast<int>(detail::parse_int(kv));
        else if (k == "stop.time_budget_s") cfg.time_budget_s = detail::parse_double(kv);
        else if (k == "stop.target_accuracy") cfg.target_accuracy = detail::parse_double(kv);
        else if (k == "eval.fraction") cfg.eval_fraction = detail::parse_double(kv);
        else if (k == "async.alpha0") cfg.async_alpha0 = detail::parse_double(kv);
        else if (k == "async.decay_exponent") cfg.async_decay_exponent = detail::parse_double(kv);
        else if (k.rfind("drift.", 0) == 0) {
            const auto second_dot = k.find('.', 6);
            if (second_dot == std::string::npos)
                throw ConfigError("config line " + std::to_string(kv.line) + ": unknown key '" + k + "'");
            int idx = 0;
            try {
                idx = std::stoi(k.substr(6, second_dot - 6));
            } catch (const std::exception&) {
                throw ConfigError("config line " + std::to_string(kv.line) + ": bad drift index in '" + k + "'");
            }
            DriftDraft& d = drifts[idx];
            d.line = kv.line;
            const std::string field = k.substr(second_dot + 1);
            if (field == "client") d.client = static_cast<int>(detail::parse_int(kv));
            else if (field == "time") d.time = detail::parse_double(kv);
            else if (field == "skew") d.skew = detail::parse_double_list(kv);
            else throw ConfigError("config line " + std::to_string(kv.line) + ": unknown key '" + k + "'");
        } else {
            throw ConfigError("config line " + std::to_string(kv.line) + ": unknown key '" + k + "'");
        }
    }

    if (!seed_seen) throw ConfigError("config: missing required key 'seed'");
    if (cfg.population.clusters == 0) cfg.population.clusters = 4;
    if (cfg.population.classes == 0) cfg.population.classes = 10;
    if (cfg.population.samples_per_client == 0) cfg.population.samples_per_client = 120;
    if (!clients_seen)
        cfg.population.clients_per_cluster.assign(static_cast<std::size_t>(cfg.population.clusters), 5);
    if (static_cast<int>(cfg.population.clients_per_cluster.size()) != cfg.population.clusters)
        throw ConfigError("config: population.clients_per_cluster length != population.clusters");
    cfg.population.seed = cfg.seed;

    if (cfg.skew_mode == "explicit" || !explicit_skews.empty()) {
        if (cfg.skew_mode != "explicit")
            throw ConfigError("config: population.skew.<g> rows require population.skew_mode = explicit");
        cfg.population.class_skew.assign(static_cast<std::size_t>(cfg.population.clusters), {});
        for (int g = 0; g < cfg.population.clusters; ++g) {
            auto it = explicit_skews.find(g);
            if (it == explicit_skews.end())
                throw ConfigError("config: missing population.skew." + std::to_string(g));
            cfg.population.class_skew[static_cast<std::size_t>(g)] = it->second;
        }
    } else {
        cfg.population.class_skew = build_skews(cfg.skew_mode, cfg.population.clusters, cfg.population.classes);
    }

    if (device_tokens.empty()) {
        cfg.device_classes.assign(static_cast<std::size_t>(cfg.total_clients()), 4);
    } else {
        cfg.device_classes.clear();
        for (const std::string& token : device_tokens)
            cfg.device_classes.push_back(detail::parse_device_class(token, device_line));
    }

    if (link_asym <= 0.0) throw ConfigError("config: link.asymmetry must be positive");
    cfg.link.upstream_bytes_per_s = link_up;
    cfg.link.downstream_bytes_per_s = link_up * link_asym;

    for (const auto& [idx, d] : drifts) {
        if (d.client < 0 || d.time < 0.0 || d.skew.empty())
            throw ConfigError("config line " + std::to_string(d.line) + ": drift." + std::to_string(idx) +
                              " needs client, time and skew");
        DriftSpec spec;
        spec.client_id = d.client;
        spec.trigger_time = d.time;
        spec.new_class_skew = d.skew;
        cfg.drifts.push_back(std::move(spec));
    }

    cfg.validate();
    return cfg;
}

inline ExperimentConfig parse_config(const std::string& path) {
    return parse_config_text(read_file(path));
}

}  // namespace apfl
