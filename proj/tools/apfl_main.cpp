// Experiment harness: run a configured protocol, replicate a reference
// scenario, or compare finished run summaries.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "apfl/apfl.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfigError = 1;
constexpr int kExitRuntimeError = 2;

void apply_overrides(apfl::ExperimentConfig& cfg, const std::string& protocol, bool seed_set,
                     std::uint64_t seed, const std::string& broadcast_mode) {
    if (!protocol.empty()) cfg.protocol = protocol;
    if (seed_set) {
        cfg.seed = seed;
        cfg.population.seed = seed;
    }
    if (!broadcast_mode.empty()) cfg.broadcast_mode = apfl::parse_broadcast_mode(broadcast_mode);
    cfg.validate();
}

int execute(const apfl::ExperimentConfig& cfg, const std::string& out_dir) {
    const apfl::RunSummary summary = apfl::run_experiment(cfg, out_dir);
    std::printf("protocol=%s seed=%llu\n", summary.protocol.c_str(),
                static_cast<unsigned long long>(summary.seed));
    std::printf("final mean accuracy %.4f, min %.4f over %zu clients\n", summary.final_mean_accuracy,
                summary.final_min_accuracy, summary.client_accuracy.size());
    std::printf("staleness q_max=%llu q_avg=%.3f\n", static_cast<unsigned long long>(summary.q_max),
                summary.q_avg);
    std::printf("bytes up=%llu down=%llu (1 s peaks: up=%llu down=%llu)\n",
                static_cast<unsigned long long>(summary.total_up_bytes),
                static_cast<unsigned long long>(summary.total_down_bytes),
                static_cast<unsigned long long>(summary.up_peak_1s),
                static_cast<unsigned long long>(summary.down_peak_1s));
    if (summary.time_to_target_s >= 0.0)
        std::printf("time to target accuracy: %.1f s\n", summary.time_to_target_s);
    std::printf("wrote %s/metrics.csv and %s/summary.csv\n", out_dir.c_str(), out_dir.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Asynchronous personalized federated learning simulator"};
    app.require_subcommand(1);

    std::string config_path, out_dir = ".", protocol, broadcast_mode, scenario_name;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::vector<std::string> summary_paths;

    CLI::App* run = app.add_subcommand("run", "Run an experiment from a config file");
    run->add_option("--config", config_path, "key = value experiment config")->required();
    run->add_option("--protocol", protocol, "override the configured protocol");
    run->add_option("--seed", seed, "override the configured seed")->each([&](const std::string&) {
        seed_set = true;
    });
    run->add_option("--out-dir", out_dir, "output directory (metrics.csv, summary.csv)");
    run->add_option("--broadcast-mode", broadcast_mode, "predictor|oracle|always|never|oracle-flipped");

    CLI::App* scenario = app.add_subcommand("scenario", "Run a reference scenario (A, B, C or D)");
    scenario->add_option("--name", scenario_name, "scenario name")->required();
    scenario->add_option("--protocol", protocol, "protocol to run (default apfl)");
    scenario->add_option("--seed", seed, "seed (default 7)")->each([&](const std::string&) {
        seed_set = true;
    });
    scenario->add_option("--out-dir", out_dir, "output directory");
    scenario->add_option("--broadcast-mode", broadcast_mode, "broadcast decision mode");

    CLI::App* compare = app.add_subcommand("compare", "Tabulate summary.csv files side by side");
    compare->add_option("summaries", summary_paths, "summary.csv paths")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfigError;
    }

    try {
        if (run->parsed()) {
            apfl::ExperimentConfig cfg = apfl::parse_config(config_path);
            apply_overrides(cfg, protocol, seed_set, seed, broadcast_mode);
            return execute(cfg, out_dir);
        }
        if (scenario->parsed()) {
            apfl::ExperimentConfig cfg = apfl::scenario_config(scenario_name, seed_set ? seed : 7);
            apply_overrides(cfg, protocol, false, 0, broadcast_mode);
            return execute(cfg, out_dir);
        }
        if (compare->parsed()) {
            std::vector<apfl::RunSummary> summaries;
            for (const std::string& path : summary_paths)
                summaries.push_back(apfl::parse_summary_csv(apfl::read_file(path)));
            std::cout << apfl::render_comparison(summaries);
            return kExitOk;
        }
    } catch (const apfl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const apfl::RejectedInput& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntimeError;
    }
    return kExitConfigError;
}
