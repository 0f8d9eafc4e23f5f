#pragma once

#include <string>
#include <vector>

#include "apfl/config.hpp"
#include "apfl/errors.hpp"

namespace apfl {

// Five-client reference scenarios covering the data/device heterogeneity grid:
//   A: homogeneous data, homogeneous devices
//   B: heterogeneous data, homogeneous devices
//   C: homogeneous data, heterogeneous devices
//   D: heterogeneous data and devices
inline ExperimentConfig scenario_config(const std::string& name, std::uint64_t seed = 7) {
    if (name != "A" && name != "B" && name != "C" && name != "D")
        throw RejectedInput("scenario_config: unknown scenario '" + name + "' (expected A, B, C or D)");

    ExperimentConfig cfg;
    cfg.seed = seed;
    // low-dimensional mixture: cluster-specific class regions overlap across
    // clusters, so a single global model cannot serve every client
    cfg.population.feature_dim = 3;
    cfg.population.classes = 10;
    cfg.population.samples_per_client = 120;
    cfg.population.noise_std = 0.3;
    cfg.population.seed = seed;
    cfg.skew_mode = "explicit";
    cfg.time_budget_s = 900.0;

    const bool hetero_data = name == "B" || name == "D";
    const bool hetero_device = name == "C" || name == "D";

    if (hetero_data) {
        // clients 1-2: quarter mass on classes 1-4; clients 3-4: half mass on
        // classes 1-2; client 5: 25/75 between classes 1 and 2
        cfg.population.clusters = 3;
        cfg.population.clients_per_cluster = {2, 2, 1};
        std::vector<double> s0(10, 0.0), s1(10, 0.0), s2(10, 0.0);
        s0[0] = s0[1] = s0[2] = s0[3] = 0.25;
        s1[0] = s1[1] = 0.5;
        s2[0] = 0.25;
        s2[1] = 0.75;
        cfg.population.class_skew = {s0, s1, s2};
    } else {
        cfg.population.clusters = 1;
        cfg.population.clients_per_cluster = {5};
        cfg.population.class_skew = {std::vector<double>(10, 0.1)};
    }

    if (hetero_device) {
        cfg.device_classes = {1, 1, 2, 2, 4};
    } else {
        cfg.device_classes = {1, 1, 1, 1, 1};
    }

    cfg.validate();
    return cfg;
}

}  // namespace apfl
