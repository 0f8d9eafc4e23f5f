#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "apfl/errors.hpp"

namespace apfl {

// Simulated compute profile. Speed classes 1..5 map to multipliers of the
// fleet's base seconds-per-epoch; larger is slower.
struct DeviceProfile {
    int speed_class = 4;
    double seconds_per_epoch = 1.0;
    double jitter_fraction = 0.1;

    void validate() const {
        if (speed_class < 1 || speed_class > 5) throw RejectedInput("DeviceProfile: speed class out of range");
        if (seconds_per_epoch <= 0.0) throw RejectedInput("DeviceProfile: seconds_per_epoch must be positive");
        if (jitter_fraction < 0.0 || jitter_fraction >= 1.0)
            throw RejectedInput("DeviceProfile: jitter fraction must be in [0, 1)");
    }
};

// Default multipliers per class: D1..D5 = 8x, 4x, 2x, 1x, 10x base.
inline double device_speed_multiplier(int speed_class) {
    switch (speed_class) {
        case 1: return 8.0;
        case 2: return 4.0;
        case 3: return 2.0;
        case 4: return 1.0;
        case 5: return 10.0;
    }
    throw RejectedInput("device_speed_multiplier: speed class out of range");
}

struct LinkModel {
    double upstream_bytes_per_s = 16000.0;
    double downstream_bytes_per_s = 160000.0;

    double asymmetry() const { return downstream_bytes_per_s / upstream_bytes_per_s; }

    void validate() const {
        if (upstream_bytes_per_s <= 0.0 || downstream_bytes_per_s <= 0.0)
            throw RejectedInput("LinkModel: rates must be positive");
    }
};

enum class Direction { Up, Down };

inline double transfer_time(std::size_t bytes, Direction direction, const LinkModel& link) {
    if (bytes == 0) throw RejectedInput("transfer_time: zero payload");
    link.validate();
    const double rate =
        direction == Direction::Up ? link.upstream_bytes_per_s : link.downstream_bytes_per_s;
    return static_cast<double>(bytes) / rate;
}

// Model payload on the wire: 4 bytes per parameter.
inline std::size_t model_payload_bytes(std::size_t param_count) { return param_count * 4; }

// One transfer, attributed to its start time.
struct TransferRecord {
    double at = 0.0;
    Direction direction = Direction::Up;
    std::size_t bytes = 0;
    int client_id = -1;
};

// Sliding-window maximum of transferred bytes in one direction.
inline std::size_t peak_concurrency(const std::vector<TransferRecord>& transfers, Direction direction,
                                    double window_seconds) {
    std::vector<const TransferRecord*> dir;
    for (const TransferRecord& t : transfers)
        if (t.direction == direction) dir.push_back(&t);
    if (dir.empty()) return 0;
    std::sort(dir.begin(), dir.end(),
              [](const TransferRecord* a, const TransferRecord* b) { return a->at < b->at; });
    std::size_t best = 0;
    std::size_t window_sum = 0;
    std::size_t lo = 0;
    for (std::size_t hi = 0; hi < dir.size(); ++hi) {
        window_sum += dir[hi]->bytes;
        while (dir[hi]->at - dir[lo]->at > window_seconds) {
            window_sum -= dir[lo]->bytes;
            lo++;
        }
        best = std::max(best, window_sum);
    }
    return best;
}

}  // namespace apfl
