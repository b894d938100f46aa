#pragma once

#include <filesystem>
#include <optional>

#include <nlohmann/json.hpp>

#include "dfip/schedule.hpp"
#include "dfip/trainer.hpp"
#include "dfip/unet.hpp"

namespace dfip {

using Json = nlohmann::json;

// JSON mappings. The *_from_json readers start from `defaults`, override the
// keys present, and reject unknown keys with a ConfigError.

Json to_json(const UNetConfig& c);
UNetConfig unet_from_json(const Json& j, const UNetConfig& defaults = {});

Json to_json(const TrainerConfig& c);
TrainerConfig trainer_from_json(const Json& j, const TrainerConfig& defaults = {});

struct ScheduleConfig {
    int steps = 1000;
    std::optional<double> beta_start;
    std::optional<double> beta_end;

    NoiseSchedule build() const;
};

Json to_json(const ScheduleConfig& c);
ScheduleConfig schedule_from_json(const Json& j, const ScheduleConfig& defaults = {});

/// Settings for `dfip train`: {"unet": {...}, "schedule": {...}, "trainer": {...}}.
struct TrainRunConfig {
    UNetConfig unet = UNetConfig::desk_scale();
    ScheduleConfig schedule;
    TrainerConfig trainer;

    static TrainRunConfig from_json(const Json& j, const TrainRunConfig& defaults);
    static TrainRunConfig from_json(const Json& j);
    /// Parse errors are reported with line and column.
    static TrainRunConfig load(const std::filesystem::path& path, const TrainRunConfig& defaults);
    static TrainRunConfig load(const std::filesystem::path& path);
    Json to_json() const;
};

} // namespace dfip
