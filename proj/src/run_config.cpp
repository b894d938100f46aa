#include "dfip/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "dfip/error.hpp"

namespace dfip {
namespace {

void reject_unknown(const Json& j, std::initializer_list<const char*> known, const char* where) {
    if (!j.is_object()) throw ConfigError(std::string(where) + ": expected a JSON object");
    const std::set<std::string> names(known.begin(), known.end());
    for (const auto& item : j.items())
        if (!names.count(item.key())) throw ConfigError(std::string(where) + ": unknown key \"" + item.key() + "\"");
}

template <class T>
void read(const Json& j, const char* key, T& out, const char* where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const Json::exception& e) {
        throw ConfigError(std::string(where) + "." + key + ": " + e.what());
    }
}

} // namespace

Json to_json(const UNetConfig& c) {
    return Json{{"base_channels", c.base_channels},
                {"channel_multipliers", c.channel_multipliers},
                {"res_blocks_per_level", c.res_blocks_per_level},
                {"attention_resolutions", c.attention_resolutions},
                {"middle_attention", c.middle_attention},
                {"heads", c.heads},
                {"time_embed_dim", c.time_embed_dim},
                {"input_channels", c.input_channels},
                {"output_channels", c.output_channels},
                {"image_size", c.image_size}};
}

UNetConfig unet_from_json(const Json& j, const UNetConfig& defaults) {
    reject_unknown(j,
                   {"base_channels", "channel_multipliers", "res_blocks_per_level", "attention_resolutions",
                    "middle_attention", "heads",
                    "time_embed_dim", "input_channels", "output_channels", "image_size"},
                   "unet");
    UNetConfig c = defaults;
    read(j, "base_channels", c.base_channels, "unet");
    read(j, "channel_multipliers", c.channel_multipliers, "unet");
    read(j, "res_blocks_per_level", c.res_blocks_per_level, "unet");
    read(j, "attention_resolutions", c.attention_resolutions, "unet");
    read(j, "middle_attention", c.middle_attention, "unet");
    read(j, "heads", c.heads, "unet");
    read(j, "time_embed_dim", c.time_embed_dim, "unet");
    read(j, "input_channels", c.input_channels, "unet");
    read(j, "output_channels", c.output_channels, "unet");
    read(j, "image_size", c.image_size, "unet");
    return c;
}

Json to_json(const TrainerConfig& c) {
    return Json{{"batch_size", c.batch_size},         {"lr", c.lr},
                {"ema_rate", c.ema_rate},             {"steps", c.steps},
                {"checkpoint_every", c.checkpoint_every}, {"log_every", c.log_every},
                {"seed", c.seed}};
}

TrainerConfig trainer_from_json(const Json& j, const TrainerConfig& defaults) {
    reject_unknown(j, {"batch_size", "lr", "ema_rate", "steps", "checkpoint_every", "log_every", "seed"}, "trainer");
    TrainerConfig c = defaults;
    read(j, "batch_size", c.batch_size, "trainer");
    read(j, "lr", c.lr, "trainer");
    read(j, "ema_rate", c.ema_rate, "trainer");
    read(j, "steps", c.steps, "trainer");
    read(j, "checkpoint_every", c.checkpoint_every, "trainer");
    read(j, "log_every", c.log_every, "trainer");
    read(j, "seed", c.seed, "trainer");
    return c;
}

NoiseSchedule ScheduleConfig::build() const {
    return NoiseSchedule::linear(steps, beta_start.value_or(NoiseSchedule::default_beta_start(steps)),
                                 beta_end.value_or(NoiseSchedule::default_beta_end(steps)));
}

Json to_json(const ScheduleConfig& c) {
    const NoiseSchedule s = c.build();
    return Json{{"T", c.steps}, {"beta_start", s.beta_start()}, {"beta_end", s.beta_end()}};
}

ScheduleConfig schedule_from_json(const Json& j, const ScheduleConfig& defaults) {
    reject_unknown(j, {"T", "beta_start", "beta_end"}, "schedule");
    ScheduleConfig c = defaults;
    read(j, "T", c.steps, "schedule");
    if (j.contains("T") && !j.contains("beta_start")) c.beta_start.reset();
    if (j.contains("T") && !j.contains("beta_end")) c.beta_end.reset();
    if (j.contains("beta_start")) c.beta_start = j.at("beta_start").get<double>();
    if (j.contains("beta_end")) c.beta_end = j.at("beta_end").get<double>();
    return c;
}

TrainRunConfig TrainRunConfig::from_json(const Json& j, const TrainRunConfig& defaults) {
    reject_unknown(j, {"unet", "schedule", "trainer"}, "config");
    TrainRunConfig c = defaults;
    if (j.contains("unet")) c.unet = unet_from_json(j.at("unet"), c.unet);
    if (j.contains("schedule")) c.schedule = schedule_from_json(j.at("schedule"), c.schedule);
    if (j.contains("trainer")) c.trainer = trainer_from_json(j.at("trainer"), c.trainer);
    return c;
}

TrainRunConfig TrainRunConfig::load(const std::filesystem::path& path, const TrainRunConfig& defaults) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    Json j;
    try {
        j = Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    try {
        return from_json(j, defaults);
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

Json TrainRunConfig::to_json() const {
    return Json{{"unet", dfip::to_json(unet)}, {"schedule", dfip::to_json(schedule)},
                {"trainer", dfip::to_json(trainer)}};
}

} // namespace dfip

namespace dfip {

TrainRunConfig TrainRunConfig::from_json(const Json& j) { return from_json(j, TrainRunConfig{}); }
TrainRunConfig TrainRunConfig::load(const std::filesystem::path& path) { return load(path, TrainRunConfig{}); }

} // namespace dfip
