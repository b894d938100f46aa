#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dfip/schedule.hpp"
#include "dfip/trainer.hpp"
#include "dfip/unet.hpp"

namespace dfip {

/// Serialized training state.
///
/// File layout: magic "DFIP", u32 format version, u64 byte length of a UTF-8
/// JSON metadata block, the metadata, then little-endian float32 blobs in
/// manifest order: raw parameters, EMA parameters, and (when
/// has_optimizer_state) Adam first and second moments.
struct Checkpoint {
    static constexpr std::uint32_t format_version = 1;

    UNetConfig unet;
    int steps = 1000; // T
    double beta_start = 1e-4;
    double beta_end = 0.02;
    TrainerConfig trainer;
    std::int64_t step_count = 0;
    std::string rng_state;
    std::vector<std::string> names;
    std::vector<Tensor> params;
    std::vector<Tensor> ema;
    std::vector<Tensor> adam_m;
    std::vector<Tensor> adam_v;

    bool has_optimizer_state() const { return !adam_m.empty(); }
    NoiseSchedule schedule() const { return NoiseSchedule::linear(steps, beta_start, beta_end); }
    /// Model with EMA weights (use_ema) or the raw weights.
    DenoiserModel model(bool use_ema = true) const;
};

/// Writes to a temporary sibling and renames it over `path`.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);

/// Throws IoError on bad magic/version, truncation, or a manifest that does
/// not match the parameters implied by the stored config.
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace dfip
