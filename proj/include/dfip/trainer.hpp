#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dfip/diffusion.hpp"
#include "dfip/rng.hpp"
#include "dfip/schedule.hpp"
#include "dfip/unet.hpp"

namespace dfip {

struct AdamState {
    double lr = 1e-4;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    std::int64_t step_count = 0;
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;

    /// Zeroed moments shaped like `params`.
    static AdamState for_parameters(std::span<const Parameter> params, double lr);
};

/// Bias-corrected Adam update of every parameter, then zeroes the gradients.
/// A non-finite gradient aborts the whole step (nothing is modified) with a
/// DomainError naming the parameter.
void adam_step(std::span<Parameter> params, AdamState& state);

struct EmaState {
    double rate = 0.9999;
    std::vector<Tensor> shadow;

    /// Shadow initialized to the current parameter values.
    static EmaState for_parameters(std::span<const Parameter> params, double rate);
};

/// shadow <- rate * shadow + (1 - rate) * param.
void ema_update(std::span<const Parameter> params, EmaState& ema);

struct TrainerConfig {
    int batch_size = 8;
    double lr = 1e-4;
    double ema_rate = 0.9999;
    std::int64_t steps = 3000;
    std::int64_t checkpoint_every = 500;
    int log_every = 50;
    std::uint64_t seed = 0;

    friend bool operator==(const TrainerConfig&, const TrainerConfig&) = default;
};

/// All training slices, stacked as one [N,1,S,S] batch.
class SliceDataset {
public:
    SliceDataset() = default;
    explicit SliceDataset(ConditionedBatch slices);

    std::int64_t size() const noexcept { return slices_.size(); }
    std::int64_t slice_size() const { return slices_.x0.dim(2); }
    ConditionedBatch gather(std::span<const std::int64_t> indices) const;
    const ConditionedBatch& slices() const noexcept { return slices_; }

private:
    ConditionedBatch slices_;
};

struct Checkpoint;

/// The optimisation loop: per step draw a batch, a uniform t and fresh noise
/// per item, evaluate the noise-prediction loss, back-propagate, apply Adam
/// and update the EMA shadow. Every draw comes from one generator whose state
/// is part of the checkpoint, so a resumed run continues bit-identically.
class Trainer {
public:
    Trainer(const UNetConfig& unet, const NoiseSchedule& schedule, const TrainerConfig& config, SliceDataset data);
    Trainer(const Checkpoint& checkpoint, SliceDataset data);

    /// One optimisation step; returns the loss before the update.
    float step();

    struct Callbacks {
        std::function<void(std::int64_t step, float loss, double seconds)> on_log;
        std::function<void(const Trainer&)> on_checkpoint;
    };
    /// Runs until step_count() == config().steps. Checkpoint callback fires
    /// every checkpoint_every steps and once at the end.
    void run(const Callbacks& callbacks = {});

    std::int64_t step_count() const noexcept { return adam_.step_count; }
    const TrainerConfig& config() const noexcept { return config_; }
    TrainerConfig& config() noexcept { return config_; }
    const NoiseSchedule& schedule() const noexcept { return schedule_; }
    DenoiserModel& model() noexcept { return model_; }
    const DenoiserModel& model() const noexcept { return model_; }
    const EmaState& ema() const noexcept { return ema_; }
    const AdamState& adam() const noexcept { return adam_; }
    const Rng& rng() const noexcept { return rng_; }
    const SliceDataset& data() const noexcept { return data_; }

    /// Copy of the model carrying the EMA weights.
    DenoiserModel ema_model() const;
    Checkpoint checkpoint() const;

private:
    DenoiserModel model_;
    NoiseSchedule schedule_;
    TrainerConfig config_;
    SliceDataset data_;
    AdamState adam_;
    EmaState ema_;
    Rng rng_;
};

} // namespace dfip
