#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dfip/autograd.hpp"
#include "dfip/rng.hpp"
#include "dfip/schedule.hpp"
#include "dfip/tensor.hpp"
#include "dfip/unet.hpp"

namespace dfip {

/// Training slices: ground truth x0, voided baseline b = x0 * (1 - m), mask m.
/// All three are [N, 1, S, S].
struct ConditionedBatch {
    Tensor x0;
    Tensor b;
    Tensor m;

    /// Checks shapes, binary masks, non-empty masks and the voiding identity.
    void validate() const;
    std::int64_t size() const { return x0.empty() ? 0 : x0.dim(0); }
};

/// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, for a single t.
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& schedule);

/// Per-item time steps along dimension 0.
Tensor q_sample(const Tensor& x0, std::span<const std::int64_t> t, const Tensor& eps, const NoiseSchedule& schedule);

/// Model input layout: channel 0 noisy slice, channel 1 baseline, channel 2 mask.
Tensor concat_condition(const Tensor& x_t, const Tensor& b, const Tensor& m);

/// mean((eps - eps_theta(q_sample(x0, t, eps) (+) b (+) m, t))^2).
/// Records on `tape` when non-null so the result can be back-propagated.
Var training_loss(NoisePredictor& model, const ConditionedBatch& batch, std::span<const std::int64_t> t,
                  const Tensor& eps, const NoiseSchedule& schedule, Tape* tape = nullptr);

/// One conditional denoising step x_t -> x_{t-1} for a batch sharing step t.
/// z is ignored (treated as zero) when t == 1.
Tensor reverse_step(NoisePredictor& model, const Tensor& x_t, const Tensor& b, const Tensor& m, int t,
                    const Tensor& z, const NoiseSchedule& schedule);

struct SampleOptions {
    /// Keep baseline values outside the mask in the returned slice.
    bool composite = false;
};

/// Full reverse chain for one slice b_i, m_i ([1,1,S,S]) from x_T ~ N(0, I).
/// The generator is seeded with `seed`; the chain never sees ground truth.
Tensor sample_slice(NoisePredictor& model, const Tensor& b, const Tensor& m, const NoiseSchedule& schedule,
                    std::uint64_t seed, const SampleOptions& options = {});

/// Runs independent chains for N slices at once; chain i draws all of its
/// noise from `generators[i]`.
Tensor sample_slices(NoisePredictor& model, const Tensor& b, const Tensor& m, const NoiseSchedule& schedule,
                     std::vector<Rng>& generators, const SampleOptions& options = {});

/// Unconditional chain for a one-channel model, output of shape `shape`.
Tensor generate_unconditional(NoisePredictor& model, const Shape& shape, const NoiseSchedule& schedule,
                              std::uint64_t seed);

} // namespace dfip
