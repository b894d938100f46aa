#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "dfip/autograd.hpp"
#include "dfip/ops.hpp"
#include "dfip/rng.hpp"

namespace dfip {

/// Anything that maps a (concatenated) noisy input and time steps to a
/// one-channel noise estimate. Implemented by DenoiserModel and by test stubs.
class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;
    /// x is [N, C, S, S]; returns [N, 1, S, S]. Records on `tape` when non-null.
    virtual Var predict(const Var& x, std::span<const std::int64_t> t, Tape* tape) = 0;
};

struct UNetConfig {
    int base_channels = 32;
    std::vector<int> channel_multipliers{1, 2, 2};
    int res_blocks_per_level = 1;
    std::set<int> attention_resolutions{16};
    /// Attention in the middle stage even when its resolution is not listed.
    bool middle_attention = false;
    int heads = 1;
    int time_embed_dim = 128;
    int input_channels = 3;
    int output_channels = 1;
    int image_size = 32;

    /// Spatial sizes visited by the encoder, largest first.
    std::vector<int> resolutions() const;
    /// Every violated invariant, one message each; empty when valid.
    std::vector<std::string> violations() const;
    void validate() const;

    static UNetConfig desk_scale() { return {}; }
    /// 128 base channels, attention at 16, laid out like the 256px improved-DDPM model.
    static UNetConfig full_scale();

    friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

/// Conditional noise-prediction U-Net.
///
/// Encoder levels of residual blocks (each injecting the time embedding)
/// with stride-2 convolution downsampling, a middle stage, and a decoder that
/// concatenates encoder skips and upsamples by nearest-neighbour + conv.
/// Self-attention follows residual blocks whose resolution is listed in
/// UNetConfig::attention_resolutions. The output convolution starts at zero.
class DenoiserModel : public NoisePredictor {
public:
    DenoiserModel() = default;
    DenoiserModel(const UNetConfig& config, std::uint64_t seed, int num_timesteps = 1000);

    const UNetConfig& config() const noexcept { return config_; }
    int num_timesteps() const noexcept { return num_timesteps_; }

    std::vector<Parameter>& parameters() noexcept { return params_; }
    const std::vector<Parameter>& parameters() const noexcept { return params_; }
    std::size_t parameter_count() const;
    Parameter& parameter(const std::string& name);
    const Parameter& parameter(const std::string& name) const;

    Var predict(const Var& x, std::span<const std::int64_t> t, Tape* tape) override;

    /// Inference forward pass; no tape, safe to call concurrently.
    Tensor predict_noise(const Tensor& x, std::span<const std::int64_t> t) const;

private:
    struct ResBlock {
        std::string prefix;
        int in_channels, out_channels;
    };
    struct Stage {
        enum class Kind { Res, Down, Up } kind;
        ResBlock res;        // Kind::Res
        bool attention = false;
        int channels = 0;    // Kind::Down / Kind::Up
        std::string prefix;  // Kind::Down / Kind::Up
    };

    using ParamFn = std::function<Var(const std::string&)>;

    void add_param(const std::string& name, Shape shape, float bound, Rng& rng);
    void add_conv(const std::string& prefix, int in, int out, int k, Rng& rng, bool zero = false);
    void add_norm(const std::string& prefix, int channels);
    void add_res(const ResBlock& r, Rng& rng);
    void add_attention(const std::string& prefix, int channels, Rng& rng);

    Var run(const Var& x, std::span<const std::int64_t> t, const ParamFn& param) const;
    Var run_res(const ResBlock& r, const Var& h, const Var& emb, const ParamFn& param) const;
    Var run_attention(const std::string& prefix, const Var& h, const ParamFn& param) const;
    void check_input(const Shape& shape, std::span<const std::int64_t> t) const;

    UNetConfig config_;
    int num_timesteps_ = 1000;
    std::vector<Parameter> params_;
    std::map<std::string, std::size_t> index_;
    std::vector<Stage> down_, middle_, up_;
};

/// Builds a model with deterministic initialization from `seed`.
DenoiserModel build_unet(const UNetConfig& config, std::uint64_t seed, int num_timesteps = 1000);

} // namespace dfip
