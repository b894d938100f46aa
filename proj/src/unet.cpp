#include "dfip/unet.hpp"

#include <cmath>
#include <sstream>

#include "dfip/error.hpp"

namespace dfip {

std::vector<int> UNetConfig::resolutions() const {
    std::vector<int> out;
    int res = image_size;
    for (std::size_t level = 0; level < channel_multipliers.size(); ++level) {
        out.push_back(res);
        res /= 2;
    }
    return out;
}

std::vector<std::string> UNetConfig::violations() const {
    std::vector<std::string> v;
    if (base_channels <= 0) v.push_back("base_channels must be positive");
    if (base_channels % 2 != 0) v.push_back("base_channels must be even (sinusoidal time embedding width)");
    if (channel_multipliers.empty()) v.push_back("channel_multipliers must not be empty");
    for (int m : channel_multipliers)
        if (m <= 0) v.push_back("channel multipliers must be positive");
    if (res_blocks_per_level < 1) v.push_back("res_blocks_per_level must be >= 1");
    if (heads < 1) v.push_back("heads must be >= 1");
    if (time_embed_dim <= 0) v.push_back("time_embed_dim must be positive");
    if (input_channels != 3) v.push_back("input_channels must be 3 (noisy slice, baseline, mask)");
    if (output_channels != 1) v.push_back("output_channels must be 1");
    if (image_size <= 0) v.push_back("image_size must be positive");
    if (!channel_multipliers.empty() && image_size > 0) {
        const int factor = 1 << (channel_multipliers.size() - 1);
        if (image_size % factor != 0)
            v.push_back("image_size " + std::to_string(image_size) + " not divisible by 2^(levels-1) = " +
                        std::to_string(factor));
        const auto res = resolutions();
        for (int a : attention_resolutions)
            if (std::find(res.begin(), res.end(), a) == res.end())
                v.push_back("attention resolution " + std::to_string(a) + " is never reached");
    }
    if (heads >= 1 && base_channels > 0) {
        const auto res = resolutions();
        for (std::size_t level = 0; level < channel_multipliers.size(); ++level) {
            const int ch = base_channels * channel_multipliers[level];
            if (attention_resolutions.count(res[level]) && ch % heads != 0)
                v.push_back("heads " + std::to_string(heads) + " do not divide " + std::to_string(ch) +
                            " channels at resolution " + std::to_string(res[level]));
        }
        const int deepest = base_channels * (channel_multipliers.empty() ? 1 : channel_multipliers.back());
        if (middle_attention && deepest % heads != 0)
            v.push_back("heads " + std::to_string(heads) + " do not divide " + std::to_string(deepest) +
                        " channels in the middle stage");
    }
    return v;
}

void UNetConfig::validate() const {
    const auto v = violations();
    if (v.empty()) return;
    std::ostringstream os;
    os << "invalid UNetConfig:";
    for (const auto& m : v) os << "\n  - " << m;
    throw ConfigError(os.str());
}

UNetConfig UNetConfig::full_scale() {
    UNetConfig c;
    c.base_channels = 128;
    c.channel_multipliers = {1, 1, 2, 2, 4, 4};
    c.res_blocks_per_level = 2;
    c.attention_resolutions = {16};
    c.middle_attention = true;
    c.heads = 1;
    c.time_embed_dim = 512;
    c.image_size = 256;
    return c;
}

DenoiserModel::DenoiserModel(const UNetConfig& config, std::uint64_t seed, int num_timesteps)
    : config_(config), num_timesteps_(num_timesteps) {
    config_.validate();
    if (num_timesteps < 1) throw ConfigError("num_timesteps must be >= 1");
    Rng rng(seed);
    const int base = config_.base_channels;
    const int emb = config_.time_embed_dim;

    add_param("time.lin1.weight", Shape{emb, base}, 1.0f / std::sqrt(static_cast<float>(base)), rng);
    add_param("time.lin1.bias", Shape{emb}, 0.0f, rng);
    add_param("time.lin2.weight", Shape{emb, emb}, 1.0f / std::sqrt(static_cast<float>(emb)), rng);
    add_param("time.lin2.bias", Shape{emb}, 0.0f, rng);
    add_conv("input", config_.input_channels, base, 3, rng);

    std::vector<int> skip_channels{base};
    int ch = base;
    int res = config_.image_size;
    const std::size_t levels = config_.channel_multipliers.size();
    for (std::size_t level = 0; level < levels; ++level) {
        const int out = base * config_.channel_multipliers[level];
        for (int r = 0; r < config_.res_blocks_per_level; ++r) {
            Stage s{Stage::Kind::Res, {"down." + std::to_string(level) + "." + std::to_string(r), ch, out}, false, 0, {}};
            add_res(s.res, rng);
            s.attention = config_.attention_resolutions.count(res) > 0;
            if (s.attention) add_attention(s.res.prefix + ".attn", out, rng);
            down_.push_back(s);
            ch = out;
            skip_channels.push_back(ch);
        }
        if (level + 1 < levels) {
            Stage s{Stage::Kind::Down, {}, false, ch, "down." + std::to_string(level) + ".downsample"};
            add_conv(s.prefix, ch, ch, 3, rng);
            down_.push_back(s);
            skip_channels.push_back(ch);
            res /= 2;
        }
    }

    {
        Stage a{Stage::Kind::Res, {"mid.0", ch, ch}, false, 0, {}};
        add_res(a.res, rng);
        a.attention = config_.middle_attention || config_.attention_resolutions.count(res) > 0;
        if (a.attention) add_attention("mid.0.attn", ch, rng);
        middle_.push_back(a);
        Stage b{Stage::Kind::Res, {"mid.1", ch, ch}, false, 0, {}};
        add_res(b.res, rng);
        middle_.push_back(b);
    }

    for (std::size_t li = levels; li-- > 0;) {
        const int out = base * config_.channel_multipliers[li];
        for (int r = 0; r <= config_.res_blocks_per_level; ++r) {
            const int skip = skip_channels.back();
            skip_channels.pop_back();
            Stage s{Stage::Kind::Res, {"up." + std::to_string(li) + "." + std::to_string(r), ch + skip, out}, false, 0, {}};
            add_res(s.res, rng);
            s.attention = config_.attention_resolutions.count(res) > 0;
            if (s.attention) add_attention(s.res.prefix + ".attn", out, rng);
            up_.push_back(s);
            ch = out;
        }
        if (li > 0) {
            Stage s{Stage::Kind::Up, {}, false, ch, "up." + std::to_string(li) + ".upsample"};
            add_conv(s.prefix, ch, ch, 3, rng);
            up_.push_back(s);
            res *= 2;
        }
    }

    add_norm("out.norm", ch);
    add_conv("out.conv", ch, config_.output_channels, 3, rng, /*zero=*/true);
}

void DenoiserModel::add_param(const std::string& name, Shape shape, float bound, Rng& rng) {
    Tensor value(std::move(shape));
    if (bound > 0.0f)
        for (auto& v : value.values()) v = static_cast<float>((2.0 * rng.uniform() - 1.0) * bound);
    index_[name] = params_.size();
    params_.emplace_back(name, std::move(value));
}

void DenoiserModel::add_conv(const std::string& prefix, int in, int out, int k, Rng& rng, bool zero) {
    const float bound = zero ? 0.0f : 1.0f / std::sqrt(static_cast<float>(in * k * k));
    add_param(prefix + ".weight", Shape{out, in, k, k}, bound, rng);
    add_param(prefix + ".bias", Shape{out}, 0.0f, rng);
}

void DenoiserModel::add_norm(const std::string& prefix, int channels) {
    index_[prefix + ".gain"] = params_.size();
    params_.emplace_back(prefix + ".gain", Tensor(Shape{channels}, 1.0f));
    index_[prefix + ".offset"] = params_.size();
    params_.emplace_back(prefix + ".offset", Tensor(Shape{channels}, 0.0f));
}

void DenoiserModel::add_res(const ResBlock& r, Rng& rng) {
    add_norm(r.prefix + ".norm1", r.in_channels);
    add_conv(r.prefix + ".conv1", r.in_channels, r.out_channels, 3, rng);
    const int emb = config_.time_embed_dim;
    add_param(r.prefix + ".emb.weight", Shape{r.out_channels, emb}, 1.0f / std::sqrt(static_cast<float>(emb)), rng);
    add_param(r.prefix + ".emb.bias", Shape{r.out_channels}, 0.0f, rng);
    add_norm(r.prefix + ".norm2", r.out_channels);
    add_conv(r.prefix + ".conv2", r.out_channels, r.out_channels, 3, rng);
    if (r.in_channels != r.out_channels) add_conv(r.prefix + ".skip", r.in_channels, r.out_channels, 1, rng);
}

void DenoiserModel::add_attention(const std::string& prefix, int channels, Rng& rng) {
    add_norm(prefix + ".norm", channels);
    add_conv(prefix + ".qkv", channels, 3 * channels, 1, rng);
    add_conv(prefix + ".proj", channels, channels, 1, rng);
}

std::size_t DenoiserModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
}

Parameter& DenoiserModel::parameter(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("no parameter named " + name);
    return params_[it->second];
}

const Parameter& DenoiserModel::parameter(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("no parameter named " + name);
    return params_[it->second];
}

void DenoiserModel::check_input(const Shape& shape, std::span<const std::int64_t> t) const {
    const Shape want{shape.empty() ? 0 : shape[0], config_.input_channels, config_.image_size, config_.image_size};
    if (shape.size() != 4 || shape != want)
        throw ShapeError("denoiser input " + shape_str(shape) + ", expected [N," +
                         std::to_string(config_.input_channels) + "," + std::to_string(config_.image_size) + "," +
                         std::to_string(config_.image_size) + "]");
    if (static_cast<std::int64_t>(t.size()) != shape[0])
        throw ShapeError("expected one time step per batch item");
    for (auto ti : t)
        if (ti < 1 || ti > num_timesteps_)
            throw DomainError("time step " + std::to_string(ti) + " outside [1, " + std::to_string(num_timesteps_) +
                              "]");
}

Var DenoiserModel::predict(const Var& x, std::span<const std::int64_t> t, Tape* tape) {
    check_input(x.shape(), t);
    std::map<std::string, Var> bound;
    return run(x, t, [&](const std::string& name) {
        auto it = bound.find(name);
        if (it != bound.end()) return it->second;
        Var v = bind_or_constant(tape, parameter(name));
        bound.emplace(name, v);
        return v;
    });
}

Tensor DenoiserModel::predict_noise(const Tensor& x, std::span<const std::int64_t> t) const {
    check_input(x.shape(), t);
    return run(Var::constant(x), t, [&](const std::string& name) { return Var::constant(parameter(name).value); })
        .value();
}

Var DenoiserModel::run_res(const ResBlock& r, const Var& h, const Var& emb, const ParamFn& param) const {
    const auto& p = r.prefix;
    Var a = silu(group_norm(h, default_groups(r.in_channels), param(p + ".norm1.gain"), param(p + ".norm1.offset")));
    a = conv2d(a, param(p + ".conv1.weight"), param(p + ".conv1.bias"), 1, 1);
    a = add_channel_bias(a, linear(silu(emb), param(p + ".emb.weight"), param(p + ".emb.bias")));
    a = silu(group_norm(a, default_groups(r.out_channels), param(p + ".norm2.gain"), param(p + ".norm2.offset")));
    a = conv2d(a, param(p + ".conv2.weight"), param(p + ".conv2.bias"), 1, 1);
    Var skip = h;
    if (r.in_channels != r.out_channels) skip = conv2d(h, param(p + ".skip.weight"), param(p + ".skip.bias"), 1, 0);
    return add(skip, a);
}

Var DenoiserModel::run_attention(const std::string& prefix, const Var& h, const ParamFn& param) const {
    AttentionParams ap{param(prefix + ".norm.gain"),  param(prefix + ".norm.offset"), param(prefix + ".qkv.weight"),
                       param(prefix + ".qkv.bias"),   param(prefix + ".proj.weight"), param(prefix + ".proj.bias")};
    return self_attention(h, config_.heads, ap);
}

Var DenoiserModel::run(const Var& x, std::span<const std::int64_t> t, const ParamFn& param) const {
    const auto n = static_cast<std::int64_t>(t.size());
    const int base = config_.base_channels;
    Tensor sinus(Shape{n, base});
    for (std::int64_t i = 0; i < n; ++i) {
        const Tensor e = time_embedding(t[static_cast<std::size_t>(i)], base);
        std::copy(e.values().begin(), e.values().end(), sinus.data() + i * base);
    }
    Var emb = x.tape() ? x.tape()->input(std::move(sinus)) : Var::constant(std::move(sinus));
    emb = linear(emb, param("time.lin1.weight"), param("time.lin1.bias"));
    emb = linear(silu(emb), param("time.lin2.weight"), param("time.lin2.bias"));

    Var h = conv2d(x, param("input.weight"), param("input.bias"), 1, 1);
    std::vector<Var> skips{h};
    for (const auto& s : down_) {
        if (s.kind == Stage::Kind::Res) {
            h = run_res(s.res, h, emb, param);
            if (s.attention) h = run_attention(s.res.prefix + ".attn", h, param);
        } else {
            h = conv2d(h, param(s.prefix + ".weight"), param(s.prefix + ".bias"), 2, 1);
        }
        skips.push_back(h);
    }
    for (const auto& s : middle_) {
        h = run_res(s.res, h, emb, param);
        if (s.attention) h = run_attention(s.res.prefix + ".attn", h, param);
    }
    for (const auto& s : up_) {
        if (s.kind == Stage::Kind::Res) {
            const Var parts[] = {h, skips.back()};
            skips.pop_back();
            h = run_res(s.res, concat_channels(parts), emb, param);
            if (s.attention) h = run_attention(s.res.prefix + ".attn", h, param);
        } else {
            h = conv2d(upsample_nearest2x(h), param(s.prefix + ".weight"), param(s.prefix + ".bias"), 1, 1);
        }
    }
    const int ch = static_cast<int>(h.shape()[1]);
    h = silu(group_norm(h, default_groups(ch), param("out.norm.gain"), param("out.norm.offset")));
    return conv2d(h, param("out.conv.weight"), param("out.conv.bias"), 1, 1);
}

DenoiserModel build_unet(const UNetConfig& config, std::uint64_t seed, int num_timesteps) {
    return DenoiserModel(config, seed, num_timesteps);
}

} // namespace dfip
