#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dfip/autograd.hpp"

namespace dfip {

// Differentiable primitives. Every function records itself on the tape of its
// first tape-bound argument; with constant arguments only the value is computed.
// Image tensors use [N, C, H, W] layout.

/// Zero-padded cross-correlation. weight is [K, C, kh, kw], bias is [K].
Var conv2d(const Var& input, const Var& weight, const Var& bias, int stride, int padding);

/// Normalizes each of `groups` channel groups to zero mean / unit variance
/// (statistics per sample), then applies the per-channel gain and offset.
Var group_norm(const Var& input, int groups, const Var& gain, const Var& offset, float eps = 1e-5f);

/// Group count used by the network: 8, or C when C < 8, or gcd(C, 8) when
/// 8 does not divide C (decoder inputs after skip concatenation).
int default_groups(std::int64_t channels);

Var silu(const Var& input);

/// [N, in] x weight [out, in] + bias [out].
Var linear(const Var& input, const Var& weight, const Var& bias);

/// Scaled dot-product attention over the H*W spatial tokens.
///
/// `qkv` holds queries, keys and values as channel blocks [0,C), [C,2C),
/// [2C,3C); head j uses channels [j*C/heads, (j+1)*C/heads) of each block.
/// Returns [N, C, H, W].
Var attention(const Var& qkv, int heads);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, float s);

/// x [N,C,H,W] + v [N,C] broadcast over the spatial extent.
Var add_channel_bias(const Var& x, const Var& v);

/// Concatenates along dimension 1 (channels).
Var concat_channels(std::span<const Var> parts);

/// 2x nearest-neighbor upsampling of [N,C,H,W].
Var upsample_nearest2x(const Var& input);

/// Softmax over the last dimension.
Var softmax(const Var& input);

/// Scalar [1] results.
Var sum(const Var& input);
Var mean(const Var& input);

/// Sinusoidal embedding: entries [0, dim/2) are sin(t*w_k), entries
/// [dim/2, dim) are cos(t*w_k), w_k = max_period^(-2k/dim).
Tensor time_embedding(std::int64_t t, int dim, float max_period = 10000.0f);

/// Parameters of a self-attention block.
struct AttentionParams {
    Var norm_gain, norm_offset;
    Var qkv_weight, qkv_bias;   // [3C, C, 1, 1], [3C]
    Var proj_weight, proj_bias; // [C, C, 1, 1], [C]
};

/// input + proj(attention(qkv(group_norm(input)))).
Var self_attention(const Var& input, int heads, const AttentionParams& p);

} // namespace dfip
