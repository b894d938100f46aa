#include "dfip/volume.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "dfip/error.hpp"

namespace dfip {

std::string dims_str(const Dims& d) {
    return std::to_string(d.depth) + "x" + std::to_string(d.height) + "x" + std::to_string(d.width);
}

Volume::Volume(Dims dims, float fill) : dims_(dims) {
    if (dims.depth <= 0 || dims.height <= 0 || dims.width <= 0)
        throw ShapeError("invalid volume dims " + dims_str(dims));
    voxels_.assign(static_cast<std::size_t>(dims.count()), fill);
}

Volume::Volume(Dims dims, std::vector<float> voxels) : dims_(dims), voxels_(std::move(voxels)) {
    if (dims.depth <= 0 || dims.height <= 0 || dims.width <= 0)
        throw ShapeError("invalid volume dims " + dims_str(dims));
    if (static_cast<std::int64_t>(voxels_.size()) != dims.count())
        throw ShapeError("voxel count " + std::to_string(voxels_.size()) + " does not match dims " + dims_str(dims));
}

std::span<float> Volume::slice(std::int64_t d) {
    if (d < 0 || d >= dims_.depth) throw DomainError("slice index " + std::to_string(d) + " out of range");
    return std::span<float>(voxels_).subspan(static_cast<std::size_t>(d * dims_.slice_size()),
                                             static_cast<std::size_t>(dims_.slice_size()));
}

std::span<const float> Volume::slice(std::int64_t d) const {
    if (d < 0 || d >= dims_.depth) throw DomainError("slice index " + std::to_string(d) + " out of range");
    return std::span<const float>(voxels_).subspan(static_cast<std::size_t>(d * dims_.slice_size()),
                                                   static_cast<std::size_t>(dims_.slice_size()));
}

Tensor Volume::slice_tensor(std::int64_t d) const {
    const auto s = slice(d);
    return Tensor(Shape{1, 1, dims_.height, dims_.width}, std::vector<float>(s.begin(), s.end()));
}

void Volume::set_slice(std::int64_t d, std::span<const float> values) {
    auto dst = slice(d);
    if (values.size() != dst.size())
        throw ShapeError("slice has " + std::to_string(values.size()) + " values, volume slices have " +
                         std::to_string(dst.size()));
    std::copy(values.begin(), values.end(), dst.begin());
}

bool Volume::all_finite() const noexcept {
    return std::all_of(voxels_.begin(), voxels_.end(), [](float v) { return std::isfinite(v); });
}

Volume binarize(const Volume& mask, float threshold) {
    Volume out = mask;
    for (auto& v : out.voxels()) v = v >= threshold ? 1.0f : 0.0f;
    return out;
}

bool is_binary(const Volume& mask) {
    return std::all_of(mask.voxels().begin(), mask.voxels().end(), [](float v) { return v == 0.0f || v == 1.0f; });
}

bool any_nonzero(std::span<const float> values) {
    return std::any_of(values.begin(), values.end(), [](float v) { return v != 0.0f; });
}

MaskedCase MaskedCase::from_ground_truth(Volume gt, const Volume& mask) {
    if (gt.dims() != mask.dims())
        throw ShapeError("ground truth " + dims_str(gt.dims()) + " vs mask " + dims_str(mask.dims()));
    MaskedCase c;
    c.mask = binarize(mask);
    c.baseline = gt;
    for (std::size_t i = 0; i < gt.size(); ++i) c.baseline[i] = gt[i] * (1.0f - c.mask[i]);
    c.ground_truth = std::move(gt);
    return c;
}

void MaskedCase::validate() const {
    if (mask.dims() != baseline.dims())
        throw ShapeError("mask " + dims_str(mask.dims()) + " vs baseline " + dims_str(baseline.dims()));
    if (!is_binary(mask)) throw DomainError("mask is not binary");
    if (!ground_truth) return;
    if (ground_truth->dims() != mask.dims())
        throw ShapeError("ground truth " + dims_str(ground_truth->dims()) + " vs mask " + dims_str(mask.dims()));
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (baseline[i] != (*ground_truth)[i] * (1.0f - mask[i]))
            throw DomainError("baseline is not the voided ground truth at voxel " + std::to_string(i));
}

double percentile(std::span<const float> values, double pct) {
    if (values.empty()) throw DomainError("percentile of an empty set");
    if (pct < 0.0 || pct > 100.0) throw DomainError("percentile outside [0, 100]");
    std::vector<float> sorted(values.begin(), values.end());
    const double rank = pct / 100.0 * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(lo), sorted.end());
    const double a = sorted[lo];
    double b = a;
    if (hi != lo) b = *std::min_element(sorted.begin() + static_cast<std::ptrdiff_t>(hi), sorted.end());
    return a + (rank - static_cast<double>(lo)) * (b - a);
}

Volume preprocess(const Volume& v) {
    if (v.size() == 0) throw DomainError("cannot preprocess an empty volume");
    const double lo = percentile(v.voxels(), 0.1);
    const double hi = percentile(v.voxels(), 99.9);
    Volume out = v;
    if (!(hi > lo)) {
        std::fill(out.voxels().begin(), out.voxels().end(), 0.0f);
        return out;
    }
    const double inv = 1.0 / (hi - lo);
    for (auto& x : out.voxels()) x = static_cast<float>((std::clamp(static_cast<double>(x), lo, hi) - lo) * inv);
    return out;
}

std::pair<Volume, CropInfo> center_crop_slices(const Volume& v, std::int64_t size) {
    if (size <= 0) throw ConfigError("crop size must be positive");
    const Dims d = v.dims();
    CropInfo info{d, size, (d.height - size) / 2, (d.width - size) / 2};
    // floor division so odd differences keep the extra row/column at the end
    if (d.height < size) info.offset_h = -((size - d.height) / 2);
    if (d.width < size) info.offset_w = -((size - d.width) / 2);
    Volume out(Dims{d.depth, size, size});
    for (std::int64_t z = 0; z < d.depth; ++z)
        for (std::int64_t y = 0; y < size; ++y) {
            const std::int64_t sy = y + info.offset_h;
            if (sy < 0 || sy >= d.height) continue;
            for (std::int64_t x = 0; x < size; ++x) {
                const std::int64_t sx = x + info.offset_w;
                if (sx < 0 || sx >= d.width) continue;
                out.at(z, y, x) = v.at(z, sy, sx);
            }
        }
    return {std::move(out), info};
}

Volume uncrop_slices(const Volume& cropped, const CropInfo& info, const Volume* background) {
    if (cropped.dims() != Dims{info.original.depth, info.size, info.size})
        throw ShapeError("cropped volume " + dims_str(cropped.dims()) + " does not match crop info");
    Volume out = background ? *background : Volume(info.original);
    if (out.dims() != info.original) throw ShapeError("background dims do not match the original volume");
    for (std::int64_t z = 0; z < info.original.depth; ++z)
        for (std::int64_t y = 0; y < info.size; ++y) {
            const std::int64_t sy = y + info.offset_h;
            if (sy < 0 || sy >= info.original.height) continue;
            for (std::int64_t x = 0; x < info.size; ++x) {
                const std::int64_t sx = x + info.offset_w;
                if (sx < 0 || sx >= info.original.width) continue;
                out.at(z, sy, sx) = cropped.at(z, y, x);
            }
        }
    return out;
}

std::vector<std::int64_t> masked_slice_indices(const Volume& mask) {
    std::vector<std::int64_t> out;
    for (std::int64_t d = 0; d < mask.dims().depth; ++d)
        if (any_nonzero(mask.slice(d))) out.push_back(d);
    return out;
}

std::vector<SliceSample> select_slices(const MaskedCase& c) {
    if (c.mask.dims() != c.baseline.dims()) throw ShapeError("mask and baseline dims differ");
    std::vector<SliceSample> out;
    for (std::int64_t d : masked_slice_indices(c.mask)) {
        SliceSample s{d, c.baseline.slice_tensor(d), c.mask.slice_tensor(d), std::nullopt};
        if (c.ground_truth) s.ground_truth = c.ground_truth->slice_tensor(d);
        out.push_back(std::move(s));
    }
    return out;
}

Volume reassemble(const Volume& baseline, std::span<const std::pair<std::int64_t, Tensor>> sampled) {
    Volume out = baseline;
    std::set<std::int64_t> seen;
    for (const auto& [index, slice] : sampled) {
        if (index < 0 || index >= baseline.dims().depth)
            throw DomainError("slice index " + std::to_string(index) + " out of range");
        if (!seen.insert(index).second) throw DomainError("slice index " + std::to_string(index) + " listed twice");
        out.set_slice(index, slice.values());
    }
    return out;
}

std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma > 0.0)) throw DomainError("gaussian sigma must be positive");
    const auto radius = static_cast<int>(std::ceil(4.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = v;
        total += v;
    }
    for (auto& v : k) v /= total;
    return k;
}

namespace {

// Filters along one axis. `stride` is the element step along the axis, `len`
// its extent; lines are enumerated by the caller.
void smooth_line(const float* src, float* dst, std::int64_t len, std::int64_t stride, const std::vector<double>& k) {
    const auto radius = static_cast<std::int64_t>(k.size() / 2);
    for (std::int64_t i = 0; i < len; ++i) {
        double acc = 0.0, mass = 0.0;
        const std::int64_t a = std::max<std::int64_t>(0, i - radius);
        const std::int64_t b = std::min<std::int64_t>(len - 1, i + radius);
        for (std::int64_t j = a; j <= b; ++j) {
            const double w = k[static_cast<std::size_t>(j - i + radius)];
            acc += w * src[j * stride];
            mass += w;
        }
        dst[i * stride] = static_cast<float>(acc / mass);
    }
}

} // namespace

Volume gaussian_smooth(const Volume& v, double sigma, const SmoothOptions& options) {
    const auto k = gaussian_kernel(sigma);
    const Dims d = v.dims();
    Volume a = v, b = v;
    // width
    for (std::int64_t z = 0; z < d.depth; ++z)
        for (std::int64_t y = 0; y < d.height; ++y) {
            const std::size_t off = static_cast<std::size_t>((z * d.height + y) * d.width);
            smooth_line(a.voxels().data() + off, b.voxels().data() + off, d.width, 1, k);
        }
    // height
    for (std::int64_t z = 0; z < d.depth; ++z)
        for (std::int64_t x = 0; x < d.width; ++x) {
            const std::size_t off = static_cast<std::size_t>(z * d.height * d.width + x);
            smooth_line(b.voxels().data() + off, a.voxels().data() + off, d.height, d.width, k);
        }
    // depth
    for (std::int64_t y = 0; y < d.height; ++y)
        for (std::int64_t x = 0; x < d.width; ++x) {
            const std::size_t off = static_cast<std::size_t>(y * d.width + x);
            smooth_line(a.voxels().data() + off, b.voxels().data() + off, d.depth, d.slice_size(), k);
        }
    if (options.limit_to) {
        if (options.limit_to->dims() != d) throw ShapeError("smoothing mask dims do not match the volume");
        for (std::size_t i = 0; i < b.size(); ++i)
            if ((*options.limit_to)[i] == 0.0f) b[i] = v[i];
    }
    return b;
}

Volume renormalize_output(const Volume& output, const Volume& input_ref) {
    if (output.size() == 0 || input_ref.size() == 0) throw DomainError("renormalize_output on an empty volume");
    const double lo = percentile(input_ref.voxels(), 0.5);
    const double hi = percentile(input_ref.voxels(), 99.5);
    const auto [mn, mx] = std::minmax_element(output.voxels().begin(), output.voxels().end());
    const double omin = *mn, omax = *mx;
    Volume out = output;
    if (!(omax > omin)) {
        std::fill(out.voxels().begin(), out.voxels().end(), static_cast<float>(0.5 * (lo + hi)));
        return out;
    }
    const double gain = (hi - lo) / (omax - omin);
    for (auto& x : out.voxels()) x = static_cast<float>(lo + (x - omin) * gain);
    return out;
}

} // namespace dfip
