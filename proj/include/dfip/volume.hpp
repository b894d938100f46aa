#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "dfip/tensor.hpp"

namespace dfip {

struct Dims {
    std::int64_t depth = 0;  // axial slice count
    std::int64_t height = 0;
    std::int64_t width = 0;

    std::int64_t count() const noexcept { return depth * height * width; }
    std::int64_t slice_size() const noexcept { return height * width; }
    friend bool operator==(const Dims&, const Dims&) = default;
};

std::string dims_str(const Dims& d);

/// 3-D scalar grid stored axial-slice-major: index = (d * H + h) * W + w.
class Volume {
public:
    Volume() = default;
    explicit Volume(Dims dims, float fill = 0.0f);
    Volume(Dims dims, std::vector<float> voxels);

    const Dims& dims() const noexcept { return dims_; }
    std::size_t size() const noexcept { return voxels_.size(); }
    std::span<float> voxels() noexcept { return voxels_; }
    std::span<const float> voxels() const noexcept { return voxels_; }

    float& operator[](std::size_t i) noexcept { return voxels_[i]; }
    float operator[](std::size_t i) const noexcept { return voxels_[i]; }
    float& at(std::int64_t d, std::int64_t h, std::int64_t w) {
        return voxels_[static_cast<std::size_t>((d * dims_.height + h) * dims_.width + w)];
    }
    float at(std::int64_t d, std::int64_t h, std::int64_t w) const {
        return voxels_[static_cast<std::size_t>((d * dims_.height + h) * dims_.width + w)];
    }

    std::span<float> slice(std::int64_t d);
    std::span<const float> slice(std::int64_t d) const;
    /// Axial slice as a [1,1,H,W] tensor.
    Tensor slice_tensor(std::int64_t d) const;
    void set_slice(std::int64_t d, std::span<const float> values);

    bool all_finite() const noexcept;

    friend bool operator==(const Volume&, const Volume&) = default;

private:
    Dims dims_;
    std::vector<float> voxels_;
};

/// Thresholds at 0.5 into exact {0, 1}.
Volume binarize(const Volume& mask, float threshold = 0.5f);
bool is_binary(const Volume& mask);
bool any_nonzero(std::span<const float> values);

/// A masked scan: voided baseline b, binary mask m and (for training or
/// evaluation) the ground truth, with b = gt * (1 - m).
struct MaskedCase {
    std::optional<Volume> ground_truth;
    Volume mask;
    Volume baseline;

    /// Builds the baseline by voiding `gt` under the (binarized) mask.
    static MaskedCase from_ground_truth(Volume gt, const Volume& mask);
    /// Throws on dims mismatch, non-binary mask, or a voiding violation.
    void validate() const;
};

/// Percentile of `values` in [0, 100], linear interpolation between order
/// statistics.
double percentile(std::span<const float> values, double pct);

/// Clamps to [p0.1, p99.9] and rescales to [0, 1]. Constant input maps to 0.
Volume preprocess(const Volume& v);

struct CropInfo {
    Dims original;
    std::int64_t size = 0;    // S
    std::int64_t offset_h = 0; // top-left corner in the original slice; negative means padding
    std::int64_t offset_w = 0;
};

/// Centre S x S window of every axial slice (zero padding where the slice is smaller).
std::pair<Volume, CropInfo> center_crop_slices(const Volume& v, std::int64_t size);

/// Inverse of center_crop_slices: places `cropped` back into a volume of the
/// original dims. Voxels outside the window come from `background`, or are 0.
Volume uncrop_slices(const Volume& cropped, const CropInfo& info, const Volume* background = nullptr);

struct SliceSample {
    std::int64_t index = 0;
    Tensor baseline; // [1,1,H,W]
    Tensor mask;
    std::optional<Tensor> ground_truth;
};

/// Axial slices whose mask has a non-zero voxel, ascending.
std::vector<SliceSample> select_slices(const MaskedCase& c);
std::vector<std::int64_t> masked_slice_indices(const Volume& mask);

/// Copy of `baseline` with the listed axial slices replaced wholesale.
Volume reassemble(const Volume& baseline, std::span<const std::pair<std::int64_t, Tensor>> sampled);

/// Normalized 1-D Gaussian taps for offsets -radius..radius, radius = ceil(4 sigma).
std::vector<double> gaussian_kernel(double sigma);

struct SmoothOptions {
    /// When set, smoothed values are written only where this mask is non-zero.
    const Volume* limit_to = nullptr;
};

/// Separable 3-D Gaussian filter. Taps falling outside the volume are dropped
/// and the remaining weights renormalized.
Volume gaussian_smooth(const Volume& v, double sigma, const SmoothOptions& options = {});

/// Affinely maps the output's [min, max] onto [p0.5, p99.5] of `input_ref`.
/// A constant output maps to the interval midpoint.
Volume renormalize_output(const Volume& output, const Volume& input_ref);

} // namespace dfip
