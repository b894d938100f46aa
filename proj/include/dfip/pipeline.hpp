#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dfip/diffusion.hpp"
#include "dfip/trainer.hpp"
#include "dfip/volume.hpp"

namespace dfip {

/// Case directory layout: case_<id>/{gt.vvol, mask.vvol, baseline.vvol}, gt optional.
struct CaseFiles {
    std::string id;
    std::filesystem::path dir;

    std::filesystem::path ground_truth() const { return dir / "gt.vvol"; }
    std::filesystem::path mask() const { return dir / "mask.vvol"; }
    std::filesystem::path baseline() const { return dir / "baseline.vvol"; }
};

/// Writes the three volumes (gt when present) into `dir`, creating it.
void write_case(const std::filesystem::path& dir, const MaskedCase& c);

/// Reads mask and baseline only; the ground truth is never opened.
MaskedCase read_case_for_inference(const std::filesystem::path& dir);
/// Reads all three volumes; the mask is binarized.
MaskedCase read_case_with_ground_truth(const std::filesystem::path& dir);

/// manifest.json: {"cases": [{"id": ..., "dir": ...}, ...], ...}.
void write_manifest(const std::filesystem::path& root, const std::vector<CaseFiles>& cases,
                    const std::string& extra_json = "{}");
std::vector<CaseFiles> read_manifest(const std::filesystem::path& root);

/// Training view of a case: ground truth preprocessed, centre-cropped to
/// `size`, re-voided under the mask, restricted to slices with a non-zero mask.
ConditionedBatch training_slices(const MaskedCase& c, std::int64_t size);

/// Stacks training slices of every case into one dataset.
SliceDataset build_dataset(const std::vector<MaskedCase>& cases, std::int64_t size);

/// Mean of baseline voxels that are inside the brain (non-zero) and outside the mask.
double unmasked_brain_mean(const Volume& baseline, const Volume& mask);
/// Baseline with the mask filled by unmasked_brain_mean.
Volume mean_fill(const Volume& baseline, const Volume& mask);

struct InpaintOptions {
    std::uint64_t seed = 0;
    bool smooth = true;
    double sigma = 1.075;
    bool smooth_mask_only = false;
    bool composite = false;
    bool renormalize = true;
    int batch = 16; // slices per reverse chain batch
};

/// Inpaints every axial slice with a non-zero mask and returns the volume in
/// the intensity range of the input baseline:
/// preprocess -> centre crop -> per-slice reverse chain (slice i seeded with
/// (seed, i)) -> reassemble -> uncrop -> Gaussian smoothing -> renormalize.
/// With no masked slice the baseline is returned unchanged.
Volume inpaint_volume(NoisePredictor& model, int image_size, const NoiseSchedule& schedule, const Volume& baseline,
                      const Volume& mask, const InpaintOptions& options = {});

} // namespace dfip
