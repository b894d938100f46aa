#pragma once

#include <string>
#include <vector>

#include "dfip/volume.hpp"

namespace dfip {

/// PSNR reported for a zero-error region, in dB.
inline constexpr double kPsnrCap = 100.0;

/// Mean squared error over voxels where mask != 0.
double masked_mse(const Volume& pred, const Volume& gt, const Volume& mask);

/// 10 log10(range^2 / mse), capped at kPsnrCap.
double masked_psnr(const Volume& pred, const Volume& gt, const Volume& mask, double data_range = 1.0);

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double data_range = 1.0;
    /// Average the map over the mask's bounding box instead of the mask itself.
    bool bounding_box = false;
};

/// Gaussian-window SSIM map computed per axial slice, averaged over the mask.
/// Windows are truncated at slice borders and their weights renormalized.
double masked_ssim(const Volume& pred, const Volume& gt, const Volume& mask, const SsimOptions& options = {});

struct CaseMetrics {
    std::string case_id;
    double ssim = 0.0;
    double psnr = 0.0;
    double mse = 0.0;
};

CaseMetrics evaluate_case(const std::string& case_id, const Volume& pred, const Volume& gt, const Volume& mask,
                          double data_range = 1.0);

struct MeanStd {
    double mean = 0.0;
    double std = 0.0; // population standard deviation
};

struct MetricsReport {
    std::vector<CaseMetrics> cases;
    MeanStd ssim, psnr, mse;

    /// "case_id,ssim,psnr,mse" header, one row per case, then "mean" and "std" rows.
    std::string to_csv() const;
    /// Aligned table with a "mean [±std]" summary line.
    std::string to_table() const;
};

MetricsReport make_report(std::vector<CaseMetrics> cases);

/// "0.8271 [±0.1308]".
std::string format_mean_std(const MeanStd& v, int decimals = 4);

} // namespace dfip
