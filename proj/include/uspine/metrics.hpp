#pragma once

#include <optional>
#include <string>
#include <vector>

#include "uspine/image.hpp"

namespace uspine {
namespace metrics {

/// Region intensity statistics; signal = classes 1..3 (hypoechoic spine),
/// background = class 0. Standard deviations are population (divide by N).
struct RegionStats {
    double mean_signal = 0.0, std_signal = 0.0;
    double mean_background = 0.0, std_background = 0.0;
    long n_signal = 0, n_background = 0;
};
RegionStats region_stats(const Image& img, const SegMask& mask);

/// 20*log10((1 - mu_s)/sigma_b). sigma_b = 0 yields +inf (a warning string
/// is appended when `warning` is given); an empty region is an error.
double snr_db(const Image& img, const SegMask& mask, std::string* warning = nullptr);

/// 20*log10(|mu_s - mu_b| / sqrt(sigma_s^2 + sigma_b^2)); degenerate
/// denominators give +inf, zero contrast gives -inf.
double cnr_db(const Image& img, const SegMask& mask, std::string* warning = nullptr);

/// 20*log10(1/sqrt(MSE)), capped for identical images (default 100 dB).
double psnr_db(const Image& a, const Image& b, double cap_db = 100.0);

/// Multi-scale SSIM: up to 5 scales with the canonical weights
/// (0.0448, 0.2856, 0.3001, 0.2363, 0.1333), 11-tap gaussian window
/// (sigma 1.5), K = (0.01, 0.03), luminance at the coarsest scale only.
/// Scales shrink automatically for small images (weights renormalized);
/// scales_used records the count.
struct MsSsimResult {
    double value = 0.0;
    int scales_used = 0;
};
MsSsimResult ms_ssim(const Image& a, const Image& b);

/// Per-case quality numbers plus mean/std aggregates.
struct CaseMetrics {
    std::string id;
    std::optional<double> ms_ssim;
    std::optional<int> ms_ssim_scales;
    std::optional<double> psnr;
    std::optional<double> snr;
    std::optional<double> cnr;
    std::optional<std::string> error;
};

struct QualityReport {
    std::vector<CaseMetrics> cases;
    std::string to_json() const;
    std::string to_tsv() const;
    /// mean/std over cases where the field is present and finite
    static std::pair<double, double> aggregate(const std::vector<double>& values);
};

}  // namespace metrics
}  // namespace uspine
