#pragma once

#include <torch/torch.h>

#include <string>
#include <vector>

#include "json.hpp"
#include "pasta/volume.hpp"

namespace pasta::eval {

/// Reported PSNR when the two volumes are identical.
inline constexpr double kPsnrCap = 99.0;

struct SubjectMetrics {
    std::string subject_id;
    double mae_pct = 0, mse_pct = 0, psnr_db = 0, ssim_pct = 0;
};

/// Means over subjects plus the per-subject rows they came from.
struct MetricsReport {
    double mae_pct = 0, mse_pct = 0, psnr_db = 0, ssim_pct = 0;
    std::vector<SubjectMetrics> subjects;
};

/// Mean SSIM over 2D slices taken along `axis`: 11x11 Gaussian window
/// (sigma 1.5, narrowed on slices smaller than the window), valid region only,
/// C1 = 0.01^2, C2 = 0.03^2 for data on [0, 1].
double ssim(const torch::Tensor& a, const torch::Tensor& b, int axis = 2);

/// Both volumes must share a shape and lie in [0, 1].
SubjectMetrics image_metrics(const Volume3D& real, const Volume3D& synth, const std::string& subject_id = "");

MetricsReport summarize(std::vector<SubjectMetrics> rows);

nlohmann::json to_json(const MetricsReport& r);
std::string format_table(const MetricsReport& r);

}  // namespace pasta::eval
