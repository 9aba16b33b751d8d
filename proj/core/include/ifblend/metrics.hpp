#pragma once

#include "ifblend/losses.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <string_view>

namespace ifblend {

/// PSNR value returned when the two images are identical.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// 10 log10(peak^2 / MSE) accumulated in double precision. Returns
/// kPsnrIdentical (+inf) when MSE is zero.
double psnr(const torch::Tensor& a, const torch::Tensor& b, double peak = 1.0);

/// Gaussian-window SSIM evaluated in double precision.
double ssim(const torch::Tensor& a, const torch::Tensor& b, const LossConfig& cfg = {});

enum class LabErrorMode {
  kMaeLab,   ///< per pixel: mean over L, a, b of |delta|; averaged per region
  kRmseLab,  ///< per region: sqrt of the mean squared delta over pixels and channels
};

LabErrorMode parse_lab_error_mode(std::string_view name);
std::string_view to_string(LabErrorMode mode);

/// Lab-space error split by a binary shadow mask. Regions without pixels are
/// NaN (and logged).
struct RegionMetricRow {
  double shadow = 0.0;
  double shadow_free = 0.0;
  double total = 0.0;
  int64_t shadow_pixels = 0;
  int64_t free_pixels = 0;
};

/// `pred`, `gt`: (1, 3, H, W) or (3, H, W) sRGB. `mask`: (H, W), (1, H, W) or
/// (1, 1, H, W) with values in {0, 1}; anything else raises ValidationError.
RegionMetricRow lab_region_error(const torch::Tensor& pred, const torch::Tensor& gt,
                                 const torch::Tensor& mask,
                                 LabErrorMode mode = LabErrorMode::kMaeLab);

/// Adapter for an external perceptual metric (for example an LPIPS script).
///
/// The command is run as `<command> <pred_path> <gt_path>` through the shell
/// and must print exactly one decimal number. Any failure yields std::nullopt
/// plus a logged diagnostic; an empty command means "not configured".
class PerceptualScorer {
 public:
  PerceptualScorer() = default;
  explicit PerceptualScorer(std::string command) : command_(std::move(command)) {}

  [[nodiscard]] bool configured() const { return !command_.empty(); }
  [[nodiscard]] const std::string& command() const { return command_; }

  std::optional<double> score(const std::filesystem::path& pred,
                              const std::filesystem::path& gt) const;

 private:
  std::string command_;
};

}  // namespace ifblend
