#include "ifblend/metrics.hpp"

#include "ifblend/errors.hpp"
#include "ifblend/freq.hpp"

#include <c10/util/Logging.h>
#include <fmt/format.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <memory>

namespace ifblend {

namespace {

torch::Tensor as_image4d(const torch::Tensor& t, std::string_view what) {
  if (t.dim() == 3) return t.unsqueeze(0);
  if (t.dim() == 4 && t.size(0) == 1) return t;
  throw ShapeError(fmt::format("{}: expected (3, H, W) or (1, 3, H, W)", what));
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  out += "'";
  return out;
}

}  // namespace

double psnr(const torch::Tensor& a, const torch::Tensor& b, double peak) {
  if (!a.sizes().equals(b.sizes())) throw ShapeError("psnr: shape mismatch");
  const auto diff = a.to(torch::kDouble) - b.to(torch::kDouble);
  const double mse = diff.pow(2).mean().item<double>();
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const torch::Tensor& a, const torch::Tensor& b, const LossConfig& cfg) {
  torch::NoGradGuard guard;
  return ssim_index(a.to(torch::kDouble), b.to(torch::kDouble), cfg).item<double>();
}

LabErrorMode parse_lab_error_mode(std::string_view name) {
  if (name == "mae_lab") return LabErrorMode::kMaeLab;
  if (name == "rmse_lab") return LabErrorMode::kRmseLab;
  throw ConfigError(fmt::format("unknown lab mode '{}' (expected mae_lab|rmse_lab)", name));
}

std::string_view to_string(LabErrorMode mode) {
  return mode == LabErrorMode::kMaeLab ? "mae_lab" : "rmse_lab";
}

RegionMetricRow lab_region_error(const torch::Tensor& pred, const torch::Tensor& gt,
                                 const torch::Tensor& mask, LabErrorMode mode) {
  torch::NoGradGuard guard;
  const auto p = as_image4d(pred, "lab_region_error(pred)").to(torch::kDouble);
  const auto g = as_image4d(gt, "lab_region_error(gt)").to(torch::kDouble);
  if (!p.sizes().equals(g.sizes())) throw ShapeError("lab_region_error: pred/gt shape mismatch");
  if (p.size(1) != 3) throw ShapeError("lab_region_error: images must have 3 channels");
  const int64_t h = p.size(2);
  const int64_t w = p.size(3);
  if (mask.numel() != h * w) {
    throw ShapeError(fmt::format("lab_region_error: mask has {} values, image has {}x{} pixels",
                                 mask.numel(), h, w));
  }
  const auto m = mask.reshape({h, w}).to(torch::kDouble);
  if (!torch::logical_or(m == 0.0, m == 1.0).all().item<bool>()) {
    throw ValidationError("lab_region_error: mask values must be exactly 0 or 1");
  }

  const auto delta = (srgb_to_lab(p) - srgb_to_lab(g))[0];  // (3, H, W)
  const auto per_pixel = mode == LabErrorMode::kMaeLab ? delta.abs().mean(0)
                                                        : delta.pow(2).mean(0);
  const auto shadow = m.to(torch::kBool);
  const auto free = shadow.logical_not();

  RegionMetricRow row;
  row.shadow_pixels = shadow.sum().item<int64_t>();
  row.free_pixels = h * w - row.shadow_pixels;
  const auto region_mean = [&](const torch::Tensor& region, int64_t count, const char* name) {
    if (count == 0) {
      LOG(WARNING) << "lab_region_error: " << name << " region is empty; reporting NaN";
      return std::numeric_limits<double>::quiet_NaN();
    }
    const double mean = per_pixel.masked_select(region).sum().item<double>() /
                        static_cast<double>(count);
    return mode == LabErrorMode::kMaeLab ? mean : std::sqrt(mean);
  };
  row.shadow = region_mean(shadow, row.shadow_pixels, "shadow");
  row.shadow_free = region_mean(free, row.free_pixels, "shadow-free");
  const double total_mean = per_pixel.sum().item<double>() / static_cast<double>(h * w);
  row.total = mode == LabErrorMode::kMaeLab ? total_mean : std::sqrt(total_mean);
  return row;
}

std::optional<double> PerceptualScorer::score(const std::filesystem::path& pred,
                                              const std::filesystem::path& gt) const {
  if (!configured()) return std::nullopt;
  const std::string cmd =
      fmt::format("{} {} {}", command_, shell_quote(pred.string()), shell_quote(gt.string()));
  std::unique_ptr<FILE, int (*)(FILE*)> pipe(popen(cmd.c_str(), "r"), pclose);
  if (!pipe) {
    LOG(WARNING) << "perceptual scorer could not be started: " << cmd;
    return std::nullopt;
  }
  std::string output;
  std::array<char, 256> buffer{};
  while (std::fgets(buffer.data(), buffer.size(), pipe.get()) != nullptr) output += buffer.data();
  const int status = pclose(pipe.release());
  if (status != 0) {
    LOG(WARNING) << "perceptual scorer exited with status " << status << ": " << cmd;
    return std::nullopt;
  }
  const auto first = output.find_first_not_of(" \t\r\n");
  const auto last = output.find_last_not_of(" \t\r\n");
  if (first == std::string::npos) {
    LOG(WARNING) << "perceptual scorer printed nothing: " << cmd;
    return std::nullopt;
  }
  const std::string text = output.substr(first, last - first + 1);
  char* end = nullptr;
  const double value = std::strtod(text.c_str(), &end);
  if (end != text.c_str() + text.size() || !std::isfinite(value)) {
    LOG(WARNING) << "perceptual scorer output is not a single number: '" << text << "'";
    return std::nullopt;
  }
  return value;
}

}  // namespace ifblend
