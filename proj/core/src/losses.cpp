#include "ifblend/losses.hpp"

#include "ifblend/errors.hpp"

#include <fmt/format.h>

#include <cmath>

namespace ifblend {

namespace F = torch::nn::functional;

namespace {

constexpr double kK1 = 0.01;
constexpr double kK2 = 0.03;

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, std::string_view op) {
  if (!a.sizes().equals(b.sizes())) {
    throw ShapeError(fmt::format("{}: shape mismatch ({} vs {} dims, numel {} vs {})", op,
                                 a.dim(), b.dim(), a.numel(), b.numel()));
  }
}

torch::Tensor gaussian_window(int size, double sigma, const torch::TensorOptions& opts) {
  auto coords = torch::arange(size, opts.dtype(torch::kDouble)) - (size - 1) / 2.0;
  auto g = torch::exp(-(coords * coords) / (2.0 * sigma * sigma));
  g = g / g.sum();
  return torch::outer(g, g).to(opts.dtype());
}

}  // namespace

void LossConfig::validate() const {
  if (!(lambda_ssim >= 0.0)) {
    throw ConfigError(fmt::format("loss.lambda_ssim must be >= 0, got {}", lambda_ssim));
  }
  if (ssim_window < 1 || ssim_window % 2 == 0) {
    throw ConfigError(fmt::format("loss.ssim_window must be odd and positive, got {}",
                                  ssim_window));
  }
  if (!(ssim_sigma > 0.0)) throw ConfigError("loss.ssim_sigma must be > 0");
}

torch::Tensor ssim_index(const torch::Tensor& a, const torch::Tensor& b, const LossConfig& cfg) {
  require_same_shape(a, b, "ssim");
  if (a.dim() != 4) throw ShapeError("ssim: expected (N, C, H, W) tensors");
  if (a.size(2) < cfg.ssim_window || a.size(3) < cfg.ssim_window) {
    throw DimensionError(fmt::format("ssim: image {}x{} is smaller than the {}x{} window",
                                     a.size(2), a.size(3), cfg.ssim_window, cfg.ssim_window));
  }
  const int64_t channels = a.size(1);
  const auto window = gaussian_window(cfg.ssim_window, cfg.ssim_sigma, a.options())
                          .expand({channels, 1, cfg.ssim_window, cfg.ssim_window})
                          .contiguous();
  const auto filter = [&](const torch::Tensor& t) {
    return F::conv2d(t, window, F::Conv2dFuncOptions().groups(channels));
  };
  const auto mu_a = filter(a);
  const auto mu_b = filter(b);
  const auto mu_aa = mu_a * mu_a;
  const auto mu_bb = mu_b * mu_b;
  const auto mu_ab = mu_a * mu_b;
  const auto var_a = filter(a * a) - mu_aa;
  const auto var_b = filter(b * b) - mu_bb;
  const auto cov = filter(a * b) - mu_ab;

  constexpr double c1 = kK1 * kK1;
  constexpr double c2 = kK2 * kK2;
  const auto map = ((2.0 * mu_ab + c1) * (2.0 * cov + c2)) /
                   ((mu_aa + mu_bb + c1) * (var_a + var_b + c2));
  return map.mean();
}

LossTerms restoration_loss(const torch::Tensor& i_r, const torch::Tensor& i,
                           const LossConfig& cfg) {
  require_same_shape(i_r, i, "loss");
  LossTerms terms;
  terms.l1 = (i_r - i).abs().mean();
  if (cfg.lambda_ssim == 0.0) {
    terms.ssim_term = torch::zeros({}, i_r.options());
    terms.total = terms.l1;
  } else {
    terms.ssim_term = cfg.lambda_ssim * (1.0 - ssim_index(i_r, i, cfg));
    terms.total = terms.l1 + terms.ssim_term;
  }
  return terms;
}

}  // namespace ifblend
