#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <random>
#include <string>

namespace ifblend::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() /
            ("ifblend_" + tag + "_" + std::to_string(rng() % 1000000000ULL));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline double max_abs(const torch::Tensor& a, const torch::Tensor& b) {
  return (a.to(torch::kDouble) - b.to(torch::kDouble)).abs().max().item<double>();
}

inline bool bit_equal(const torch::Tensor& a, const torch::Tensor& b) {
  return a.sizes() == b.sizes() && a.dtype() == b.dtype() && torch::equal(a, b);
}

/// Central-difference gradient check of scalar f at x (double). Returns the
/// worst relative error max|num - ana| / max(1e-8, max|ana|).
template <typename F>
double gradient_check(F&& f, torch::Tensor x, double eps = 1e-6) {
  x = x.detach().to(torch::kDouble).clone().requires_grad_(true);
  auto y = f(x);
  auto analytic = torch::autograd::grad({y}, {x})[0].detach();
  auto numeric = torch::zeros_like(analytic);
  auto flat = x.detach().clone().view(-1);
  auto num_flat = numeric.view(-1);
  torch::NoGradGuard guard;
  for (int64_t i = 0; i < flat.numel(); ++i) {
    const double orig = flat[i].template item<double>();
    flat[i] = orig + eps;
    const double up = f(flat.view(x.sizes())).template item<double>();
    flat[i] = orig - eps;
    const double down = f(flat.view(x.sizes())).template item<double>();
    flat[i] = orig;
    num_flat[i] = (up - down) / (2 * eps);
  }
  const double scale = std::max(1e-8, analytic.abs().max().template item<double>());
  return (numeric - analytic).abs().max().template item<double>() / scale;
}

}  // namespace ifblend::testing
