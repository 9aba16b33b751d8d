#pragma once

#include <torch/torch.h>

namespace ifblend {

struct LossConfig {
  double lambda_ssim = 0.4;  ///< weight of the (1 - SSIM) term; 0 gives pure L1
  int ssim_window = 11;      ///< odd Gaussian window side
  double ssim_sigma = 1.5;

  void validate() const;
};

/// Loss value and its two components, all scalar tensors.
struct LossTerms {
  torch::Tensor total;
  torch::Tensor l1;
  torch::Tensor ssim_term;  ///< lambda * (1 - SSIM); exactly zero when lambda == 0
};

/// Differentiable Gaussian-window SSIM (k1 = 0.01, k2 = 0.03, peak 1) over
/// valid window positions, averaged over batch, channels and space.
/// Throws DimensionError when H or W is smaller than the window.
torch::Tensor ssim_index(const torch::Tensor& a, const torch::Tensor& b, const LossConfig& cfg);

/// mean|i_r - i| + lambda * (1 - SSIM(i_r, i)).
LossTerms restoration_loss(const torch::Tensor& i_r, const torch::Tensor& i,
                           const LossConfig& cfg);

}  // namespace ifblend
