#pragma once

#include <torch/torch.h>

#include <string_view>

namespace ifblend {

/// One level of a 2D Haar decomposition.
///
/// `ll` has shape (N, C, H/2, W/2). `high` has shape (N, 3C, H/2, W/2) and
/// holds the LH, HL and HH detail bands stacked along channels in that order
/// (channels [0, C) are LH, [C, 2C) are HL, [2C, 3C) are HH).
struct FrequencyBands {
  torch::Tensor ll;
  torch::Tensor high;
};

/// How the max-pooled high band is formed by lowhigh_split.
enum class HighPassMode {
  kMaxPool,   ///< high = maxpool(x)
  kResidual,  ///< high = maxpool(x) - avgpool(x)
};

HighPassMode parse_high_pass_mode(std::string_view name);
std::string_view to_string(HighPassMode mode);

/// Orthonormal single-level Haar DWT over the last two axes.
///
/// For every non-overlapping 2x2 block [[a, b], [c, d]]:
///   LL = (a + b + c + d) / 2    HL = (a - b + c - d) / 2
///   LH = (a + b - c - d) / 2    HH = (a - b - c + d) / 2
/// Built from differentiable tensor ops. Throws DimensionError on odd H or W.
FrequencyBands haar_dwt(const torch::Tensor& x);

/// Exact inverse of haar_dwt. Throws ShapeError when `high` does not carry
/// three times the channels of `ll` or the spatial extents disagree.
torch::Tensor haar_idwt(const FrequencyBands& bands);

struct LowHigh {
  torch::Tensor low;
  torch::Tensor high;
};

/// Pooling-based band split: low = average pool, high = max pool, sharing the
/// same window geometry. Output spatial dims are input dims / stride. Borders
/// are padded by edge replication so constant inputs stay constant.
LowHigh lowhigh_split(const torch::Tensor& x, int kernel, int stride,
                      HighPassMode mode = HighPassMode::kMaxPool);

/// sRGB in [0,1] (N, 3, H, W) to CIELAB under D65. Inputs are clamped to [0,1].
torch::Tensor srgb_to_lab(const torch::Tensor& x);

}  // namespace ifblend
