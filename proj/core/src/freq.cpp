#include "ifblend/freq.hpp"

#include "ifblend/errors.hpp"

#include <fmt/format.h>

namespace ifblend {

namespace F = torch::nn::functional;
using torch::indexing::None;
using torch::indexing::Slice;

namespace {

void require_rank4(const torch::Tensor& x, std::string_view op) {
  if (x.dim() != 4) {
    throw ShapeError(fmt::format("{}: expected a 4-D (N, C, H, W) tensor, got rank {}", op,
                                 x.dim()));
  }
}

}  // namespace

HighPassMode parse_high_pass_mode(std::string_view name) {
  if (name == "maxpool") return HighPassMode::kMaxPool;
  if (name == "residual") return HighPassMode::kResidual;
  throw ConfigError(fmt::format("unknown high_pass_mode '{}' (expected maxpool|residual)", name));
}

std::string_view to_string(HighPassMode mode) {
  return mode == HighPassMode::kMaxPool ? "maxpool" : "residual";
}

FrequencyBands haar_dwt(const torch::Tensor& x) {
  require_rank4(x, "haar_dwt");
  if (x.size(2) % 2 != 0) {
    throw DimensionError(fmt::format("haar_dwt: height {} is odd", x.size(2)));
  }
  if (x.size(3) % 2 != 0) {
    throw DimensionError(fmt::format("haar_dwt: width {} is odd", x.size(3)));
  }
  const auto even = Slice(None, None, 2);
  const auto odd = Slice(1, None, 2);
  const auto a = x.index({Slice(), Slice(), even, even});
  const auto b = x.index({Slice(), Slice(), even, odd});
  const auto c = x.index({Slice(), Slice(), odd, even});
  const auto d = x.index({Slice(), Slice(), odd, odd});

  const auto ab_sum = a + b;
  const auto ab_diff = a - b;
  const auto cd_sum = c + d;
  const auto cd_diff = c - d;

  FrequencyBands bands;
  bands.ll = (ab_sum + cd_sum) * 0.5;
  const auto lh = (ab_sum - cd_sum) * 0.5;
  const auto hl = (ab_diff + cd_diff) * 0.5;
  const auto hh = (ab_diff - cd_diff) * 0.5;
  bands.high = torch::cat({lh, hl, hh}, 1);
  return bands;
}

torch::Tensor haar_idwt(const FrequencyBands& bands) {
  require_rank4(bands.ll, "haar_idwt");
  require_rank4(bands.high, "haar_idwt");
  const auto& ll = bands.ll;
  const int64_t channels = ll.size(1);
  if (bands.high.size(1) != 3 * channels) {
    throw ShapeError(fmt::format("haar_idwt: high band has {} channels, expected 3 x {} = {}",
                                 bands.high.size(1), channels, 3 * channels));
  }
  if (bands.high.size(0) != ll.size(0) || bands.high.size(2) != ll.size(2) ||
      bands.high.size(3) != ll.size(3)) {
    throw ShapeError("haar_idwt: ll and high disagree in batch or spatial extent");
  }
  const auto parts = bands.high.split(channels, 1);
  const auto& lh = parts[0];
  const auto& hl = parts[1];
  const auto& hh = parts[2];

  const auto a = (ll + hl + lh + hh) * 0.5;
  const auto b = (ll - hl + lh - hh) * 0.5;
  const auto c = (ll + hl - lh - hh) * 0.5;
  const auto d = (ll - hl - lh + hh) * 0.5;

  const int64_t n = ll.size(0);
  const int64_t h = ll.size(2);
  const int64_t w = ll.size(3);
  // Interleave columns within each row pair, then interleave the row pairs.
  const auto top = torch::stack({a, b}, -1).reshape({n, channels, h, 2 * w});
  const auto bottom = torch::stack({c, d}, -1).reshape({n, channels, h, 2 * w});
  return torch::stack({top, bottom}, 3).reshape({n, channels, 2 * h, 2 * w});
}

LowHigh lowhigh_split(const torch::Tensor& x, int kernel, int stride, HighPassMode mode) {
  require_rank4(x, "lowhigh_split");
  if (kernel < 1) {
    throw ConfigError(fmt::format("lowhigh_split: kernel must be >= 1, got {}", kernel));
  }
  if (stride != 1 && stride != 2) {
    throw ConfigError(fmt::format("lowhigh_split: stride must be 1 or 2, got {}", stride));
  }
  if (x.size(2) % stride != 0 || x.size(3) % stride != 0) {
    throw DimensionError(fmt::format("lowhigh_split: spatial dims {}x{} not divisible by stride {}",
                                     x.size(2), x.size(3), stride));
  }

  // Total padding k - s per axis keeps the output at exactly H / s.
  torch::Tensor padded = x;
  const int total_pad = kernel - stride;
  if (total_pad > 0) {
    const int64_t before = total_pad / 2;
    const int64_t after = total_pad - before;
    padded = F::pad(x, F::PadFuncOptions({before, after, before, after}).mode(torch::kReplicate));
  }

  LowHigh out;
  out.low = F::avg_pool2d(padded, F::AvgPool2dFuncOptions(kernel).stride(stride));
  out.high = F::max_pool2d(padded, F::MaxPool2dFuncOptions(kernel).stride(stride));
  if (mode == HighPassMode::kResidual) {
    out.high = out.high - out.low;
  }
  return out;
}

torch::Tensor srgb_to_lab(const torch::Tensor& x) {
  require_rank4(x, "srgb_to_lab");
  if (x.size(1) != 3) {
    throw ShapeError(fmt::format("srgb_to_lab: expected 3 channels, got {}", x.size(1)));
  }
  const auto srgb = x.clamp(0.0, 1.0);
  // Keep the power branch away from zero so its gradient stays finite where
  // the linear branch is selected.
  const auto linear_rgb = torch::where(
      srgb <= 0.04045, srgb / 12.92,
      torch::pow((srgb.clamp_min(0.04045) + 0.055) / 1.055, 2.4));

  const auto r = linear_rgb.select(1, 0);
  const auto g = linear_rgb.select(1, 1);
  const auto b = linear_rgb.select(1, 2);

  // sRGB primaries, D65 white (Xn = 0.95047, Yn = 1, Zn = 1.08883).
  const auto xr = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
  const auto yr = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
  const auto zr = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;

  const auto f = [](const torch::Tensor& t) {
    return torch::where(t > 0.008856, torch::pow(t.clamp_min(0.008856), 1.0 / 3.0),
                        7.787 * t + 16.0 / 116.0);
  };
  const auto fx = f(xr);
  const auto fy = f(yr);
  const auto fz = f(zr);

  const auto l = 116.0 * fy - 16.0;
  const auto a = 500.0 * (fx - fy);
  const auto bb = 200.0 * (fy - fz);
  return torch::stack({l, a, bb}, 1);
}

}  // namespace ifblend
