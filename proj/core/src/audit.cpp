#include "ifblend/audit.hpp"

#include "ifblend/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace ifblend {

namespace F = torch::nn::functional;

namespace {

constexpr int kSearchRadius = 8;
constexpr int64_t kAuditSide = 256;

torch::Tensor luma(const torch::Tensor& image) {
  const auto x = image.to(torch::kDouble);
  if (x.size(1) == 1) return x[0][0];
  return 0.299 * x[0][0] + 0.587 * x[0][1] + 0.114 * x[0][2];
}

/// Gradient magnitude of log luma. Multiplicative shading only adds edges at
/// penumbrae, so the scene structure dominates the correlation.
torch::Tensor edge_map(const torch::Tensor& plane) {
  using torch::indexing::Slice;
  const auto log_l = torch::log(plane.clamp_min(1e-3));
  auto gy = torch::zeros_like(log_l);
  auto gx = torch::zeros_like(log_l);
  if (log_l.size(0) > 2) {
    gy.index_put_({Slice(1, -1)}, log_l.index({Slice(2)}) - log_l.index({Slice(0, -2)}));
  }
  if (log_l.size(1) > 2) {
    gx.index_put_({Slice(), Slice(1, -1)},
                  log_l.index({Slice(), Slice(2)}) - log_l.index({Slice(), Slice(0, -2)}));
  }
  return torch::sqrt(gx * gx + gy * gy);
}

double overlap_ncc(const torch::Tensor& a, const torch::Tensor& b, int dy, int dx) {
  using torch::indexing::Slice;
  const int64_t h = a.size(0);
  const int64_t w = a.size(1);
  const int64_t y0 = std::max<int64_t>(0, -dy);
  const int64_t y1 = std::min<int64_t>(h, h - dy);
  const int64_t x0 = std::max<int64_t>(0, -dx);
  const int64_t x1 = std::min<int64_t>(w, w - dx);
  if (y1 - y0 < 2 || x1 - x0 < 2) return -std::numeric_limits<double>::infinity();
  auto pa = a.index({Slice(y0, y1), Slice(x0, x1)});
  auto pb = b.index({Slice(y0 + dy, y1 + dy), Slice(x0 + dx, x1 + dx)});
  pa = pa - pa.mean();
  pb = pb - pb.mean();
  const double denom = std::sqrt(pa.pow(2).sum().item<double>() * pb.pow(2).sum().item<double>());
  if (denom == 0.0) return 0.0;
  return (pa * pb).sum().item<double>() / denom;
}

Shift best_shift(const torch::Tensor& a, const torch::Tensor& b, int cy, int cx, int radius) {
  Shift best{cy, cx};
  double best_score = -std::numeric_limits<double>::infinity();
  for (int dy = cy - radius; dy <= cy + radius; ++dy) {
    for (int dx = cx - radius; dx <= cx + radius; ++dx) {
      const double score = overlap_ncc(a, b, dy, dx);
      // Ties resolve toward the smaller displacement.
      const bool closer = std::abs(dy) + std::abs(dx) < std::abs(best.dy) + std::abs(best.dx);
      if (score > best_score + 1e-12 || (std::abs(score - best_score) <= 1e-12 && closer)) {
        best_score = score;
        best = {dy, dx};
      }
    }
  }
  return best;
}

}  // namespace

Shift estimate_shift(const torch::Tensor& reference, const torch::Tensor& moved, int max_shift) {
  if (reference.dim() != 2 || !reference.sizes().equals(moved.sizes())) {
    throw ShapeError("estimate_shift: expected two equally sized (H, W) planes");
  }
  const auto a = reference.to(torch::kDouble);
  const auto b = moved.to(torch::kDouble);
  return best_shift(a, b, 0, 0, max_shift);
}

PairAudit audit_pair(const std::string& id, const torch::Tensor& input, const torch::Tensor& gt) {
  PairAudit audit;
  audit.id = id;
  audit.dims_equal = input.sizes().equals(gt.sizes());
  if (!audit.dims_equal) {
    audit.flagged = true;
    return audit;
  }
  torch::NoGradGuard guard;
  const auto in = input.to(torch::kDouble);
  const auto ref = gt.to(torch::kDouble);
  audit.mean_delta = in.mean().item<double>() - ref.mean().item<double>();
  audit.frac_brighter = (in > ref + kBrighterMargin).to(torch::kDouble).mean().item<double>();

  const auto gt_luma = luma(ref);
  const auto in_luma = luma(in);
  const auto edges = [](const torch::Tensor& plane) { return edge_map(plane); };
  const int64_t factor = std::max<int64_t>(1, std::min(gt_luma.size(0), gt_luma.size(1)) / kAuditSide);
  if (factor == 1) {
    audit.shift = best_shift(edges(in_luma), edges(gt_luma), 0, 0, kSearchRadius);
  } else {
    const auto down = [&](const torch::Tensor& t) {
      return F::avg_pool2d(t.unsqueeze(0).unsqueeze(0), F::AvgPool2dFuncOptions(factor))[0][0];
    };
    const auto coarse =
        best_shift(edges(down(in_luma)), edges(down(gt_luma)), 0, 0, kSearchRadius);
    audit.shift = best_shift(edges(in_luma), edges(gt_luma), coarse.dy * static_cast<int>(factor),
                             coarse.dx * static_cast<int>(factor), static_cast<int>(factor));
  }
  audit.misaligned = std::max(std::abs(audit.shift.dy), std::abs(audit.shift.dx)) >= kMisalignedShift;
  audit.flagged = audit.misaligned || audit.frac_brighter > kBrighterFlagFraction;
  return audit;
}

size_t AuditReport::flagged_count() const {
  return static_cast<size_t>(
      std::count_if(pairs.begin(), pairs.end(), [](const PairAudit& p) { return p.flagged; }));
}

AuditReport audit_pairs(const std::vector<SampleDescriptor>& descriptors) {
  AuditReport report;
  for (const auto& desc : descriptors) {
    try {
      const auto sample = load_sample(desc);
      report.pairs.push_back(audit_pair(desc.id, sample.input, sample.gt));
    } catch (const Error& e) {
      PairAudit failed;
      failed.id = desc.id;
      failed.error = e.what();
      failed.flagged = true;
      report.pairs.push_back(std::move(failed));
    }
  }
  return report;
}

}  // namespace ifblend
