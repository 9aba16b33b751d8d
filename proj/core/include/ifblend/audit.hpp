#pragma once

#include "ifblend/data.hpp"

#include <string>
#include <vector>

namespace ifblend {

struct Shift {
  int dy = 0;
  int dx = 0;
  bool operator==(const Shift&) const = default;
};

/// Integer translation of `moved` relative to `reference` (moved(y, x) ~
/// reference(y - dy, x - dx)) maximizing zero-mean normalized cross
/// correlation over the overlap, searched exhaustively within +-max_shift.
/// Both inputs are (H, W) luma planes.
Shift estimate_shift(const torch::Tensor& reference, const torch::Tensor& moved, int max_shift);

struct PairAudit {
  std::string id;
  bool dims_equal = true;
  double mean_delta = 0.0;     ///< mean(input) - mean(gt)
  double frac_brighter = 0.0;  ///< fraction of values where input > gt + 0.1
  Shift shift;
  bool misaligned = false;     ///< max(|dy|, |dx|) >= kMisalignedShift
  bool flagged = false;
  std::string error;           ///< IO failure, empty on success
};

inline constexpr int kMisalignedShift = 2;
inline constexpr double kBrighterMargin = 0.1;
/// Pairs with more than this fraction of brighter input values are flagged.
inline constexpr double kBrighterFlagFraction = 0.05;

/// Diagnostics for one in-memory pair. The shift is searched on the gradient
/// magnitude of log luma, which shading alone barely changes. Luma is
/// box-downsampled so the shorter side is at most 256 pixels before the
/// coarse search, then refined at full resolution.
PairAudit audit_pair(const std::string& id, const torch::Tensor& input, const torch::Tensor& gt);

struct AuditReport {
  std::vector<PairAudit> pairs;
  [[nodiscard]] size_t flagged_count() const;
};

/// Audits every descriptor; IO failures are recorded per pair and flagged.
AuditReport audit_pairs(const std::vector<SampleDescriptor>& descriptors);

}  // namespace ifblend
