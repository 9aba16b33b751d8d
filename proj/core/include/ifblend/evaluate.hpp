#pragma once

#include "ifblend/data.hpp"
#include "ifblend/losses.hpp"
#include "ifblend/metrics.hpp"
#include "ifblend/model.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ifblend {

enum class Protocol { kRgb, kLabIstd };

Protocol parse_protocol(std::string_view name);
std::string_view to_string(Protocol protocol);

struct EvalOptions {
  Protocol protocol = Protocol::kRgb;
  LossConfig ssim;                       ///< window / sigma used for SSIM
  LabErrorMode lab_mode = LabErrorMode::kMaeLab;
  int64_t tile = 0;                      ///< 0 evaluates whole images
  int64_t overlap = 0;
  std::string perceptual_scorer_cmd;     ///< empty: perceptual column omitted
  std::filesystem::path scratch_dir;     ///< temporary predictions for the scorer
  std::string model_id = "identity";     ///< recorded in the protocol block
};

struct EvalRow {
  std::string id;
  double psnr = 0.0;
  double ssim = 0.0;
  std::optional<double> lab_shadow;
  std::optional<double> lab_free;
  std::optional<double> lab_total;
  std::optional<double> perceptual;
};

/// Means over rows. Non-finite entries (+inf PSNR of identical pairs, NaN of
/// empty mask regions, unavailable perceptual scores) are excluded and counted.
struct EvalAggregates {
  double psnr = 0.0;
  double ssim = 0.0;
  std::optional<double> lab_shadow;
  std::optional<double> lab_free;
  std::optional<double> lab_total;
  std::optional<double> perceptual;
  std::map<std::string, int64_t> excluded;  ///< column -> rows left out of the mean
};

struct EvalReport {
  std::vector<EvalRow> rows;
  EvalAggregates aggregates;
  std::map<std::string, std::string> protocol;  ///< every evaluation choice
  bool has_lab = false;
  bool has_perceptual = false;
};

/// Scores `model` outputs (or the raw inputs when `model` is null, the
/// "identity" baseline) against ground truth. The lab_istd protocol requires
/// a mask on every sample and checks that before computing anything.
EvalReport evaluate(IFBlend model, const SampleSource& source, const EvalOptions& options);

/// Recomputes aggregates from rows.
EvalAggregates aggregate_rows(const std::vector<EvalRow>& rows, bool has_lab, bool has_perceptual);

}  // namespace ifblend
