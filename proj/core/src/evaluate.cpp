#include "ifblend/evaluate.hpp"

#include "ifblend/engine.hpp"
#include "ifblend/errors.hpp"
#include "ifblend/image_io.hpp"

#include <fmt/format.h>

#include <cmath>

namespace ifblend {

namespace fs = std::filesystem;

Protocol parse_protocol(std::string_view name) {
  if (name == "rgb") return Protocol::kRgb;
  if (name == "lab_istd") return Protocol::kLabIstd;
  throw ConfigError(fmt::format("unknown protocol '{}' (expected rgb|lab_istd)", name));
}

std::string_view to_string(Protocol protocol) {
  return protocol == Protocol::kRgb ? "rgb" : "lab_istd";
}

namespace {

struct Mean {
  double sum = 0.0;
  int64_t count = 0;
  int64_t excluded = 0;

  void add(std::optional<double> v) {
    if (v && std::isfinite(*v)) {
      sum += *v;
      ++count;
    } else {
      ++excluded;
    }
  }
  [[nodiscard]] double value(double if_empty) const {
    return count == 0 ? if_empty : sum / static_cast<double>(count);
  }
};

}  // namespace

EvalAggregates aggregate_rows(const std::vector<EvalRow>& rows, bool has_lab,
                              bool has_perceptual) {
  Mean psnr_mean;
  Mean ssim_mean;
  Mean shadow;
  Mean free;
  Mean total;
  Mean perceptual;
  bool all_identical = !rows.empty();
  for (const auto& row : rows) {
    psnr_mean.add(row.psnr);
    all_identical = all_identical && std::isinf(row.psnr) && row.psnr > 0;
    ssim_mean.add(row.ssim);
    if (has_lab) {
      shadow.add(row.lab_shadow);
      free.add(row.lab_free);
      total.add(row.lab_total);
    }
    if (has_perceptual) perceptual.add(row.perceptual);
  }
  EvalAggregates agg;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  // Every row identical: the aggregate keeps the +inf sentinel.
  agg.psnr = all_identical ? kPsnrIdentical : psnr_mean.value(nan);
  agg.ssim = ssim_mean.value(nan);
  agg.excluded["psnr"] = psnr_mean.excluded;
  agg.excluded["ssim"] = ssim_mean.excluded;
  if (has_lab) {
    agg.lab_shadow = shadow.value(nan);
    agg.lab_free = free.value(nan);
    agg.lab_total = total.value(nan);
    agg.excluded["lab_shadow"] = shadow.excluded;
    agg.excluded["lab_free"] = free.excluded;
    agg.excluded["lab_total"] = total.excluded;
  }
  if (has_perceptual) {
    agg.perceptual = perceptual.value(nan);
    agg.excluded["perceptual"] = perceptual.excluded;
  }
  return agg;
}

EvalReport evaluate(IFBlend model, const SampleSource& source, const EvalOptions& options) {
  EvalReport report;
  report.has_lab = options.protocol == Protocol::kLabIstd;
  const PerceptualScorer scorer(options.perceptual_scorer_cmd);
  report.has_perceptual = scorer.configured();

  if (report.has_lab) {
    std::vector<std::string> missing;
    if (const auto* disk = dynamic_cast<const DiskSource*>(&source)) {
      for (const auto& d : disk->descriptors()) {
        if (!d.mask) missing.push_back(d.id);
      }
    } else {
      for (size_t i = 0; i < source.size(); ++i) {
        if (!source.get(i).has_mask()) missing.push_back(source.id(i));
      }
    }
    if (!missing.empty()) {
      throw ProtocolError(fmt::format("lab_istd protocol needs shadow masks; {} of {} samples "
                                      "have none (first: {})",
                                      missing.size(), source.size(), missing.front()));
    }
  }

  report.protocol["model"] = model ? options.model_id : "identity";
  report.protocol["protocol"] = std::string(to_string(options.protocol));
  report.protocol["resolution"] = "native";
  report.protocol["ssim"] = fmt::format("gaussian window {} sigma {} k1 0.01 k2 0.03",
                                        options.ssim.ssim_window, options.ssim.ssim_sigma);
  report.protocol["psnr_peak"] = "1.0";
  report.protocol["lab_mode"] = report.has_lab ? std::string(to_string(options.lab_mode)) : "n/a";
  report.protocol["tiling"] = options.tile > 0
                                  ? fmt::format("tile {} overlap {}", options.tile, options.overlap)
                                  : "whole image";
  report.protocol["perceptual"] = report.has_perceptual ? scorer.command() : "unavailable";

  if (report.has_perceptual && !options.scratch_dir.empty()) {
    fs::create_directories(options.scratch_dir);
  }

  for (size_t i = 0; i < source.size(); ++i) {
    const auto sample = source.get(i);
    torch::Tensor output = sample.input;
    if (model) {
      output = options.tile > 0 ? infer_tiled(model, sample.input, options.tile, options.overlap)
                                : restore(model, sample.input);
    }
    EvalRow row;
    row.id = source.id(i);
    row.psnr = psnr(output, sample.gt);
    row.ssim = ssim(output, sample.gt, options.ssim);
    if (report.has_lab) {
      const auto lab = lab_region_error(output, sample.gt, sample.mask, options.lab_mode);
      row.lab_shadow = lab.shadow;
      row.lab_free = lab.shadow_free;
      row.lab_total = lab.total;
    }
    if (report.has_perceptual) {
      const fs::path dir = options.scratch_dir.empty() ? fs::temp_directory_path()
                                                       : options.scratch_dir;
      const fs::path pred_path = dir / fmt::format("pred_{}.png", row.id);
      write_png(pred_path, output, sample.bit_depth);
      fs::path gt_path;
      if (const auto on_disk = source.gt_path(i)) {
        gt_path = *on_disk;
      } else {
        gt_path = dir / fmt::format("gt_{}.png", row.id);
        write_png(gt_path, sample.gt, sample.bit_depth);
      }
      row.perceptual = scorer.score(pred_path, gt_path);
    }
    report.rows.push_back(std::move(row));
  }
  report.aggregates = aggregate_rows(report.rows, report.has_lab, report.has_perceptual);
  return report;
}

}  // namespace ifblend
