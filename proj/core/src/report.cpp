#include "ifblend/report.hpp"

#include "ifblend/errors.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <cmath>
#include <fstream>

namespace ifblend {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string format_metric(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  return fmt::format("{}", value);
}

namespace {

std::string opt_cell(const std::optional<double>& v) {
  return v ? format_metric(*v) : std::string();
}

ordered_json number(double value) {
  if (std::isfinite(value)) return value;
  return format_metric(value);
}

ordered_json opt_number(const std::optional<double>& v) {
  return v ? number(*v) : ordered_json(nullptr);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out << text;
  if (!out) throw IoError(fmt::format("write failed: {}", path.string()));
}

}  // namespace

std::string report_to_csv(const EvalReport& report) {
  std::string header = "id,psnr,ssim";
  if (report.has_lab) header += ",lab_shadow,lab_free,lab_total";
  if (report.has_perceptual) header += ",perceptual";
  std::string out = header + "\n";
  for (const auto& row : report.rows) {
    out += fmt::format("{},{},{}", row.id, format_metric(row.psnr), format_metric(row.ssim));
    if (report.has_lab) {
      out += fmt::format(",{},{},{}", opt_cell(row.lab_shadow), opt_cell(row.lab_free),
                         opt_cell(row.lab_total));
    }
    if (report.has_perceptual) out += "," + opt_cell(row.perceptual);
    out += "\n";
  }
  const auto& agg = report.aggregates;
  out += fmt::format("mean,{},{}", format_metric(agg.psnr), format_metric(agg.ssim));
  if (report.has_lab) {
    out += fmt::format(",{},{},{}", opt_cell(agg.lab_shadow), opt_cell(agg.lab_free),
                       opt_cell(agg.lab_total));
  }
  if (report.has_perceptual) out += "," + opt_cell(agg.perceptual);
  out += "\n";
  return out;
}

std::string report_to_json(const EvalReport& report) {
  ordered_json doc;
  ordered_json rows = ordered_json::array();
  for (const auto& row : report.rows) {
    ordered_json r;
    r["id"] = row.id;
    r["psnr"] = number(row.psnr);
    r["ssim"] = number(row.ssim);
    if (report.has_lab) {
      r["lab_shadow"] = opt_number(row.lab_shadow);
      r["lab_free"] = opt_number(row.lab_free);
      r["lab_total"] = opt_number(row.lab_total);
    }
    if (report.has_perceptual) r["perceptual"] = opt_number(row.perceptual);
    rows.push_back(std::move(r));
  }
  doc["rows"] = std::move(rows);
  const auto& agg = report.aggregates;
  ordered_json a;
  a["psnr"] = number(agg.psnr);
  a["ssim"] = number(agg.ssim);
  if (report.has_lab) {
    a["lab_shadow"] = opt_number(agg.lab_shadow);
    a["lab_free"] = opt_number(agg.lab_free);
    a["lab_total"] = opt_number(agg.lab_total);
  }
  if (report.has_perceptual) a["perceptual"] = opt_number(agg.perceptual);
  doc["aggregates"] = std::move(a);
  doc["excluded"] = agg.excluded;
  doc["protocol"] = report.protocol;
  return doc.dump(2) + "\n";
}

void write_report(const EvalReport& report, const fs::path& dir, const std::string& stem) {
  fs::create_directories(dir);
  write_text(dir / (stem + ".csv"), report_to_csv(report));
  write_text(dir / (stem + ".json"), report_to_json(report));
}

}  // namespace ifblend
