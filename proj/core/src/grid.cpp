#include "ifblend/grid.hpp"

#include "ifblend/errors.hpp"
#include "ifblend/image_io.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <set>

namespace ifblend {

namespace fs = std::filesystem;
using torch::indexing::Slice;

namespace {

constexpr int kGlyphW = 5;
constexpr int kGlyphH = 7;
constexpr int kScale = 2;
constexpr int kPad = 3;
constexpr int64_t kGap = 4;

using Glyph = std::array<const char*, kGlyphH>;

const std::map<char, Glyph>& glyphs() {
  static const std::map<char, Glyph> table = {
      {'a', {"01110", "10001", "10001", "11111", "10001", "10001", "10001"}},
      {'b', {"11110", "10001", "10001", "11110", "10001", "10001", "11110"}},
      {'c', {"01110", "10001", "10000", "10000", "10000", "10001", "01110"}},
      {'d', {"11110", "10001", "10001", "10001", "10001", "10001", "11110"}},
      {'e', {"11111", "10000", "10000", "11110", "10000", "10000", "11111"}},
      {'f', {"11111", "10000", "10000", "11110", "10000", "10000", "10000"}},
      {'g', {"01110", "10001", "10000", "10111", "10001", "10001", "01111"}},
      {'h', {"10001", "10001", "10001", "11111", "10001", "10001", "10001"}},
      {'i', {"01110", "00100", "00100", "00100", "00100", "00100", "01110"}},
      {'j', {"00111", "00010", "00010", "00010", "00010", "10010", "01100"}},
      {'k', {"10001", "10010", "10100", "11000", "10100", "10010", "10001"}},
      {'l', {"10000", "10000", "10000", "10000", "10000", "10000", "11111"}},
      {'m', {"10001", "11011", "10101", "10101", "10001", "10001", "10001"}},
      {'n', {"10001", "10001", "11001", "10101", "10011", "10001", "10001"}},
      {'o', {"01110", "10001", "10001", "10001", "10001", "10001", "01110"}},
      {'p', {"11110", "10001", "10001", "11110", "10000", "10000", "10000"}},
      {'q', {"01110", "10001", "10001", "10001", "10101", "10010", "01101"}},
      {'r', {"11110", "10001", "10001", "11110", "10100", "10010", "10001"}},
      {'s', {"01111", "10000", "10000", "01110", "00001", "00001", "11110"}},
      {'t', {"11111", "00100", "00100", "00100", "00100", "00100", "00100"}},
      {'u', {"10001", "10001", "10001", "10001", "10001", "10001", "01110"}},
      {'v', {"10001", "10001", "10001", "10001", "10001", "01010", "00100"}},
      {'w', {"10001", "10001", "10001", "10101", "10101", "10101", "01010"}},
      {'x', {"10001", "10001", "01010", "00100", "01010", "10001", "10001"}},
      {'y', {"10001", "10001", "10001", "01010", "00100", "00100", "00100"}},
      {'z', {"11111", "00001", "00010", "00100", "01000", "10000", "11111"}},
      {'0', {"01110", "10001", "10011", "10101", "11001", "10001", "01110"}},
      {'1', {"00100", "01100", "00100", "00100", "00100", "00100", "01110"}},
      {'2', {"01110", "10001", "00001", "00010", "00100", "01000", "11111"}},
      {'3', {"11111", "00010", "00100", "00010", "00001", "10001", "01110"}},
      {'4', {"00010", "00110", "01010", "10010", "11111", "00010", "00010"}},
      {'5', {"11111", "10000", "11110", "00001", "00001", "10001", "01110"}},
      {'6', {"00110", "01000", "10000", "11110", "10001", "10001", "01110"}},
      {'7', {"11111", "00001", "00010", "00100", "01000", "01000", "01000"}},
      {'8', {"01110", "10001", "10001", "01110", "10001", "10001", "01110"}},
      {'9', {"01110", "10001", "10001", "01111", "00001", "00010", "01100"}},
      {'.', {"00000", "00000", "00000", "00000", "00000", "01100", "01100"}},
      {'-', {"00000", "00000", "00000", "11111", "00000", "00000", "00000"}},
      {'_', {"00000", "00000", "00000", "00000", "00000", "00000", "11111"}},
  };
  return table;
}

torch::Tensor as_rgb(const torch::Tensor& image) {
  auto img = image.dim() == 3 ? image.unsqueeze(0) : image;
  if (img.dim() != 4) throw ShapeError("grid: images must be (1, C, H, W)");
  img = img.to(torch::kFloat);
  if (img.size(1) == 1) img = img.expand({img.size(0), 3, img.size(2), img.size(3)});
  if (img.size(1) != 3) {
    throw ShapeError(fmt::format("grid: expected 1 or 3 channels, got {}", img.size(1)));
  }
  return img;
}

std::vector<std::string> png_stems(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw ValidationError(fmt::format("grid: {} is not a directory", dir.string()));
  }
  std::vector<std::string> stems;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      stems.push_back(entry.path().stem().string());
    }
  }
  std::sort(stems.begin(), stems.end());
  return stems;
}

}  // namespace

std::string sanitize_label(const std::string& label) {
  std::string out;
  out.reserve(label.size());
  for (const char c : label) {
    const char lower = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out.push_back(glyphs().count(lower) != 0 ? lower : '_');
  }
  return out;
}

int64_t label_strip_height() { return kGlyphH * kScale + 2 * kPad; }

torch::Tensor label_strip(const std::string& text, int64_t width) {
  auto strip = torch::ones({label_strip_height(), width}, torch::kFloat);
  auto acc = strip.accessor<float, 2>();
  const auto clean = sanitize_label(text);
  int64_t x0 = kPad;
  for (const char c : clean) {
    if (x0 + kGlyphW * kScale > width) break;
    const auto& glyph = glyphs().at(c);
    for (int gy = 0; gy < kGlyphH; ++gy) {
      for (int gx = 0; gx < kGlyphW; ++gx) {
        if (glyph[gy][gx] != '1') continue;
        for (int sy = 0; sy < kScale; ++sy) {
          for (int sx = 0; sx < kScale; ++sx) {
            acc[kPad + gy * kScale + sy][x0 + gx * kScale + sx] = 0.0F;
          }
        }
      }
    }
    x0 += (kGlyphW + 1) * kScale;
  }
  return strip.view({1, 1, label_strip_height(), width}).expand({1, 3, -1, -1}).clone();
}

torch::Tensor compose_row(const std::vector<torch::Tensor>& images,
                          const std::vector<std::string>& labels) {
  if (images.empty() || images.size() != labels.size()) {
    throw ShapeError("grid: need one label per image and at least one image");
  }
  int64_t max_h = 0;
  int64_t total_w = 0;
  std::vector<torch::Tensor> rgb;
  for (const auto& image : images) {
    rgb.push_back(as_rgb(image));
    max_h = std::max(max_h, rgb.back().size(2));
    total_w += rgb.back().size(3);
  }
  total_w += kGap * static_cast<int64_t>(images.size() - 1);
  auto canvas = torch::ones({1, 3, label_strip_height() + max_h, total_w}, torch::kFloat);
  int64_t x = 0;
  for (size_t i = 0; i < rgb.size(); ++i) {
    const int64_t h = rgb[i].size(2);
    const int64_t w = rgb[i].size(3);
    canvas.index_put_({Slice(), Slice(), Slice(0, label_strip_height()), Slice(x, x + w)},
                      label_strip(labels[i], w));
    canvas.index_put_(
        {Slice(), Slice(), Slice(label_strip_height(), label_strip_height() + h), Slice(x, x + w)},
        rgb[i]);
    x += w + kGap;
  }
  return canvas;
}

torch::Tensor compose_column(const std::vector<torch::Tensor>& images,
                             const std::vector<std::string>& labels) {
  if (images.empty() || images.size() != labels.size()) {
    throw ShapeError("grid: need one label per image and at least one image");
  }
  int64_t max_w = 0;
  int64_t total_h = 0;
  std::vector<torch::Tensor> rgb;
  for (const auto& image : images) {
    rgb.push_back(as_rgb(image));
    max_w = std::max(max_w, rgb.back().size(3));
    total_h += label_strip_height() + rgb.back().size(2);
  }
  total_h += kGap * static_cast<int64_t>(images.size() - 1);
  auto canvas = torch::ones({1, 3, total_h, max_w}, torch::kFloat);
  int64_t y = 0;
  for (size_t i = 0; i < rgb.size(); ++i) {
    const int64_t h = rgb[i].size(2);
    const int64_t w = rgb[i].size(3);
    canvas.index_put_({Slice(), Slice(), Slice(y, y + label_strip_height()), Slice(0, w)},
                      label_strip(labels[i], w));
    y += label_strip_height();
    canvas.index_put_({Slice(), Slice(), Slice(y, y + h), Slice(0, w)}, rgb[i]);
    y += h + kGap;
  }
  return canvas;
}

std::vector<std::string> common_stems(const std::vector<GridColumn>& columns) {
  if (columns.empty()) throw ValidationError("grid: no input directories");
  std::vector<std::vector<std::string>> per_dir;
  std::set<std::string> all;
  for (const auto& column : columns) {
    per_dir.push_back(png_stems(column.dir));
    all.insert(per_dir.back().begin(), per_dir.back().end());
  }
  std::vector<std::string> problems;
  for (size_t i = 0; i < columns.size(); ++i) {
    std::vector<std::string> missing;
    const std::set<std::string> have(per_dir[i].begin(), per_dir[i].end());
    std::set_difference(all.begin(), all.end(), have.begin(), have.end(),
                        std::back_inserter(missing));
    if (!missing.empty()) {
      problems.push_back(fmt::format("{} ({}) is missing: {}", columns[i].label,
                                     columns[i].dir.string(), fmt::join(missing, ", ")));
    }
  }
  if (!problems.empty()) {
    throw ValidationError(fmt::format("grid: stem mismatch\n{}", fmt::join(problems, "\n")));
  }
  return {all.begin(), all.end()};
}

std::vector<fs::path> write_grids(const std::vector<GridColumn>& columns, const fs::path& out_dir) {
  const auto stems = common_stems(columns);
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  if (columns.size() == 1) {
    if (stems.empty()) return written;
    std::vector<torch::Tensor> images;
    for (const auto& stem : stems) {
      images.push_back(read_png(columns.front().dir / (stem + ".png")).pixels);
    }
    const auto path = out_dir / "contact_sheet.png";
    write_png(path, compose_column(images, stems), 8);
    written.push_back(path);
    return written;
  }
  std::vector<std::string> labels;
  for (const auto& column : columns) labels.push_back(column.label);
  for (const auto& stem : stems) {
    std::vector<torch::Tensor> images;
    for (const auto& column : columns) {
      images.push_back(read_png(column.dir / (stem + ".png")).pixels);
    }
    const auto path = out_dir / (stem + ".png");
    write_png(path, compose_row(images, labels), 8);
    written.push_back(path);
  }
  return written;
}

}  // namespace ifblend
