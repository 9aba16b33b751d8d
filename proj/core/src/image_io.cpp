#include "ifblend/image_io.hpp"

#include "ifblend/errors.hpp"

#include <fmt/format.h>
#include <png.h>

#include <cstdio>
#include <memory>
#include <vector>

namespace ifblend {

namespace {

using FilePtr = std::unique_ptr<FILE, int (*)(FILE*)>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr file(std::fopen(path.c_str(), mode), &std::fclose);
  if (!file) throw IoError(fmt::format("cannot open {}", path.string()));
  return file;
}

[[noreturn]] void png_error_handler(png_structp png, png_const_charp message) {
  auto* where = static_cast<std::string*>(png_get_error_ptr(png));
  throw IoError(fmt::format("{}: {}", where != nullptr ? *where : "png", message));
}

void png_warning_handler(png_structp, png_const_charp) {}

class PngReader {
 public:
  explicit PngReader(const std::filesystem::path& path)
      : name_(path.string()), file_(open_file(path, "rb")) {
    png_byte signature[8];
    if (std::fread(signature, 1, 8, file_.get()) != 8 || png_sig_cmp(signature, 0, 8) != 0) {
      throw IoError(fmt::format("{} is not a PNG file", name_));
    }
    png_ = png_create_read_struct(PNG_LIBPNG_VER_STRING, &name_, png_error_handler,
                                  png_warning_handler);
    info_ = png_ ? png_create_info_struct(png_) : nullptr;
    if (png_ == nullptr || info_ == nullptr) throw IoError("libpng initialisation failed");
    png_init_io(png_, file_.get());
    png_set_sig_bytes(png_, 8);
    png_read_info(png_, info_);
  }

  ~PngReader() { png_destroy_read_struct(&png_, &info_, nullptr); }
  PngReader(const PngReader&) = delete;
  PngReader& operator=(const PngReader&) = delete;

  PngInfo info() const {
    PngInfo out;
    out.width = png_get_image_width(png_, info_);
    out.height = png_get_image_height(png_, info_);
    const int color = png_get_color_type(png_, info_);
    out.channels = (color & PNG_COLOR_MASK_COLOR) != 0 ? 3 : 1;
    out.bit_depth = png_get_bit_depth(png_, info_) == 16 ? 16 : 8;
    return out;
  }

  Image decode() {
    const PngInfo meta = info();
    const int color = png_get_color_type(png_, info_);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png_);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png_, info_) < 8) {
      png_set_expand_gray_1_2_4_to_8(png_);
    }
    if (png_get_valid(png_, info_, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png_);
    png_set_strip_alpha(png_);
    if (meta.bit_depth == 16) png_set_swap(png_);  // native little-endian uint16
    png_read_update_info(png_, info_);

    const size_t row_bytes = png_get_rowbytes(png_, info_);
    std::vector<png_byte> buffer(row_bytes * static_cast<size_t>(meta.height));
    std::vector<png_bytep> rows(static_cast<size_t>(meta.height));
    for (int64_t y = 0; y < meta.height; ++y) {
      rows[static_cast<size_t>(y)] = buffer.data() + static_cast<size_t>(y) * row_bytes;
    }
    png_read_image(png_, rows.data());
    png_read_end(png_, nullptr);

    const int64_t c = meta.channels;
    torch::Tensor hwc;
    if (meta.bit_depth == 16) {
      auto raw = torch::from_blob(buffer.data(), {meta.height, meta.width, c}, torch::kUInt16);
      hwc = raw.to(torch::kFloat) / 65535.0f;
    } else {
      auto raw = torch::from_blob(buffer.data(), {meta.height, meta.width, c}, torch::kUInt8);
      hwc = raw.to(torch::kFloat) / 255.0f;
    }
    return Image{hwc.permute({2, 0, 1}).unsqueeze(0).contiguous(), meta.bit_depth};
  }

 private:
  std::string name_;
  FilePtr file_;
  png_structp png_ = nullptr;
  png_infop info_ = nullptr;
};

}  // namespace

PngInfo read_png_info(const std::filesystem::path& path) { return PngReader(path).info(); }

Image read_png(const std::filesystem::path& path) { return PngReader(path).decode(); }

void write_png(const std::filesystem::path& path, const torch::Tensor& pixels, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) {
    throw ConfigError(fmt::format("PNG bit depth must be 8 or 16, got {}", bit_depth));
  }
  auto chw = pixels.dim() == 4 ? pixels.squeeze(0) : pixels;
  if (chw.dim() != 3 || (chw.size(0) != 1 && chw.size(0) != 3)) {
    throw ShapeError("write_png: expected (1|3, H, W) pixels");
  }
  const int64_t c = chw.size(0);
  const int64_t h = chw.size(1);
  const int64_t w = chw.size(2);
  const double max_value = bit_depth == 16 ? 65535.0 : 255.0;
  const auto scaled = torch::round(chw.detach().to(torch::kCPU, torch::kDouble).clamp(0.0, 1.0) *
                                   max_value)
                          .permute({1, 2, 0})
                          .contiguous();
  torch::Tensor hwc = bit_depth == 16 ? scaled.to(torch::kUInt16) : scaled.to(torch::kUInt8);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto file = open_file(path, "wb");
  std::string name = path.string();
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &name, png_error_handler,
                                            png_warning_handler);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  try {
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), bit_depth,
                 c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (bit_depth == 16) png_set_swap(png);
    auto* base = static_cast<png_bytep>(hwc.data_ptr());
    const size_t row_bytes = static_cast<size_t>(w * c) * (bit_depth / 8);
    for (int64_t y = 0; y < h; ++y) png_write_row(png, base + static_cast<size_t>(y) * row_bytes);
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
}

}  // namespace ifblend
