#pragma once

#include <torch/torch.h>

#include <filesystem>

namespace ifblend {

struct PngInfo {
  int64_t width = 0;
  int64_t height = 0;
  int channels = 0;  ///< after dropping alpha and expanding palettes: 1 or 3
  int bit_depth = 8;
};

/// Decoded image: (1, C, H, W) float32 in [0, 1] plus the source bit depth.
struct Image {
  torch::Tensor pixels;
  int bit_depth = 8;
};

/// Reads only the PNG header.
PngInfo read_png_info(const std::filesystem::path& path);

/// Decodes an 8- or 16-bit PNG, dividing by the type maximum. Alpha is
/// dropped, palettes and sub-byte gray depths are expanded to 8 bits.
Image read_png(const std::filesystem::path& path);

/// Writes (1, C, H, W) or (C, H, W) values in [0, 1] (clamped) as an 8- or
/// 16-bit gray or RGB PNG, rounding to nearest.
void write_png(const std::filesystem::path& path, const torch::Tensor& pixels, int bit_depth = 8);

}  // namespace ifblend
