#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

namespace ifblend {

struct GridColumn {
  std::string label;
  std::filesystem::path dir;
};

/// Label reduced to [a-z0-9._-]; other characters become '_'.
std::string sanitize_label(const std::string& label);

/// Renders `text` (sanitized) with the built-in 5x7 glyphs into a white strip
/// of the given width: (1, 3, strip_height, width) in [0, 1]. Text that does
/// not fit is truncated.
torch::Tensor label_strip(const std::string& text, int64_t width);

/// Height of the strip label_strip produces.
int64_t label_strip_height();

/// Places images side by side under their labels, each padded at the bottom
/// to the tallest one. Gray images are replicated to 3 channels.
torch::Tensor compose_row(const std::vector<torch::Tensor>& images,
                          const std::vector<std::string>& labels);

/// Stacks labeled images vertically, each padded on the right to the widest.
torch::Tensor compose_column(const std::vector<torch::Tensor>& images,
                             const std::vector<std::string>& labels);

/// PNG stems shared by every directory. Throws ValidationError naming each
/// stem missing from some directory.
std::vector<std::string> common_stems(const std::vector<GridColumn>& columns);

/// Several directories: one <stem>.png per stem with a column per directory.
/// One directory: a single contact_sheet.png, one labeled row per stem.
/// Returns the written files.
std::vector<std::filesystem::path> write_grids(const std::vector<GridColumn>& columns,
                                               const std::filesystem::path& out_dir);

}  // namespace ifblend
