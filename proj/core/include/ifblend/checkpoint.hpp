#pragma once

#include "ifblend/model.hpp"

#include <filesystem>
#include <string>

namespace ifblend {

/// Checkpoint archive layout:
///   bytes 0..7   magic "IFBCKPT1"
///   bytes 8..15  manifest length L (uint64, little endian)
///   next L bytes manifest JSON: {"format", "config", "tensors": [{name, shape,
///                dtype: "float32", kind: "parameter" | "buffer"}]}
///   remainder    raw little-endian float32 data of each tensor, manifest order
///
/// Integer buffers (BatchNorm's num_batches_tracked) are not stored.
void save_checkpoint(const std::filesystem::path& path, IFBlend& model);

/// Builds a model from the embedded config and loads its tensors.
IFBlend load_checkpoint(const std::filesystem::path& path);

/// Loads tensors into an existing model. Throws ValidationError when any name,
/// shape or dtype differs from the instantiated model.
void load_checkpoint_into(const std::filesystem::path& path, IFBlend& model);

ModelConfig read_checkpoint_config(const std::filesystem::path& path);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace ifblend
