#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace ifblend {

enum class Layout { kAmbient6k, kIstd };
enum class Split { kTrain, kVal, kTest };

Layout parse_layout(std::string_view name);
std::string_view to_string(Layout layout);
Split parse_split(std::string_view name);
std::string_view to_string(Split split);

/// Free-form per-sample metadata. `raw_json` keeps the full sidecar document.
struct SampleMeta {
  std::string scene_id;
  std::optional<std::string> lights;
  std::vector<std::string> source_paths;
  std::string raw_json;
};

/// Input / ground truth pair, optionally with a binary shadow mask.
/// Tensors are (1, C, H, W) float32 in [0, 1]; `mask` is (1, 1, H, W) or
/// undefined.
struct PairedSample {
  torch::Tensor input;
  torch::Tensor gt;
  torch::Tensor mask;
  SampleMeta meta;
  int bit_depth = 8;

  [[nodiscard]] bool has_mask() const { return mask.defined(); }
  [[nodiscard]] int64_t height() const { return input.size(2); }
  [[nodiscard]] int64_t width() const { return input.size(3); }
};

/// Lazily loadable dataset entry; headers have already been validated.
struct SampleDescriptor {
  std::string id;  ///< shared filename stem
  std::filesystem::path input;
  std::filesystem::path gt;
  std::optional<std::filesystem::path> mask;
  std::optional<std::filesystem::path> meta;
  int64_t height = 0;
  int64_t width = 0;
};

/// Lists the pairs of a split in lexicographic stem order.
///
/// ambient6k: <root>/<split>/{input,gt}/*.png, optional <split>/meta/*.json
///            and <split>/mask/*.png. When <root>/<split> does not exist but
///            <root>/input does, <root> itself is read as the split (the
///            layout `ifblend synth` writes).
/// istd:      <root>/<split>/A (input), B (mask), C (gt).
/// Unpaired stems, size mismatches and unreadable headers raise
/// ValidationError naming the offending stems.
std::vector<SampleDescriptor> read_dataset(const std::filesystem::path& root, Layout layout,
                                           Split split);

/// Decodes a descriptor. Gray images are replicated to 3 channels; masks keep
/// their first channel.
PairedSample load_sample(const SampleDescriptor& desc);

/// Random crop of `size` x `size` applied identically to input, gt and mask,
/// followed by a synchronized horizontal flip with probability 1/2 when
/// `allow_flip` is set. Throws DimensionError when size exceeds the image.
PairedSample sample_patch(const PairedSample& sample, int size, std::mt19937_64& rng,
                          bool allow_flip = true);

/// Random-access provider of training / evaluation samples.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  [[nodiscard]] virtual size_t size() const = 0;
  [[nodiscard]] virtual std::string id(size_t index) const = 0;
  [[nodiscard]] virtual PairedSample get(size_t index) const = 0;
  /// Ground-truth file on disk, when the source has one.
  [[nodiscard]] virtual std::optional<std::filesystem::path> gt_path(size_t) const {
    return std::nullopt;
  }
};

class InMemorySource : public SampleSource {
 public:
  explicit InMemorySource(std::vector<PairedSample> samples);
  [[nodiscard]] size_t size() const override { return samples_.size(); }
  [[nodiscard]] std::string id(size_t index) const override;
  [[nodiscard]] PairedSample get(size_t index) const override { return samples_.at(index); }

 private:
  std::vector<PairedSample> samples_;
};

class DiskSource : public SampleSource {
 public:
  explicit DiskSource(std::vector<SampleDescriptor> descriptors);
  [[nodiscard]] size_t size() const override { return descriptors_.size(); }
  [[nodiscard]] std::string id(size_t index) const override { return descriptors_.at(index).id; }
  [[nodiscard]] PairedSample get(size_t index) const override;
  [[nodiscard]] std::optional<std::filesystem::path> gt_path(size_t index) const override {
    return descriptors_.at(index).gt;
  }
  [[nodiscard]] const std::vector<SampleDescriptor>& descriptors() const { return descriptors_; }

 private:
  std::vector<SampleDescriptor> descriptors_;
};

}  // namespace ifblend
