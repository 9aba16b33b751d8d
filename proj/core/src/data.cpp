#include "ifblend/data.hpp"

#include "ifblend/errors.hpp"
#include "ifblend/image_io.hpp"

#include <c10/util/Logging.h>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace ifblend {

namespace fs = std::filesystem;
using torch::indexing::Slice;

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

/// stem -> path for every file with the given extension in `dir`.
std::map<std::string, fs::path> list_by_stem(const fs::path& dir, std::string_view extension) {
  std::map<std::string, fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (lower(entry.path().extension().string()) != extension) continue;
    out.emplace(entry.path().stem().string(), entry.path());
  }
  return out;
}

std::vector<std::string> missing_from(const std::map<std::string, fs::path>& reference,
                                      const std::map<std::string, fs::path>& other) {
  std::vector<std::string> missing;
  for (const auto& [stem, _] : reference) {
    if (!other.contains(stem)) missing.push_back(stem);
  }
  return missing;
}

SampleMeta parse_meta(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot read metadata {}", path.string()));
  std::stringstream text;
  text << in.rdbuf();
  SampleMeta meta;
  meta.raw_json = text.str();
  try {
    const auto doc = nlohmann::json::parse(meta.raw_json);
    if (doc.contains("scene_id")) {
      meta.scene_id = doc["scene_id"].is_string() ? doc["scene_id"].get<std::string>()
                                                  : doc["scene_id"].dump();
    }
    if (doc.contains("lights")) {
      meta.lights = doc["lights"].is_string() ? doc["lights"].get<std::string>()
                                              : doc["lights"].dump();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("{}: invalid metadata JSON: {}", path.string(), e.what()));
  }
  return meta;
}

torch::Tensor to_rgb(const torch::Tensor& x) {
  return x.size(1) == 1 ? x.expand({x.size(0), 3, x.size(2), x.size(3)}).contiguous() : x;
}

}  // namespace

Layout parse_layout(std::string_view name) {
  if (name == "ambient6k") return Layout::kAmbient6k;
  if (name == "istd") return Layout::kIstd;
  throw ConfigError(fmt::format("unknown layout '{}' (expected ambient6k|istd)", name));
}

std::string_view to_string(Layout layout) {
  return layout == Layout::kAmbient6k ? "ambient6k" : "istd";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw ConfigError(fmt::format("unknown split '{}' (expected train|val|test)", name));
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "train";
}

std::vector<SampleDescriptor> read_dataset(const fs::path& root, Layout layout, Split split) {
  if (!fs::is_directory(root)) {
    throw ValidationError(fmt::format("dataset root {} is not a directory", root.string()));
  }
  fs::path split_dir = root / std::string(to_string(split));
  if (!fs::is_directory(split_dir)) {
    if (layout == Layout::kAmbient6k && fs::is_directory(root / "input")) {
      split_dir = root;
    } else {
      throw ValidationError(fmt::format("split directory {} does not exist", split_dir.string()));
    }
  }

  const bool istd = layout == Layout::kIstd;
  const auto inputs = list_by_stem(split_dir / (istd ? "A" : "input"), ".png");
  const auto gts = list_by_stem(split_dir / (istd ? "C" : "gt"), ".png");
  const fs::path mask_dir = split_dir / (istd ? "B" : "mask");
  const bool masks_expected = istd || fs::is_directory(mask_dir);
  const auto masks = list_by_stem(mask_dir, ".png");
  const auto metas = istd ? std::map<std::string, fs::path>{}
                          : list_by_stem(split_dir / "meta", ".json");

  std::vector<std::string> problems;
  for (const auto& stem : missing_from(inputs, gts)) {
    problems.push_back(fmt::format("{}: input without ground truth", stem));
  }
  for (const auto& stem : missing_from(gts, inputs)) {
    problems.push_back(fmt::format("{}: ground truth without input", stem));
  }
  if (masks_expected) {
    for (const auto& stem : missing_from(inputs, masks)) {
      problems.push_back(fmt::format("{}: input without mask", stem));
    }
    for (const auto& stem : missing_from(masks, inputs)) {
      problems.push_back(fmt::format("{}: mask without input", stem));
    }
  }

  std::vector<SampleDescriptor> out;
  for (const auto& [stem, input_path] : inputs) {
    const auto gt_it = gts.find(stem);
    if (gt_it == gts.end()) continue;
    SampleDescriptor desc;
    desc.id = stem;
    desc.input = input_path;
    desc.gt = gt_it->second;
    if (const auto m = masks.find(stem); m != masks.end()) desc.mask = m->second;
    if (const auto m = metas.find(stem); m != metas.end()) desc.meta = m->second;
    try {
      const auto in_info = read_png_info(desc.input);
      const auto gt_info = read_png_info(desc.gt);
      if (in_info.width != gt_info.width || in_info.height != gt_info.height) {
        problems.push_back(fmt::format("{}: input {}x{} vs ground truth {}x{}", stem,
                                       in_info.width, in_info.height, gt_info.width,
                                       gt_info.height));
        continue;
      }
      if (desc.mask) {
        const auto mask_info = read_png_info(*desc.mask);
        if (mask_info.width != in_info.width || mask_info.height != in_info.height) {
          problems.push_back(fmt::format("{}: mask {}x{} vs image {}x{}", stem, mask_info.width,
                                         mask_info.height, in_info.width, in_info.height));
          continue;
        }
      }
      desc.height = in_info.height;
      desc.width = in_info.width;
    } catch (const IoError& e) {
      problems.push_back(fmt::format("{}: unreadable ({})", stem, e.what()));
      continue;
    }
    out.push_back(std::move(desc));
  }

  if (!problems.empty()) {
    throw ValidationError(fmt::format("dataset {} ({}): {}", split_dir.string(), to_string(layout),
                                      fmt::join(problems, "; ")));
  }
  if (out.empty()) {
    LOG(WARNING) << "dataset split " << split_dir.string() << " contains no image pairs";
  }
  return out;
}

PairedSample load_sample(const SampleDescriptor& desc) {
  PairedSample sample;
  auto input = read_png(desc.input);
  auto gt = read_png(desc.gt);
  if (input.pixels.sizes().slice(2) != gt.pixels.sizes().slice(2)) {
    throw ValidationError(fmt::format("{}: input and ground truth sizes differ", desc.id));
  }
  sample.input = to_rgb(input.pixels);
  sample.gt = to_rgb(gt.pixels);
  sample.bit_depth = input.bit_depth;
  if (desc.mask) {
    auto mask = read_png(*desc.mask).pixels;
    if (mask.sizes().slice(2) != input.pixels.sizes().slice(2)) {
      throw ValidationError(fmt::format("{}: mask size differs from the image", desc.id));
    }
    sample.mask = mask.index({Slice(), Slice(0, 1)}).contiguous();
  }
  if (desc.meta) sample.meta = parse_meta(*desc.meta);
  if (sample.meta.scene_id.empty()) sample.meta.scene_id = desc.id;
  sample.meta.source_paths = {desc.input.string(), desc.gt.string()};
  if (desc.mask) sample.meta.source_paths.push_back(desc.mask->string());
  return sample;
}

PairedSample sample_patch(const PairedSample& sample, int size, std::mt19937_64& rng,
                          bool allow_flip) {
  const int64_t h = sample.height();
  const int64_t w = sample.width();
  if (size < 1 || size > h || size > w) {
    throw DimensionError(
        fmt::format("sample_patch: patch {} does not fit a {}x{} image", size, h, w));
  }
  const int64_t top = std::uniform_int_distribution<int64_t>(0, h - size)(rng);
  const int64_t left = std::uniform_int_distribution<int64_t>(0, w - size)(rng);
  const bool flip = allow_flip && std::bernoulli_distribution(0.5)(rng);

  const auto crop = [&](const torch::Tensor& t) {
    auto out = t.index({Slice(), Slice(), Slice(top, top + size), Slice(left, left + size)});
    if (flip) out = out.flip({3});
    return out.contiguous();
  };
  PairedSample patch;
  patch.input = crop(sample.input);
  patch.gt = crop(sample.gt);
  if (sample.has_mask()) patch.mask = crop(sample.mask);
  patch.meta = sample.meta;
  patch.bit_depth = sample.bit_depth;
  return patch;
}

InMemorySource::InMemorySource(std::vector<PairedSample> samples) : samples_(std::move(samples)) {}

std::string InMemorySource::id(size_t index) const {
  const auto& meta = samples_.at(index).meta;
  return meta.scene_id.empty() ? fmt::format("sample_{:04d}", index) : meta.scene_id;
}

DiskSource::DiskSource(std::vector<SampleDescriptor> descriptors)
    : descriptors_(std::move(descriptors)) {}

PairedSample DiskSource::get(size_t index) const { return load_sample(descriptors_.at(index)); }

}  // namespace ifblend
