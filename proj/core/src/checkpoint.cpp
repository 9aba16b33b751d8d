#include "ifblend/checkpoint.hpp"

#include "ifblend/errors.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace ifblend {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

namespace {

constexpr std::array<char, 8> kMagic = {'I', 'F', 'B', 'C', 'K', 'P', 'T', '1'};

struct NamedTensor {
  std::string name;
  torch::Tensor tensor;
  std::string kind;
};

std::vector<NamedTensor> collect_tensors(IFBlend& model) {
  std::vector<NamedTensor> out;
  for (const auto& item : model->named_parameters()) {
    out.push_back({item.key(), item.value(), "parameter"});
  }
  for (const auto& item : model->named_buffers()) {
    if (item.value().scalar_type() != torch::kFloat) continue;
    out.push_back({item.key(), item.value(), "buffer"});
  }
  return out;
}

json config_json(const ModelConfig& cfg) {
  return json{{"stages", cfg.stages},
              {"base_channels", cfg.base_channels},
              {"channel_cap", cfg.channel_cap},
              {"use_dwt_feats", cfg.use_dwt_feats},
              {"use_rgb_split", cfg.use_rgb_split},
              {"high_pass_mode", std::string(to_string(cfg.high_pass_mode))},
              {"gcb_depth", cfg.gcb_depth},
              {"window_size", cfg.window_size},
              {"dropout_rate", cfg.dropout_rate},
              {"negative_slope", cfg.negative_slope},
              {"num_experts", cfg.num_experts},
              {"heads", cfg.heads}};
}

ModelConfig config_from(const json& j) {
  ModelConfig cfg;
  try {
    cfg.stages = j.at("stages").get<int>();
    cfg.base_channels = j.at("base_channels").get<int>();
    cfg.channel_cap = j.at("channel_cap").get<int>();
    cfg.use_dwt_feats = j.at("use_dwt_feats").get<bool>();
    cfg.use_rgb_split = j.at("use_rgb_split").get<bool>();
    cfg.high_pass_mode = parse_high_pass_mode(j.at("high_pass_mode").get<std::string>());
    cfg.gcb_depth = j.at("gcb_depth").get<int>();
    cfg.window_size = j.at("window_size").get<int>();
    cfg.dropout_rate = j.at("dropout_rate").get<double>();
    cfg.negative_slope = j.at("negative_slope").get<double>();
    cfg.num_experts = j.at("num_experts").get<int>();
    cfg.heads = j.at("heads").get<int>();
  } catch (const json::exception& e) {
    throw ValidationError(fmt::format("checkpoint config is malformed: {}", e.what()));
  }
  cfg.validate();
  return cfg;
}

struct Archive {
  json manifest;
  std::vector<char> payload;
};

Archive read_archive(const std::filesystem::path& path, bool with_payload) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open checkpoint {}", path.string()));
  std::array<char, 8> magic{};
  std::uint64_t length = 0;
  in.read(magic.data(), magic.size());
  in.read(reinterpret_cast<char*>(&length), sizeof(length));
  if (!in || magic != kMagic) {
    throw ValidationError(fmt::format("{} is not an IFBlend checkpoint", path.string()));
  }
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw ValidationError(fmt::format("{}: truncated manifest", path.string()));
  Archive archive;
  try {
    archive.manifest = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(fmt::format("{}: bad manifest: {}", path.string(), e.what()));
  }
  if (with_payload) {
    archive.payload.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return archive;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) { return config_json(cfg).dump(2); }

ModelConfig model_config_from_json(const std::string& text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::parse_error& e) {
    throw ValidationError(fmt::format("model config JSON: {}", e.what()));
  }
}

void save_checkpoint(const std::filesystem::path& path, IFBlend& model) {
  const auto tensors = collect_tensors(model);
  json manifest;
  manifest["format"] = 1;
  manifest["config"] = config_json(model->config());
  manifest["tensors"] = json::array();
  for (const auto& t : tensors) {
    manifest["tensors"].push_back(
        {{"name", t.name}, {"shape", t.tensor.sizes().vec()}, {"dtype", "float32"}, {"kind", t.kind}});
  }
  const std::string text = manifest.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot write checkpoint {}", tmp.string()));
    const std::uint64_t length = text.size();
    out.write(kMagic.data(), kMagic.size());
    out.write(reinterpret_cast<const char*>(&length), sizeof(length));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : tensors) {
      const auto data = t.tensor.detach().to(torch::kCPU).contiguous();
      out.write(reinterpret_cast<const char*>(data.data_ptr<float>()),
                static_cast<std::streamsize>(data.numel() * sizeof(float)));
    }
    if (!out) throw IoError(fmt::format("failed writing checkpoint {}", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

ModelConfig read_checkpoint_config(const std::filesystem::path& path) {
  const auto archive = read_archive(path, false);
  if (!archive.manifest.contains("config")) {
    throw ValidationError(fmt::format("{}: manifest lacks a model config", path.string()));
  }
  return config_from(archive.manifest["config"]);
}

void load_checkpoint_into(const std::filesystem::path& path, IFBlend& model) {
  const auto archive = read_archive(path, true);
  std::map<std::string, NamedTensor> expected;
  for (auto& t : collect_tensors(model)) expected.emplace(t.name, t);

  const auto& entries = archive.manifest.at("tensors");
  if (entries.size() != expected.size()) {
    throw ValidationError(fmt::format("{}: {} tensors stored, model has {}", path.string(),
                                      entries.size(), expected.size()));
  }
  size_t offset = 0;
  torch::NoGradGuard guard;
  for (const auto& entry : entries) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    if (entry.at("dtype").get<std::string>() != "float32") {
      throw ValidationError(fmt::format("{}: tensor '{}' has unsupported dtype", path.string(), name));
    }
    const auto it = expected.find(name);
    if (it == expected.end()) {
      throw ValidationError(fmt::format("{}: tensor '{}' does not exist in the model",
                                        path.string(), name));
    }
    auto& target = it->second.tensor;
    if (target.sizes().vec() != shape) {
      throw ValidationError(fmt::format("{}: tensor '{}' has shape [{}], model expects [{}]",
                                        path.string(), name, fmt::join(shape, ","),
                                        fmt::join(target.sizes(), ",")));
    }
    const size_t bytes = static_cast<size_t>(target.numel()) * sizeof(float);
    if (offset + bytes > archive.payload.size()) {
      throw ValidationError(fmt::format("{}: payload truncated at '{}'", path.string(), name));
    }
    auto cpu = torch::empty(target.sizes(), torch::kFloat);
    std::memcpy(cpu.data_ptr<float>(), archive.payload.data() + offset, bytes);
    target.copy_(cpu);
    offset += bytes;
  }
  if (offset != archive.payload.size()) {
    throw ValidationError(fmt::format("{}: {} trailing payload bytes", path.string(),
                                      archive.payload.size() - offset));
  }
}

IFBlend load_checkpoint(const std::filesystem::path& path) {
  IFBlend model(read_checkpoint_config(path));
  load_checkpoint_into(path, model);
  model->eval();
  return model;
}

}  // namespace ifblend
