#include "ifblend/config.hpp"

#include "ifblend/errors.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

extern char** environ;

namespace ifblend {

DataSource parse_data_source(std::string_view name) {
  if (name == "disk") return DataSource::kDisk;
  if (name == "synthetic") return DataSource::kSynthetic;
  throw ConfigError(fmt::format("unknown data source '{}' (expected disk|synthetic)", name));
}

std::string_view to_string(DataSource source) {
  return source == DataSource::kDisk ? "disk" : "synthetic";
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_integer(std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(fmt::format("expected an integer, got '{}'", text));
  }
  return value;
}

double parse_double(std::string_view text) {
  const std::string s(text);
  char* end = nullptr;
  const double value = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ConfigError(fmt::format("expected a number, got '{}'", text));
  }
  return value;
}

bool parse_bool(std::string_view text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError(fmt::format("expected true|false, got '{}'", text));
}

std::string parse_string(std::string_view text) {
  if (text.size() >= 2 && text.front() == '"' && text.back() == '"') {
    text = text.substr(1, text.size() - 2);
  }
  return std::string(text);
}

std::string quote(const std::string& s) {
  const bool needs = s.empty() || s.front() == ' ' || s.back() == ' ' ||
                     s.find('#') != std::string::npos;
  return needs ? "\"" + s + "\"" : s;
}

std::string fmt_double(double v) { return fmt::format("{}", v); }

struct Registry {
  std::vector<ConfigKey> keys;

  void add_int(std::string name, std::string help, int& ref) {
    keys.push_back({std::move(name), std::move(help), [&ref] { return std::to_string(ref); },
                    [&ref](std::string_view v) { ref = parse_integer<int>(v); }});
  }
  void add_u64(std::string name, std::string help, std::uint64_t& ref) {
    keys.push_back({std::move(name), std::move(help), [&ref] { return std::to_string(ref); },
                    [&ref](std::string_view v) { ref = parse_integer<std::uint64_t>(v); }});
  }
  void add_double(std::string name, std::string help, double& ref) {
    keys.push_back({std::move(name), std::move(help), [&ref] { return fmt_double(ref); },
                    [&ref](std::string_view v) { ref = parse_double(v); }});
  }
  void add_bool(std::string name, std::string help, bool& ref) {
    keys.push_back({std::move(name), std::move(help),
                    [&ref] { return std::string(ref ? "true" : "false"); },
                    [&ref](std::string_view v) { ref = parse_bool(v); }});
  }
  void add_string(std::string name, std::string help, std::string& ref) {
    keys.push_back({std::move(name), std::move(help), [&ref] { return quote(ref); },
                    [&ref](std::string_view v) { ref = parse_string(v); }});
  }
  template <typename E, typename Parse>
  void add_enum(std::string name, std::string help, E& ref, Parse parse) {
    keys.push_back({std::move(name), std::move(help),
                    [&ref] { return std::string(to_string(ref)); },
                    [&ref, parse](std::string_view v) { ref = parse(v); }});
  }
};

}  // namespace

std::vector<ConfigKey> config_keys(RunConfig& cfg) {
  Registry r;
  auto& m = cfg.model;
  r.add_int("model.stages", "encoder/decoder stage count", m.stages);
  r.add_int("model.base_channels", "stage-1 width; doubles per stage", m.base_channels);
  r.add_int("model.channel_cap", "maximum stage width", m.channel_cap);
  r.add_bool("model.use_dwt_feats", "concatenate Haar bands into the stage features",
             m.use_dwt_feats);
  r.add_bool("model.use_rgb_split", "feed the image-domain high-pass path from the RGB input",
             m.use_rgb_split);
  r.add_enum("model.high_pass", "maxpool|residual", m.high_pass_mode,
             [](std::string_view v) { return parse_high_pass_mode(v); });
  r.add_int("model.gcb_depth", "ConvNeXt units in the global context branch", m.gcb_depth);
  r.add_int("model.window_size", "attention window side", m.window_size);
  r.add_double("model.dropout", "dropout rate inside LFB/HFB", m.dropout_rate);
  r.add_double("model.negative_slope", "LeakyReLU slope", m.negative_slope);
  r.add_int("model.num_experts", "dynamic convolution kernels", m.num_experts);
  r.add_int("model.heads", "attention heads", m.heads);

  auto& l = cfg.loss;
  r.add_double("loss.lambda_ssim", "weight of the 1 - SSIM term", l.lambda_ssim);
  r.add_int("loss.ssim_window", "odd SSIM window side", l.ssim_window);
  r.add_double("loss.ssim_sigma", "SSIM Gaussian sigma", l.ssim_sigma);

  auto& t = cfg.train;
  r.add_int("train.epochs", "epoch budget", t.epochs);
  r.add_int("train.batch_size", "patches per step", t.batch_size);
  r.add_int("train.patch_size", "square crop side", t.patch_size);
  r.add_double("train.lr", "peak learning rate", t.lr);
  r.add_double("train.lr_min", "cosine floor", t.lr_min);
  r.add_enum("train.lr_schedule", "constant|cosine", t.lr_schedule,
             [](std::string_view v) { return parse_lr_schedule(v); });
  r.add_u64("train.seed", "seed of weights, sampling and dropout", t.seed);
  r.add_int("train.checkpoint_every", "steps between checkpoints, 0 disables",
            t.checkpoint_every);
  r.add_int("train.val_every", "steps between validations, 0 = once per epoch", t.val_every);
  r.add_int("train.max_steps", "step cap, 0 = epoch budget", t.max_steps);
  r.add_bool("train.deterministic", "force deterministic kernels", t.deterministic);
  r.add_bool("train.flip", "random horizontal flips", t.flip);

  auto& d = cfg.data;
  r.add_enum("data.source", "disk|synthetic", d.source,
             [](std::string_view v) { return parse_data_source(v); });
  r.add_string("data.root", "dataset root", d.root);
  r.add_enum("data.layout", "ambient6k|istd", d.layout,
             [](std::string_view v) { return parse_layout(v); });
  r.add_enum("data.train_split", "train|val|test", d.train_split,
             [](std::string_view v) { return parse_split(v); });
  r.add_enum("data.val_split", "train|val|test", d.val_split,
             [](std::string_view v) { return parse_split(v); });
  r.add_string("data.val_root", "validation root, empty validates on the training set",
               d.val_root);
  r.add_int("data.synthetic_count", "pairs generated when source = synthetic",
            d.synthetic.count);
  r.add_int("data.synthetic_size", "side of generated pairs", d.synthetic.size);
  r.add_u64("data.synthetic_seed", "seed of generated pairs", d.synthetic.seed);

  auto& e = cfg.eval;
  r.add_enum("eval.protocol", "rgb|lab_istd", e.protocol,
             [](std::string_view v) { return parse_protocol(v); });
  r.add_enum("eval.lab_mode", "mae_lab|rmse_lab", e.lab_mode,
             [](std::string_view v) { return parse_lab_error_mode(v); });
  r.add_enum("eval.split", "train|val|test", e.split,
             [](std::string_view v) { return parse_split(v); });
  r.add_int("eval.tile", "tile side, 0 = whole image", e.tile);
  r.add_int("eval.overlap", "tile overlap", e.overlap);
  r.add_string("eval.perceptual_scorer_cmd", "external perceptual scorer, empty disables",
               e.perceptual_scorer_cmd);

  r.add_int("infer.tile", "tile side, 0 = whole image", cfg.infer.tile);
  r.add_int("infer.overlap", "tile overlap", cfg.infer.overlap);

  auto& s = cfg.synth;
  r.add_int("synth.count", "pairs to generate", s.set.count);
  r.add_int("synth.size", "side of each pair", s.set.size);
  r.add_u64("synth.seed", "set seed", s.set.seed);
  r.add_int("synth.max_lights", "light counts cycle through 1..max_lights", s.set.max_lights);
  r.add_double("synth.penumbra_sigma", "occluder edge blur", s.set.penumbra_sigma);
  r.add_double("synth.min_attenuation", "darkest single-shadow factor",
               s.set.min_attenuation);
  r.add_int("synth.bit_depth", "8|16", s.bit_depth);

  r.add_string("run.out_dir", "parent of run directories", cfg.run.out_dir);
  r.add_string("run.name", "run directory name, empty uses a timestamp", cfg.run.name);
  r.add_double("run.target_psnr", "early stop once validation PSNR reaches this, 0 disables",
               cfg.run.target_psnr);
  r.add_double("run.target_loss", "with target_psnr: eval loss must also be below this",
               cfg.run.target_loss);
  return std::move(r.keys);
}

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  auto keys = config_keys(cfg);
  const auto it = std::find_if(keys.begin(), keys.end(),
                               [&](const ConfigKey& k) { return k.name == key; });
  if (it == keys.end()) throw ConfigError(fmt::format("unknown key '{}'", key));
  try {
    it->set(trim(value));
  } catch (const Error& e) {
    throw ConfigError(fmt::format("{}: {}", key, e.what()));
  } catch (const std::exception& e) {
    throw ConfigError(fmt::format("{}: {}", key, e.what()));
  }
}

void apply_config_text(RunConfig& cfg, std::string_view text, std::string_view origin) {
  std::vector<std::string> problems;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view = line;
    if (const auto hash = view.find('#'); hash != std::string_view::npos) {
      // A '#' inside a quoted value is kept.
      const auto first_quote = view.find('"');
      if (first_quote == std::string_view::npos || hash < first_quote) {
        view = view.substr(0, hash);
      } else {
        const auto close = view.find('"', first_quote + 1);
        const auto after = view.find('#', close == std::string_view::npos ? view.size() : close);
        if (after != std::string_view::npos) view = view.substr(0, after);
      }
    }
    view = trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) {
      problems.push_back(fmt::format("{}:{}: expected 'key = value'", origin, lineno));
      continue;
    }
    const auto key = trim(view.substr(0, eq));
    try {
      set_config_value(cfg, key, view.substr(eq + 1));
    } catch (const ConfigError& e) {
      problems.push_back(fmt::format("{}:{}: {}", origin, lineno, e.what()));
    }
  }
  if (!problems.empty()) throw ConfigError(fmt::format("{}", fmt::join(problems, "\n")));
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot read config file {}", path.string()));
  std::ostringstream text;
  text << in.rdbuf();
  apply_config_text(cfg, text.str(), path.string());
}

void apply_env_overrides(RunConfig& cfg, const std::map<std::string, std::string>* env) {
  std::map<std::string, std::string> process_env;
  if (env == nullptr) {
    for (char** e = environ; e != nullptr && *e != nullptr; ++e) {
      const std::string_view entry(*e);
      const auto eq = entry.find('=');
      if (eq == std::string_view::npos) continue;
      process_env.emplace(entry.substr(0, eq), entry.substr(eq + 1));
    }
    env = &process_env;
  }
  std::vector<std::string> problems;
  for (const auto& [name, value] : *env) {
    if (name.rfind(kEnvPrefix, 0) != 0) continue;
    const auto rest = name.substr(kEnvPrefix.size());
    const auto sep = rest.find("__");
    if (sep == std::string::npos) continue;
    std::string key = rest.substr(0, sep) + "." + rest.substr(sep + 2);
    std::transform(key.begin(), key.end(), key.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      problems.push_back(fmt::format("{}: {}", name, e.what()));
    }
  }
  if (!problems.empty()) throw ConfigError(fmt::format("{}", fmt::join(problems, "\n")));
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  std::vector<std::string> problems;
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      problems.push_back(fmt::format("override '{}': expected key=value", item));
      continue;
    }
    try {
      set_config_value(cfg, trim(std::string_view(item).substr(0, eq)),
                       std::string_view(item).substr(eq + 1));
    } catch (const ConfigError& e) {
      problems.push_back(fmt::format("override: {}", e.what()));
    }
  }
  if (!problems.empty()) throw ConfigError(fmt::format("{}", fmt::join(problems, "\n")));
}

std::string config_to_text(const RunConfig& cfg) {
  auto copy = cfg;
  std::string out;
  std::string section;
  for (const auto& key : config_keys(copy)) {
    const auto dot = key.name.find('.');
    const auto this_section = key.name.substr(0, dot);
    if (this_section != section) {
      if (!section.empty()) out += "\n";
      section = this_section;
    }
    out += fmt::format("{} = {}\n", key.name, key.get());
  }
  return out;
}

void RunConfig::validate() const {
  std::vector<std::string> problems;
  const auto check = [&](const char* what, const auto& fn) {
    try {
      fn();
    } catch (const Error& e) {
      problems.push_back(fmt::format("{}: {}", what, e.what()));
    }
  };
  check("model", [&] { model.validate(); });
  check("loss", [&] { loss.validate(); });
  check("train", [&] { train.validate(model); });
  const auto check_tile = [&](const char* section, int tile, int overlap) {
    if (tile < 0 || (tile > 0 && tile % model.size_multiple() != 0)) {
      problems.push_back(fmt::format("{}.tile: {} must be 0 or a positive multiple of {}",
                                     section, tile, model.size_multiple()));
    }
    if (overlap < 0 || (tile > 0 && 2 * overlap >= tile)) {
      problems.push_back(
          fmt::format("{}.overlap: {} must be >= 0 and below half the tile", section, overlap));
    }
  };
  check_tile("eval", eval.tile, eval.overlap);
  check_tile("infer", infer.tile, infer.overlap);
  if (data.synthetic.count < 1) {
    problems.push_back(fmt::format("data.synthetic_count: {} must be >= 1", data.synthetic.count));
  }
  if (data.synthetic.size < 1) {
    problems.push_back(fmt::format("data.synthetic_size: {} must be >= 1", data.synthetic.size));
  }
  if (synth.set.count < 0) {
    problems.push_back(fmt::format("synth.count: {} must be >= 0", synth.set.count));
  }
  if (synth.set.size < 1) {
    problems.push_back(fmt::format("synth.size: {} must be >= 1", synth.set.size));
  }
  if (synth.set.max_lights < 1 || synth.set.max_lights > 3) {
    problems.push_back(fmt::format("synth.max_lights: {} must be in [1, 3]", synth.set.max_lights));
  }
  check("synth", [&] {
    SyntheticSceneSpec probe;
    probe.penumbra_sigma = synth.set.penumbra_sigma;
    probe.min_attenuation = synth.set.min_attenuation;
    probe.validate();
  });
  if (synth.bit_depth != 8 && synth.bit_depth != 16) {
    problems.push_back(fmt::format("synth.bit_depth: {} must be 8 or 16", synth.bit_depth));
  }
  if (run.target_psnr < 0 || run.target_loss < 0) {
    problems.push_back("run.target_psnr / run.target_loss must be >= 0");
  }
  if (!problems.empty()) throw ConfigError(fmt::format("{}", fmt::join(problems, "\n")));
}

}  // namespace ifblend
