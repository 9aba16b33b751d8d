#pragma once

#include "ifblend/engine.hpp"
#include "ifblend/evaluate.hpp"
#include "ifblend/losses.hpp"
#include "ifblend/model.hpp"
#include "ifblend/synthetic.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace ifblend {

/// Where training samples come from.
enum class DataSource { kDisk, kSynthetic };

DataSource parse_data_source(std::string_view name);
std::string_view to_string(DataSource source);

struct DataConfig {
  DataSource source = DataSource::kDisk;
  std::string root;                 ///< dataset root (disk source)
  Layout layout = Layout::kAmbient6k;
  Split train_split = Split::kTrain;
  Split val_split = Split::kVal;
  std::string val_root;             ///< empty: validate on the training set
  SyntheticSetSpec synthetic;       ///< used when source = synthetic
};

struct EvalConfig {
  Protocol protocol = Protocol::kRgb;
  LabErrorMode lab_mode = LabErrorMode::kMaeLab;
  Split split = Split::kTest;
  int tile = 0;
  int overlap = 32;
  std::string perceptual_scorer_cmd;
};

struct InferConfig {
  int tile = 0;
  int overlap = 32;
};

struct SynthConfig {
  SyntheticSetSpec set;
  int bit_depth = 8;
};

struct RunSection {
  std::string out_dir = "runs";  ///< parent of the timestamped run directories
  std::string name;              ///< run directory name; empty uses a timestamp
  double target_psnr = 0.0;      ///< stop once validation PSNR reaches it (0 disables)
  double target_loss = 0.0;      ///< ... and the eval-mode training loss is below it
};

/// Every setting of every command. Files hold one `section.key = value` per
/// line; `#` starts a comment.
struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;
  InferConfig infer;
  SynthConfig synth;
  RunSection run;

  void validate() const;
};

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<std::string()> get;
  std::function<void(std::string_view)> set;  ///< throws ConfigError on bad values
};

/// Accessors for every key, bound to `cfg`.
std::vector<ConfigKey> config_keys(RunConfig& cfg);

/// Assigns one key. Unknown keys and malformed values raise ConfigError
/// naming the key.
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);

/// Applies a config document. All problems are gathered into one ConfigError
/// whose lines name `origin`, the line number and the key.
void apply_config_text(RunConfig& cfg, std::string_view text, std::string_view origin = "<text>");

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

/// Prefix of environment overrides: IFBLEND_<SECTION>__<KEY>=value sets
/// section.key (e.g. IFBLEND_TRAIN__LR=1e-3).
inline constexpr std::string_view kEnvPrefix = "IFBLEND_";

/// Applies every IFBLEND_*__* variable of `env` (defaults to the process
/// environment).
void apply_env_overrides(RunConfig& cfg, const std::map<std::string, std::string>* env = nullptr);

/// Applies `key=value` strings.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);

/// Fully resolved config in the file format; parsing it back gives an equal
/// config.
std::string config_to_text(const RunConfig& cfg);

}  // namespace ifblend
