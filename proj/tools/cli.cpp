#include "cli.hpp"

#include "ifblend/audit.hpp"
#include "ifblend/checkpoint.hpp"
#include "ifblend/config.hpp"
#include "ifblend/data.hpp"
#include "ifblend/engine.hpp"
#include "ifblend/errors.hpp"
#include "ifblend/evaluate.hpp"
#include "ifblend/grid.hpp"
#include "ifblend/image_io.hpp"
#include "ifblend/report.hpp"
#include "ifblend/synthetic.hpp"

#include <CLI11.hpp>
#include <c10/util/Logging.h>
#include <fmt/format.h>
#include <json.hpp>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>

namespace ifblend {

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<bool> deterministic;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "config file (section.key = value per line)");
  cmd->add_option("--override", args.overrides, "key=value, repeatable, applied last")
      ->allow_extra_args(false);
  cmd->add_option("--seed", args.seed, "seed of the command (train.seed or synth.seed)");
  cmd->add_flag_function(
      "--deterministic,!--no-deterministic",
      [&args](std::int64_t count) { args.deterministic = count > 0; },
      "force deterministic kernels");
}

/// defaults < config file < IFBLEND_* environment < --override < --seed / --deterministic
RunConfig resolve(const CommonArgs& args, const std::function<void(RunConfig&)>& command_flags,
                  bool seed_is_synth = false) {
  RunConfig cfg;
  if (!args.config_path.empty()) apply_config_file(cfg, args.config_path);
  apply_env_overrides(cfg);
  apply_overrides(cfg, args.overrides);
  if (command_flags) command_flags(cfg);
  if (args.seed) {
    if (seed_is_synth) {
      cfg.synth.set.seed = *args.seed;
    } else {
      cfg.train.seed = *args.seed;
    }
  }
  if (args.deterministic) cfg.train.deterministic = *args.deterministic;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out << text;
}

void write_resolved(const fs::path& dir, const RunConfig& cfg) {
  fs::create_directories(dir);
  write_text(dir / "resolved.cfg", config_to_text(cfg));
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

/// run.out_dir/<run.name or prefix-timestamp>, made unique with a counter.
fs::path run_directory(const RunConfig& cfg, const std::string& prefix) {
  const fs::path parent = cfg.run.out_dir;
  if (!cfg.run.name.empty()) return parent / cfg.run.name;
  const auto base = prefix + timestamp();
  fs::path dir = parent / base;
  for (int i = 1; fs::exists(dir); ++i) dir = parent / fmt::format("{}_{}", base, i);
  return dir;
}

std::unique_ptr<SampleSource> training_source(const RunConfig& cfg) {
  if (cfg.data.source == DataSource::kSynthetic) {
    return std::make_unique<InMemorySource>(generate_synthetic_set(cfg.data.synthetic));
  }
  if (cfg.data.root.empty()) throw ConfigError("data.root is required when data.source = disk");
  return std::make_unique<DiskSource>(
      read_dataset(cfg.data.root, cfg.data.layout, cfg.data.train_split));
}

std::vector<fs::path> list_pngs(const fs::path& input) {
  if (!fs::is_directory(input)) return {input};
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(input)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

IFBlend load_model(const std::string& checkpoint) {
  if (checkpoint.empty()) throw ConfigError("--checkpoint is required");
  if (!fs::exists(checkpoint)) throw ConfigError(fmt::format("no such checkpoint: {}", checkpoint));
  return load_checkpoint(checkpoint);
}

// ---------------------------------------------------------------- train

int cmd_train(const CommonArgs& common, const std::string& out_dir) {
  const auto cfg = resolve(common, [&](RunConfig& c) {
    if (!out_dir.empty()) c.run.out_dir = out_dir;
  });
  const auto dir = run_directory(cfg, "train-");
  write_resolved(dir, cfg);
  std::cout << "run directory: " << dir.string() << "\n";

  const auto source = training_source(cfg);
  std::unique_ptr<SampleSource> validation;
  if (!cfg.data.val_root.empty()) {
    validation = std::make_unique<DiskSource>(
        read_dataset(cfg.data.val_root, cfg.data.layout, cfg.data.val_split));
  }
  TrainOptions options;
  options.out_dir = dir;
  options.validation = validation.get();
  options.target_psnr = cfg.run.target_psnr;
  options.target_loss = cfg.run.target_loss;
  options.on_step = [](const StepLog& log, Trainer& trainer) {
    if (log.step % 50 == 0 || log.step == trainer.total_steps()) {
      std::cout << fmt::format("step {}/{} loss {:.6f} l1 {:.6f} ssim_term {:.6f} lr {:.3g}\n",
                               log.step, trainer.total_steps(), log.loss, log.l1, log.ssim_term,
                               log.lr)
                << std::flush;
    }
    return true;
  };
  const auto result = train(cfg.model, cfg.loss, cfg.train, *source, options);
  std::cout << fmt::format("done: {} steps, best validation PSNR {:.3f} dB{}\n", result.steps,
                           result.best_val_psnr,
                           result.reached_target ? " (target reached)" : "");
  std::cout << "best checkpoint: " << result.best_checkpoint.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string model = "identity";
  std::string data;
  std::string layout;
  std::string protocol;
  std::string split;
  std::string out;
};

int cmd_eval(const CommonArgs& common, const EvalArgs& args) {
  const auto cfg = resolve(common, [&](RunConfig& c) {
    if (!args.data.empty()) c.data.root = args.data;
    if (!args.layout.empty()) c.data.layout = parse_layout(args.layout);
    if (!args.protocol.empty()) c.eval.protocol = parse_protocol(args.protocol);
    if (!args.split.empty()) c.eval.split = parse_split(args.split);
  });
  if (cfg.data.root.empty()) throw ConfigError("eval needs a dataset (--data or data.root)");
  IFBlend model{nullptr};
  if (args.model != "identity") model = load_model(args.model);

  const DiskSource source(read_dataset(cfg.data.root, cfg.data.layout, cfg.eval.split));
  const fs::path dir = args.out.empty() ? run_directory(cfg, "eval-") : fs::path(args.out);

  EvalOptions options;
  options.protocol = cfg.eval.protocol;
  options.ssim = cfg.loss;
  options.lab_mode = cfg.eval.lab_mode;
  options.tile = cfg.eval.tile;
  options.overlap = cfg.eval.overlap;
  options.perceptual_scorer_cmd = cfg.eval.perceptual_scorer_cmd;
  options.scratch_dir = dir / "scratch";
  options.model_id = args.model;
  const auto report = evaluate(model, source, options);

  write_resolved(dir, cfg);
  write_report(report, dir);
  if (fs::exists(options.scratch_dir)) fs::remove_all(options.scratch_dir);
  std::cout << fmt::format("{} images  PSNR {}  SSIM {}\n", report.rows.size(),
                           format_metric(report.aggregates.psnr),
                           format_metric(report.aggregates.ssim));
  if (report.has_lab) {
    std::cout << fmt::format("Lab ({}) shadow {} free {} all {}\n", to_string(cfg.eval.lab_mode),
                             format_metric(*report.aggregates.lab_shadow),
                             format_metric(*report.aggregates.lab_free),
                             format_metric(*report.aggregates.lab_total));
  }
  std::cout << "report: " << (dir / "eval.csv").string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- infer

struct InferArgs {
  std::string checkpoint;
  std::string input;
  std::string out;
  std::optional<int> tile;
  std::optional<int> overlap;
};

int cmd_infer(const CommonArgs& common, const InferArgs& args) {
  const auto cfg = resolve(common, [&](RunConfig& c) {
    if (args.tile) c.infer.tile = *args.tile;
    if (args.overlap) c.infer.overlap = *args.overlap;
  });
  if (args.input.empty() || args.out.empty()) throw ConfigError("infer needs --input and --out");
  if (!fs::exists(args.input)) throw ConfigError(fmt::format("no such input: {}", args.input));
  auto model = load_model(args.checkpoint);
  const auto files = list_pngs(args.input);
  fs::create_directories(args.out);
  write_resolved(args.out, cfg);

  size_t written = 0;
  for (const auto& file : files) {
    try {
      const auto image = read_png(file);
      auto rgb = image.pixels;
      const bool gray = rgb.size(1) == 1;
      if (gray) rgb = rgb.expand({1, 3, rgb.size(2), rgb.size(3)}).contiguous();
      auto output = cfg.infer.tile > 0 ? infer_tiled(model, rgb, cfg.infer.tile, cfg.infer.overlap)
                                       : restore(model, rgb);
      if (gray) output = output.mean(1, true);
      write_png(fs::path(args.out) / file.filename(), output, image.bit_depth);
      ++written;
    } catch (const IoError& e) {
      LOG(WARNING) << "skipping " << file.string() << ": " << e.what();
    }
  }
  std::cout << fmt::format("{} of {} images restored into {}\n", written, files.size(), args.out);
  if (written == 0 && !files.empty()) return kExitRuntime;
  return kExitOk;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string out;
  std::optional<int> count;
  std::optional<int> size;
  std::optional<int> bit_depth;
};

int cmd_synth(const CommonArgs& common, const SynthArgs& args) {
  const auto cfg = resolve(
      common,
      [&](RunConfig& c) {
        if (args.count) c.synth.set.count = *args.count;
        if (args.size) c.synth.set.size = *args.size;
        if (args.bit_depth) c.synth.bit_depth = *args.bit_depth;
      },
      /*seed_is_synth=*/true);
  if (args.out.empty()) throw ConfigError("synth needs --out");
  const fs::path out = args.out;
  for (const char* sub : {"input", "gt", "mask"}) fs::create_directories(out / sub);
  const auto& set = cfg.synth.set;
  for (int i = 0; i < set.count; ++i) {
    const auto sample = generate_synthetic(synthetic_member_spec(set, i));
    const auto name = fmt::format("synth_{:04d}.png", i);
    write_png(out / "input" / name, sample.input, cfg.synth.bit_depth);
    write_png(out / "gt" / name, sample.gt, cfg.synth.bit_depth);
    write_png(out / "mask" / name, sample.mask, 8);
  }
  write_resolved(out, cfg);
  std::cout << fmt::format("{} pairs written to {}\n", set.count, out.string());
  return kExitOk;
}

// ---------------------------------------------------------------- grid

struct GridArgs {
  std::vector<std::string> columns;
  std::string out;
};

int cmd_grid(const CommonArgs& common, const GridArgs& args) {
  const auto cfg = resolve(common, {});
  if (args.columns.empty() || args.out.empty()) {
    throw ConfigError("grid needs at least one --column and --out");
  }
  std::vector<GridColumn> columns;
  for (const auto& spec : args.columns) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) {
      columns.push_back({fs::path(spec).filename().string(), spec});
    } else {
      columns.push_back({spec.substr(0, eq), spec.substr(eq + 1)});
    }
  }
  const auto written = write_grids(columns, args.out);
  write_resolved(args.out, cfg);
  std::cout << fmt::format("{} grid images written to {}\n", written.size(), args.out);
  return kExitOk;
}

// ---------------------------------------------------------------- audit

struct AuditArgs {
  std::string data;
  std::string layout;
  std::string split;
  std::string out;
};

int cmd_audit(const CommonArgs& common, const AuditArgs& args) {
  const auto cfg = resolve(common, [&](RunConfig& c) {
    if (!args.data.empty()) c.data.root = args.data;
    if (!args.layout.empty()) c.data.layout = parse_layout(args.layout);
  });
  if (cfg.data.root.empty()) throw ConfigError("audit needs a dataset (--data or data.root)");
  const Split split = args.split.empty() ? cfg.data.train_split : parse_split(args.split);
  const auto report = audit_pairs(read_dataset(cfg.data.root, cfg.data.layout, split));

  nlohmann::ordered_json doc;
  doc["pairs"] = nlohmann::ordered_json::array();
  for (const auto& p : report.pairs) {
    doc["pairs"].push_back({{"id", p.id},
                            {"dims_equal", p.dims_equal},
                            {"mean_delta", p.mean_delta},
                            {"frac_brighter", p.frac_brighter},
                            {"shift", {p.shift.dy, p.shift.dx}},
                            {"misaligned", p.misaligned},
                            {"flagged", p.flagged},
                            {"error", p.error}});
    if (p.flagged) {
      std::cout << fmt::format("flagged {}: shift ({}, {}) brighter {:.3f} delta {:.4f}{}\n", p.id,
                               p.shift.dy, p.shift.dx, p.frac_brighter, p.mean_delta,
                               p.error.empty() ? "" : " error: " + p.error);
    }
  }
  doc["flagged"] = report.flagged_count();
  if (!args.out.empty()) {
    write_resolved(args.out, cfg);
    write_text(fs::path(args.out) / "audit.json", doc.dump(2) + "\n");
  }
  std::cout << fmt::format("{} pairs audited, {} flagged\n", report.pairs.size(),
                           report.flagged_count());
  return kExitOk;
}

int exit_code_for(const Error& e) {
  if (dynamic_cast<const TrainingAborted*>(&e) != nullptr) return kExitRuntime;
  if (dynamic_cast<const IoError*>(&e) != nullptr) return kExitRuntime;
  return kExitValidation;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"ifblend: ambient lighting normalization"};
  app.require_subcommand(1);
  app.footer(
      "Config keys can also be set through the environment as IFBLEND_<SECTION>__<KEY>,\n"
      "e.g. IFBLEND_TRAIN__LR=1e-3. Precedence: defaults < --config < environment <\n"
      "--override < --seed/--deterministic. Exit codes: 0 ok, 2 invalid input, 3 aborted.");

  CommonArgs common;
  std::string train_out;
  EvalArgs eval_args;
  InferArgs infer_args;
  SynthArgs synth_args;
  GridArgs grid_args;
  AuditArgs audit_args;

  auto* train_cmd = app.add_subcommand("train", "train a model");
  add_common(train_cmd, common);
  train_cmd->add_option("--out", train_out, "parent of the run directory (run.out_dir)");

  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint or the identity baseline");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--model,--checkpoint", eval_args.model,
                       "checkpoint path, or 'identity' to score the raw inputs");
  eval_cmd->add_option("--data", eval_args.data, "dataset root (data.root)");
  eval_cmd->add_option("--layout", eval_args.layout, "ambient6k|istd");
  eval_cmd->add_option("--protocol", eval_args.protocol, "rgb|lab_istd");
  eval_cmd->add_option("--split", eval_args.split, "train|val|test");
  eval_cmd->add_option("--out", eval_args.out, "report directory");

  auto* infer_cmd = app.add_subcommand("infer", "restore images with a checkpoint");
  add_common(infer_cmd, common);
  infer_cmd->add_option("--checkpoint", infer_args.checkpoint, "checkpoint path")->required();
  infer_cmd->add_option("--input", infer_args.input, "PNG file or directory")->required();
  infer_cmd->add_option("--out", infer_args.out, "output directory")->required();
  infer_cmd->add_option("--tile", infer_args.tile, "tile side (infer.tile), 0 = whole image");
  infer_cmd->add_option("--overlap", infer_args.overlap, "tile overlap (infer.overlap)");

  auto* synth_cmd = app.add_subcommand("synth", "generate synthetic shadowed pairs");
  add_common(synth_cmd, common);
  synth_cmd->add_option("--out", synth_args.out, "output root")->required();
  synth_cmd->add_option("--count", synth_args.count, "pairs (synth.count)");
  synth_cmd->add_option("--size", synth_args.size, "side in pixels (synth.size)");
  synth_cmd->add_option("--bit-depth", synth_args.bit_depth, "8|16 (synth.bit_depth)");

  auto* grid_cmd = app.add_subcommand("grid", "side-by-side comparison images");
  add_common(grid_cmd, common);
  grid_cmd->add_option("--column", grid_args.columns, "LABEL=DIR, repeatable, left to right");
  grid_cmd->add_option("--out", grid_args.out, "output directory")->required();

  auto* audit_cmd = app.add_subcommand("audit", "check pair alignment and exposure");
  add_common(audit_cmd, common);
  audit_cmd->add_option("--data", audit_args.data, "dataset root (data.root)");
  audit_cmd->add_option("--layout", audit_args.layout, "ambient6k|istd");
  audit_cmd->add_option("--split", audit_args.split, "train|val|test");
  audit_cmd->add_option("--out", audit_args.out, "write audit.json here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(common, train_out);
    if (eval_cmd->parsed()) return cmd_eval(common, eval_args);
    if (infer_cmd->parsed()) return cmd_infer(common, infer_args);
    if (synth_cmd->parsed()) return cmd_synth(common, synth_args);
    if (grid_cmd->parsed()) return cmd_grid(common, grid_args);
    if (audit_cmd->parsed()) return cmd_audit(common, audit_args);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> storage;
  storage.reserve(args.size() + 1);
  storage.emplace_back("ifblend");
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  argv.reserve(storage.size());
  for (auto& s : storage) argv.push_back(s.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace ifblend
