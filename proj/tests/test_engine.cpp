#include "ifblend/blocks.hpp"
#include "ifblend/checkpoint.hpp"
#include "ifblend/config.hpp"
#include "ifblend/engine.hpp"
#include "ifblend/errors.hpp"
#include "ifblend/evaluate.hpp"
#include "ifblend/metrics.hpp"
#include "ifblend/report.hpp"
#include "ifblend/synthetic.hpp"
#include "support.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

using namespace ifblend;
using ifblend::testing::TempDir;
using ifblend::testing::bit_equal;
using ifblend::testing::max_abs;
using torch::indexing::Slice;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.stages = 2;
  cfg.base_channels = 4;
  cfg.channel_cap = 8;
  cfg.gcb_depth = 1;
  cfg.window_size = 4;
  return cfg;
}

TrainConfig tiny_train() {
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.patch_size = 16;
  cfg.lr = 1e-3;
  cfg.epochs = 100;
  cfg.checkpoint_every = 0;
  cfg.seed = 5;
  return cfg;
}

InMemorySource synthetic_source(int count, int size, uint64_t seed = 1) {
  SyntheticSetSpec set;
  set.count = count;
  set.size = size;
  set.seed = seed;
  return InMemorySource(generate_synthetic_set(set));
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

uint64_t bits(double v) {
  uint64_t out = 0;
  std::memcpy(&out, &v, sizeof(v));
  return out;
}

}  // namespace

TEST_CASE("scheduled_lr constant and cosine") {
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.lr_min = 1e-5;
  cfg.lr_schedule = LrSchedule::kConstant;
  CHECK(scheduled_lr(cfg, 37, 100) == 1e-3);
  cfg.lr_schedule = LrSchedule::kCosine;
  CHECK(scheduled_lr(cfg, 0, 100) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(scheduled_lr(cfg, 99, 100) == doctest::Approx(1e-5).epsilon(1e-12));
  CHECK(scheduled_lr(cfg, 99, 199) == doctest::Approx(0.5 * (1e-3 + 1e-5)).epsilon(1e-12));
  double prev = 1.0;
  for (int s = 0; s < 100; ++s) {
    const double v = scheduled_lr(cfg, s, 100);
    CHECK(v <= prev);
    prev = v;
  }
  CHECK(parse_lr_schedule("cosine") == LrSchedule::kCosine);
  CHECK_THROWS_AS(parse_lr_schedule("step"), ConfigError);
}

TEST_CASE("TrainConfig validation") {
  const ModelConfig model = tiny_model();
  TrainConfig cfg = tiny_train();
  CHECK_NOTHROW(cfg.validate(model));
  cfg.patch_size = 18;
  CHECK_THROWS_AS(cfg.validate(model), ConfigError);
  cfg = tiny_train();
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(model), ConfigError);
  cfg = tiny_train();
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(model), ConfigError);
  cfg = tiny_train();
  cfg.lr = -1;
  CHECK_THROWS_AS(cfg.validate(model), ConfigError);

  const InMemorySource empty({});
  CHECK_THROWS_AS(Trainer(model, LossConfig{}, tiny_train(), empty), ValidationError);
}

TEST_CASE("seeded trainers are bit-identical") {
  const auto source = synthetic_source(4, 32);
  TempDir dir("det");
  // Two complete runs, one after the other, as two processes would.
  const auto run = [&](const TrainConfig& cfg, const std::string& name) {
    Trainer trainer(tiny_model(), LossConfig{}, cfg, source);
    std::vector<StepLog> logs;
    std::vector<std::vector<std::string>> ids;
    for (int i = 0; i < 50; ++i) {
      logs.push_back(trainer.step());
      ids.push_back(trainer.last_batch_ids());
    }
    save_checkpoint(dir / name, trainer.model());
    return std::make_pair(logs, ids);
  };
  const auto [la, ia] = run(tiny_train(), "a.ifbk");
  const auto [lb, ib] = run(tiny_train(), "b.ifbk");
  CHECK(la.back().step == 50);
  CHECK(bits(la.back().loss) == bits(lb.back().loss));
  CHECK(ia == ib);
  CHECK(slurp(dir / "a.ifbk") == slurp(dir / "b.ifbk"));

  TrainConfig other = tiny_train();
  other.seed = 6;
  const auto [lc, ic] = run(other, "c.ifbk");
  CHECK(bits(lc.back().loss) != bits(la.back().loss));
}

TEST_CASE("first batches match across runs and cover each sample once per epoch") {
  const auto source = synthetic_source(5, 32);
  Trainer a(tiny_model(), LossConfig{}, tiny_train(), source);
  Trainer b(tiny_model(), LossConfig{}, tiny_train(), source);
  const auto [xa, ya] = a.next_batch();
  const auto [xb, yb] = b.next_batch();
  CHECK(bit_equal(xa, xb));
  CHECK(bit_equal(ya, yb));
  CHECK(xa.sizes() == std::vector<int64_t>{2, 3, 16, 16});

  std::vector<std::string> seen = a.last_batch_ids();
  a.next_batch();
  seen.insert(seen.end(), a.last_batch_ids().begin(), a.last_batch_ids().end());
  a.next_batch();
  CHECK(a.last_batch_ids().size() == 1);  // ragged final batch
  seen.insert(seen.end(), a.last_batch_ids().begin(), a.last_batch_ids().end());
  std::sort(seen.begin(), seen.end());
  CHECK(std::unique(seen.begin(), seen.end()) == seen.end());
  CHECK(seen.size() == 5);
  CHECK(a.steps_per_epoch() == 3);
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  const auto source = synthetic_source(4, 32);
  TrainConfig cfg = tiny_train();
  cfg.lr = 0.0;
  cfg.lr_min = 0.0;
  Trainer trainer(tiny_model(), LossConfig{}, cfg, source);
  std::vector<torch::Tensor> before;
  for (const auto& p : trainer.model()->parameters()) before.push_back(p.detach().clone());
  for (int i = 0; i < 10; ++i) trainer.step();
  const auto after = trainer.model()->parameters();
  REQUIRE(after.size() == before.size());
  for (size_t i = 0; i < before.size(); ++i) CHECK(bit_equal(before[i], after[i].detach()));
}

TEST_CASE("train writes logs and checkpoints") {
  TempDir dir("train");
  const auto source = synthetic_source(4, 32);
  TrainConfig cfg = tiny_train();
  cfg.max_steps = 12;
  cfg.checkpoint_every = 5;
  cfg.val_every = 4;
  TrainOptions options;
  options.out_dir = dir.path();
  const auto result = train(tiny_model(), LossConfig{}, cfg, source, options);
  CHECK(result.steps == 12);
  CHECK(result.log.size() == 12);
  CHECK(fs::exists(dir / "step_000005.ifbk"));
  CHECK(fs::exists(dir / "step_000010.ifbk"));
  CHECK(fs::exists(result.best_checkpoint));
  CHECK(fs::exists(result.final_checkpoint));

  std::ifstream csv(result.metrics_csv);
  std::string header;
  std::getline(csv, header);
  CHECK(header == "step,loss,l1,ssim_term,lr");
  int lines = 0;
  for (std::string line; std::getline(csv, line);) ++lines;
  CHECK(lines == 12);

  // The final checkpoint reloads to bit-identical parameters.
  auto reloaded = load_checkpoint(result.final_checkpoint);
  Trainer replay(tiny_model(), LossConfig{}, cfg, source);
  for (int i = 0; i < 12; ++i) replay.step();
  const auto pa = reloaded->parameters();
  const auto pb = replay.model()->parameters();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) CHECK(bit_equal(pa[i], pb[i].detach()));

  // on_step returning false stops early.
  TempDir dir2("train_stop");
  options.out_dir = dir2.path();
  options.on_step = [](const StepLog& log, Trainer&) { return log.step < 3; };
  CHECK(train(tiny_model(), LossConfig{}, cfg, source, options).steps == 3);
}

TEST_CASE("non-finite loss aborts with last-good checkpoint and dump") {
  TempDir dir("nan");
  auto samples = generate_synthetic_set(SyntheticSetSpec{2, 32, 1});
  samples[1].meta.scene_id = "poisoned";
  samples[1].input = samples[1].input.clone();
  samples[1].input[0][0][5][5] = std::numeric_limits<float>::quiet_NaN();
  InMemorySource source(samples);
  TrainConfig cfg = tiny_train();
  cfg.batch_size = 1;
  cfg.flip = false;
  cfg.patch_size = 32;
  cfg.max_steps = 4;
  TrainOptions options;
  options.out_dir = dir.path();
  CHECK_THROWS_AS(train(tiny_model(), LossConfig{}, cfg, source, options), TrainingAborted);
  CHECK(fs::exists(dir / "last_good.ifbk"));
  const auto dump = nlohmann::json::parse(slurp(dir / "nan_dump.json"));
  REQUIRE(dump["batch_ids"].size() == 1);
  CHECK(dump["batch_ids"][0] == source.id(1));
  // Parameters stay finite: the poisoned step never updated them.
  auto last = load_checkpoint(dir / "last_good.ifbk");
  for (const auto& p : last->parameters()) CHECK(torch::isfinite(p).all().item<bool>());
}

TEST_CASE("tile_starts and the partition of unity") {
  CHECK(tile_starts(100, 128, 16) == std::vector<int64_t>{0});
  CHECK(tile_starts(128, 64, 16) == std::vector<int64_t>{0, 48, 64});
  CHECK(tile_starts(96, 32, 0) == std::vector<int64_t>{0, 32, 64});
  for (const auto& [h, w, tile, overlap] :
       std::vector<std::array<int64_t, 4>>{{128, 128, 64, 16}, {100, 77, 32, 8}, {64, 200, 32, 15},
                                           {40, 40, 16, 0}, {33, 90, 64, 31}}) {
    const auto sum = tiling_weight_sum(h, w, tile, overlap);
    CHECK(sum.sizes() == std::vector<int64_t>{h, w});
    CHECK((sum - 1.0).abs().max().item<double>() < 1e-6);
  }
  const auto wt = tile_weights(8, 8, 3, true, false, false, true);
  CHECK(wt.min().item<double>() > 0.0);
  CHECK(wt[7][0].item<double>() == 1.0);
}

TEST_CASE("tiled inference fallback, identity and argument checks") {
  torch::manual_seed(8);
  IFBlend model(tiny_model());
  model->eval();
  const auto image = torch::rand({1, 3, 40, 56});
  CHECK(bit_equal(infer_tiled(model, image, 64, 8), restore(model, image)));

  CHECK_THROWS_AS(infer_tiled(model, image, 18, 4), ConfigError);
  CHECK_THROWS_AS(infer_tiled(model, image, 16, 8), ConfigError);
  CHECK_THROWS_AS(infer_tiled(model, image, 16, -1), ConfigError);

  model->zero_init_head();
  CHECK(max_abs(infer_tiled(model, image, 16, 4), image) < 1e-6);
}

TEST_CASE("router replay reuses recorded mixture weights") {
  torch::manual_seed(12);
  IFBlend model(tiny_model());
  model->eval();
  torch::NoGradGuard guard;
  const auto x = torch::rand({1, 3, 32, 32});
  const auto y = torch::rand({1, 3, 32, 32});
  const auto plain_x = model->forward(x);
  const auto plain_y = model->forward(y);

  RouterContext routing;
  CHECK(bit_equal(model->forward(x), plain_x));
  const size_t calls = routing.size();
  CHECK(calls == static_cast<size_t>(model->config().stages));
  routing.replay();
  CHECK(bit_equal(model->forward(x), plain_x));
  routing.rewind();
  // y routed like x: differs from its own routing, but only through the mixture.
  const auto replayed_y = model->forward(y);
  CHECK_FALSE(bit_equal(replayed_y, plain_y));
  CHECK(max_abs(replayed_y, plain_y) < 0.5);
  CHECK_THROWS_AS(model->forward(y), WiringError);
}

TEST_CASE("router recording requires single samples") {
  IFBlend model(tiny_model());
  model->eval();
  torch::NoGradGuard guard;
  RouterContext routing;
  CHECK_THROWS_AS(model->forward(torch::rand({2, 3, 16, 16})), WiringError);
}

TEST_CASE("tiled inference handles batches sample by sample") {
  torch::manual_seed(13);
  IFBlend model(tiny_model());
  const auto batch = torch::rand({2, 3, 40, 40});
  const auto both = infer_tiled(model, batch, 16, 4);
  CHECK(bit_equal(both[0], infer_tiled(model, batch.narrow(0, 0, 1), 16, 4)[0]));
  CHECK(bit_equal(both[1], infer_tiled(model, batch.narrow(0, 1, 1), 16, 4)[0]));
}

TEST_CASE("identity evaluation and report serialization") {
  auto samples = generate_synthetic_set(SyntheticSetSpec{3, 32, 2});
  for (auto& s : samples) s.input = s.gt.clone();
  const InMemorySource same(samples);
  EvalOptions options;
  const auto report = evaluate(nullptr, same, options);
  REQUIRE(report.rows.size() == 3);
  CHECK(std::isinf(report.aggregates.psnr));
  CHECK(report.aggregates.ssim == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(report.aggregates.excluded.at("psnr") == 3);
  CHECK(report.protocol.at("protocol") == "rgb");

  const auto shadowed = synthetic_source(4, 32, 9);
  const auto real = evaluate(nullptr, shadowed, options);
  const auto again = evaluate(nullptr, shadowed, options);
  double psnr_sum = 0;
  double ssim_sum = 0;
  for (size_t i = 0; i < real.rows.size(); ++i) {
    psnr_sum += real.rows[i].psnr;
    ssim_sum += real.rows[i].ssim;
    CHECK(bits(real.rows[i].psnr) == bits(again.rows[i].psnr));
  }
  CHECK(std::abs(real.aggregates.psnr - psnr_sum / 4) < 1e-9);
  CHECK(std::abs(real.aggregates.ssim - ssim_sum / 4) < 1e-9);

  // CSV mean row and JSON aggregates both parse back to the same means.
  const auto csv = report_to_csv(real);
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "id,psnr,ssim");
  std::string last;
  int rows = 0;
  while (std::getline(lines, line)) {
    last = line;
    ++rows;
  }
  CHECK(rows == 5);
  REQUIRE(last.rfind("mean,", 0) == 0);
  const auto comma = last.find(',', 5);
  CHECK(std::stod(last.substr(5, comma - 5)) == real.aggregates.psnr);
  const auto json = nlohmann::json::parse(report_to_json(real));
  CHECK(json["aggregates"]["psnr"].get<double>() == real.aggregates.psnr);
  CHECK(json["rows"].size() == 4);

  const auto inf_json = nlohmann::json::parse(report_to_json(report));
  CHECK(inf_json["aggregates"]["psnr"] == "inf");

  TempDir dir("report");
  write_report(real, dir.path());
  CHECK(fs::exists(dir / "eval.csv"));
  CHECK(fs::exists(dir / "eval.json"));
}

TEST_CASE("lab_istd protocol and perceptual scorer in evaluation") {
  const auto with_masks = synthetic_source(2, 32, 4);
  EvalOptions options;
  options.protocol = Protocol::kLabIstd;
  const auto report = evaluate(nullptr, with_masks, options);
  CHECK(report.has_lab);
  REQUIRE(report.rows[0].lab_total.has_value());
  CHECK(report.protocol.at("lab_mode") == "mae_lab");
  CHECK(report_to_csv(report).rfind("id,psnr,ssim,lab_shadow,lab_free,lab_total\n", 0) == 0);

  auto samples = generate_synthetic_set(SyntheticSetSpec{2, 32, 4});
  samples[1].mask = torch::Tensor();
  const InMemorySource partial(samples);
  CHECK_THROWS_AS(evaluate(nullptr, partial, options), ProtocolError);

  TempDir dir("eval_scorer");
  std::ofstream(dir / "stub.sh") << "#!/bin/sh\necho 0.125\n";
  EvalOptions scored;
  scored.perceptual_scorer_cmd = "sh " + (dir / "stub.sh").string();
  scored.scratch_dir = dir / "scratch";
  const auto with_score = evaluate(nullptr, with_masks, scored);
  CHECK(with_score.has_perceptual);
  REQUIRE(with_score.aggregates.perceptual.has_value());
  CHECK(*with_score.aggregates.perceptual == 0.125);
  CHECK(*with_score.rows[1].perceptual == 0.125);
}

TEST_CASE("aggregate_rows excludes non-finite entries") {
  std::vector<EvalRow> rows(3);
  rows[0].psnr = 20;
  rows[1].psnr = std::numeric_limits<double>::infinity();
  rows[2].psnr = 30;
  rows[0].lab_shadow = 2.0;
  rows[1].lab_shadow = std::numeric_limits<double>::quiet_NaN();
  rows[2].lab_shadow = 4.0;
  for (auto& r : rows) {
    r.lab_free = 1.0;
    r.lab_total = 1.0;
  }
  const auto agg = aggregate_rows(rows, true, false);
  CHECK(agg.psnr == 25.0);
  CHECK(agg.excluded.at("psnr") == 1);
  CHECK(*agg.lab_shadow == 3.0);
  CHECK(agg.excluded.at("lab_shadow") == 1);
}

TEST_CASE("config text, env and override round trip") {
  RunConfig cfg;
  apply_config_text(cfg, "# comment\ntrain.lr = 5e-4\nmodel.use_dwt_feats = false\n\n"
                         "eval.protocol = lab_istd  # trailing\n");
  CHECK(cfg.train.lr == 5e-4);
  CHECK_FALSE(cfg.model.use_dwt_feats);
  CHECK(cfg.eval.protocol == Protocol::kLabIstd);

  const std::map<std::string, std::string> env{{"IFBLEND_TRAIN__BATCH_SIZE", "3"},
                                               {"IFBLEND_LOSS__LAMBDA_SSIM", "0"},
                                               {"PATH", "/bin"}};
  apply_env_overrides(cfg, &env);
  CHECK(cfg.train.batch_size == 3);
  CHECK(cfg.loss.lambda_ssim == 0.0);
  apply_overrides(cfg, {"train.batch_size=7", "data.source=synthetic"});
  CHECK(cfg.train.batch_size == 7);
  CHECK(cfg.data.source == DataSource::kSynthetic);

  RunConfig back;
  apply_config_text(back, config_to_text(cfg));
  CHECK(config_to_text(back) == config_to_text(cfg));
  CHECK(back.train.lr == cfg.train.lr);

  std::string msg;
  try {
    set_config_value(cfg, "train.epchs", "3");
  } catch (const ConfigError& e) {
    msg = e.what();
  }
  CHECK(msg.find("train.epchs") != std::string::npos);
  CHECK_THROWS_AS(set_config_value(cfg, "train.epochs", "three"), ConfigError);
  CHECK_THROWS_AS(apply_config_text(cfg, "no equals sign here"), ConfigError);

  RunConfig bad;
  bad.train.patch_size = 100;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  RunConfig keys;
  for (const auto& key : config_keys(keys)) {
    CHECK_FALSE(key.help.empty());
    CHECK_NOTHROW(key.set(key.get()));
  }
}
