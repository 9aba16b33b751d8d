#include "ifblend/engine.hpp"

#include "ifblend/checkpoint.hpp"
#include "ifblend/errors.hpp"
#include "ifblend/metrics.hpp"

#include <ATen/Context.h>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>

namespace ifblend {

namespace F = torch::nn::functional;

namespace fs = std::filesystem;

LrSchedule parse_lr_schedule(std::string_view name) {
  if (name == "constant") return LrSchedule::kConstant;
  if (name == "cosine") return LrSchedule::kCosine;
  throw ConfigError(fmt::format("unknown lr_schedule '{}' (expected constant|cosine)", name));
}

std::string_view to_string(LrSchedule schedule) {
  return schedule == LrSchedule::kConstant ? "constant" : "cosine";
}

void TrainConfig::validate(const ModelConfig& model) const {
  if (epochs <= 0) throw ConfigError(fmt::format("train.epochs must be > 0, got {}", epochs));
  if (batch_size <= 0) {
    throw ConfigError(fmt::format("train.batch_size must be > 0, got {}", batch_size));
  }
  if (patch_size <= 0 || patch_size % model.size_multiple() != 0) {
    throw ConfigError(fmt::format("train.patch_size must be a positive multiple of {}, got {}",
                                  model.size_multiple(), patch_size));
  }
  if (!(lr >= 0.0)) throw ConfigError("train.lr must be >= 0");
  if (!(lr_min >= 0.0)) throw ConfigError("train.lr_min must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
  if (val_every < 0) throw ConfigError("train.val_every must be >= 0");
  if (max_steps < 0) throw ConfigError("train.max_steps must be >= 0");
}

double scheduled_lr(const TrainConfig& cfg, int64_t step, int64_t total_steps) {
  if (cfg.lr_schedule == LrSchedule::kConstant || total_steps <= 1) return cfg.lr;
  const double floor = std::min(cfg.lr_min, cfg.lr);
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return floor + 0.5 * (cfg.lr - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

Trainer::Trainer(const ModelConfig& model_cfg, const LossConfig& loss_cfg,
                 const TrainConfig& train_cfg, const SampleSource& source)
    : model_cfg_(model_cfg),
      loss_cfg_(loss_cfg),
      train_cfg_(train_cfg),
      source_(source),
      rng_(train_cfg.seed) {
  model_cfg.validate();
  loss_cfg.validate();
  train_cfg.validate(model_cfg);
  if (source.size() == 0) throw ValidationError("training set is empty");
  if (train_cfg.deterministic) at::globalContext().setDeterministicAlgorithms(true, false);
  torch::manual_seed(train_cfg.seed);
  model_ = IFBlend(model_cfg);
  model_->train();
  optimizer_ = std::make_unique<torch::optim::Adam>(
      model_->parameters(),
      torch::optim::AdamOptions(train_cfg.lr).betas(std::make_tuple(0.9, 0.999)));
  total_steps_ = static_cast<int64_t>(train_cfg.epochs) * steps_per_epoch();
  if (train_cfg.max_steps > 0) total_steps_ = std::min<int64_t>(total_steps_, train_cfg.max_steps);
}

int64_t Trainer::steps_per_epoch() const {
  const auto n = static_cast<int64_t>(source_.size());
  return (n + train_cfg_.batch_size - 1) / train_cfg_.batch_size;
}

std::pair<torch::Tensor, torch::Tensor> Trainer::next_batch() {
  if (cursor_ >= order_.size()) {
    order_.resize(source_.size());
    for (size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    // Fisher-Yates on raw engine output keeps the order library-independent.
    for (size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_() % i]);
    cursor_ = 0;
  }
  const size_t end = std::min(order_.size(), cursor_ + static_cast<size_t>(train_cfg_.batch_size));
  std::vector<torch::Tensor> inputs;
  std::vector<torch::Tensor> targets;
  last_ids_.clear();
  for (; cursor_ < end; ++cursor_) {
    const size_t index = order_[cursor_];
    const auto patch = sample_patch(source_.get(index), train_cfg_.patch_size, rng_, train_cfg_.flip);
    inputs.push_back(patch.input);
    targets.push_back(patch.gt);
    last_ids_.push_back(source_.id(index));
  }
  return {torch::cat(inputs), torch::cat(targets)};
}

StepLog Trainer::step() {
  const auto [input, target] = next_batch();
  StepLog log;
  log.step = step_ + 1;
  log.lr = scheduled_lr(train_cfg_, step_, total_steps_);
  for (auto& group : optimizer_->param_groups()) {
    static_cast<torch::optim::AdamOptions&>(group.options()).lr(log.lr);
  }

  model_->train();
  optimizer_->zero_grad();
  const auto terms = restoration_loss(model_->forward(input), target, loss_cfg_);
  log.loss = terms.total.item<double>();
  log.l1 = terms.l1.item<double>();
  log.ssim_term = terms.ssim_term.item<double>();
  if (!std::isfinite(log.loss)) {
    throw TrainingAborted(fmt::format("non-finite loss {} at step {} (batch: {})", log.loss,
                                      log.step, fmt::join(last_ids_, ", ")));
  }
  terms.total.backward();
  optimizer_->step();
  ++step_;
  return log;
}

torch::Tensor restore(IFBlend& model, const torch::Tensor& image) {
  torch::NoGradGuard guard;
  model->eval();
  return model->forward(image);
}

double mean_psnr(IFBlend& model, const SampleSource& source) {
  double total = 0.0;
  size_t counted = 0;
  for (size_t i = 0; i < source.size(); ++i) {
    const auto sample = source.get(i);
    const auto output = model ? restore(model, sample.input) : sample.input;
    const double value = psnr(output, sample.gt);
    if (std::isfinite(value)) {
      total += value;
      ++counted;
    }
  }
  return counted == 0 ? kPsnrIdentical : total / static_cast<double>(counted);
}

SourceScore score_source(IFBlend& model, const SampleSource& source, const LossConfig& loss_cfg) {
  SourceScore score;
  double psnr_total = 0.0;
  size_t psnr_count = 0;
  double loss_total = 0.0;
  for (size_t i = 0; i < source.size(); ++i) {
    const auto sample = source.get(i);
    const auto output = model ? restore(model, sample.input) : sample.input;
    const double value = psnr(output, sample.gt);
    if (std::isfinite(value)) {
      psnr_total += value;
      ++psnr_count;
    }
    torch::NoGradGuard no_grad;
    loss_total += restoration_loss(output, sample.gt, loss_cfg).total.item<double>();
  }
  score.psnr = psnr_count == 0 ? kPsnrIdentical : psnr_total / static_cast<double>(psnr_count);
  score.loss = source.size() == 0 ? 0.0 : loss_total / static_cast<double>(source.size());
  return score;
}

TrainResult train(const ModelConfig& model_cfg, const LossConfig& loss_cfg,
                  const TrainConfig& train_cfg, const SampleSource& source,
                  const TrainOptions& options) {
  Trainer trainer(model_cfg, loss_cfg, train_cfg, source);
  const SampleSource& validation = options.validation != nullptr ? *options.validation : source;
  fs::create_directories(options.out_dir);

  TrainResult result;
  result.metrics_csv = options.out_dir / "metrics.csv";
  result.best_checkpoint = options.out_dir / "best.ifbk";
  result.final_checkpoint = options.out_dir / "final.ifbk";
  result.best_val_psnr = -std::numeric_limits<double>::infinity();

  const bool fresh = !fs::exists(result.metrics_csv);
  std::ofstream csv(result.metrics_csv, std::ios::app);
  if (!csv) throw IoError(fmt::format("cannot open {}", result.metrics_csv.string()));
  if (fresh) csv << "step,loss,l1,ssim_term,lr\n";

  const int64_t val_every =
      train_cfg.val_every > 0 ? train_cfg.val_every : trainer.steps_per_epoch();
  const bool has_target = options.target_psnr > 0.0 || options.target_loss > 0.0;
  const auto validate_now = [&] {
    double value = 0.0;
    if (options.target_loss > 0.0) {
      const auto score = score_source(trainer.model(), validation, loss_cfg);
      value = score.psnr;
      result.last_val_loss = score.loss;
    } else {
      value = mean_psnr(trainer.model(), validation);
    }
    result.last_val_psnr = value;
    if (value > result.best_val_psnr) {
      result.best_val_psnr = value;
      save_checkpoint(result.best_checkpoint, trainer.model());
    }
    if (has_target && (options.target_psnr <= 0.0 || value >= options.target_psnr) &&
        (options.target_loss <= 0.0 || result.last_val_loss < options.target_loss)) {
      result.reached_target = true;
    }
  };

  while (trainer.steps_done() < trainer.total_steps()) {
    StepLog log;
    try {
      log = trainer.step();
    } catch (const TrainingAborted&) {
      save_checkpoint(options.out_dir / "last_good.ifbk", trainer.model());
      nlohmann::json dump{{"step", trainer.steps_done() + 1},
                          {"batch_ids", trainer.last_batch_ids()}};
      std::ofstream(options.out_dir / "nan_dump.json") << dump.dump(2) << "\n";
      throw;
    }
    csv << fmt::format("{},{:.9g},{:.9g},{:.9g},{:.9g}\n", log.step, log.loss, log.l1,
                       log.ssim_term, log.lr);
    csv.flush();
    result.log.push_back(log);

    if (train_cfg.checkpoint_every > 0 && log.step % train_cfg.checkpoint_every == 0) {
      save_checkpoint(options.out_dir / fmt::format("step_{:06d}.ifbk", log.step), trainer.model());
    }
    bool keep_going = true;
    if (options.on_step) keep_going = options.on_step(log, trainer);
    if (log.step % val_every == 0 || !keep_going || log.step == trainer.total_steps()) {
      validate_now();
    }
    if (!keep_going || result.reached_target) break;
  }

  if (!fs::exists(result.best_checkpoint)) validate_now();
  save_checkpoint(result.final_checkpoint, trainer.model());
  result.steps = trainer.steps_done();
  return result;
}

std::vector<int64_t> tile_starts(int64_t length, int64_t tile, int64_t overlap) {
  if (tile >= length) return {0};
  std::vector<int64_t> starts;
  const int64_t stride = tile - overlap;
  for (int64_t s = 0; s + tile < length; s += stride) starts.push_back(s);
  starts.push_back(length - tile);
  return starts;
}

torch::Tensor tile_weights(int64_t tile_h, int64_t tile_w, int64_t overlap, bool top, bool bottom,
                           bool left, bool right) {
  const auto ramp = [overlap](int64_t length, bool lead, bool trail) {
    auto w = torch::ones({length}, torch::kDouble);
    if (overlap == 0) return w;
    auto acc = w.accessor<double, 1>();
    for (int64_t i = 0; i < length; ++i) {
      double v = 1.0;
      if (lead) v = std::min(v, static_cast<double>(i + 1) / static_cast<double>(overlap + 1));
      if (trail) {
        v = std::min(v, static_cast<double>(length - i) / static_cast<double>(overlap + 1));
      }
      acc[i] = v;
    }
    return w;
  };
  return torch::outer(ramp(tile_h, top, bottom), ramp(tile_w, left, right));
}

namespace {

struct TileLayout {
  std::vector<int64_t> ys;
  std::vector<int64_t> xs;
  int64_t tile_h;
  int64_t tile_w;
  torch::Tensor normalizer;  // (H, W) sum of raw weights
};

TileLayout layout_tiles(int64_t h, int64_t w, int64_t tile, int64_t overlap) {
  TileLayout layout;
  layout.ys = tile_starts(h, tile, overlap);
  layout.xs = tile_starts(w, tile, overlap);
  layout.tile_h = std::min(tile, h);
  layout.tile_w = std::min(tile, w);
  layout.normalizer = torch::zeros({h, w}, torch::kDouble);
  using torch::indexing::Slice;
  for (const int64_t y : layout.ys) {
    for (const int64_t x : layout.xs) {
      const auto weights = tile_weights(layout.tile_h, layout.tile_w, overlap, y > 0,
                                        y + layout.tile_h < h, x > 0, x + layout.tile_w < w);
      layout.normalizer.index({Slice(y, y + layout.tile_h), Slice(x, x + layout.tile_w)}) += weights;
    }
  }
  return layout;
}

}  // namespace

torch::Tensor tiling_weight_sum(int64_t h, int64_t w, int64_t tile, int64_t overlap) {
  using torch::indexing::Slice;
  const auto layout = layout_tiles(h, w, tile, overlap);
  auto sum = torch::zeros({h, w}, torch::kDouble);
  for (const int64_t y : layout.ys) {
    for (const int64_t x : layout.xs) {
      const auto region = std::vector<torch::indexing::TensorIndex>{
          Slice(y, y + layout.tile_h), Slice(x, x + layout.tile_w)};
      const auto weights = tile_weights(layout.tile_h, layout.tile_w, overlap, y > 0,
                                        y + layout.tile_h < h, x > 0, x + layout.tile_w < w);
      sum.index(region) += weights / layout.normalizer.index(region);
    }
  }
  return sum;
}

torch::Tensor infer_tiled(IFBlend& model, const torch::Tensor& image, int64_t tile,
                          int64_t overlap) {
  using torch::indexing::Slice;
  const int64_t m = model->config().size_multiple();
  if (tile <= 0 || tile % m != 0) {
    throw ConfigError(fmt::format("tile size {} must be a positive multiple of {}", tile, m));
  }
  if (overlap < 0 || 2 * overlap >= tile) {
    throw ConfigError(fmt::format("overlap {} must satisfy 0 <= overlap < tile / 2 ({})", overlap,
                                  tile / 2));
  }
  if (image.dim() != 4 || image.size(1) != 3) {
    throw ShapeError("infer_tiled: expected an (N, 3, H, W) image");
  }
  const int64_t h = image.size(2);
  const int64_t w = image.size(3);
  if (tile >= h && tile >= w) return restore(model, image);
  if (image.size(0) > 1) {
    std::vector<torch::Tensor> outs;
    for (int64_t i = 0; i < image.size(0); ++i) {
      outs.push_back(infer_tiled(model, image.narrow(0, i, 1), tile, overlap));
    }
    return torch::cat(outs);
  }

  // Route every DynamicConv once on the whole (possibly shrunk) image and
  // share that routing across tiles, as a whole-image forward would.
  RouterContext routing;
  {
    auto context = image;
    const int64_t long_side = std::max(h, w);
    if (long_side > kRouterContextSide) {
      const double scale = static_cast<double>(kRouterContextSide) / static_cast<double>(long_side);
      const auto side = [scale](int64_t n) {
        return std::max<int64_t>(1, std::llround(static_cast<double>(n) * scale));
      };
      context = F::adaptive_avg_pool2d(image, F::AdaptiveAvgPool2dFuncOptions({side(h), side(w)}));
    }
    restore(model, context);
  }
  routing.replay();

  const auto layout = layout_tiles(h, w, tile, overlap);
  auto accum = torch::zeros({1, 3, h, w}, torch::kDouble);
  for (const int64_t y : layout.ys) {
    for (const int64_t x : layout.xs) {
      const auto region = std::vector<torch::indexing::TensorIndex>{
          Slice(), Slice(), Slice(y, y + layout.tile_h), Slice(x, x + layout.tile_w)};
      routing.rewind();
      const auto out = restore(model, image.index(region).contiguous()).to(torch::kDouble);
      const auto weights = tile_weights(layout.tile_h, layout.tile_w, overlap, y > 0,
                                        y + layout.tile_h < h, x > 0, x + layout.tile_w < w);
      accum.index(region) += out * weights;
    }
  }
  return (accum / layout.normalizer).to(image.scalar_type());
}

}  // namespace ifblend
