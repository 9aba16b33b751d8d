#pragma once

#include "ifblend/data.hpp"
#include "ifblend/losses.hpp"
#include "ifblend/model.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string_view>
#include <vector>

namespace ifblend {

enum class LrSchedule { kConstant, kCosine };

LrSchedule parse_lr_schedule(std::string_view name);
std::string_view to_string(LrSchedule schedule);

struct TrainConfig {
  int epochs = 200;
  int batch_size = 8;
  int patch_size = 256;
  double lr = 2e-4;
  double lr_min = 1e-6;  ///< cosine floor, never above lr
  LrSchedule lr_schedule = LrSchedule::kCosine;
  std::uint64_t seed = 0;
  int checkpoint_every = 1000;  ///< steps; 0 disables periodic checkpoints
  int val_every = 0;            ///< steps; 0 validates once per epoch
  int max_steps = 0;            ///< 0 runs the full epoch budget
  bool deterministic = true;
  bool flip = true;

  void validate(const ModelConfig& model) const;
};

/// One optimizer step's record, as written to metrics.csv.
struct StepLog {
  int64_t step = 0;
  double loss = 0.0;
  double l1 = 0.0;
  double ssim_term = 0.0;
  double lr = 0.0;
};

/// Learning rate at step `step` (0-based) of `total_steps`.
double scheduled_lr(const TrainConfig& cfg, int64_t step, int64_t total_steps);

/// Owns the model, optimizer and sampling state of one training run.
///
/// Batches are drawn epoch by epoch from a seeded permutation; every sample
/// is cropped to patch_size with a seeded synchronized flip. With equal seeds
/// and `deterministic`, two trainers produce identical step sequences.
class Trainer {
 public:
  Trainer(const ModelConfig& model_cfg, const LossConfig& loss_cfg, const TrainConfig& train_cfg,
          const SampleSource& source);

  /// Runs one optimizer step. Throws TrainingAborted (parameters untouched)
  /// when the loss is not finite.
  StepLog step();

  [[nodiscard]] IFBlend& model() { return model_; }
  [[nodiscard]] int64_t steps_done() const { return step_; }
  [[nodiscard]] int64_t steps_per_epoch() const;
  [[nodiscard]] int64_t total_steps() const { return total_steps_; }
  /// Sample ids of the most recent batch.
  [[nodiscard]] const std::vector<std::string>& last_batch_ids() const { return last_ids_; }

  /// Assembles the next (input, gt) batch without stepping.
  std::pair<torch::Tensor, torch::Tensor> next_batch();

 private:
  ModelConfig model_cfg_;
  LossConfig loss_cfg_;
  TrainConfig train_cfg_;
  const SampleSource& source_;
  IFBlend model_{nullptr};
  std::unique_ptr<torch::optim::Adam> optimizer_;
  std::mt19937_64 rng_;
  std::vector<size_t> order_;
  size_t cursor_ = 0;
  int64_t step_ = 0;
  int64_t total_steps_ = 0;
  std::vector<std::string> last_ids_;
};

struct TrainOptions {
  std::filesystem::path out_dir;
  const SampleSource* validation = nullptr;  ///< defaults to the training source
  /// Called after every step; returning false stops training early.
  std::function<bool(const StepLog&, Trainer&)> on_step;
  /// Early stop at a validation once mean PSNR >= target_psnr and the
  /// eval-mode mean loss < target_loss. 0 disables the respective check;
  /// both 0 never stops early.
  double target_psnr = 0.0;
  double target_loss = 0.0;
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;
  std::filesystem::path metrics_csv;
  int64_t steps = 0;
  double best_val_psnr = 0.0;
  double last_val_psnr = 0.0;
  double last_val_loss = 0.0;  ///< eval-mode loss of the last validation
  bool reached_target = false;
  std::vector<StepLog> log;
};

/// Full training run: Adam (0.9, 0.999), scheduled lr, metrics.csv
/// (step,loss,l1,ssim_term,lr), periodic step_XXXXXX.ifbk checkpoints,
/// best.ifbk by validation PSNR and final.ifbk. A non-finite loss writes
/// last_good.ifbk plus nan_dump.json and throws TrainingAborted.
TrainResult train(const ModelConfig& model_cfg, const LossConfig& loss_cfg,
                  const TrainConfig& train_cfg, const SampleSource& source,
                  const TrainOptions& options);

/// Evaluation-mode forward without gradient tracking.
torch::Tensor restore(IFBlend& model, const torch::Tensor& image);

/// Mean PSNR of model outputs over a source (identity when model is null).
double mean_psnr(IFBlend& model, const SampleSource& source);

struct SourceScore {
  double psnr = 0.0;  ///< mean over finite per-image values
  double loss = 0.0;  ///< mean eval-mode restoration loss
};

/// Eval-mode PSNR and loss of a model over a whole source.
SourceScore score_source(IFBlend& model, const SampleSource& source, const LossConfig& loss_cfg);

/// Tile origins along one axis: 0, tile - overlap, ..., with the last tile
/// flush against the far edge. A tile at least as long as the axis yields {0}.
std::vector<int64_t> tile_starts(int64_t length, int64_t tile, int64_t overlap);

/// Unnormalized feathering weights of one tile: linear ramps of `overlap`
/// pixels on every side that borders another tile, 1 elsewhere. Strictly
/// positive. Shape (tile_h, tile_w).
torch::Tensor tile_weights(int64_t tile_h, int64_t tile_w, int64_t overlap, bool top, bool bottom,
                           bool left, bool right);

/// Sum over tiles of each tile's normalized weight, (H, W). Equals 1 wherever
/// the blend is a partition of unity.
torch::Tensor tiling_weight_sum(int64_t h, int64_t w, int64_t tile, int64_t overlap);

/// Long side of the image the tiled path routes DynamicConv layers on; larger
/// images are area-downsampled to it first.
inline constexpr int64_t kRouterContextSide = 512;

/// Restores `image` (N, 3, H, W) tile by tile with feathered blending. Requires
/// tile % 2^stages == 0 and 0 <= overlap < tile / 2. All tiles reuse the
/// DynamicConv routing of one whole-image pass (see RouterContext). When the
/// tile covers the whole image this is exactly restore(model, image).
torch::Tensor infer_tiled(IFBlend& model, const torch::Tensor& image, int64_t tile,
                          int64_t overlap);

}  // namespace ifblend
