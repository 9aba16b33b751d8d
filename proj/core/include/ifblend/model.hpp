#pragma once

#include "ifblend/blocks.hpp"
#include "ifblend/freq.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <vector>

namespace ifblend {

struct ModelConfig {
  int stages = 4;
  int base_channels = 32;
  int channel_cap = 256;
  bool use_dwt_feats = true;
  bool use_rgb_split = true;
  HighPassMode high_pass_mode = HighPassMode::kMaxPool;
  int gcb_depth = 2;
  int window_size = 8;
  double dropout_rate = 0.1;
  double negative_slope = 0.2;
  int num_experts = 4;
  int heads = 1;

  void validate() const;

  /// Spatial multiple every model input is padded to (2^stages).
  [[nodiscard]] int64_t size_multiple() const { return int64_t{1} << stages; }

  bool operator==(const ModelConfig&) const = default;
};

/// Channel bookkeeping of one encoder/decoder stage pair.
struct StagePlan {
  int low_in = 0;     ///< channels of the stage's low-frequency input
  int high_in = 0;    ///< channels of the stage's high-frequency input
  int width = 0;      ///< LFB/HFB output width, also the decoder output width
  int f_lf = 0;       ///< Haar LL channels (0 without DWT features)
  int f_hf = 0;       ///< Haar detail channels (0 without DWT features)
  int l_lf = 0;       ///< width + f_lf + width
  int below = 0;      ///< channels arriving from the deeper decoder (0 at the deepest)
  int up_out = 0;     ///< output width of the upsampling conv after this decoder
};

std::vector<StagePlan> plan_stages(const ModelConfig& cfg);

/// Per-stage bundle routed from encoder to decoder.
struct StageEncoding {
  torch::Tensor l_lf;  ///< [R_lf; F_lf; H_lf]
  torch::Tensor h_hf;  ///< max-pooled HFB output
  torch::Tensor f_hf;  ///< Haar detail bands (undefined without DWT features)
};

class EncoderStageImpl : public torch::nn::Module {
 public:
  EncoderStageImpl(const ModelConfig& cfg, const StagePlan& plan, int stage);
  StageEncoding forward(const torch::Tensor& x_low, const torch::Tensor& x_high);

  LowFrequencyBlock lfb{nullptr};
  HighFrequencyBlock hfb{nullptr};

 private:
  ModelConfig cfg_;
  StagePlan plan_;
  int stage_;
};
TORCH_MODULE(EncoderStage);

class DecoderStageImpl : public torch::nn::Module {
 public:
  DecoderStageImpl(const ModelConfig& cfg, const StagePlan& plan, int stage);

  /// `below` must be undefined exactly at the deepest stage.
  torch::Tensor forward(const StageEncoding& enc, const torch::Tensor& below);

  /// Window used at a given feature size: min(window_size, h, w).
  [[nodiscard]] int effective_window(int64_t h, int64_t w) const;

  LowFrequencyBlock lfb{nullptr};
  WindowSharedAttention fusion{nullptr};  ///< with DWT features
  HighFrequencyBlock hfb{nullptr};        ///< without DWT features

 private:
  ModelConfig cfg_;
  StagePlan plan_;
  int stage_;
};
TORCH_MODULE(DecoderStage);

/// The full restoration network: stem, band split, encoder stages, global
/// context branch, decoder stages with upsampling, and a residual head.
class IFBlendImpl : public torch::nn::Module {
 public:
  explicit IFBlendImpl(const ModelConfig& cfg);

  /// (N, 3, H, W) sRGB in [0, 1] to restored sRGB in [0, 1]. Any H, W: the
  /// input is reflection-padded to multiples of 2^stages and cropped back.
  torch::Tensor forward(const torch::Tensor& x);

  /// Forward on an input whose dims are already multiples of 2^stages.
  torch::Tensor forward_aligned(const torch::Tensor& x);

  [[nodiscard]] const ModelConfig& config() const { return cfg_; }
  [[nodiscard]] const std::vector<StagePlan>& plan() const { return plan_; }

  /// Zeroes the reconstruction head so forward() returns its input.
  void zero_init_head();

  /// Global context is computed at the deepest stage width: L_lf is projected
  /// down, refined by the GCB, projected back and added to L_lf.
  torch::Tensor global_context(const torch::Tensor& l_lf);

  /// Zeroes the context output projection so the deepest decoder sees L_lf.
  void zero_init_context();

  torch::nn::Conv2d stem{nullptr};
  torch::nn::ModuleList encoders;
  torch::nn::Conv2d context_in{nullptr};
  GlobalContextBranch gcb{nullptr};
  torch::nn::Conv2d context_out{nullptr};
  torch::nn::ModuleList decoders;
  torch::nn::ModuleList upsamplers;
  torch::nn::Conv2d head{nullptr};

 private:
  ModelConfig cfg_;
  std::vector<StagePlan> plan_;
};
TORCH_MODULE(IFBlend);

/// Pads (N, C, H, W) on the bottom/right up to multiples of `multiple`,
/// reflecting when the pad is smaller than the dim and replicating otherwise.
torch::Tensor pad_to_multiple(const torch::Tensor& x, int64_t multiple);

/// Analytic multiply-accumulate count of one forward pass on an h x w image.
/// Convolutions count Cout * Cin/groups * k^2 * H * W; attention counts the
/// window-local QK^T and the two affinity-value products. Norms, pooling and
/// activations are excluded.
int64_t count_macs(const ModelConfig& cfg, int64_t h, int64_t w);

int64_t count_parameters(torch::nn::Module& module);

}  // namespace ifblend
