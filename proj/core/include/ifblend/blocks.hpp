#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <vector>

namespace ifblend {

/// Hyperparameters shared by the learned blocks.
struct BlockConfig {
  int in_channels = 32;
  int out_channels = 32;
  double dropout_rate = 0.1;
  double negative_slope = 0.2;
  int num_experts = 4;
  int window_size = 8;
  int heads = 1;

  void validate() const;
};

/// Layer norm across the channel axis of an (N, C, H, W) map, one set of
/// statistics per pixel.
class ChannelLayerNormImpl : public torch::nn::Module {
 public:
  explicit ChannelLayerNormImpl(int channels, double eps = 1e-6);
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor weight;
  torch::Tensor bias;

 private:
  double eps_;
};
TORCH_MODULE(ChannelLayerNorm);

/// Low-frequency block: conv3x3 -> BN -> LeakyReLU -> Dropout -> conv3x3
/// (stride 2 when downsampling) -> BN -> LeakyReLU.
class LowFrequencyBlockImpl : public torch::nn::Module {
 public:
  LowFrequencyBlockImpl(const BlockConfig& cfg, bool downsample);
  torch::Tensor forward(const torch::Tensor& x);

  [[nodiscard]] bool downsamples() const { return downsample_; }

  torch::nn::Conv2d conv1{nullptr};
  torch::nn::BatchNorm2d norm1{nullptr};
  torch::nn::Dropout dropout{nullptr};
  torch::nn::Conv2d conv2{nullptr};
  torch::nn::BatchNorm2d norm2{nullptr};

 private:
  BlockConfig cfg_;
  bool downsample_;
};
TORCH_MODULE(LowFrequencyBlock);

/// Depthwise 3x3 convolution whose kernel is a per-sample softmax mixture of
/// `num_experts` candidate kernels. Mixture logits come from a linear head on
/// the globally average-pooled input.
class DynamicConvImpl : public torch::nn::Module {
 public:
  DynamicConvImpl(int channels, int num_experts);
  torch::Tensor forward(const torch::Tensor& x);

  /// Softmax mixture weights, shape (N, num_experts).
  torch::Tensor mixture_weights(const torch::Tensor& x);

  [[nodiscard]] int channels() const { return channels_; }
  [[nodiscard]] int num_experts() const { return num_experts_; }

  torch::Tensor kernels;  ///< (E, C, 1, 3, 3)
  torch::Tensor biases;   ///< (E, C)
  torch::nn::Linear router{nullptr};

 private:
  int channels_;
  int num_experts_;
};
TORCH_MODULE(DynamicConv);

/// Scoped record / replay of DynamicConv mixture weights on the current thread.
///
/// While recording, every DynamicConv call stores its (1, E) weights in call
/// order. After replay(), each forward pass (starting at rewind()) reuses them
/// in the same order instead of routing on its own input. Tiled inference uses
/// this so that all tiles share the routing of the whole image.
class RouterContext {
 public:
  RouterContext();
  ~RouterContext();
  RouterContext(const RouterContext&) = delete;
  RouterContext& operator=(const RouterContext&) = delete;

  /// Switches from recording to replaying and rewinds.
  void replay();
  void rewind() { cursor_ = 0; }
  [[nodiscard]] size_t size() const { return weights_.size(); }

  /// Mixture weights for one DynamicConv call: `compute()` while recording (or
  /// with no active context), the recorded entry while replaying. Throws
  /// WiringError when replay runs past the recording or shapes disagree.
  static torch::Tensor route(int64_t batch, int64_t experts,
                             const std::function<torch::Tensor()>& compute);

 private:
  std::vector<torch::Tensor> weights_;
  size_t cursor_ = 0;
  bool replaying_ = false;
  RouterContext* previous_;
};

/// High-frequency block: channel LayerNorm -> conv1x1 -> DynamicConv -> BN ->
/// LeakyReLU -> Dropout. Spatial size is preserved.
class HighFrequencyBlockImpl : public torch::nn::Module {
 public:
  explicit HighFrequencyBlockImpl(const BlockConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);

  ChannelLayerNorm norm_in{nullptr};
  torch::nn::Conv2d pointwise{nullptr};
  DynamicConv dynconv{nullptr};
  torch::nn::BatchNorm2d norm_out{nullptr};
  torch::nn::Dropout dropout{nullptr};

 private:
  BlockConfig cfg_;
};
TORCH_MODULE(HighFrequencyBlock);

/// One ConvNeXt-style residual unit: dw7x7 -> LN -> 1x1 (x4) -> GELU -> 1x1, + x.
class ConvNextUnitImpl : public torch::nn::Module {
 public:
  explicit ConvNextUnitImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d depthwise{nullptr};
  ChannelLayerNorm norm{nullptr};
  torch::nn::Conv2d expand{nullptr};
  torch::nn::Conv2d project{nullptr};
};
TORCH_MODULE(ConvNextUnit);

/// Global context branch: `depth` stacked ConvNeXt units.
class GlobalContextBranchImpl : public torch::nn::Module {
 public:
  GlobalContextBranchImpl(int channels, int depth);
  torch::Tensor forward(const torch::Tensor& x);

  /// Zeroes every unit's projection so the branch is an exact identity.
  void zero_init_projections();

  torch::nn::ModuleList units;
};
TORCH_MODULE(GlobalContextBranch);

struct FusionOutput {
  torch::Tensor h_e;   ///< enhanced image-domain feature
  torch::Tensor f_e;   ///< enhanced wavelet-domain feature
  torch::Tensor d_hf;  ///< fused high-frequency decoding
};

/// Window attention with a shared affinity matrix between an image-domain
/// feature `h` and a wavelet-domain feature `f`.
///
/// Inside each non-overlapping window the affinity M = softmax_rows(Q(h) K(f)^T
/// / sqrt(d)) updates h from f; its transpose, renormalized over rows, updates
/// f from h. The two enhanced maps are fused by conv1x1 + ReLU.
class WindowSharedAttentionImpl : public torch::nn::Module {
 public:
  /// `h_channels`/`f_channels` are the input widths; the shared projection
  /// width and fused output width come from cfg.out_channels.
  WindowSharedAttentionImpl(int h_channels, int f_channels, const BlockConfig& cfg);

  /// `window` overrides cfg.window_size when positive.
  FusionOutput forward(const torch::Tensor& h, const torch::Tensor& f, int window = 0);

  /// Row-stochastic affinity, shape (N * windows, heads, T, T).
  torch::Tensor affinity(const torch::Tensor& h, const torch::Tensor& f, int window = 0);

  /// Zeroes the value and output projections: h_e == h and f_e == f exactly.
  void zero_init_value_output();

  [[nodiscard]] int window_size() const { return cfg_.window_size; }

  torch::nn::Conv2d query{nullptr};
  torch::nn::Conv2d key{nullptr};
  torch::nn::Conv2d value_h{nullptr};
  torch::nn::Conv2d value_f{nullptr};
  torch::nn::Conv2d out_h{nullptr};
  torch::nn::Conv2d out_f{nullptr};
  torch::nn::Conv2d fuse{nullptr};

 private:
  int resolve_window(int window) const { return window > 0 ? window : cfg_.window_size; }
  void check_inputs(const torch::Tensor& h, const torch::Tensor& f, int window) const;
  torch::Tensor to_windows(const torch::Tensor& x, int64_t ws) const;
  torch::Tensor from_windows(const torch::Tensor& tokens, int64_t n, int64_t h, int64_t w,
                             int64_t ws) const;
  torch::Tensor affinity_logits(const torch::Tensor& q, const torch::Tensor& k) const;
  torch::Tensor affinity_from_tokens(const torch::Tensor& q, const torch::Tensor& k) const;

  int h_channels_;
  int f_channels_;
  BlockConfig cfg_;
};
TORCH_MODULE(WindowSharedAttention);

}  // namespace ifblend
