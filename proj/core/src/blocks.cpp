#include "ifblend/blocks.hpp"

#include "ifblend/errors.hpp"
#include "ifblend/macs.hpp"

#include <fmt/format.h>

#include <cmath>

namespace ifblend {

namespace F = torch::nn::functional;
namespace nn = torch::nn;

namespace {

thread_local MacCounter* active_counter = nullptr;
thread_local RouterContext* active_router = nullptr;

nn::Conv2d make_conv(int in, int out, int kernel, int stride = 1, int groups = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel)
                        .stride(stride)
                        .padding(kernel / 2)
                        .groups(groups));
}

torch::Tensor counted(nn::Conv2d conv, const torch::Tensor& x) {
  auto y = conv->forward(x);
  const auto& opt = conv->options;
  MacCounter::add(conv_macs(opt.in_channels(), opt.out_channels(), opt.kernel_size()->at(0),
                            y.size(2), y.size(3), opt.groups()));
  return y;
}

void require_channels(const torch::Tensor& x, int expected, std::string_view block) {
  if (x.dim() != 4) {
    throw ShapeError(fmt::format("{}: expected (N, C, H, W) input, got rank {}", block, x.dim()));
  }
  if (x.size(1) != expected) {
    throw ShapeError(
        fmt::format("{}: expected {} input channels, got {}", block, expected, x.size(1)));
  }
}

void zero_conv(const nn::Conv2d& conv) {
  torch::NoGradGuard guard;
  conv->weight.zero_();
  if (conv->bias.defined()) conv->bias.zero_();
}

}  // namespace

MacCounter::MacCounter() : previous_(active_counter) { active_counter = this; }

MacCounter::~MacCounter() { active_counter = previous_; }

void MacCounter::add(std::int64_t macs) {
  if (active_counter != nullptr) active_counter->total_ += macs;
}

RouterContext::RouterContext() : previous_(active_router) { active_router = this; }

RouterContext::~RouterContext() { active_router = previous_; }

void RouterContext::replay() {
  replaying_ = true;
  cursor_ = 0;
}

torch::Tensor RouterContext::route(int64_t batch, int64_t experts,
                                   const std::function<torch::Tensor()>& compute) {
  RouterContext* ctx = active_router;
  if (ctx == nullptr) return compute();
  if (!ctx->replaying_) {
    auto mix = compute();
    if (mix.size(0) != 1) {
      throw WiringError("RouterContext: recording requires batch size 1");
    }
    ctx->weights_.push_back(mix.detach());
    return mix;
  }
  if (ctx->cursor_ >= ctx->weights_.size()) {
    throw WiringError(fmt::format("RouterContext: replay call {} exceeds the {} recorded",
                                  ctx->cursor_ + 1, ctx->weights_.size()));
  }
  const auto& mix = ctx->weights_[ctx->cursor_++];
  if (mix.size(1) != experts) {
    throw WiringError(fmt::format("RouterContext: recorded {} experts, block has {}",
                                  mix.size(1), experts));
  }
  return mix.expand({batch, experts});
}

void BlockConfig::validate() const {
  if (in_channels <= 0 || out_channels <= 0) {
    throw ConfigError(fmt::format("block channels must be positive (in={}, out={})", in_channels,
                                  out_channels));
  }
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw ConfigError(fmt::format("dropout_rate must lie in [0, 1), got {}", dropout_rate));
  }
  if (num_experts < 1) throw ConfigError("num_experts must be >= 1");
  if (window_size < 1) throw ConfigError("window_size must be >= 1");
  if (heads < 1) throw ConfigError("heads must be >= 1");
}

ChannelLayerNormImpl::ChannelLayerNormImpl(int channels, double eps) : eps_(eps) {
  weight = register_parameter("weight", torch::ones({channels}));
  bias = register_parameter("bias", torch::zeros({channels}));
}

torch::Tensor ChannelLayerNormImpl::forward(const torch::Tensor& x) {
  const auto mean = x.mean(1, true);
  const auto centered = x - mean;
  const auto var = centered.pow(2).mean(1, true);
  const auto normed = centered / torch::sqrt(var + eps_);
  return normed * weight.view({1, -1, 1, 1}) + bias.view({1, -1, 1, 1});
}

LowFrequencyBlockImpl::LowFrequencyBlockImpl(const BlockConfig& cfg, bool downsample)
    : cfg_(cfg), downsample_(downsample) {
  cfg.validate();
  conv1 = register_module("conv1", make_conv(cfg.in_channels, cfg.out_channels, 3));
  norm1 = register_module("norm1", nn::BatchNorm2d(cfg.out_channels));
  dropout = register_module("dropout", nn::Dropout(cfg.dropout_rate));
  conv2 = register_module("conv2",
                          make_conv(cfg.out_channels, cfg.out_channels, 3, downsample ? 2 : 1));
  norm2 = register_module("norm2", nn::BatchNorm2d(cfg.out_channels));
}

torch::Tensor LowFrequencyBlockImpl::forward(const torch::Tensor& x) {
  require_channels(x, cfg_.in_channels, "LFB");
  if (downsample_ && (x.size(2) % 2 != 0 || x.size(3) % 2 != 0)) {
    throw DimensionError(
        fmt::format("LFB: cannot downsample odd spatial dims {}x{}", x.size(2), x.size(3)));
  }
  const auto act = F::LeakyReLUFuncOptions().negative_slope(cfg_.negative_slope);
  auto y = F::leaky_relu(norm1(counted(conv1, x)), act);
  y = dropout(y);
  return F::leaky_relu(norm2(counted(conv2, y)), act);
}

DynamicConvImpl::DynamicConvImpl(int channels, int num_experts)
    : channels_(channels), num_experts_(num_experts) {
  if (channels <= 0 || num_experts < 1) {
    throw ConfigError("DynamicConv: channels and num_experts must be positive");
  }
  const double bound = 1.0 / 3.0;  // 1 / sqrt(fan_in) with fan_in = 3 * 3
  kernels = register_parameter(
      "kernels", torch::empty({num_experts, channels, 1, 3, 3}).uniform_(-bound, bound));
  biases = register_parameter("biases", torch::zeros({num_experts, channels}));
  router = register_module("router", nn::Linear(channels, num_experts));
}

torch::Tensor DynamicConvImpl::mixture_weights(const torch::Tensor& x) {
  const auto descriptor = x.mean({2, 3});
  return torch::softmax(router(descriptor), 1);
}

torch::Tensor DynamicConvImpl::forward(const torch::Tensor& x) {
  require_channels(x, channels_, "DynamicConv");
  const int64_t n = x.size(0);
  const int64_t h = x.size(2);
  const int64_t w = x.size(3);
  const auto mix =
      RouterContext::route(n, num_experts_, [&] { return mixture_weights(x); });  // (N, E)
  const auto kernel =
      torch::matmul(mix, kernels.reshape({num_experts_, -1})).reshape({n * channels_, 1, 3, 3});
  const auto bias = torch::matmul(mix, biases).reshape({n * channels_});
  auto y = F::conv2d(x.reshape({1, n * channels_, h, w}), kernel,
                     F::Conv2dFuncOptions().bias(bias).padding(1).groups(n * channels_));
  MacCounter::add(static_cast<int64_t>(channels_) * num_experts_ +
                  conv_macs(channels_, channels_, 3, h, w, channels_));
  return y.reshape({n, channels_, h, w});
}

HighFrequencyBlockImpl::HighFrequencyBlockImpl(const BlockConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  norm_in = register_module("norm_in", ChannelLayerNorm(cfg.in_channels));
  pointwise = register_module("pointwise", make_conv(cfg.in_channels, cfg.out_channels, 1));
  dynconv = register_module("dynconv", DynamicConv(cfg.out_channels, cfg.num_experts));
  norm_out = register_module("norm_out", nn::BatchNorm2d(cfg.out_channels));
  dropout = register_module("dropout", nn::Dropout(cfg.dropout_rate));
}

torch::Tensor HighFrequencyBlockImpl::forward(const torch::Tensor& x) {
  require_channels(x, cfg_.in_channels, "HFB");
  auto y = counted(pointwise, norm_in(x));
  y = norm_out(dynconv(y));
  y = F::leaky_relu(y, F::LeakyReLUFuncOptions().negative_slope(cfg_.negative_slope));
  return dropout(y);
}

ConvNextUnitImpl::ConvNextUnitImpl(int channels) {
  depthwise = register_module("depthwise", make_conv(channels, channels, 7, 1, channels));
  norm = register_module("norm", ChannelLayerNorm(channels));
  expand = register_module("expand", make_conv(channels, 4 * channels, 1));
  project = register_module("project", make_conv(4 * channels, channels, 1));
}

torch::Tensor ConvNextUnitImpl::forward(const torch::Tensor& x) {
  auto y = norm(counted(depthwise, x));
  y = torch::gelu(counted(expand, y));
  return x + counted(project, y);
}

GlobalContextBranchImpl::GlobalContextBranchImpl(int channels, int depth) {
  if (depth < 1) throw ConfigError(fmt::format("GCB depth must be >= 1, got {}", depth));
  if (channels <= 0) throw ConfigError("GCB channels must be positive");
  units = register_module("units", nn::ModuleList());
  for (int i = 0; i < depth; ++i) units->push_back(ConvNextUnit(channels));
}

torch::Tensor GlobalContextBranchImpl::forward(const torch::Tensor& x) {
  auto y = x;
  for (const auto& unit : *units) y = unit->as<ConvNextUnit>()->forward(y);
  return y;
}

void GlobalContextBranchImpl::zero_init_projections() {
  for (const auto& unit : *units) zero_conv(unit->as<ConvNextUnit>()->project);
}

WindowSharedAttentionImpl::WindowSharedAttentionImpl(int h_channels, int f_channels,
                                                     const BlockConfig& cfg)
    : h_channels_(h_channels), f_channels_(f_channels), cfg_(cfg) {
  cfg.validate();
  if (h_channels <= 0 || f_channels <= 0) {
    throw ConfigError("WA-SAM: input channels must be positive");
  }
  if (cfg.out_channels % cfg.heads != 0) {
    throw ConfigError(fmt::format("WA-SAM: width {} not divisible by {} heads", cfg.out_channels,
                                  cfg.heads));
  }
  const int dim = cfg.out_channels;
  query = register_module("query", make_conv(h_channels, dim, 1));
  key = register_module("key", make_conv(f_channels, dim, 1));
  value_h = register_module("value_h", make_conv(h_channels, dim, 1));
  value_f = register_module("value_f", make_conv(f_channels, dim, 1));
  out_h = register_module("out_h", make_conv(dim, h_channels, 1));
  out_f = register_module("out_f", make_conv(dim, f_channels, 1));
  fuse = register_module("fuse", make_conv(h_channels + f_channels, cfg.out_channels, 1));
}

void WindowSharedAttentionImpl::check_inputs(const torch::Tensor& h, const torch::Tensor& f,
                                             int ws) const {
  require_channels(h, h_channels_, "WA-SAM(h)");
  require_channels(f, f_channels_, "WA-SAM(f)");
  if (h.size(0) != f.size(0) || h.size(2) != f.size(2) || h.size(3) != f.size(3)) {
    throw ShapeError(fmt::format("WA-SAM: image feature {}x{} and frequency feature {}x{} differ",
                                 h.size(2), h.size(3), f.size(2), f.size(3)));
  }
  if (h.size(2) % ws != 0 || h.size(3) % ws != 0) {
    throw ConfigError(fmt::format("WA-SAM: window size {} does not divide feature map {}x{}", ws,
                                  h.size(2), h.size(3)));
  }
}

torch::Tensor WindowSharedAttentionImpl::to_windows(const torch::Tensor& x, int64_t ws) const {
  // (N, D, H, W) -> (N * nWin, heads, T, D / heads)
  const int64_t n = x.size(0);
  const int64_t d = x.size(1);
  const int64_t gh = x.size(2) / ws;
  const int64_t gw = x.size(3) / ws;
  return x.view({n, cfg_.heads, d / cfg_.heads, gh, ws, gw, ws})
      .permute({0, 3, 5, 1, 4, 6, 2})
      .reshape({n * gh * gw, cfg_.heads, ws * ws, d / cfg_.heads});
}

torch::Tensor WindowSharedAttentionImpl::from_windows(const torch::Tensor& tokens, int64_t n,
                                                      int64_t h, int64_t w, int64_t ws) const {
  const int64_t gh = h / ws;
  const int64_t gw = w / ws;
  const int64_t dh = tokens.size(3);
  return tokens.view({n, gh, gw, cfg_.heads, ws, ws, dh})
      .permute({0, 3, 6, 1, 4, 2, 5})
      .reshape({n, cfg_.heads * dh, h, w});
}

torch::Tensor WindowSharedAttentionImpl::affinity_logits(const torch::Tensor& q,
                                                         const torch::Tensor& k) const {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.size(3)));
  return torch::matmul(q, k.transpose(-2, -1)) * scale;
}

torch::Tensor WindowSharedAttentionImpl::affinity_from_tokens(const torch::Tensor& q,
                                                              const torch::Tensor& k) const {
  return torch::softmax(affinity_logits(q, k), -1);
}

torch::Tensor WindowSharedAttentionImpl::affinity(const torch::Tensor& h, const torch::Tensor& f,
                                                  int window) {
  const int ws = resolve_window(window);
  check_inputs(h, f, ws);
  return affinity_from_tokens(to_windows(query(h), ws), to_windows(key(f), ws));
}

FusionOutput WindowSharedAttentionImpl::forward(const torch::Tensor& h, const torch::Tensor& f,
                                                int window) {
  const int ws = resolve_window(window);
  check_inputs(h, f, ws);
  const int64_t n = h.size(0);
  const int64_t height = h.size(2);
  const int64_t width = h.size(3);

  const auto q = to_windows(counted(query, h), ws);
  const auto k = to_windows(counted(key, f), ws);
  const auto v_h = to_windows(counted(value_h, h), ws);
  const auto v_f = to_windows(counted(value_f, f), ws);

  const auto logits = affinity_logits(q, k);
  const auto log_m = torch::log_softmax(logits, -1);
  const auto m = log_m.exp();
  // M^T renormalized over rows, in log space: column sums of M can underflow.
  const auto m_rev = torch::softmax(log_m.transpose(-2, -1), -1);

  const auto h_msg = from_windows(torch::matmul(m, v_f), n, height, width, ws);
  const auto f_msg = from_windows(torch::matmul(m_rev, v_h), n, height, width, ws);
  // QK^T plus the two affinity-value products, per window.
  const int64_t tokens = static_cast<int64_t>(ws) * ws;
  MacCounter::add(3 * tokens * height * width * cfg_.out_channels);

  FusionOutput out;
  out.h_e = h + counted(out_h, h_msg);
  out.f_e = f + counted(out_f, f_msg);
  out.d_hf = torch::relu(counted(fuse, torch::cat({out.h_e, out.f_e}, 1)));
  return out;
}

void WindowSharedAttentionImpl::zero_init_value_output() {
  for (const auto& conv : {value_h, value_f, out_h, out_f}) zero_conv(conv);
}

}  // namespace ifblend
