#include "ifblend/model.hpp"

#include "ifblend/errors.hpp"
#include "ifblend/macs.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>

namespace ifblend {

namespace F = torch::nn::functional;
namespace nn = torch::nn;
using torch::indexing::Slice;

namespace {

BlockConfig block_config(const ModelConfig& cfg, int in, int out) {
  BlockConfig b;
  b.in_channels = in;
  b.out_channels = out;
  b.dropout_rate = cfg.dropout_rate;
  b.negative_slope = cfg.negative_slope;
  b.num_experts = cfg.num_experts;
  b.window_size = cfg.window_size;
  b.heads = cfg.heads;
  return b;
}

nn::Conv2d conv3x3(int in, int out) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1));
}

torch::Tensor counted(nn::Conv2d conv, const torch::Tensor& x) {
  auto y = conv->forward(x);
  const auto& opt = conv->options;
  MacCounter::add(conv_macs(opt.in_channels(), opt.out_channels(), opt.kernel_size()->at(0),
                            y.size(2), y.size(3), opt.groups()));
  return y;
}

int64_t round_up(int64_t v, int64_t m) { return (v + m - 1) / m * m; }

}  // namespace

void ModelConfig::validate() const {
  if (stages < 1) throw ConfigError(fmt::format("model.stages must be >= 1, got {}", stages));
  if (stages > 8) throw ConfigError(fmt::format("model.stages must be <= 8, got {}", stages));
  if (base_channels < 1) throw ConfigError("model.base_channels must be >= 1");
  if (channel_cap < base_channels) {
    throw ConfigError("model.channel_cap must be >= model.base_channels");
  }
  if (gcb_depth < 1) throw ConfigError("model.gcb_depth must be >= 1");
  if (window_size < 1) throw ConfigError("model.window_size must be >= 1");
  if (heads < 1) throw ConfigError("model.heads must be >= 1");
  if (num_experts < 1) throw ConfigError("model.num_experts must be >= 1");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw ConfigError("model.dropout_rate must lie in [0, 1)");
  }
  for (const auto& p : plan_stages(*this)) {
    if (p.width % heads != 0) {
      throw ConfigError(fmt::format("model.heads={} does not divide stage width {}", heads,
                                    p.width));
    }
  }
}

std::vector<StagePlan> plan_stages(const ModelConfig& cfg) {
  std::vector<StagePlan> plans(static_cast<size_t>(cfg.stages));
  int low_in = cfg.base_channels;
  int high_in = cfg.base_channels;
  for (int s = 0; s < cfg.stages; ++s) {
    auto& p = plans[static_cast<size_t>(s)];
    p.low_in = low_in;
    p.high_in = high_in;
    p.width = std::min(cfg.base_channels << s, cfg.channel_cap);
    p.f_lf = cfg.use_dwt_feats ? low_in : 0;
    p.f_hf = cfg.use_dwt_feats ? 3 * low_in : 0;
    p.l_lf = p.width + p.f_lf + p.width;
    low_in = p.l_lf;
    high_in = p.width;
  }
  for (int s = 0; s < cfg.stages; ++s) {
    auto& p = plans[static_cast<size_t>(s)];
    p.up_out = s > 0 ? plans[static_cast<size_t>(s - 1)].width : cfg.base_channels;
  }
  for (int s = 0; s < cfg.stages; ++s) {
    auto& p = plans[static_cast<size_t>(s)];
    p.below = s + 1 < cfg.stages ? plans[static_cast<size_t>(s + 1)].up_out : 0;
  }
  return plans;
}

EncoderStageImpl::EncoderStageImpl(const ModelConfig& cfg, const StagePlan& plan, int stage)
    : cfg_(cfg), plan_(plan), stage_(stage) {
  lfb = register_module("lfb", LowFrequencyBlock(block_config(cfg, plan.low_in, plan.width),
                                                 /*downsample=*/true));
  hfb = register_module("hfb", HighFrequencyBlock(block_config(cfg, plan.high_in, plan.width)));
}

StageEncoding EncoderStageImpl::forward(const torch::Tensor& x_low, const torch::Tensor& x_high) {
  if (x_low.dim() != 4 || x_high.dim() != 4 || x_low.size(0) != x_high.size(0) ||
      x_low.size(2) != x_high.size(2) || x_low.size(3) != x_high.size(3)) {
    throw ShapeError(fmt::format("encoder stage {}: low input {} and high input {} disagree",
                                 stage_, fmt::join(x_low.sizes(), "x"),
                                 fmt::join(x_high.sizes(), "x")));
  }
  StageEncoding enc;
  const auto r_lf = lfb(x_low);
  const auto split = lowhigh_split(hfb(x_high), 2, 2, cfg_.high_pass_mode);
  enc.h_hf = split.high;
  if (cfg_.use_dwt_feats) {
    auto bands = haar_dwt(x_low);
    enc.f_hf = std::move(bands.high);
    enc.l_lf = torch::cat({r_lf, bands.ll, split.low}, 1);
  } else {
    enc.l_lf = torch::cat({r_lf, split.low}, 1);
  }
  return enc;
}

DecoderStageImpl::DecoderStageImpl(const ModelConfig& cfg, const StagePlan& plan, int stage)
    : cfg_(cfg), plan_(plan), stage_(stage) {
  lfb = register_module(
      "lfb", LowFrequencyBlock(block_config(cfg, plan.l_lf + plan.below, plan.width),
                               /*downsample=*/false));
  if (cfg.use_dwt_feats) {
    fusion = register_module(
        "fusion", WindowSharedAttention(plan.width, plan.f_hf,
                                        block_config(cfg, plan.width, plan.width)));
  } else {
    hfb = register_module("hfb", HighFrequencyBlock(block_config(cfg, plan.width, plan.width)));
  }
}

int DecoderStageImpl::effective_window(int64_t h, int64_t w) const {
  return static_cast<int>(std::min<int64_t>({cfg_.window_size, h, w}));
}

torch::Tensor DecoderStageImpl::forward(const StageEncoding& enc, const torch::Tensor& below) {
  const bool deepest = stage_ == cfg_.stages - 1;
  if (!deepest && !below.defined()) {
    throw WiringError(fmt::format("decoder stage {}: missing input from the deeper stage", stage_));
  }
  if (deepest && below.defined()) {
    throw WiringError(fmt::format("decoder stage {} is the deepest and takes no deeper input",
                                  stage_));
  }
  const auto low_in = below.defined() ? torch::cat({enc.l_lf, below}, 1) : enc.l_lf;
  const auto d_lf = lfb(low_in);

  torch::Tensor d_hf;
  if (cfg_.use_dwt_feats) {
    const int64_t h = enc.h_hf.size(2);
    const int64_t w = enc.h_hf.size(3);
    const int ws = effective_window(h, w);
    const int64_t ph = round_up(h, ws) - h;
    const int64_t pw = round_up(w, ws) - w;
    if (ph == 0 && pw == 0) {
      d_hf = fusion->forward(enc.h_hf, enc.f_hf, ws).d_hf;
    } else {
      const auto opts = F::PadFuncOptions({0, pw, 0, ph}).mode(torch::kReplicate);
      d_hf = fusion->forward(F::pad(enc.h_hf, opts), F::pad(enc.f_hf, opts), ws)
                 .d_hf.index({Slice(), Slice(), Slice(0, h), Slice(0, w)});
    }
  } else {
    d_hf = hfb(enc.h_hf);
  }
  return d_hf + d_lf;
}

IFBlendImpl::IFBlendImpl(const ModelConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  plan_ = plan_stages(cfg);
  stem = register_module("stem", conv3x3(3, cfg.base_channels));
  encoders = register_module("encoders", nn::ModuleList());
  decoders = register_module("decoders", nn::ModuleList());
  upsamplers = register_module("upsamplers", nn::ModuleList());
  for (int s = 0; s < cfg.stages; ++s) {
    const auto& p = plan_[static_cast<size_t>(s)];
    encoders->push_back(EncoderStage(cfg, p, s));
    decoders->push_back(DecoderStage(cfg, p, s));
    upsamplers->push_back(conv3x3(p.width, p.up_out));
  }
  const auto& deepest = plan_.back();
  context_in = register_module(
      "context_in", nn::Conv2d(nn::Conv2dOptions(deepest.l_lf, deepest.width, 1)));
  gcb = register_module("gcb", GlobalContextBranch(deepest.width, cfg.gcb_depth));
  context_out = register_module(
      "context_out", nn::Conv2d(nn::Conv2dOptions(deepest.width, deepest.l_lf, 1)));
  head = register_module("head", conv3x3(cfg.base_channels, 3));
}

torch::Tensor pad_to_multiple(const torch::Tensor& x, int64_t multiple) {
  const int64_t h = x.size(-2);
  const int64_t w = x.size(-1);
  const int64_t ph = round_up(h, multiple) - h;
  const int64_t pw = round_up(w, multiple) - w;
  if (ph == 0 && pw == 0) return x;
  auto opts = F::PadFuncOptions({0, pw, 0, ph});
  if (ph < h && pw < w) {
    opts.mode(torch::kReflect);
  } else {
    opts.mode(torch::kReplicate);
  }
  return F::pad(x, opts);
}

torch::Tensor IFBlendImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 3) {
    throw ShapeError(fmt::format("IFBlend: expected an (N, 3, H, W) image, got {}",
                                 fmt::join(x.sizes(), "x")));
  }
  const int64_t h = x.size(2);
  const int64_t w = x.size(3);
  const auto padded = pad_to_multiple(x, cfg_.size_multiple());
  if (padded.size(2) == h && padded.size(3) == w) return forward_aligned(x);
  return forward_aligned(padded).index({Slice(), Slice(), Slice(0, h), Slice(0, w)});
}

torch::Tensor IFBlendImpl::forward_aligned(const torch::Tensor& x) {
  const int64_t m = cfg_.size_multiple();
  if (x.dim() != 4 || x.size(1) != 3) {
    throw ShapeError(fmt::format("IFBlend: expected an (N, 3, H, W) image, got {}",
                                 fmt::join(x.sizes(), "x")));
  }
  if (x.size(2) % m != 0 || x.size(3) % m != 0) {
    throw DimensionError(fmt::format("IFBlend: {}x{} is not a multiple of {}", x.size(2),
                                     x.size(3), m));
  }
  const auto features = counted(stem, x);
  torch::Tensor x_low = features;
  torch::Tensor x_high = features;
  if (cfg_.use_rgb_split) {
    auto split = lowhigh_split(features, 3, 1, cfg_.high_pass_mode);
    x_low = std::move(split.low);
    x_high = std::move(split.high);
  }

  std::vector<StageEncoding> encodings;
  encodings.reserve(static_cast<size_t>(cfg_.stages));
  for (int s = 0; s < cfg_.stages; ++s) {
    auto enc = encoders[static_cast<size_t>(s)]->as<EncoderStage>()->forward(x_low, x_high);
    x_low = enc.l_lf;
    x_high = enc.h_hf;
    encodings.push_back(std::move(enc));
  }
  encodings.back().l_lf = encodings.back().l_lf + global_context(encodings.back().l_lf);

  torch::Tensor below;
  for (int s = cfg_.stages - 1; s >= 0; --s) {
    const auto decoded = decoders[static_cast<size_t>(s)]->as<DecoderStage>()->forward(
        encodings[static_cast<size_t>(s)], below);
    const auto up = F::interpolate(decoded, F::InterpolateFuncOptions()
                                                .scale_factor(std::vector<double>{2.0, 2.0})
                                                .mode(torch::kNearest));
    below = counted(nn::Conv2d(upsamplers->ptr<nn::Conv2dImpl>(static_cast<size_t>(s))), up);
  }
  return torch::clamp(x + counted(head, below), 0.0, 1.0);
}

torch::Tensor IFBlendImpl::global_context(const torch::Tensor& l_lf) {
  return counted(context_out, gcb(counted(context_in, l_lf)));
}

void IFBlendImpl::zero_init_context() {
  torch::NoGradGuard guard;
  context_out->weight.zero_();
  context_out->bias.zero_();
}

void IFBlendImpl::zero_init_head() {
  torch::NoGradGuard guard;
  head->weight.zero_();
  head->bias.zero_();
}

int64_t count_macs(const ModelConfig& cfg, int64_t h, int64_t w) {
  cfg.validate();
  const auto plans = plan_stages(cfg);
  const int64_t m = cfg.size_multiple();
  const int64_t hp = round_up(h, m);
  const int64_t wp = round_up(w, m);

  int64_t total = conv_macs(3, cfg.base_channels, 3, hp, wp);
  for (int s = 0; s < cfg.stages; ++s) {
    const auto& p = plans[static_cast<size_t>(s)];
    const int64_t ih = hp >> s;
    const int64_t iw = wp >> s;
    // Encoder LFB (second conv strided) and HFB.
    total += conv_macs(p.low_in, p.width, 3, ih, iw) + conv_macs(p.width, p.width, 3, ih / 2, iw / 2);
    total += conv_macs(p.high_in, p.width, 1, ih, iw) + int64_t{p.width} * cfg.num_experts +
             conv_macs(p.width, p.width, 3, ih, iw, p.width);
  }

  const int64_t dh = hp >> cfg.stages;
  const int64_t dw = wp >> cfg.stages;
  const int64_t deep = plans.back().l_lf;
  const int64_t ctx = plans.back().width;
  total += 2 * conv_macs(deep, ctx, 1, dh, dw);
  total += cfg.gcb_depth * (conv_macs(ctx, ctx, 7, dh, dw, ctx) +
                            conv_macs(ctx, 4 * ctx, 1, dh, dw) +
                            conv_macs(4 * ctx, ctx, 1, dh, dw));

  for (int s = 0; s < cfg.stages; ++s) {
    const auto& p = plans[static_cast<size_t>(s)];
    const int64_t rh = hp >> (s + 1);
    const int64_t rw = wp >> (s + 1);
    total += conv_macs(p.l_lf + p.below, p.width, 3, rh, rw) + conv_macs(p.width, p.width, 3, rh, rw);
    if (cfg.use_dwt_feats) {
      const int64_t ws = std::min<int64_t>({cfg.window_size, rh, rw});
      const int64_t ah = round_up(rh, ws);
      const int64_t aw = round_up(rw, ws);
      const int64_t d = p.width;
      const int64_t projections = 2 * p.width * d + 2 * p.f_hf * d  // q, v_h, k, v_f
                                  + d * p.width + d * p.f_hf        // out_h, out_f
                                  + (p.width + p.f_hf) * p.width;   // fuse
      total += projections * ah * aw + 3 * ws * ws * ah * aw * d;
    } else {
      total += conv_macs(p.width, p.width, 1, rh, rw) + int64_t{p.width} * cfg.num_experts +
               conv_macs(p.width, p.width, 3, rh, rw, p.width);
    }
    total += conv_macs(p.width, p.up_out, 3, 2 * rh, 2 * rw);
  }
  total += conv_macs(cfg.base_channels, 3, 3, hp, wp);
  return total;
}

int64_t count_parameters(torch::nn::Module& module) {
  int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

}  // namespace ifblend
