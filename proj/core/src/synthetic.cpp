#include "ifblend/synthetic.hpp"

#include "ifblend/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace ifblend {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Uniform doubles from the raw engine output so results do not depend on the
/// standard library's distribution implementations.
class Random {
 public:
  explicit Random(std::uint64_t seed) : engine_(splitmix64(seed)) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int integer(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(engine_() % static_cast<std::uint64_t>(hi - lo + 1));
  }

 private:
  std::mt19937_64 engine_;
};

struct Plane {
  int h;
  int w;
  std::vector<double> v;
  Plane(int height, int width, double fill = 0.0)
      : h(height), w(width), v(static_cast<size_t>(height) * width, fill) {}
  double& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  double at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
};

Plane gaussian_blur(const Plane& src, double sigma) {
  if (sigma <= 0.0) return src;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double k = std::exp(-(i * i) / (2.0 * sigma * sigma));
    kernel[static_cast<size_t>(i + radius)] = k;
    sum += k;
  }
  for (auto& k : kernel) k /= sum;

  Plane tmp(src.h, src.w);
  Plane out(src.h, src.w);
  for (int y = 0; y < src.h; ++y) {
    for (int x = 0; x < src.w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += kernel[static_cast<size_t>(i + radius)] * src.at(y, std::clamp(x + i, 0, src.w - 1));
      }
      tmp.at(y, x) = acc;
    }
  }
  for (int y = 0; y < src.h; ++y) {
    for (int x = 0; x < src.w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += kernel[static_cast<size_t>(i + radius)] * tmp.at(std::clamp(y + i, 0, src.h - 1), x);
      }
      out.at(y, x) = acc;
    }
  }
  return out;
}

/// Binary map of a random convex polygon inscribed in a rotated ellipse.
Plane convex_occluder(Random& rng, int h, int w) {
  const double cy = rng.uniform(-0.1, 1.1) * h;
  const double cx = rng.uniform(-0.1, 1.1) * w;
  const double ry = rng.uniform(0.15, 0.45) * h;
  const double rx = rng.uniform(0.15, 0.45) * w;
  const double rot = rng.uniform(0.0, std::numbers::pi);
  const int vertices = rng.integer(3, 7);
  std::vector<double> angles(static_cast<size_t>(vertices));
  for (auto& a : angles) a = rng.uniform(0.0, 2.0 * std::numbers::pi);
  std::sort(angles.begin(), angles.end());

  std::vector<std::pair<double, double>> poly;  // (y, x), counter-clockwise in (x, y)
  for (double a : angles) {
    const double ey = ry * std::sin(a);
    const double ex = rx * std::cos(a);
    poly.emplace_back(cy + ex * std::sin(rot) + ey * std::cos(rot),
                      cx + ex * std::cos(rot) - ey * std::sin(rot));
  }

  Plane map(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double py = y + 0.5;
      const double px = x + 0.5;
      bool positive = false;
      bool negative = false;
      for (size_t i = 0; i < poly.size(); ++i) {
        const auto [y0, x0] = poly[i];
        const auto [y1, x1] = poly[(i + 1) % poly.size()];
        const double cross = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0);
        positive |= cross > 0.0;
        negative |= cross < 0.0;
      }
      map.at(y, x) = (positive && negative) ? 0.0 : 1.0;
    }
  }
  return map;
}

std::array<Plane, 3> render_scene(Random& rng, int h, int w) {
  std::array<Plane, 3> rgb{Plane(h, w), Plane(h, w), Plane(h, w)};
  for (auto& plane : rgb) {
    const double base = rng.uniform(0.35, 0.75);
    const double gy = rng.uniform(-0.25, 0.25);
    const double gx = rng.uniform(-0.25, 0.25);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        plane.at(y, x) = base + gy * ((y + 0.5) / h - 0.5) + gx * ((x + 0.5) / w - 0.5);
      }
    }
  }

  const int shapes = rng.integer(3, 6);
  for (int s = 0; s < shapes; ++s) {
    const bool ellipse = rng.uniform() < 0.5;
    const double cy = rng.uniform(0.0, 1.0) * h;
    const double cx = rng.uniform(0.0, 1.0) * w;
    const double ry = rng.uniform(0.05, 0.3) * h;
    const double rx = rng.uniform(0.05, 0.3) * w;
    const std::array<double, 3> color{rng.uniform(0.15, 0.9), rng.uniform(0.15, 0.9),
                                      rng.uniform(0.15, 0.9)};
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double dy = (y + 0.5 - cy) / ry;
        const double dx = (x + 0.5 - cx) / rx;
        const bool inside = ellipse ? dy * dy + dx * dx <= 1.0
                                    : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
        if (!inside) continue;
        for (int c = 0; c < 3; ++c) rgb[static_cast<size_t>(c)].at(y, x) = color[static_cast<size_t>(c)];
      }
    }
  }

  // Band-limited texture: a few low-frequency plane waves.
  constexpr int kWaves = 3;
  for (int k = 0; k < kWaves; ++k) {
    const double freq = rng.uniform(2.0, 6.0);
    const double theta = rng.uniform(0.0, std::numbers::pi);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double amplitude = rng.uniform(0.01, 0.04);
    const std::array<double, 3> tint{rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0),
                                     rng.uniform(0.5, 1.0)};
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double t = (std::cos(theta) * (x + 0.5) / w + std::sin(theta) * (y + 0.5) / h);
        const double wave = amplitude * std::sin(2.0 * std::numbers::pi * freq * t + phase);
        for (int c = 0; c < 3; ++c) rgb[static_cast<size_t>(c)].at(y, x) += tint[static_cast<size_t>(c)] * wave;
      }
    }
  }
  for (auto& plane : rgb) {
    for (auto& v : plane.v) v = std::clamp(v, 0.1, 0.95);
  }
  return rgb;
}

}  // namespace

void SyntheticSceneSpec::validate() const {
  if (height < 1 || width < 1) {
    throw ConfigError(fmt::format("synthetic size must be positive, got {}x{}", height, width));
  }
  if (num_lights < 1 || num_lights > 3) {
    throw ConfigError(fmt::format("num_lights must lie in [1, 3], got {}", num_lights));
  }
  if (!(penumbra_sigma >= 0.0)) throw ConfigError("penumbra_sigma must be >= 0");
  if (!(min_attenuation > 0.0 && min_attenuation <= 1.0)) {
    throw ConfigError(fmt::format("min_attenuation must lie in (0, 1], got {}", min_attenuation));
  }
}

SyntheticPair render_synthetic(const SyntheticSceneSpec& spec) {
  spec.validate();
  const int h = spec.height;
  const int w = spec.width;
  Random rng(spec.seed);
  const auto gt = render_scene(rng, h, w);

  Plane attenuation(h, w, 1.0);
  for (int light = 0; light < spec.num_lights; ++light) {
    const auto occluder = gaussian_blur(convex_occluder(rng, h, w), spec.penumbra_sigma);
    // Shadow floor of this light, between min_attenuation and halfway to 1.
    const double floor = spec.min_attenuation + 0.5 * (1.0 - spec.min_attenuation) * rng.uniform();
    for (size_t i = 0; i < attenuation.v.size(); ++i) {
      attenuation.v[i] *= 1.0 - (1.0 - floor) * occluder.v[i];
    }
  }

  auto gt_t = torch::empty({1, 3, h, w}, torch::kDouble);
  auto input_t = torch::empty({1, 3, h, w}, torch::kDouble);
  auto att_t = torch::from_blob(attenuation.v.data(), {1, 1, h, w}, torch::kDouble).clone();
  auto gt_a = gt_t.accessor<double, 4>();
  auto in_a = input_t.accessor<double, 4>();
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double g = gt[static_cast<size_t>(c)].at(y, x);
        gt_a[0][c][y][x] = g;
        in_a[0][c][y][x] = g * attenuation.at(y, x);
      }
    }
  }

  SyntheticPair pair;
  pair.sample.gt = gt_t.to(torch::kFloat);
  pair.sample.input = input_t.to(torch::kFloat);
  pair.sample.mask = (att_t < kShadowMaskThreshold).to(torch::kFloat);
  pair.sample.meta.scene_id = fmt::format("synth_{}", spec.seed);
  pair.sample.meta.lights = fmt::format("{} light(s), penumbra sigma {}", spec.num_lights,
                                        spec.penumbra_sigma);
  pair.attenuation = att_t;
  return pair;
}

PairedSample generate_synthetic(const SyntheticSceneSpec& spec) {
  return render_synthetic(spec).sample;
}

SyntheticSceneSpec synthetic_member_spec(const SyntheticSetSpec& set, int index) {
  SyntheticSceneSpec spec;
  spec.seed = splitmix64(set.seed * 0x100000001B3ULL + static_cast<std::uint64_t>(index));
  spec.height = set.size;
  spec.width = set.size;
  spec.num_lights = 1 + index % std::clamp(set.max_lights, 1, 3);
  spec.penumbra_sigma = set.penumbra_sigma;
  spec.min_attenuation = set.min_attenuation;
  return spec;
}

std::vector<PairedSample> generate_synthetic_set(const SyntheticSetSpec& set) {
  std::vector<PairedSample> out;
  out.reserve(static_cast<size_t>(std::max(set.count, 0)));
  for (int i = 0; i < set.count; ++i) {
    auto sample = generate_synthetic(synthetic_member_spec(set, i));
    sample.meta.scene_id = fmt::format("synth_{:04d}", i);
    out.push_back(std::move(sample));
  }
  return out;
}

}  // namespace ifblend
