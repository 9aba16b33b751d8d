#pragma once

#include "ifblend/data.hpp"

#include <cstdint>
#include <vector>

namespace ifblend {

/// Parameters of one procedurally generated shadowed/evenly-lit pair.
struct SyntheticSceneSpec {
  std::uint64_t seed = 0;
  int height = 64;
  int width = 64;
  int num_lights = 2;            ///< occluders, one per light, in [1, 3]
  double penumbra_sigma = 2.0;   ///< Gaussian blur of the occluder edges, pixels
  double min_attenuation = 0.35; ///< darkest multiplicative factor of a single shadow, (0, 1]

  void validate() const;
};

struct SyntheticPair {
  PairedSample sample;
  torch::Tensor attenuation;  ///< (1, 1, H, W) float64 product of all light attenuations
};

/// Procedural scene (smooth gradient background, colored rectangles/ellipses
/// and a band-limited texture, clamped to [0.1, 0.95]) darkened by one blurred
/// convex occluder per light. input = gt * prod(a_i); mask = prod(a_i) < 0.98.
/// Bit-identical for equal specs.
SyntheticPair render_synthetic(const SyntheticSceneSpec& spec);

PairedSample generate_synthetic(const SyntheticSceneSpec& spec);

/// Mask threshold on the attenuation product.
inline constexpr double kShadowMaskThreshold = 0.98;

struct SyntheticSetSpec {
  int count = 8;
  int size = 64;
  std::uint64_t seed = 1;
  int max_lights = 3;
  double penumbra_sigma = 2.0;
  double min_attenuation = 0.35;
};

/// Scene spec of the i-th member of a set: seeds are derived by splitmix64 and
/// light counts cycle through [1, max_lights].
SyntheticSceneSpec synthetic_member_spec(const SyntheticSetSpec& set, int index);

std::vector<PairedSample> generate_synthetic_set(const SyntheticSetSpec& set);

}  // namespace ifblend
