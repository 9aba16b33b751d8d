#include "ifblend/errors.hpp"
#include "ifblend/freq.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace ifblend;
using ifblend::testing::gradient_check;
using ifblend::testing::max_abs;

namespace {

// Separable 1D Haar applied as B = H X H^T per 2x2 block, H = [[1, 1], [1, -1]] / sqrt(2).
// B(0,0) = LL, B(0,1) = HL (column detail), B(1,0) = LH (row detail), B(1,1) = HH.
std::array<double, 4> haar_oracle(double a, double b, double c, double d) {
  const double r = 1.0 / std::sqrt(2.0);
  const double h[2][2] = {{r, r}, {r, -r}};
  const double x[2][2] = {{a, b}, {c, d}};
  double t[2][2] = {};
  double out[2][2] = {};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k) t[i][j] += h[i][k] * x[k][j];
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k) out[i][j] += t[i][k] * h[j][k];
  return {out[0][0], out[1][0], out[0][1], out[1][1]};  // LL, LH, HL, HH
}

}  // namespace

TEST_CASE("haar_dwt worked 2x2 example") {
  const auto x = torch::tensor({1.0F, 2.0F, 3.0F, 4.0F}).view({1, 1, 2, 2});
  const auto bands = haar_dwt(x);
  CHECK(bands.ll.item<float>() == doctest::Approx(5.0));
  CHECK(bands.high[0][0][0][0].item<float>() == doctest::Approx(-2.0));  // LH
  CHECK(bands.high[0][1][0][0].item<float>() == doctest::Approx(-1.0));  // HL
  CHECK(bands.high[0][2][0][0].item<float>() == doctest::Approx(0.0));   // HH
  const auto ref = haar_oracle(1, 2, 3, 4);
  CHECK(ref[0] == doctest::Approx(5.0));
  CHECK(ref[1] == doctest::Approx(-2.0));
  CHECK(ref[2] == doctest::Approx(-1.0));
  CHECK(ref[3] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("haar_dwt matches the tensor-product oracle on every block") {
  torch::manual_seed(3);
  const auto x = torch::rand({2, 3, 8, 10}, torch::kDouble);
  const auto bands = haar_dwt(x);
  auto acc = x.accessor<double, 4>();
  auto ll = bands.ll.accessor<double, 4>();
  auto hi = bands.high.accessor<double, 4>();
  double worst = 0.0;
  for (int n = 0; n < 2; ++n) {
    for (int c = 0; c < 3; ++c) {
      for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 5; ++j) {
          const auto ref = haar_oracle(acc[n][c][2 * i][2 * j], acc[n][c][2 * i][2 * j + 1],
                                       acc[n][c][2 * i + 1][2 * j], acc[n][c][2 * i + 1][2 * j + 1]);
          worst = std::max(worst, std::abs(ll[n][c][i][j] - ref[0]));
          for (int band = 0; band < 3; ++band) {
            worst = std::max(worst, std::abs(hi[n][band * 3 + c][i][j] - ref[band + 1]));
          }
        }
      }
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("haar_dwt constant images") {
  const auto zero = haar_dwt(torch::zeros({1, 2, 4, 4}));
  CHECK(zero.ll.abs().max().item<float>() == 0.0F);
  CHECK(zero.high.abs().max().item<float>() == 0.0F);
  const auto c = haar_dwt(torch::full({1, 1, 6, 4}, 0.3, torch::kDouble));
  CHECK(max_abs(c.ll, torch::full_like(c.ll, 0.6)) < 1e-15);
  CHECK(c.high.abs().max().item<double>() == 0.0);
  CHECK(c.high.size(1) == 3);

  FrequencyBands bands{torch::full({1, 1, 3, 3}, 2 * 0.25, torch::kDouble),
                       torch::zeros({1, 3, 3, 3}, torch::kDouble)};
  const auto back = haar_idwt(bands);
  CHECK(back.sizes() == torch::IntArrayRef({1, 1, 6, 6}));
  CHECK(max_abs(back, torch::full_like(back, 0.25)) < 1e-15);
}

TEST_CASE("haar_dwt rejects odd dims naming the axis") {
  try {
    haar_dwt(torch::zeros({1, 1, 5, 4}));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("height") != std::string::npos);
  }
  try {
    haar_dwt(torch::zeros({1, 1, 4, 7}));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("width") != std::string::npos);
  }
  CHECK_THROWS_AS(haar_dwt(torch::zeros({4, 4})), ShapeError);
}

TEST_CASE("haar_idwt requires three detail bands per channel") {
  FrequencyBands bad{torch::zeros({1, 2, 3, 3}), torch::zeros({1, 5, 3, 3})};
  CHECK_THROWS_AS(haar_idwt(bad), ShapeError);
}

TEST_CASE("haar round trip and energy") {
  torch::manual_seed(11);
  const auto x = torch::randn({1, 1, 8, 8}, torch::kDouble);
  const auto bands = haar_dwt(x);
  CHECK(max_abs(haar_idwt(bands), x) < 1e-10);
  const double energy = x.pow(2).sum().item<double>();
  const double band_energy =
      bands.ll.pow(2).sum().item<double>() + bands.high.pow(2).sum().item<double>();
  CHECK(std::abs(energy - band_energy) / energy < 1e-12);

  for (int i = 0; i < 10; ++i) {
    const auto xf = torch::rand({2, 3, 2 * (i + 1), 4 + 2 * i});
    CHECK(max_abs(haar_idwt(haar_dwt(xf)), xf) < 1e-5);
  }
}

TEST_CASE("lowhigh_split analytic and constant cases") {
  const auto x = torch::tensor({1.0F, 2.0F, 3.0F, 4.0F}).view({1, 1, 2, 2});
  const auto split = lowhigh_split(x, 2, 2);
  CHECK(split.low.item<float>() == doctest::Approx(2.5));
  CHECK(split.high.item<float>() == doctest::Approx(4.0));

  const auto c = torch::full({1, 2, 8, 8}, 0.7F);
  for (int k : {1, 2, 3, 5}) {
    for (int s : {1, 2}) {
      const auto out = lowhigh_split(c, k, s);
      CHECK(max_abs(out.low, torch::full_like(out.low, 0.7F)) < 1e-6);
      CHECK(max_abs(out.high, torch::full_like(out.high, 0.7F)) < 1e-6);
      CHECK(out.low.size(2) == 8 / s);
    }
  }
  const auto r = torch::rand({1, 3, 6, 6});
  const auto id = lowhigh_split(r, 1, 1);
  CHECK(torch::equal(id.low, r));
  CHECK(torch::equal(id.high, r));
}

TEST_CASE("lowhigh_split against a brute-force window scan") {
  torch::manual_seed(5);
  const auto x = torch::rand({1, 1, 16, 16}, torch::kDouble);
  const auto out = lowhigh_split(x, 2, 2);
  auto acc = x.accessor<double, 4>();
  double worst = 0.0;
  bool ordered = true;
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 8; ++j) {
      double sum = 0.0;
      double mx = -1e300;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          const double v = acc[0][0][2 * i + dy][2 * j + dx];
          sum += v;
          mx = std::max(mx, v);
        }
      }
      const double low = out.low[0][0][i][j].item<double>();
      const double high = out.high[0][0][i][j].item<double>();
      worst = std::max({worst, std::abs(low - sum / 4), std::abs(high - mx)});
      ordered = ordered && low <= high;
    }
  }
  CHECK(worst < 1e-15);
  CHECK(ordered);

  const auto big = lowhigh_split(torch::rand({2, 4, 12, 10}), 3, 1);
  CHECK((big.low <= big.high).all().item<bool>());
}

TEST_CASE("lowhigh_split residual mode and argument errors") {
  torch::manual_seed(9);
  const auto x = torch::rand({1, 2, 8, 8});
  const auto plain = lowhigh_split(x, 2, 2);
  const auto residual = lowhigh_split(x, 2, 2, HighPassMode::kResidual);
  CHECK(torch::equal(residual.low, plain.low));
  CHECK(max_abs(residual.high, plain.high - plain.low) < 1e-7);
  CHECK(parse_high_pass_mode("residual") == HighPassMode::kResidual);
  CHECK(to_string(HighPassMode::kMaxPool) == "maxpool");
  CHECK_THROWS_AS(parse_high_pass_mode("median"), ConfigError);
  CHECK_THROWS_AS(lowhigh_split(x, 0, 1), ConfigError);
  CHECK_THROWS_AS(lowhigh_split(x, 2, 3), ConfigError);
  CHECK_THROWS_AS(lowhigh_split(torch::rand({1, 1, 7, 8}), 2, 2), DimensionError);
}

TEST_CASE("srgb_to_lab endpoints and colorimetry oracle") {
  const auto white = srgb_to_lab(torch::ones({1, 3, 1, 1}, torch::kDouble));
  CHECK(white[0][0][0][0].item<double>() == doctest::Approx(100.0).epsilon(1e-6));
  CHECK(std::abs(white[0][1][0][0].item<double>()) < 0.01);
  CHECK(std::abs(white[0][2][0][0].item<double>()) < 0.01);
  const auto black = srgb_to_lab(torch::zeros({1, 3, 1, 1}, torch::kDouble));
  CHECK(std::abs(black[0][0][0][0].item<double>()) < 1e-9);

  // Reference values from scikit-image rgb2lab (D65, 2 degree observer).
  const auto gray = srgb_to_lab(torch::full({1, 3, 1, 1}, 0.5, torch::kDouble));
  CHECK(std::abs(gray[0][0][0][0].item<double>() - 53.38896474111432) < 0.05);
  CHECK(std::abs(gray[0][0][0][0].item<double>() - 53.38896474111432) < 1e-3);

  const auto px = torch::tensor({0.2, 0.4, 0.6, 0.9, 0.1, 0.3}, torch::kDouble)
                      .view({2, 3}).t().contiguous().view({1, 3, 1, 2});
  const auto lab = srgb_to_lab(px);
  const double expected[2][3] = {{42.008000589382185, -0.15404119847206577, -32.842897418997154},
                                 {49.485585928223145, 73.2156120260789, 27.091188827590518}};
  for (int p = 0; p < 2; ++p) {
    for (int c = 0; c < 3; ++c) {
      CHECK(std::abs(lab[0][c][0][p].item<double>() - expected[p][c]) < 5e-3);
    }
  }

  const auto out_of_range = srgb_to_lab(torch::full({1, 3, 1, 1}, 1.5, torch::kDouble));
  CHECK(max_abs(out_of_range, white) < 1e-12);
  CHECK_THROWS_AS(srgb_to_lab(torch::zeros({1, 2, 2, 2})), ShapeError);
}

TEST_CASE("srgb_to_lab L is monotone on grays") {
  const auto g = torch::linspace(0.0, 1.0, 101, torch::kDouble);
  const auto img = g.view({1, 1, 1, 101}).expand({1, 3, 1, 101}).contiguous();
  const auto l = srgb_to_lab(img)[0][0][0];
  CHECK((l.slice(0, 1) > l.slice(0, 0, -1)).all().item<bool>());
}

TEST_CASE("frequency kernels pass finite-difference gradient checks") {
  torch::manual_seed(21);
  const auto w = torch::randn({1, 2, 4, 4}, torch::kDouble);
  const auto wb = torch::randn({1, 8, 2, 2}, torch::kDouble);
  const auto x = torch::rand({1, 2, 4, 4}, torch::kDouble);
  CHECK(gradient_check(
            [&](const torch::Tensor& t) {
              const auto b = haar_dwt(t);
              return (torch::cat({b.ll, b.high}, 1) * wb).sum();
            },
            x) < 1e-3);
  CHECK(gradient_check([&](const torch::Tensor& t) { return (lowhigh_split(t, 3, 1).low * w).sum(); },
                       x) < 1e-3);
  // Distinct values keep max pooling away from ties.
  const auto distinct = torch::randperm(32, torch::kDouble).view({1, 2, 4, 4}) / 32.0;
  CHECK(gradient_check([&](const torch::Tensor& t) { return (lowhigh_split(t, 3, 1).high * w).sum(); },
                       distinct) < 1e-3);
  const auto rgb = torch::rand({1, 3, 4, 4}, torch::kDouble) * 0.8 + 0.1;
  const auto wl = torch::randn({1, 3, 4, 4}, torch::kDouble);
  CHECK(gradient_check([&](const torch::Tensor& t) { return (srgb_to_lab(t) * wl).sum(); }, rgb) <
        1e-3);
}
