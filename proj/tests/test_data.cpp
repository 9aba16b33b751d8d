#include "ifblend/audit.hpp"
#include "ifblend/data.hpp"
#include "ifblend/errors.hpp"
#include "ifblend/image_io.hpp"
#include "ifblend/synthetic.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>

using namespace ifblend;
using ifblend::testing::TempDir;
using ifblend::testing::bit_equal;
using ifblend::testing::max_abs;
using torch::indexing::Slice;
namespace fs = std::filesystem;

namespace {

void write_pair(const fs::path& split, const std::string& stem, int h, int w, bool istd,
                uint64_t seed = 0) {
  torch::manual_seed(seed);
  const auto in_dir = split / (istd ? "A" : "input");
  const auto gt_dir = split / (istd ? "C" : "gt");
  fs::create_directories(in_dir);
  fs::create_directories(gt_dir);
  write_png(in_dir / (stem + ".png"), torch::rand({1, 3, h, w}));
  write_png(gt_dir / (stem + ".png"), torch::rand({1, 3, h, w}));
  if (istd) {
    fs::create_directories(split / "B");
    write_png(split / "B" / (stem + ".png"), (torch::rand({1, 1, h, w}) > 0.5).to(torch::kFloat));
  }
}

std::vector<std::string> ids_of(const std::vector<SampleDescriptor>& descs) {
  std::vector<std::string> ids;
  for (const auto& d : descs) ids.push_back(d.id);
  return ids;
}

std::string error_text(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ValidationError& e) {
    return e.what();
  }
  return {};
}

PairedSample ramp_sample(int h, int w) {
  PairedSample s;
  auto xs = torch::arange(w, torch::kFloat).div(w).view({1, 1, 1, w}).expand({1, 3, h, w});
  s.input = xs.contiguous();
  s.gt = (1.0 - xs).contiguous();
  s.mask = xs.index({Slice(), Slice(0, 1)}).gt(0.5).to(torch::kFloat).contiguous();
  return s;
}

// Zero-mean NCC over the overlap, by explicit loops.
double ncc_oracle(const torch::Tensor& ref, const torch::Tensor& moved, int dy, int dx) {
  const auto a = ref.to(torch::kDouble).contiguous();
  const auto b = moved.to(torch::kDouble).contiguous();
  auto aa = a.accessor<double, 2>();
  auto ba = b.accessor<double, 2>();
  const int64_t h = a.size(0);
  const int64_t w = a.size(1);
  std::vector<double> pa, pb;
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      const int64_t my = y + dy;
      const int64_t mx = x + dx;
      if (my < 0 || my >= h || mx < 0 || mx >= w) continue;
      pa.push_back(aa[y][x]);
      pb.push_back(ba[my][mx]);
    }
  }
  double ma = 0, mb = 0;
  for (size_t i = 0; i < pa.size(); ++i) {
    ma += pa[i];
    mb += pb[i];
  }
  ma /= static_cast<double>(pa.size());
  mb /= static_cast<double>(pb.size());
  double sab = 0, saa = 0, sbb = 0;
  for (size_t i = 0; i < pa.size(); ++i) {
    sab += (pa[i] - ma) * (pb[i] - mb);
    saa += (pa[i] - ma) * (pa[i] - ma);
    sbb += (pb[i] - mb) * (pb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("png round trip at 8 and 16 bits") {
  TempDir dir("png");
  torch::manual_seed(1);
  const auto x = torch::rand({1, 3, 9, 13});

  write_png(dir / "a8.png", x, 8);
  const auto a8 = read_png(dir / "a8.png");
  CHECK(a8.bit_depth == 8);
  CHECK(max_abs(a8.pixels, x) <= 0.5 / 255 + 1e-6);

  write_png(dir / "a16.png", x, 16);
  const auto a16 = read_png(dir / "a16.png");
  CHECK(a16.bit_depth == 16);
  CHECK(max_abs(a16.pixels, x) <= 0.5 / 65535 + 1e-6);
  // Re-encoding decoded values is exact.
  write_png(dir / "b16.png", a16.pixels, 16);
  CHECK(bit_equal(read_png(dir / "b16.png").pixels, a16.pixels));

  const auto info = read_png_info(dir / "a16.png");
  CHECK(info.width == 13);
  CHECK(info.height == 9);
  CHECK(info.channels == 3);
  CHECK(info.bit_depth == 16);

  write_png(dir / "g.png", x.index({Slice(), Slice(0, 1)}), 8);
  CHECK(read_png(dir / "g.png").pixels.size(1) == 1);

  CHECK_THROWS_AS(read_png(dir / "missing.png"), IoError);
  std::ofstream(dir / "junk.png") << "not a png";
  CHECK_THROWS_AS(read_png(dir / "junk.png"), IoError);
  CHECK_THROWS_AS(write_png(dir / "bad.png", x, 12), ConfigError);
}

TEST_CASE("read_dataset ambient6k layout ordering and metadata") {
  TempDir dir("ds");
  const auto split = dir.path() / "test";
  for (const auto* stem : {"c", "a", "b"}) write_pair(split, stem, 8, 10, false);
  fs::create_directories(split / "meta");
  std::ofstream(split / "meta" / "b.json") << R"({"scene_id": "kitchen", "lights": "2"})";

  const auto descs = read_dataset(dir.path(), Layout::kAmbient6k, Split::kTest);
  CHECK(ids_of(descs) == std::vector<std::string>{"a", "b", "c"});
  CHECK(descs[0].height == 8);
  CHECK(descs[0].width == 10);
  CHECK_FALSE(descs[0].mask.has_value());
  REQUIRE(descs[1].meta.has_value());

  const auto sample = load_sample(descs[1]);
  CHECK(sample.meta.scene_id == "kitchen");
  CHECK(sample.meta.source_paths.size() == 2);
  CHECK(load_sample(descs[0]).meta.scene_id == "a");

  CHECK_THROWS_AS(read_dataset(dir.path(), Layout::kAmbient6k, Split::kTrain), ValidationError);
  CHECK_THROWS_AS(read_dataset(dir / "nope", Layout::kAmbient6k, Split::kTest), ValidationError);
}

TEST_CASE("read_dataset flat root fallback and empty split") {
  TempDir dir("flat");
  write_pair(dir.path(), "x", 4, 4, false);
  CHECK(read_dataset(dir.path(), Layout::kAmbient6k, Split::kVal).size() == 1);

  TempDir empty("empty");
  fs::create_directories(empty / "train/input");
  fs::create_directories(empty / "train/gt");
  CHECK(read_dataset(empty.path(), Layout::kAmbient6k, Split::kTrain).empty());
}

TEST_CASE("read_dataset istd layout") {
  TempDir dir("istd");
  const auto split = dir.path() / "train";
  write_pair(split, "p2", 6, 6, true);
  write_pair(split, "p1", 6, 6, true);
  const auto descs = read_dataset(dir.path(), Layout::kIstd, Split::kTrain);
  REQUIRE(descs.size() == 2);
  CHECK(descs[0].id == "p1");
  REQUIRE(descs[0].mask.has_value());
  const auto sample = load_sample(descs[0]);
  CHECK(sample.mask.sizes() == std::vector<int64_t>{1, 1, 6, 6});

  fs::remove(split / "B" / "p2.png");
  const auto msg = error_text([&] { read_dataset(dir.path(), Layout::kIstd, Split::kTrain); });
  CHECK(msg.find("p2") != std::string::npos);
  CHECK(msg.find("mask") != std::string::npos);
}

TEST_CASE("read_dataset names unpaired and mismatched stems") {
  TempDir dir("bad");
  const auto split = dir.path() / "train";
  write_pair(split, "good", 8, 8, false);
  write_pair(split, "lonely", 8, 8, false);
  fs::remove(split / "gt" / "lonely.png");
  write_png(split / "gt" / "orphan.png", torch::rand({1, 3, 8, 8}));
  write_pair(split, "sized", 8, 8, false);
  write_png(split / "gt" / "sized.png", torch::rand({1, 3, 8, 6}));

  const auto msg = error_text([&] { read_dataset(dir.path(), Layout::kAmbient6k, Split::kTrain); });
  CHECK(msg.find("lonely") != std::string::npos);
  CHECK(msg.find("orphan") != std::string::npos);
  CHECK(msg.find("sized") != std::string::npos);
  CHECK(msg.find("good") == std::string::npos);
}

TEST_CASE("reader never yields an invalid pair from corrupted trees") {
  std::mt19937_64 rng(99);
  int raised = 0;
  int clean = 0;
  for (int trial = 0; trial < 40; ++trial) {
    TempDir dir("fuzz");
    const bool istd = trial % 2 == 1;
    const auto split = dir.path() / "test";
    for (int i = 0; i < 3; ++i) write_pair(split, "s" + std::to_string(i), 6, 7, istd, trial * 3 + i);
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(split)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    const int corruptions = static_cast<int>(rng() % 3);
    for (int c = 0; c < corruptions; ++c) {
      const auto& target = files[rng() % files.size()];
      switch (rng() % 5) {
        case 0:
          fs::remove(target);
          break;
        case 1: {  // truncate past the header
          if (!fs::exists(target)) break;
          const auto size = fs::file_size(target);
          fs::resize_file(target, std::min<uintmax_t>(size, 40));
          break;
        }
        case 2:
          std::ofstream(target, std::ios::trunc) << "garbage";
          break;
        case 3:
          write_png(target, torch::rand({1, 3, 5, 7}));
          break;
        default:
          write_png(target.parent_path() / "extra.png", torch::rand({1, 3, 6, 7}));
          break;
      }
    }
    try {
      const auto descs = read_dataset(dir.path(), istd ? Layout::kIstd : Layout::kAmbient6k,
                                      Split::kTest);
      for (const auto& d : descs) {
        try {
          const auto s = load_sample(d);
          CHECK(s.input.sizes() == s.gt.sizes());
          CHECK(s.input.size(1) == 3);
          if (s.has_mask()) {
            CHECK(s.mask.size(2) == s.input.size(2));
            CHECK(s.mask.size(3) == s.input.size(3));
          }
          ++clean;
        } catch (const Error&) {
          ++raised;
        }
      }
    } catch (const Error&) {
      ++raised;
    }
  }
  CHECK(raised > 0);
  CHECK(clean > 0);
}

TEST_CASE("load_sample expands gray to rgb and keeps bit depth") {
  TempDir dir("gray");
  fs::create_directories(dir / "test/input");
  fs::create_directories(dir / "test/gt");
  const auto g = torch::rand({1, 1, 5, 5});
  write_png(dir / "test/input/a.png", g, 16);
  write_png(dir / "test/gt/a.png", g, 16);
  const auto descs = read_dataset(dir.path(), Layout::kAmbient6k, Split::kTest);
  const auto s = load_sample(descs.at(0));
  CHECK(s.bit_depth == 16);
  REQUIRE(s.input.size(1) == 3);
  CHECK(torch::equal(s.input[0][0], s.input[0][2]));
}

TEST_CASE("sample_patch crops consistently") {
  const auto s = ramp_sample(12, 16);
  std::mt19937_64 rng(3);
  const auto full = sample_patch(s, 12, rng, false);
  const auto left = static_cast<int64_t>(std::lround(full.input[0][0][0][0].item<double>() * 16));
  CHECK(torch::equal(full.input, s.input.index({Slice(), Slice(), Slice(), Slice(left, left + 12)})));

  std::mt19937_64 r1(5);
  std::mt19937_64 r2(5);
  for (int i = 0; i < 10; ++i) {
    const auto a = sample_patch(s, 6, r1);
    const auto b = sample_patch(s, 6, r2);
    CHECK(torch::equal(a.input, b.input));
    CHECK(torch::equal(a.mask, b.mask));
    // gt = 1 - input and mask = input > 0.5 survive crop and flip together.
    CHECK(torch::allclose(a.gt, 1.0 - a.input));
    CHECK(torch::equal(a.mask, a.input.index({Slice(), Slice(0, 1)}).gt(0.5).to(torch::kFloat)));
  }

  PairedSample square = ramp_sample(8, 8);
  std::mt19937_64 r3(0);
  CHECK(torch::equal(sample_patch(square, 8, r3, false).input, square.input));

  CHECK_THROWS_AS(sample_patch(s, 13, rng), DimensionError);
  CHECK_THROWS_AS(sample_patch(s, 0, rng), DimensionError);
}

TEST_CASE("sample_patch windows cover both halves") {
  const auto s = ramp_sample(32, 32);
  std::mt19937_64 rng(11);
  int left = 0;
  int right = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto p = sample_patch(s, 8, rng, false);
    // The ramp value at the first column identifies the crop's left edge.
    const double x0 = p.input[0][0][0][0].item<double>() * 32.0;
    if (x0 + 4 < 16) {
      ++left;
    } else {
      ++right;
    }
  }
  MESSAGE("left " << left << " right " << right);
  CHECK(left >= 100);
  CHECK(right >= 100);
}

TEST_CASE("synthetic generator contracts") {
  SyntheticSceneSpec spec;
  spec.seed = 7;
  spec.height = 48;
  spec.width = 40;

  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  CHECK(bit_equal(a.input, b.input));
  CHECK(bit_equal(a.gt, b.gt));
  CHECK(bit_equal(a.mask, b.mask));
  CHECK(a.input.sizes() == std::vector<int64_t>{1, 3, 48, 40});

  spec.seed = 8;
  const auto c = generate_synthetic(spec);
  CHECK_FALSE(torch::equal(a.gt, c.gt));

  CHECK(a.gt.min().item<float>() >= 0.1F - 1e-6F);
  CHECK(a.gt.max().item<float>() <= 0.95F + 1e-6F);

  SyntheticSceneSpec flat;
  flat.num_lights = 1;
  flat.min_attenuation = 1.0;
  const auto f = generate_synthetic(flat);
  CHECK(torch::equal(f.input, f.gt));
  CHECK(f.mask.sum().item<float>() == 0.0F);

  SyntheticSceneSpec bad;
  bad.num_lights = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.num_lights = 2;
  bad.min_attenuation = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("synthetic pairs: attenuation only darkens and is smooth") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    SyntheticSceneSpec spec;
    spec.seed = seed;
    spec.num_lights = static_cast<int>(seed % 3) + 1;
    spec.penumbra_sigma = 1.0 + static_cast<double>(seed % 4);
    const auto pair = render_synthetic(spec);
    const auto& s = pair.sample;
    CHECK((s.input <= s.gt).all().item<bool>());
    // mask = 0 wherever input = gt exactly.
    const auto same = (s.input == s.gt).all(1, true);
    CHECK((s.mask.masked_select(same) == 0).all().item<bool>());
    CHECK(torch::equal(s.mask, (pair.attenuation < kShadowMaskThreshold).to(s.mask.dtype())));

    // A Gaussian-blurred convex indicator has gradient magnitude at most
    // sqrt(pi/2)/sigma; each light contributes at most (1 - min_attenuation)
    // of that. Finite differences of the sampled map stay below the same bound.
    const auto att = pair.attenuation[0][0];
    const auto gy = att.index({Slice(1, torch::indexing::None)}) - att.index({Slice(0, -1)});
    const auto gx = att.index({Slice(), Slice(1, torch::indexing::None)}) - att.index({Slice(), Slice(0, -1)});
    const double worst = std::max(gy.abs().max().item<double>(), gx.abs().max().item<double>());
    const double bound =
        spec.num_lights * (1.0 - spec.min_attenuation) * std::sqrt(M_PI / 2.0) / spec.penumbra_sigma;
    CHECK(worst <= bound);
  }
}

TEST_CASE("synthetic sets are reproducible") {
  SyntheticSetSpec set;
  set.count = 4;
  set.size = 32;
  const auto a = generate_synthetic_set(set);
  const auto b = generate_synthetic_set(set);
  REQUIRE(a.size() == 4);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(bit_equal(a[i].input, b[i].input));
    CHECK(synthetic_member_spec(set, static_cast<int>(i)).num_lights ==
          static_cast<int>(i % 3) + 1);
  }
  CHECK_FALSE(torch::equal(a[0].gt, a[1].gt));
}

TEST_CASE("estimate_shift agrees with an exhaustive NCC oracle") {
  torch::manual_seed(21);
  for (int trial = 0; trial < 6; ++trial) {
    const auto ref = torch::rand({20, 24}, torch::kDouble);
    const int dy = trial % 3 - 1;
    const int dx = trial - 2;
    const auto moved = torch::roll(ref, {dy, dx}, {0, 1}) + 0.05 * torch::rand({20, 24}, torch::kDouble);
    double best = -std::numeric_limits<double>::infinity();
    Shift oracle;
    for (int y = -3; y <= 3; ++y) {
      for (int x = -3; x <= 3; ++x) {
        const double v = ncc_oracle(ref, moved, y, x);
        if (v > best) {
          best = v;
          oracle = {y, x};
        }
      }
    }
    const auto est = estimate_shift(ref, moved, 3);
    CHECK(est == oracle);
    CHECK(est == Shift{dy, dx});
  }
  CHECK_THROWS_AS(estimate_shift(torch::rand({4, 4}), torch::rand({4, 5}), 1), ShapeError);
}

TEST_CASE("audit_pair diagnostics") {
  SyntheticSceneSpec spec;
  spec.seed = 3;
  spec.height = 96;
  spec.width = 96;
  const auto s = generate_synthetic(spec);

  const auto same = audit_pair("same", s.gt, s.gt);
  CHECK(same.shift == Shift{0, 0});
  CHECK(same.mean_delta == 0.0);
  CHECK(same.frac_brighter == 0.0);
  CHECK_FALSE(same.flagged);

  const auto shifted_gt = torch::roll(s.gt, {3}, {3});
  const auto moved = audit_pair("moved", s.gt, shifted_gt);
  CHECK(moved.shift == Shift{0, 3});
  CHECK(moved.misaligned);
  CHECK(moved.flagged);

  const auto brighter = audit_pair("bright", (s.gt + 0.3).clamp_max(1.0), s.gt);
  CHECK(brighter.frac_brighter > 0.5);
  CHECK(brighter.flagged);

  const auto dims = audit_pair("dims", s.gt, s.gt.index({Slice(), Slice(), Slice(0, 90)}));
  CHECK_FALSE(dims.dims_equal);
  CHECK(dims.flagged);
}

TEST_CASE("audit passes generated pairs and continues past IO failures") {
  TempDir dir("audit");
  SyntheticSetSpec set;
  set.count = 12;
  set.size = 64;
  const auto samples = generate_synthetic_set(set);
  fs::create_directories(dir / "input");
  fs::create_directories(dir / "gt");
  std::vector<SampleDescriptor> descs;
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto stem = "p" + std::to_string(i);
    SampleDescriptor d;
    d.id = stem;
    d.input = dir / ("input/" + stem + ".png");
    d.gt = dir / ("gt/" + stem + ".png");
    write_png(d.input, samples[i].input, 16);
    write_png(d.gt, samples[i].gt, 16);
    descs.push_back(d);
  }
  auto report = audit_pairs(descs);
  CHECK(report.pairs.size() == 12);
  CHECK(report.flagged_count() == 0);

  fs::remove(descs[4].gt);
  report = audit_pairs(descs);
  CHECK(report.pairs.size() == 12);
  CHECK(report.flagged_count() == 1);
  CHECK_FALSE(report.pairs[4].error.empty());
  CHECK(report.pairs[5].error.empty());
}
