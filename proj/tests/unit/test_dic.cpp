#include "doctest.h"

#include <random>

#include "cpn/dic.hpp"
#include "cpn/error.hpp"
#include "cpn/synth.hpp"
#include "temp_dir.hpp"

using namespace cpn;
using namespace cpn::dic;

namespace {

ImageF speckle(std::size_t side, std::uint64_t seed) {
  data::SyntheticSpec spec;
  spec.width = spec.height = side;
  spec.speckle_density = 0.035;
  spec.crack_path = data::vertical_crack(static_cast<double>(side) / 2, side);
  spec.tip_rows = {static_cast<double>(side)};
  spec.label_size = side / 8;
  spec.seed = seed;
  return data::to_float(data::render_speckle(spec));
}

ImageF crop(const ImageF& src, int x0, int y0, std::size_t w, std::size_t h) {
  ImageF out(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      out.at(x, y) = src.at(static_cast<std::size_t>(x0) + x, static_cast<std::size_t>(y0) + y);
  return out;
}

CrackEdgeMap frames_map(bool set) {
  CrackEdgeMap m(1, 1);
  m.pixels[0] = set ? 1 : 0;
  return m;
}

std::vector<CrackEdgeMap> track(const std::vector<int>& frames_1based, std::size_t total) {
  std::vector<CrackEdgeMap> seq;
  for (std::size_t t = 1; t <= total; ++t)
    seq.push_back(frames_map(std::find(frames_1based.begin(), frames_1based.end(), static_cast<int>(t)) !=
                             frames_1based.end()));
  return seq;
}

std::vector<int> set_frames(const std::vector<CrackEdgeMap>& seq) {
  std::vector<int> out;
  for (std::size_t t = 0; t < seq.size(); ++t)
    if (seq[t].pixels[0]) out.push_back(static_cast<int>(t + 1));
  return out;
}

}  // namespace

TEST_CASE("integer translations are recovered exactly") {
  const ImageF big = speckle(192, 3);
  SubsetConfig cfg;
  for (auto [tx, ty] : {std::pair{3, -2}, std::pair{0, 0}, std::pair{-7, 5}, std::pair{8, 8}}) {
    const ImageF ref = crop(big, 32, 32, 128, 128);
    const ImageF def = crop(big, 32 - tx, 32 - ty, 128, 128);
    const DisplacementField f = compute_displacement_field(ref, def, cfg);
    std::size_t checked = 0;
    for (std::size_t r = 0; r < f.rows(); ++r)
      for (std::size_t c = 0; c < f.cols(); ++c) {
        const std::size_t i = f.index(r, c);
        const double mx = f.xs[c] + tx, my = f.ys[r] + ty;
        // Nodes whose true match leaves the image cannot be scored.
        if (mx - cfg.half() < 0 || my - cfg.half() < 0 || mx + cfg.half() >= 128 || my + cfg.half() >= 128) continue;
        REQUIRE(f.valid[i]);
        CHECK(f.u[i] == tx);
        CHECK(f.v[i] == ty);
        CHECK(f.quality[i] == doctest::Approx(1.0));
        ++checked;
      }
    CHECK(checked > 40);
  }
}

TEST_CASE("half-pixel shift is resolved to subpixel accuracy") {
  data::SyntheticSpec spec;
  spec.width = spec.height = 128;
  spec.speckle_density = 0.035;
  spec.crack_path = data::vertical_crack(64, 128);
  spec.tip_rows = {128.0};  // uncracked
  spec.translation_x = 0.5;
  spec.translation_y = -0.5;
  spec.seed = 8;
  const auto frames = data::synth_generate(spec);
  const DisplacementField f = compute_displacement_field(data::to_float(frames[0].pair.reference),
                                                         data::to_float(frames[0].pair.deformed), SubsetConfig{});
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    REQUIRE(f.valid[i]);
    INFO("node ", i, " u ", f.u[i], " v ", f.v[i], " q ", f.quality[i]);
    CHECK(std::abs(f.u[i] - 0.5) < 0.2);
    CHECK(std::abs(f.v[i] + 0.5) < 0.2);
  }
}

TEST_CASE("ZNCC ignores affine intensity changes") {
  const ImageF big = speckle(96, 4);
  const ImageF ref = crop(big, 16, 16, 64, 64);
  ImageF def = crop(big, 14, 17, 64, 64);
  for (auto& p : def.pixels) p = 0.6f * p + 30.0f;
  SubsetConfig cfg;
  cfg.subset_size = 21;
  const MatchResult m = match_subset(ref, def, 32, 32, cfg);
  REQUIRE(m.valid);
  CHECK(m.u == 2);
  CHECK(m.v == -1);
  CHECK(m.quality > 0.999);
}

TEST_CASE("flat subsets are invalid") {
  const ImageF flat(64, 64, 100.0f);
  const MatchResult m = match_subset(flat, flat, 32, 32, SubsetConfig{});
  CHECK_FALSE(m.valid);
}

TEST_CASE("subsets outside the image are rejected") {
  const ImageF img = speckle(64, 1);
  CHECK_THROWS_AS(match_subset(img, img, 5, 32, SubsetConfig{}), ShapeError);
  CHECK_THROWS_AS(compute_displacement_field(img, img, SubsetConfig{}, Region{0, 0, 20, 64}), ShapeError);
  CHECK_THROWS_AS(compute_displacement_field(img, img, SubsetConfig{}, Region{0, 0, 80, 64}), ShapeError);
  SubsetConfig even;
  even.subset_size = 22;
  CHECK_THROWS_AS(even.validate(), ShapeError);
}

TEST_CASE("grid coordinates keep every subset inside the region") {
  SubsetConfig cfg;  // K = 23, spacing 11
  const auto xs = grid_coordinates(0, 100, cfg);
  REQUIRE_FALSE(xs.empty());
  CHECK(xs.front() == 11);
  for (std::size_t i = 1; i < xs.size(); ++i) CHECK(xs[i] - xs[i - 1] == 11);
  CHECK(xs.back() + 11 < 100);
  CHECK(xs.back() + 11 + 11 >= 100);
  const auto shifted = grid_coordinates(10, 110, cfg);
  CHECK(shifted.front() == 21);
}

TEST_CASE("shape function") {
  const Point2 p = shape_function_map({12, 7}, {10, 10}, 1.0, -2.0, 0, 0, 0, 0);
  CHECK(p.x == 13);
  CHECK(p.y == 5);
  const Point2 q = shape_function_map({12, 7}, {10, 10}, 1.0, -2.0, 0.1, 0.2, -0.3, 0.4);
  CHECK(q.x == doctest::Approx(12 + 1 + 0.1 * 2 + 0.2 * -3));
  CHECK(q.y == doctest::Approx(7 - 2 - 0.3 * 2 + 0.4 * -3));
}

TEST_CASE("labelling marks both nodes of a jump at their displaced positions") {
  DisplacementField f;
  f.xs = {10, 20, 30, 40};
  f.ys = {5, 15};
  f.spacing = 10;
  // Row 0: jump of 3 between columns 1 and 2. Row 1: smooth, one invalid node.
  f.u = {0, 0, 3, 3, 0, 0.1, 0.2, 0.3};
  f.v = {1, 1, 1, 1, 0, 0, 0, 0};
  f.quality.assign(8, 1.0);
  f.valid = {1, 1, 1, 1, 1, 1, 0, 1};
  const GradientGrid g = displacement_gradient(f);
  REQUIRE(g.rows == 2);
  REQUIRE(g.gaps == 3);
  CHECK(g.ux[1] == 3.0);
  CHECK(g.valid[4 + 1] == 0);
  CHECK(g.valid[4 + 2] == 0);
  const CrackEdgeMap m = label_crack_edges(g, f, 0.5, 50, 30);
  CHECK(m.count() == 2);
  CHECK(m.at(20, 6) == 1);
  CHECK(m.at(33, 6) == 1);
  CHECK_THROWS_AS(label_crack_edges(g, f, 0.0, 50, 30), ShapeError);
}

TEST_CASE("temporal correction reproduces the two rules") {
  // Set only in frame 3 of 10, n = 3: cleared.
  CHECK(set_frames(temporal_consistency_correct(track({3}, 10), 3)).empty());
  // Set in 2-4 and 6-8 but not 5, n = 2: set in 5.
  const auto filled = set_frames(temporal_consistency_correct(track({2, 3, 4, 6, 7, 8}, 10), 2));
  CHECK(std::find(filled.begin(), filled.end(), 5) != filled.end());
  CHECK(filled == std::vector<int>{2, 3, 4, 5, 6, 7, 8});
  // Monotone growth is a fixed point.
  const auto grow = track({4, 5, 6, 7, 8, 9, 10}, 10);
  CHECK(temporal_consistency_correct(grow, 3) == grow);
  // Too close to the end to judge: kept.
  CHECK(set_frames(temporal_consistency_correct(track({9}, 10), 3)) == std::vector<int>{9});
  CHECK_THROWS_AS(temporal_consistency_correct(grow, 0), ShapeError);
}

TEST_CASE("temporal correction is idempotent") {
  std::mt19937_64 rng(77);
  for (int it = 0; it < 200; ++it) {
    const std::size_t frames = 4 + rng() % 12;
    const int n = 1 + static_cast<int>(rng() % 3);
    std::vector<CrackEdgeMap> seq;
    for (std::size_t t = 0; t < frames; ++t) {
      CrackEdgeMap m(4, 3);
      for (auto& p : m.pixels) p = (rng() % 100) < 45 ? 1 : 0;
      seq.push_back(m);
    }
    const auto once = temporal_consistency_correct(seq, n);
    const auto twice = temporal_consistency_correct(once, n);
    REQUIRE(once == twice);
  }
}

TEST_CASE("label downsampling is block max-pooling") {
  std::mt19937_64 rng(5);
  CrackEdgeMap m(70, 35, 0.05);
  for (int i = 0; i < 40; ++i) m.at(rng() % 70, rng() % 35) = 1;
  const CrackEdgeMap d = downsample_label_map(m, 16, 8);
  REQUIRE(d.width == 16);
  REQUIRE(d.height == 8);
  // Blocks of 4 x 4, crop (70 - 64) / 2 = 3 columns and (35 - 32) / 2 = 1 row.
  CHECK(d.mm_per_px == doctest::Approx(0.2));
  for (std::size_t by = 0; by < 8; ++by)
    for (std::size_t bx = 0; bx < 16; ++bx) {
      std::uint8_t any = 0;
      for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) any |= m.at(3 + bx * 4 + x, 1 + by * 4 + y);
      CHECK(d.at(bx, by) == any);
    }
  CHECK_THROWS_AS(downsample_label_map(m, 80, 8), ShapeError);
}

TEST_CASE("field and edge map files round-trip") {
  cpn::testing::TempDir dir;
  DisplacementField f;
  f.xs = {11, 22, 33};
  f.ys = {11, 22};
  f.spacing = 11;
  f.u = {0.1, 1.0 / 3.0, -2.5, 0, 1e-17, 7};
  f.v = {1, 2, 3, 4, 5, 6};
  f.quality = {0.9, 0.8, 0.7, 0.6, 0.5, 0.4};
  f.valid = {1, 1, 0, 1, 1, 1};
  write_displacement_field(dir / "f.txt", f);
  const DisplacementField g = read_displacement_field(dir / "f.txt");
  CHECK(g.xs == f.xs);
  CHECK(g.ys == f.ys);
  CHECK(g.u == f.u);
  CHECK(g.v == f.v);
  CHECK(g.quality == f.quality);
  CHECK(g.valid == f.valid);

  CrackEdgeMap m(9, 4);
  m.at(2, 1) = m.at(8, 3) = 1;
  write_edge_map(dir / "m.pgm", m);
  CHECK(read_edge_map(dir / "m.pgm") == m);
}
