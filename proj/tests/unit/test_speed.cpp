#include "doctest.h"

#include "cpn/error.hpp"
#include "cpn/speed.hpp"

using namespace cpn;
using namespace cpn::speed;

namespace {

/// Vertical crack along column x from the bottom edge up to row `tip`.
dic::CrackEdgeMap crack_to(std::size_t tip, std::size_t x = 10, std::size_t side = 64) {
  dic::CrackEdgeMap m(side, side);
  for (std::size_t y = tip; y < side; ++y) m.at(x, y) = 1;
  return m;
}

std::vector<double> times(std::size_t n, double fps) {
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<double>(i) / fps;
  return t;
}

}  // namespace

TEST_CASE("constant tip speed: 2 px per frame at 0.05 mm/px and 10 fps is 1 mm/s") {
  std::vector<dic::CrackEdgeMap> maps;
  for (std::size_t f = 0; f < 10; ++f) maps.push_back(crack_to(60 - 2 * f));
  const auto ts = times(10, 10.0);
  const CrackFrontTrace trace = trace_fronts(maps, ts, 0.05, Axis::kUp);
  const SpeedReport r = compute_speed(trace);
  CHECK(r.mean_mm_s == doctest::Approx(1.0));
  CHECK(r.path_length_mm == doctest::Approx(18 * 0.05));
  CHECK(r.interval_speeds_mm_s.size() == 9);
  for (double v : r.interval_speeds_mm_s) CHECK(v == doctest::Approx(1.0));
  CHECK(r.retreats.empty());
  for (const auto& s : r.frame_speed_mm_s) CHECK(s.has_value());
}

TEST_CASE("front extraction picks the notch-rooted component") {
  dic::CrackEdgeMap m = crack_to(40);
  m.at(30, 5) = 1;  // detached noise further up
  const auto f = extract_front(m, Axis::kUp);
  REQUIRE(f);
  CHECK(f->along == 40);
  CHECK(f->x == 10);
  // A wide tip: mean of the extremal pixels.
  m.at(11, 40) = m.at(12, 39) = 1;
  CHECK(extract_front(m, Axis::kUp)->x == 12);
  CHECK(extract_front(m, Axis::kUp)->y == 39);
  CHECK_FALSE(extract_front(dic::CrackEdgeMap(8, 8), Axis::kUp));
}

TEST_CASE("other axes") {
  dic::CrackEdgeMap m(32, 32);
  for (std::size_t x = 0; x < 20; ++x) m.at(x, 7) = 1;
  const auto f = extract_front(m, Axis::kRight);
  REQUIRE(f);
  CHECK(f->along == 19);
  CHECK(f->y == 7);
  CHECK(extract_front(m, Axis::kLeft)->along == 0);
  CHECK(parse_axis("down") == Axis::kDown);
  CHECK_THROWS_AS(parse_axis("sideways"), ShapeError);
}

TEST_CASE("stalls, retreats and gaps") {
  // Fronts: 50, 50, 46, 47 (retreat within tolerance), 40, none, 38.
  std::vector<dic::CrackEdgeMap> maps{crack_to(50), crack_to(50), crack_to(46), crack_to(47),
                                      crack_to(40), dic::CrackEdgeMap(64, 64), crack_to(38)};
  const auto ts = times(maps.size(), 10.0);
  const SpeedReport r = compute_speed(trace_fronts(maps, ts, 0.1, Axis::kUp));
  // Events at frames 0, 2, 4, 6.
  REQUIRE(r.interval_speeds_mm_s.size() == 3);
  CHECK(r.interval_speeds_mm_s[0] == doctest::Approx(4 * 0.1 / 0.2));
  CHECK(r.interval_speeds_mm_s[1] == doctest::Approx(6 * 0.1 / 0.2));
  CHECK(r.interval_speeds_mm_s[2] == doctest::Approx(2 * 0.1 / 0.2));
  CHECK(r.path_length_mm == doctest::Approx(1.2));
  CHECK(r.mean_mm_s == doctest::Approx((0.4 * 2 + 0.6 * 3 + 0.2 * 1) / 1.2));
  CHECK(r.retreats.empty());

  maps[3] = crack_to(52);
  const SpeedReport back = compute_speed(trace_fronts(maps, ts, 0.1, Axis::kUp));
  CHECK(back.retreats == std::vector<std::size_t>{3});
}

TEST_CASE("a stationary front has zero speed") {
  std::vector<dic::CrackEdgeMap> maps(4, crack_to(30));
  const auto ts = times(4, 5.0);
  const SpeedReport r = compute_speed(trace_fronts(maps, ts, 0.05, Axis::kUp));
  CHECK(r.mean_mm_s == 0.0);
  CHECK(r.path_length_mm == 0.0);
}

TEST_CASE("speed input checks") {
  std::vector<dic::CrackEdgeMap> maps{crack_to(30), dic::CrackEdgeMap(64, 64)};
  const auto ts = times(2, 10.0);
  CHECK_THROWS_AS(compute_speed(trace_fronts(maps, ts, 0.05, Axis::kUp)), DataError);
  maps[1] = crack_to(20);
  const std::vector<double> bad{0.0, 0.0};
  CHECK_THROWS_AS(compute_speed(trace_fronts(maps, bad, 0.05, Axis::kUp)), DataError);
  const std::vector<double> one{0.0};
  CHECK_THROWS_AS(trace_fronts(maps, one, 0.05, Axis::kUp), ShapeError);
}

TEST_CASE("speed report text") {
  std::vector<dic::CrackEdgeMap> maps{dic::CrackEdgeMap(64, 64), crack_to(50), crack_to(48)};
  const auto ts = times(3, 10.0);
  const auto trace = trace_fronts(maps, ts, 0.05, Axis::kUp);
  const std::string text = report_text(trace, compute_speed(trace));
  CHECK(text ==
        "frame, t_s, front_px, interval_mm_s\n"
        "0, 0.000000, -, -\n"
        "1, 0.100000, 50.00, 1.000000\n"
        "2, 0.200000, 48.00, 1.000000\n"
        "mean_mm_s 1.000000, path_length_mm 0.100000, retreats 0\n");
}

TEST_CASE("speed scales linearly with resolution and inversely with frame spacing") {
  std::vector<dic::CrackEdgeMap> maps;
  for (std::size_t f = 0; f < 6; ++f) maps.push_back(crack_to(60 - 3 * f - (f % 2)));
  const double base = compute_speed(trace_fronts(maps, times(6, 10.0), 0.05, Axis::kUp)).mean_mm_s;
  REQUIRE(base > 0);
  for (double k : {0.5, 2.0, 7.0}) {
    CHECK(compute_speed(trace_fronts(maps, times(6, 10.0), 0.05 * k, Axis::kUp)).mean_mm_s == doctest::Approx(base * k));
    // Frames k times further apart in time.
    CHECK(compute_speed(trace_fronts(maps, times(6, 10.0 / k), 0.05, Axis::kUp)).mean_mm_s == doctest::Approx(base / k));
  }
}

TEST_CASE("labels behind the front do not move it") {
  const dic::CrackEdgeMap m = crack_to(30);
  const auto before = extract_front(m, Axis::kUp);
  REQUIRE(before);
  dic::CrackEdgeMap branched = m;
  for (std::size_t x = 11; x < 20; ++x) branched.at(x, 50) = 1;  // side branch below the tip
  for (std::size_t y = 40; y < 64; ++y) branched.at(9, y) = 1;   // thickened flank
  const auto after = extract_front(branched, Axis::kUp);
  REQUIRE(after);
  CHECK(after->x == before->x);
  CHECK(after->y == before->y);
  CHECK(after->along == before->along);
}
