#include "cpn/speed.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "cpn/error.hpp"

namespace cpn::speed {

Axis parse_axis(std::string_view name) {
  if (name == "up") return Axis::kUp;
  if (name == "down") return Axis::kDown;
  if (name == "left") return Axis::kLeft;
  if (name == "right") return Axis::kRight;
  throw ShapeError("unknown propagation axis '" + std::string(name) + "'");
}

namespace {

/// Larger is further from the notch.
double progress(Axis axis, double x, double y) {
  switch (axis) {
    case Axis::kUp: return -y;
    case Axis::kDown: return y;
    case Axis::kLeft: return -x;
    case Axis::kRight: return x;
  }
  return 0.0;
}

}  // namespace

std::optional<FrontPoint> extract_front(const dic::CrackEdgeMap& map, Axis axis) {
  const std::size_t w = map.width, h = map.height;
  std::vector<int> label(w * h, -1);
  std::vector<std::size_t> stack;
  struct Component {
    double reach;  // least progress of any pixel (closest to the notch)
    double best;   // most progress
    std::vector<std::size_t> front;
  };
  std::vector<Component> comps;
  for (std::size_t start = 0; start < w * h; ++start) {
    if (!map.pixels[start] || label[start] >= 0) continue;
    const int id = static_cast<int>(comps.size());
    Component c{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(), {}};
    label[start] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      const long px = static_cast<long>(p % w), py = static_cast<long>(p / w);
      const double pr = progress(axis, static_cast<double>(px), static_cast<double>(py));
      c.reach = std::min(c.reach, pr);
      if (pr > c.best) {
        c.best = pr;
        c.front.clear();
      }
      if (pr == c.best) c.front.push_back(p);
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const long nx = px + dx, ny = py + dy;
          if (nx < 0 || ny < 0 || nx >= static_cast<long>(w) || ny >= static_cast<long>(h)) continue;
          const std::size_t q = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
          if (map.pixels[q] && label[q] < 0) {
            label[q] = id;
            stack.push_back(q);
          }
        }
    }
    comps.push_back(std::move(c));
  }
  if (comps.empty()) return std::nullopt;
  const Component* root = &comps[0];
  for (const auto& c : comps)
    if (c.reach < root->reach || (c.reach == root->reach && c.best > root->best)) root = &c;
  FrontPoint f;
  for (std::size_t p : root->front) {
    f.x += static_cast<double>(p % w);
    f.y += static_cast<double>(p / w);
  }
  f.x /= static_cast<double>(root->front.size());
  f.y /= static_cast<double>(root->front.size());
  f.along = (axis == Axis::kUp || axis == Axis::kDown) ? f.y : f.x;
  return f;
}

CrackFrontTrace trace_fronts(std::span<const dic::CrackEdgeMap> maps, std::span<const double> timestamps_s,
                             double mm_per_px, Axis axis) {
  if (maps.size() != timestamps_s.size())
    throw ShapeError(std::to_string(maps.size()) + " maps but " + std::to_string(timestamps_s.size()) + " timestamps");
  CrackFrontTrace t;
  t.mm_per_px = mm_per_px;
  t.axis = axis;
  t.timestamps_s.assign(timestamps_s.begin(), timestamps_s.end());
  t.fronts.resize(maps.size());
  const long n = static_cast<long>(maps.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) t.fronts[static_cast<std::size_t>(i)] = extract_front(maps[static_cast<std::size_t>(i)], axis);
  return t;
}

SpeedReport compute_speed(const CrackFrontTrace& trace, double tolerance_px) {
  if (trace.fronts.size() != trace.timestamps_s.size()) throw ShapeError("trace fronts and timestamps differ in length");
  if (!(trace.mm_per_px > 0)) throw ShapeError("resolution must be positive");
  for (std::size_t i = 1; i < trace.timestamps_s.size(); ++i)
    if (!(trace.timestamps_s[i] > trace.timestamps_s[i - 1])) throw DataError("timestamps must increase strictly");

  std::vector<std::size_t> with_front;
  for (std::size_t i = 0; i < trace.fronts.size(); ++i)
    if (trace.fronts[i]) with_front.push_back(i);
  if (with_front.size() < 2) throw DataError("speed needs at least two frames with a crack front");

  SpeedReport r;
  r.frame_speed_mm_s.assign(trace.fronts.size(), std::nullopt);
  auto prog = [&](const FrontPoint& p) { return progress(trace.axis, p.x, p.y); };

  // Events: the first front, then every frame where the front advances.
  std::vector<std::size_t> events{with_front.front()};
  FrontPoint current = *trace.fronts[with_front.front()];
  for (std::size_t k = 1; k < with_front.size(); ++k) {
    const std::size_t f = with_front[k];
    const double adv = prog(*trace.fronts[f]) - prog(current);
    if (adv > 0) {
      events.push_back(f);
      current = *trace.fronts[f];
    } else if (adv < -tolerance_px) {
      r.retreats.push_back(f);
    }
  }

  double weighted = 0;
  if (events.size() == 1) {
    r.interval_speeds_mm_s.push_back(0.0);
    r.interval_lengths_mm.push_back(0.0);
    for (std::size_t f = with_front.front(); f <= with_front.back(); ++f) r.frame_speed_mm_s[f] = 0.0;
  }
  for (std::size_t k = 0; k + 1 < events.size(); ++k) {
    const FrontPoint& a = *trace.fronts[events[k]];
    const FrontPoint& b = *trace.fronts[events[k + 1]];
    const double len = std::hypot(b.x - a.x, b.y - a.y) * trace.mm_per_px;
    const double dt = trace.timestamps_s[events[k + 1]] - trace.timestamps_s[events[k]];
    const double v = len / dt;
    r.interval_speeds_mm_s.push_back(v);
    r.interval_lengths_mm.push_back(len);
    r.path_length_mm += len;
    weighted += len * v;
    for (std::size_t f = (k == 0 ? events[0] : events[k] + 1); f <= events[k + 1]; ++f) r.frame_speed_mm_s[f] = v;
  }
  r.mean_mm_s = r.path_length_mm > 0 ? weighted / r.path_length_mm : 0.0;
  return r;
}

std::string report_text(const CrackFrontTrace& trace, const SpeedReport& report) {
  std::string s = "frame, t_s, front_px, interval_mm_s\n";
  char buf[160];
  for (std::size_t i = 0; i < trace.fronts.size(); ++i) {
    const std::string front = trace.fronts[i] ? [&] {
      char b[32];
      std::snprintf(b, sizeof b, "%.2f", trace.fronts[i]->along);
      return std::string(b);
    }() : std::string("-");
    const std::string speed = report.frame_speed_mm_s[i] ? [&] {
      char b[32];
      std::snprintf(b, sizeof b, "%.6f", *report.frame_speed_mm_s[i]);
      return std::string(b);
    }() : std::string("-");
    std::snprintf(buf, sizeof buf, "%zu, %.6f, %s, %s\n", i, trace.timestamps_s[i], front.c_str(), speed.c_str());
    s += buf;
  }
  std::snprintf(buf, sizeof buf, "mean_mm_s %.6f, path_length_mm %.6f, retreats %zu\n", report.mean_mm_s,
                report.path_length_mm, report.retreats.size());
  s += buf;
  return s;
}

void write_report(const std::filesystem::path& path, const CrackFrontTrace& trace, const SpeedReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write speed report: " + path.string());
  out << report_text(trace, report);
}

}  // namespace cpn::speed
