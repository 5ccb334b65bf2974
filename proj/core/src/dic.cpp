#include "cpn/dic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>

#include "cpn/error.hpp"

namespace cpn::dic {

void SubsetConfig::validate() const {
  if (subset_size < 3 || subset_size % 2 == 0) throw ShapeError("subset size must be odd and at least 3");
  if (spacing < 1) throw ShapeError("correlation point spacing must be at least 1");
  if (search_radius < 0) throw ShapeError("search radius must be non-negative");
  if (split && split_margin < 1) throw ShapeError("split margin must be at least 1");
}

namespace {

// Least-squares quadratic c = a0 + a1 x + a2 y + a3 x^2 + a4 xy + a5 y^2 on a 3x3 grid.
// Closed form for the symmetric stencil.
std::optional<std::pair<double, double>> quadratic_peak(const std::array<double, 9>& c) {
  double s = 0, sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (int j = -1; j <= 1; ++j)
    for (int i = -1; i <= 1; ++i) {
      const double v = c[static_cast<std::size_t>((j + 1) * 3 + (i + 1))];
      s += v;
      sx += i * v;
      sy += j * v;
      sxx += i * i * v;
      syy += j * j * v;
      sxy += i * j * v;
    }
  const double a1 = sx / 6.0, a2 = sy / 6.0, a4 = sxy / 4.0;
  const double a3 = sxx / 2.0 - s / 3.0;
  const double a5 = syy / 2.0 - s / 3.0;
  const double det = 4.0 * a3 * a5 - a4 * a4;
  if (!(a3 < 0 && det > 0)) return std::nullopt;
  const double dx = (-2.0 * a5 * a1 + a4 * a2) / det;
  const double dy = (-2.0 * a3 * a2 + a4 * a1) / det;
  if (std::abs(dx) > 1.0 || std::abs(dy) > 1.0) return std::nullopt;
  return std::pair{dx, dy};
}

double parabolic_offset(double left, double mid, double right) {
  const double denom = left - 2.0 * mid + right;
  if (!(denom < 0)) return 0.0;
  return std::clamp(0.5 * (left - right) / denom, -0.5, 0.5);
}

}  // namespace

namespace {

/// Exhaustive ZNCC search for one rectangle of the reference subset, given as
/// extents left/right/up/down of the node.
struct WindowSearch {
  bool textured = false;
  double best = -2.0;
  int du = 0, dv = 0;
  std::vector<double> scores;  // (2r+1)^2, -2 where the candidate left the image
};

WindowSearch search_window(const ImageF& reference, const ImageF& deformed, int x0, int y0, int left, int right,
                           int up, int down, int r) {
  const int sw = left + right + 1, sh = up + down + 1;
  const double n = static_cast<double>(sw * sh);
  std::vector<double> ref(static_cast<std::size_t>(sw * sh));
  double mean = 0;
  for (int j = 0; j < sh; ++j)
    for (int i = 0; i < sw; ++i) {
      const double v = reference.at(static_cast<std::size_t>(x0 - left + i), static_cast<std::size_t>(y0 - up + j));
      ref[static_cast<std::size_t>(j * sw + i)] = v;
      mean += v;
    }
  mean /= n;
  double norm = 0;
  for (auto& v : ref) {
    v -= mean;
    norm += v * v;
  }
  WindowSearch out;
  if (norm <= 1e-12 * n) return out;  // flat subset: no texture to match
  out.textured = true;
  norm = std::sqrt(norm);
  for (auto& v : ref) v /= norm;

  const int dw = static_cast<int>(deformed.width), dh = static_cast<int>(deformed.height);
  const int span = 2 * r + 1;
  out.scores.assign(static_cast<std::size_t>(span * span), -2.0);
  for (int dv = -r; dv <= r; ++dv) {
    for (int du = -r; du <= r; ++du) {
      const int cx = x0 + du, cy = y0 + dv;
      if (cx - left < 0 || cy - up < 0 || cx + right >= dw || cy + down >= dh) continue;
      double sum = 0, sq = 0, cross = 0;
      for (int j = 0; j < sh; ++j) {
        const float* row = &deformed.pixels[static_cast<std::size_t>(cy - up + j) * deformed.width +
                                            static_cast<std::size_t>(cx - left)];
        const double* rr = &ref[static_cast<std::size_t>(j * sw)];
        for (int i = 0; i < sw; ++i) {
          const double d = row[i];
          sum += d;
          sq += d * d;
          cross += rr[i] * d;
        }
      }
      const double var = sq - sum * sum / n;
      const double score = var > 1e-12 * n ? cross / std::sqrt(var) : 0.0;
      out.scores[static_cast<std::size_t>((dv + r) * span + (du + r))] = score;
      if (score > out.best) {
        out.best = score;
        out.du = du;
        out.dv = dv;
      }
    }
  }
  return out;
}

}  // namespace

MatchResult match_subset(const ImageF& reference, const ImageF& deformed, int x0, int y0, const SubsetConfig& cfg) {
  cfg.validate();
  const int half = cfg.half();
  const int w = static_cast<int>(reference.width), h = static_cast<int>(reference.height);
  if (x0 - half < 0 || y0 - half < 0 || x0 + half >= w || y0 + half >= h)
    throw ShapeError("reference subset at (" + std::to_string(x0) + ", " + std::to_string(y0) +
                     ") extends outside the image");
  const int r = cfg.search_radius;
  const int span = 2 * r + 1;

  WindowSearch found = search_window(reference, deformed, x0, y0, half, half, half, half, r);
  MatchResult result;
  if (!found.textured) return result;
  if (cfg.split && found.best < cfg.split_below) {
    // Every combination of full and cut extents except the full subset itself.
    const int cut = std::min(cfg.split_margin, half);
    for (int mask = 1; mask < 16; ++mask) {
      const int left = mask & 1 ? cut : half, right = mask & 2 ? cut : half;
      const int up = mask & 4 ? cut : half, down = mask & 8 ? cut : half;
      WindowSearch piece = search_window(reference, deformed, x0, y0, left, right, up, down, r);
      if (piece.textured && piece.best > found.best + 1e-12) found = std::move(piece);
    }
  }
  const double best = found.best;
  if (best < -1.5) return result;
  const int best_du = found.du, best_dv = found.dv;
  const std::vector<double>& scores = found.scores;

  result.u = best_du;
  result.v = best_dv;
  result.quality = std::clamp(best, -1.0, 1.0);
  result.valid = true;

  // A perfect integer match needs no refinement; the fitted surface around it
  // is generally asymmetric and would bias the estimate.
  if (cfg.subpixel && best < 1.0 - 1e-9) {
    auto score_at = [&](int du, int dv) -> std::optional<double> {
      if (du < -r || du > r || dv < -r || dv > r) return std::nullopt;
      const double s = scores[static_cast<std::size_t>((dv + r) * span + (du + r))];
      if (s < -1.5) return std::nullopt;
      return s;
    };
    std::array<double, 9> c{};
    bool complete = true;
    for (int j = -1; j <= 1 && complete; ++j)
      for (int i = -1; i <= 1; ++i) {
        const auto s = score_at(best_du + i, best_dv + j);
        if (!s) {
          complete = false;
          break;
        }
        c[static_cast<std::size_t>((j + 1) * 3 + (i + 1))] = *s;
      }
    if (complete) {
      if (const auto peak = quadratic_peak(c)) {
        result.u += peak->first;
        result.v += peak->second;
      } else {
        result.u += parabolic_offset(c[3], c[4], c[5]);
        result.v += parabolic_offset(c[1], c[4], c[7]);
      }
    } else {
      // Near the image border: refine each axis on whatever three collinear scores exist.
      auto axis = [&](int ax, int ay) {
        const auto m1 = score_at(best_du - ax, best_dv - ay), p1 = score_at(best_du + ax, best_dv + ay);
        if (m1 && p1) return parabolic_offset(*m1, best, *p1);
        const int dir = m1 ? -1 : 1;
        const auto n1 = dir < 0 ? m1 : p1;
        const auto n2 = score_at(best_du + 2 * dir * ax, best_dv + 2 * dir * ay);
        if (!n1 || !n2) return 0.0;
        // Parabola through offsets 0, dir, 2 dir; its vertex measured from the peak.
        const double denom = best - 2.0 * *n1 + *n2;
        if (!(denom < 0)) return 0.0;
        const double vertex = dir + 0.5 * dir * (best - *n2) / denom;
        return std::clamp(vertex, -0.5, 0.5);
      };
      result.u += axis(1, 0);
      result.v += axis(0, 1);
    }
  }
  return result;
}

Point2 shape_function_map(Point2 point, Point2 center, double u, double v, double ux, double uy, double vx,
                          double vy) {
  const double dx = point.x - center.x;
  const double dy = point.y - center.y;
  return {point.x + u + ux * dx + uy * dy, point.y + v + vx * dx + vy * dy};
}

std::vector<double> grid_coordinates(int lo, int hi, const SubsetConfig& cfg) {
  // Nodes at first_node + k * spacing, offset by `lo`, keeping the subset inside [lo, hi).
  std::vector<double> out;
  for (int x = lo + cfg.first_node(); x + cfg.half() < hi; x += cfg.spacing)
    if (x - cfg.half() >= lo) out.push_back(x);
  return out;
}

DisplacementField compute_displacement_field(const ImageF& reference, const ImageF& deformed, const SubsetConfig& cfg,
                                             std::optional<Region> area_of_interest) {
  cfg.validate();
  if (reference.width != deformed.width || reference.height != deformed.height)
    throw ShapeError("reference and deformed images differ in size");
  const Region aoi = area_of_interest.value_or(
      Region{0, 0, static_cast<int>(reference.width), static_cast<int>(reference.height)});
  if (aoi.x1 - aoi.x0 < cfg.subset_size || aoi.y1 - aoi.y0 < cfg.subset_size)
    throw ShapeError("area of interest is smaller than one subset");
  if (aoi.x0 < 0 || aoi.y0 < 0 || aoi.x1 > static_cast<int>(reference.width) ||
      aoi.y1 > static_cast<int>(reference.height))
    throw ShapeError("area of interest extends outside the image");

  DisplacementField f;
  f.xs = grid_coordinates(aoi.x0, aoi.x1, cfg);
  f.ys = grid_coordinates(aoi.y0, aoi.y1, cfg);
  if (f.xs.empty() || f.ys.empty()) throw ShapeError("area of interest holds no correlation point");
  f.spacing = cfg.spacing;
  const std::size_t count = f.xs.size() * f.ys.size();
  f.u.assign(count, 0.0);
  f.v.assign(count, 0.0);
  f.quality.assign(count, 0.0);
  f.valid.assign(count, 0);
  const long total = static_cast<long>(count);
#pragma omp parallel for schedule(dynamic, 16)
  for (long idx = 0; idx < total; ++idx) {
    const std::size_t row = static_cast<std::size_t>(idx) / f.xs.size();
    const std::size_t col = static_cast<std::size_t>(idx) % f.xs.size();
    const MatchResult m = match_subset(reference, deformed, static_cast<int>(f.xs[col]), static_cast<int>(f.ys[row]), cfg);
    if (!m.valid) continue;
    f.u[static_cast<std::size_t>(idx)] = m.u;
    f.v[static_cast<std::size_t>(idx)] = m.v;
    f.quality[static_cast<std::size_t>(idx)] = m.quality;
    f.valid[static_cast<std::size_t>(idx)] = 1;
  }
  return f;
}

GradientGrid displacement_gradient(const DisplacementField& field) {
  if (field.cols() < 2) throw ShapeError("displacement gradient needs at least two node columns");
  GradientGrid g;
  g.rows = field.rows();
  g.gaps = field.cols() - 1;
  g.ux.assign(g.rows * g.gaps, 0.0);
  g.valid.assign(g.rows * g.gaps, 0);
  for (std::size_t r = 0; r < g.rows; ++r)
    for (std::size_t c = 0; c < g.gaps; ++c) {
      const std::size_t a = field.index(r, c), b = field.index(r, c + 1);
      if (!field.valid[a] || !field.valid[b]) continue;
      g.ux[r * g.gaps + c] = field.u[b] - field.u[a];
      g.valid[r * g.gaps + c] = 1;
    }
  return g;
}

std::size_t CrackEdgeMap::count() const {
  return static_cast<std::size_t>(std::count(pixels.begin(), pixels.end(), std::uint8_t{1}));
}

CrackEdgeMap label_crack_edges(const GradientGrid& gradient, const DisplacementField& field, double threshold,
                               std::size_t width, std::size_t height) {
  if (!(threshold > 0)) throw ShapeError("crack threshold must be positive");
  CrackEdgeMap map(width, height);
  auto mark = [&](std::size_t row, std::size_t col) {
    const std::size_t i = field.index(row, col);
    const long x = std::lround(field.xs[col] + field.u[i]);
    const long y = std::lround(field.ys[row] + field.v[i]);
    if (x >= 0 && y >= 0 && x < static_cast<long>(width) && y < static_cast<long>(height))
      map.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) = 1;
  };
  for (std::size_t r = 0; r < gradient.rows; ++r)
    for (std::size_t c = 0; c < gradient.gaps; ++c) {
      const std::size_t g = r * gradient.gaps + c;
      if (!gradient.valid[g] || !(gradient.ux[g] > threshold)) continue;
      mark(r, c);
      mark(r, c + 1);
    }
  return map;
}

std::vector<CrackEdgeMap> temporal_consistency_correct(std::span<const CrackEdgeMap> sequence, int window) {
  if (window < 1) throw ShapeError("temporal window must be at least 1");
  std::vector<CrackEdgeMap> out(sequence.begin(), sequence.end());
  if (out.empty()) return out;
  for (const auto& m : out)
    if (m.width != out[0].width || m.height != out[0].height)
      throw ShapeError("temporal correction needs equally sized maps");
  const std::size_t frames = out.size();
  const std::size_t n = static_cast<std::size_t>(window);
  const std::size_t pixels = out[0].pixels.size();
  std::vector<std::uint8_t> track(frames);

  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t t = 0; t < frames; ++t) track[t] = out[t].pixels[p];
    // Rule 1 clears one-frame runs that stay unset for the next n frames. A
    // single pass is not idempotent (clearing a run can isolate an earlier
    // one), so it repeats until nothing changes. Longer runs are kept.
    for (bool changed = true; changed;) {
      changed = false;
      for (std::size_t t = 0; t + n < frames; ++t) {
        if (!track[t] || (t > 0 && track[t - 1])) continue;
        bool vanishes = true;
        for (std::size_t k = 1; k <= n && vanishes; ++k) vanishes = !track[t + k];
        if (vanishes) {
          track[t] = 0;
          changed = true;
        }
      }
    }
    // Rule 2 fills one-frame holes with n labelled frames on each side. A fill
    // never enables another, so one pass is already a fixed point.
    for (std::size_t t = n; t + n < frames; ++t) {
      if (track[t]) continue;
      bool bracketed = true;
      for (std::size_t k = 1; k <= n && bracketed; ++k) bracketed = track[t - k] && track[t + k];
      if (bracketed) track[t] = 1;
    }
    for (std::size_t t = 0; t < frames; ++t) out[t].pixels[p] = track[t];
  }
  return out;
}

CrackEdgeMap downsample_label_map(const CrackEdgeMap& map, std::size_t target_w, std::size_t target_h) {
  if (target_w == 0 || target_h == 0) throw ShapeError("target label size must be positive");
  if (map.width < target_w || map.height < target_h)
    throw ShapeError("label map " + std::to_string(map.width) + "x" + std::to_string(map.height) +
                     " is smaller than the target size");
  const std::size_t bx = map.width / target_w, by = map.height / target_h;
  const std::size_t ox = (map.width - bx * target_w) / 2, oy = (map.height - by * target_h) / 2;
  CrackEdgeMap out(target_w, target_h, map.mm_per_px * static_cast<double>(bx));
  for (std::size_t y = 0; y < target_h * by; ++y)
    for (std::size_t x = 0; x < target_w * bx; ++x)
      if (map.at(ox + x, oy + y)) out.at(x / bx, y / by) = 1;
  return out;
}

void write_displacement_field(const std::filesystem::path& path, const DisplacementField& field) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write displacement field: " + path.string());
  out << std::setprecision(17);
  for (std::size_t r = 0; r < field.rows(); ++r)
    for (std::size_t c = 0; c < field.cols(); ++c) {
      const std::size_t i = field.index(r, c);
      out << field.xs[c] << ", " << field.ys[r] << ", " << field.u[i] << ", " << field.v[i] << ", " << field.quality[i]
          << ", " << static_cast<int>(field.valid[i]) << "\n";
    }
  if (!out) throw DataError("failed writing displacement field: " + path.string());
}

DisplacementField read_displacement_field(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open displacement field: " + path.string());
  struct Row {
    double x, y, u, v, q;
    int valid;
  };
  std::vector<Row> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    Row r{};
    if (!(ss >> r.x >> r.y >> r.u >> r.v >> r.q >> r.valid))
      throw DataError("malformed displacement field line " + std::to_string(lineno) + " in " + path.string());
    rows.push_back(r);
  }
  DisplacementField f;
  std::map<double, int> xs, ys;
  for (const auto& r : rows) {
    xs[r.x] = 0;
    ys[r.y] = 0;
  }
  for (auto& [x, _] : xs) f.xs.push_back(x);
  for (auto& [y, _] : ys) f.ys.push_back(y);
  if (f.xs.size() * f.ys.size() != rows.size()) throw DataError("displacement field is not a full grid: " + path.string());
  f.spacing = f.xs.size() > 1 ? f.xs[1] - f.xs[0] : 0.0;
  const std::size_t count = rows.size();
  f.u.assign(count, 0);
  f.v.assign(count, 0);
  f.quality.assign(count, 0);
  f.valid.assign(count, 0);
  for (const auto& r : rows) {
    const std::size_t row = static_cast<std::size_t>(std::lower_bound(f.ys.begin(), f.ys.end(), r.y) - f.ys.begin());
    const std::size_t col = static_cast<std::size_t>(std::lower_bound(f.xs.begin(), f.xs.end(), r.x) - f.xs.begin());
    const std::size_t i = f.index(row, col);
    f.u[i] = r.u;
    f.v[i] = r.v;
    f.quality[i] = r.q;
    f.valid[i] = r.valid ? 1 : 0;
  }
  return f;
}

void write_edge_map(const std::filesystem::path& path, const CrackEdgeMap& map) {
  GrayImage img(map.width, map.height);
  for (std::size_t i = 0; i < map.pixels.size(); ++i) img.pixels[i] = map.pixels[i] ? 255 : 0;
  write_pgm(path, img);
}

CrackEdgeMap read_edge_map(const std::filesystem::path& path) {
  const GrayImage img = read_pgm(path);
  CrackEdgeMap map(img.width, img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) map.pixels[i] = img.pixels[i] >= 128 ? 1 : 0;
  return map;
}

}  // namespace cpn::dic
