#include "cpn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "cpn/error.hpp"

namespace cpn::data {

void SyntheticSpec::validate() const {
  if (width < 16 || height < 16) throw ShapeError("synthetic image must be at least 16x16");
  if (speckle_density <= 0 || dot_radius_min <= 0 || dot_radius_max < dot_radius_min)
    throw ShapeError("invalid speckle parameters");
  if (blur_sigma <= 0) throw ShapeError("speckle blur must be positive");
  if (crack_path.size() < 2) throw ShapeError("crack path needs at least two points");
  for (std::size_t i = 0; i < crack_path.size(); ++i) {
    const auto& p = crack_path[i];
    if (p.x < 0 || p.x > static_cast<double>(width - 1)) throw ShapeError("crack path leaves the image horizontally");
    if (i > 0 && !(p.y < crack_path[i - 1].y)) throw ShapeError("crack path must rise monotonically (y decreasing)");
  }
  if (opening < 0) throw ShapeError("crack opening must be non-negative");
  if (tip_taper < 0) throw ShapeError("tip taper must be non-negative");
  if (taper_half_width <= 0) throw ShapeError("opening half-width must be positive");
  if (tip_rows.empty()) throw ShapeError("synthetic spec needs at least one frame");
  if (frames_per_second <= 0 || mm_per_px <= 0) throw ShapeError("frame rate and resolution must be positive");
  label_grid.validate();
  if (!(label_threshold > 0)) throw ShapeError("label threshold must be positive");
  if (label_size == 0 || label_size > width || label_size > height) throw ShapeError("invalid label size");
}

double SyntheticSpec::crack_x(double y) const {
  if (y >= crack_path.front().y) return crack_path.front().x;
  if (y <= crack_path.back().y) return crack_path.back().x;
  for (std::size_t i = 1; i < crack_path.size(); ++i) {
    const auto& a = crack_path[i - 1];
    const auto& b = crack_path[i];
    if (y >= b.y) {
      const double t = (a.y - y) / (a.y - b.y);
      return a.x + t * (b.x - a.x);
    }
  }
  return crack_path.back().x;
}

double SyntheticSpec::opening_at(double y, double tip_row) const {
  if (!(y > tip_row)) return 0.0;
  if (tip_taper <= 0) return opening;
  return opening * std::min(1.0, (y - tip_row) / tip_taper);
}

dic::Point2 SyntheticSpec::displacement(double x, double y, double tip_row) const {
  const double delta = opening_at(y, tip_row);
  const double d = x - crack_x(y);
  const double ad = std::abs(d);
  const double taper = ad >= taper_half_width ? 0.0 : 0.5 * (1.0 + std::cos(std::numbers::pi * ad / taper_half_width));
  const double side = d >= 0 ? 0.5 : -0.5;
  return {translation_x + side * delta * taper, translation_y};
}

std::vector<dic::Point2> vertical_crack(double x, std::size_t height) {
  return {{x, static_cast<double>(height) + 8.0}, {x, -8.0}};
}

std::vector<dic::Point2> wandering_crack(double x0, std::size_t width, std::size_t height, double wander,
                                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> step(-wander, wander);
  std::vector<dic::Point2> path;
  double x = x0;
  const double margin = 24.0;
  for (double y = static_cast<double>(height) + 8.0; y > -8.0; y -= 16.0) {
    path.push_back({x, y});
    x = std::clamp(x + step(rng), margin, static_cast<double>(width) - margin);
  }
  path.push_back({x, -8.0});
  return path;
}

std::vector<double> constant_speed_tips(double start_row, double px_per_frame, std::size_t frames) {
  std::vector<double> tips(frames);
  for (std::size_t i = 0; i < frames; ++i) tips[i] = start_row - px_per_frame * static_cast<double>(i);
  return tips;
}

namespace {

struct Dot {
  double x, y, r;
};

/// Analytic speckle: blurred dark disks on a white background, evaluated at
/// continuous coordinates so warped frames need no resampling.
class SpeckleField {
 public:
  explicit SpeckleField(const SyntheticSpec& spec) : sigma_(spec.blur_sigma) {
    const double margin = 48.0;
    x0_ = -margin;
    y0_ = -margin;
    const double w = static_cast<double>(spec.width) + 2 * margin;
    const double h = static_cast<double>(spec.height) + 2 * margin;
    cols_ = static_cast<std::size_t>(std::ceil(w / kCell));
    rows_ = static_cast<std::size_t>(std::ceil(h / kCell));
    cells_.resize(cols_ * rows_);
    reach_ = spec.dot_radius_max + 4.0 * sigma_;

    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> ux(x0_, x0_ + w), uy(y0_, y0_ + h);
    std::uniform_real_distribution<double> ur(spec.dot_radius_min, spec.dot_radius_max);
    const auto count = static_cast<std::size_t>(std::llround(spec.speckle_density * w * h));
    dots_.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      const double x = ux(rng), y = uy(rng), r = ur(rng);
      dots_.push_back({x, y, r});
      cells_[cell(x, y)].push_back(static_cast<std::uint32_t>(i));
    }
  }

  /// Intensity in [0, 1].
  double value(double x, double y) const {
    double clear = 1.0;
    const long cx = static_cast<long>(std::floor((x - x0_) / kCell));
    const long cy = static_cast<long>(std::floor((y - y0_) / kCell));
    const long span = static_cast<long>(std::ceil(reach_ / kCell));
    for (long j = cy - span; j <= cy + span; ++j) {
      if (j < 0 || j >= static_cast<long>(rows_)) continue;
      for (long i = cx - span; i <= cx + span; ++i) {
        if (i < 0 || i >= static_cast<long>(cols_)) continue;
        for (std::uint32_t k : cells_[static_cast<std::size_t>(j) * cols_ + static_cast<std::size_t>(i)]) {
          const Dot& d = dots_[k];
          const double dist = std::hypot(x - d.x, y - d.y);
          if (dist > d.r + 4.0 * sigma_) continue;
          const double cover = 0.5 * std::erfc((dist - d.r) / (sigma_ * std::numbers::sqrt2));
          clear *= 1.0 - cover;
        }
      }
    }
    return kDark + (kWhite - kDark) * clear;
  }

  static constexpr double kDark = 0.08;
  static constexpr double kWhite = 0.95;
  static constexpr double kGap = 0.03;

 private:
  static constexpr double kCell = 8.0;
  std::size_t cell(double x, double y) const {
    const auto i = std::min(cols_ - 1, static_cast<std::size_t>((x - x0_) / kCell));
    const auto j = std::min(rows_ - 1, static_cast<std::size_t>((y - y0_) / kCell));
    return j * cols_ + i;
  }

  double sigma_;
  double x0_ = 0, y0_ = 0, reach_ = 0;
  std::size_t cols_ = 0, rows_ = 0;
  std::vector<Dot> dots_;
  std::vector<std::vector<std::uint32_t>> cells_;
};

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L)); }

/// Reference point that lands on deformed pixel (x, y), if any.
std::optional<dic::Point2> inverse_map(const SyntheticSpec& spec, double x, double y, double tip_row) {
  const double ry = y - spec.translation_y;
  const double xc = spec.crack_x(ry);
  std::optional<dic::Point2> found;
  for (double side : {1.0, -1.0}) {
    double rx = x - spec.translation_x;
    for (int it = 0; it < 30; ++it) {
      // Evaluate the displacement on the assumed side of the crack.
      const double probe = side > 0 ? std::max(rx, xc) : std::min(rx, xc - 1e-12);
      rx = x - spec.displacement(probe, ry, tip_row).x;
    }
    if ((side > 0 && rx >= xc) || (side < 0 && rx < xc)) {
      found = dic::Point2{rx, ry};
      break;
    }
  }
  return found;
}

}  // namespace

GrayImage render_speckle(const SyntheticSpec& spec) {
  spec.validate();
  const SpeckleField field(spec);
  GrayImage img(spec.width, spec.height);
  const long h = static_cast<long>(spec.height);
#pragma omp parallel for schedule(static)
  for (long y = 0; y < h; ++y)
    for (std::size_t x = 0; x < spec.width; ++x)
      img.at(x, static_cast<std::size_t>(y)) = quantize(field.value(static_cast<double>(x), static_cast<double>(y)));
  return img;
}

std::vector<SyntheticFrame> synth_generate(const SyntheticSpec& spec) {
  spec.validate();
  const SpeckleField field(spec);
  const GrayImage reference = render_speckle(spec);
  const std::vector<double> xs = dic::grid_coordinates(0, static_cast<int>(spec.width), spec.label_grid);
  const std::vector<double> ys = dic::grid_coordinates(0, static_cast<int>(spec.height), spec.label_grid);
  if (xs.size() < 2 || ys.empty()) throw ShapeError("label grid does not fit the synthetic image");

  std::vector<SyntheticFrame> frames;
  frames.reserve(spec.tip_rows.size());
  for (std::size_t f = 0; f < spec.tip_rows.size(); ++f) {
    const double tip = spec.tip_rows[f];
    SyntheticFrame fr;
    fr.tip_row = tip;
    fr.pair.reference = reference;
    fr.pair.timestamp_s = static_cast<double>(f) / spec.frames_per_second;
    fr.pair.mm_per_px = spec.mm_per_px;

    GrayImage deformed(spec.width, spec.height);
    const long h = static_cast<long>(spec.height);
#pragma omp parallel for schedule(static)
    for (long y = 0; y < h; ++y)
      for (std::size_t x = 0; x < spec.width; ++x) {
        const auto src = inverse_map(spec, static_cast<double>(x), static_cast<double>(y), tip);
        deformed.at(x, static_cast<std::size_t>(y)) = quantize(src ? field.value(src->x, src->y) : SpeckleField::kGap);
      }
    fr.pair.deformed = std::move(deformed);

    const std::size_t plane = spec.width * spec.height;
    fr.flow_u.resize(plane);
    fr.flow_v.resize(plane);
    for (std::size_t y = 0; y < spec.height; ++y)
      for (std::size_t x = 0; x < spec.width; ++x) {
        const auto d = spec.displacement(static_cast<double>(x), static_cast<double>(y), tip);
        fr.flow_u[y * spec.width + x] = static_cast<float>(d.x);
        fr.flow_v[y * spec.width + x] = static_cast<float>(d.y);
      }

    // Exact labels: the labelling rule applied to the true node displacements.
    dic::CrackEdgeMap labels(spec.width, spec.height, spec.mm_per_px);
    auto mark = [&](double nx, double ny) {
      const auto d = spec.displacement(nx, ny, tip);
      const long px = std::lround(nx + d.x), py = std::lround(ny + d.y);
      if (px >= 0 && py >= 0 && px < static_cast<long>(spec.width) && py < static_cast<long>(spec.height))
        labels.at(static_cast<std::size_t>(px), static_cast<std::size_t>(py)) = 1;
    };
    for (double ny : ys)
      for (std::size_t c = 0; c + 1 < xs.size(); ++c) {
        const double jump = spec.displacement(xs[c + 1], ny, tip).x - spec.displacement(xs[c], ny, tip).x;
        if (jump > spec.label_threshold) {
          mark(xs[c], ny);
          mark(xs[c + 1], ny);
        }
      }
    fr.full_labels = labels;
    fr.pair.ground_truth = dic::downsample_label_map(labels, spec.label_size, spec.label_size);

    dic::CrackEdgeMap trace(spec.width, spec.height, spec.mm_per_px);
    for (std::size_t y = 0; y < spec.height; ++y) {
      const double ry = static_cast<double>(y) - spec.translation_y;
      if (spec.opening_at(ry, tip) <= 0) continue;
      const long px = std::lround(spec.crack_x(ry) + spec.translation_x);
      if (px >= 0 && px < static_cast<long>(spec.width)) trace.at(static_cast<std::size_t>(px), y) = 1;
    }
    fr.crack_trace = std::move(trace);
    frames.push_back(std::move(fr));
  }
  return frames;
}

Sample to_sample(const SyntheticFrame& frame) {
  Sample s = to_sample(frame.pair);
  const std::size_t w = frame.pair.reference.width, h = frame.pair.reference.height;
  TensorF flow(Shape{2, h, w});
  std::copy(frame.flow_u.begin(), frame.flow_u.end(), flow.ptr());
  std::copy(frame.flow_v.begin(), frame.flow_v.end(), flow.ptr() + w * h);
  s.flow = std::move(flow);
  return s;
}

}  // namespace cpn::data
