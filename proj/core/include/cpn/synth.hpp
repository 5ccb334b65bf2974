#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "cpn/data.hpp"
#include "cpn/dic.hpp"

/// Synthetic speckle pairs with an analytic opening crack and exact labels.
namespace cpn::data {

struct SyntheticSpec {
  std::size_t width = 512;
  std::size_t height = 512;

  /// Expected dot centres per pixel and dot radius range, in pixels.
  double speckle_density = 0.02;
  double dot_radius_min = 1.5;
  double dot_radius_max = 3.0;
  /// Gaussian blur of the dot edges.
  double blur_sigma = 1.0;

  /// Crack polyline from the notch upward; y must strictly decrease along it.
  std::vector<dic::Point2> crack_path;
  /// Opening jump in u across the crack, in pixels.
  double opening = 4.0;
  /// Distance behind the tip over which the opening ramps up; 0 is an abrupt tip.
  double tip_taper = 0.0;
  /// Half-width of the cosine decay of the opening away from the crack.
  double taper_half_width = 256.0;
  /// Far-field rigid translation applied to every deformed frame.
  double translation_x = 0.0;
  double translation_y = 0.0;
  /// Crack-tip row per frame; rows below the tip (larger y) are open.
  std::vector<double> tip_rows;

  double frames_per_second = 10.0;
  double mm_per_px = 0.05;

  /// Correlation grid the exact labels are rasterised on, and the label threshold.
  dic::SubsetConfig label_grid{17, 8, 6, true, 12, true};
  double label_threshold = 0.5;
  std::size_t label_size = 64;

  std::uint64_t seed = 1;

  void validate() const;
  /// Crack x at row y (clamped to the path's vertical extent).
  double crack_x(double y) const;
  /// Opening at row y for a crack tip at `tip_row`.
  double opening_at(double y, double tip_row) const;
  /// Forward displacement (u, v) of reference point (x, y).
  dic::Point2 displacement(double x, double y, double tip_row) const;
};

struct SyntheticFrame {
  FramePair pair;
  /// True forward flow of every reference pixel, row-major.
  std::vector<float> flow_u;
  std::vector<float> flow_v;
  /// Full-resolution label raster before downsampling.
  dic::CrackEdgeMap full_labels;
  /// Full-resolution trace of the open crack in deformed coordinates.
  dic::CrackEdgeMap crack_trace;
  double tip_row = 0.0;
};

/// Straight vertical crack from the bottom edge at column x.
std::vector<dic::Point2> vertical_crack(double x, std::size_t height);
/// y-monotone random-walk crack from the bottom edge, seeded.
std::vector<dic::Point2> wandering_crack(double x0, std::size_t width, std::size_t height, double wander,
                                         std::uint64_t seed);
/// Tip rows for a tip starting at `start_row` and rising `px_per_frame` each frame.
std::vector<double> constant_speed_tips(double start_row, double px_per_frame, std::size_t frames);

/// Renders the undeformed speckle image.
GrayImage render_speckle(const SyntheticSpec& spec);

/// One frame per entry of spec.tip_rows; tip rows at or beyond the bottom edge give an uncracked frame.
std::vector<SyntheticFrame> synth_generate(const SyntheticSpec& spec);

/// Sample with true flow attached.
Sample to_sample(const SyntheticFrame& frame);

}  // namespace cpn::data
