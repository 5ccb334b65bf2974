#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "cpn/image.hpp"

/// Digital image correlation and ground-truth crack-edge labelling.
namespace cpn::dic {

struct SubsetConfig {
  int subset_size = 23;  // odd
  int spacing = 11;
  int search_radius = 8;
  bool subpixel = true;
  /// Coordinate of the first grid node on each axis; negative means subset_size / 2.
  int origin = -1;
  /// Subset splitting for discontinuous fields: when the full subset peaks
  /// below `split_below`, rectangles that keep the node but stop `split_margin`
  /// pixels past it on one or more sides are matched too, and the best wins.
  bool split = false;
  double split_below = 0.999;
  int split_margin = 2;

  void validate() const;
  int half() const { return subset_size / 2; }
  int first_node() const { return origin < 0 ? half() : origin; }
};

struct MatchResult {
  double u = 0.0;
  double v = 0.0;
  double quality = 0.0;  // zero-mean normalised cross-correlation at the peak
  bool valid = false;
};

/// Best translation of the subset centred at (x0, y0) by ZNCC over the
/// integer search window, with optional quadratic-surface refinement.
/// Flat subsets and windows with no admissible candidate return valid = false.
MatchResult match_subset(const ImageF& reference, const ImageF& deformed, int x0, int y0, const SubsetConfig& cfg);

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// First-order subset shape function: maps `point` of the subset centred at
/// `center` given the centre displacement (u, v) and its gradients.
Point2 shape_function_map(Point2 point, Point2 center, double u, double v, double ux, double uy, double vx, double vy);

/// Displacements on a regular grid of correlation points.
struct DisplacementField {
  std::vector<double> xs;  // node column coordinates, strictly increasing
  std::vector<double> ys;  // node row coordinates, strictly increasing
  double spacing = 0.0;
  std::vector<double> u, v, quality;  // row-major, rows = ys.size()
  std::vector<std::uint8_t> valid;

  std::size_t cols() const noexcept { return xs.size(); }
  std::size_t rows() const noexcept { return ys.size(); }
  std::size_t index(std::size_t row, std::size_t col) const { return row * xs.size() + col; }
};

/// Rectangle [x0, x1) x [y0, y1) in pixels.
struct Region {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

/// Node coordinates the grid would use along an axis of length `extent`.
std::vector<double> grid_coordinates(int lo, int hi, const SubsetConfig& cfg);

DisplacementField compute_displacement_field(const ImageF& reference, const ImageF& deformed, const SubsetConfig& cfg,
                                             std::optional<Region> area_of_interest = std::nullopt);

/// Horizontal forward difference u[r][c+1] - u[r][c], one entry per gap.
struct GradientGrid {
  std::size_t rows = 0;
  std::size_t gaps = 0;  // columns - 1
  std::vector<double> ux;
  std::vector<std::uint8_t> valid;
};

GradientGrid displacement_gradient(const DisplacementField& field);

/// Binary crack-edge raster; 1 marks a crack-edge pixel.
struct CrackEdgeMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
  double mm_per_px = 0.0;

  CrackEdgeMap() = default;
  CrackEdgeMap(std::size_t w, std::size_t h, double mm = 0.0) : width(w), height(h), pixels(w * h, 0), mm_per_px(mm) {}
  std::uint8_t& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
  std::size_t count() const;
  friend bool operator==(const CrackEdgeMap& a, const CrackEdgeMap& b) {
    return a.width == b.width && a.height == b.height && a.pixels == b.pixels;
  }
};

/// Marks both correlation points of every gap whose u_x exceeds `threshold`,
/// at their displaced (deformed-image) positions, on a width x height raster.
CrackEdgeMap label_crack_edges(const GradientGrid& gradient, const DisplacementField& field, double threshold,
                               std::size_t width, std::size_t height);

/// Per pixel: clears one-frame labels that stay unset for the next `window`
/// frames (repeated until stable), then fills one-frame holes bracketed by
/// `window` labelled frames on each side. Idempotent.
std::vector<CrackEdgeMap> temporal_consistency_correct(std::span<const CrackEdgeMap> sequence, int window);

/// Max-pooling to target_w x target_h. Each axis uses the largest integer
/// block that fits; the remainder is cropped symmetrically.
CrackEdgeMap downsample_label_map(const CrackEdgeMap& map, std::size_t target_w, std::size_t target_h);

/// Text export, one node per line: "x0, y0, u, v, quality, valid".
void write_displacement_field(const std::filesystem::path& path, const DisplacementField& field);
DisplacementField read_displacement_field(const std::filesystem::path& path);
/// P5 PGM with 0 / 255.
void write_edge_map(const std::filesystem::path& path, const CrackEdgeMap& map);
CrackEdgeMap read_edge_map(const std::filesystem::path& path);

}  // namespace cpn::dic
