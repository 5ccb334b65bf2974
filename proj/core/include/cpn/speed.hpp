#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cpn/dic.hpp"

/// Crack-front tracking and propagation speed.
namespace cpn::speed {

/// Direction the crack grows in; the notch sits on the opposite edge.
enum class Axis { kUp, kDown, kLeft, kRight };

Axis parse_axis(std::string_view name);

struct FrontPoint {
  double x = 0.0;  // mean column of the extremal pixels
  double y = 0.0;  // mean row of the extremal pixels
  /// Extremal coordinate along the propagation axis (row for up/down, column for left/right).
  double along = 0.0;
};

/// Axis-extremal pixel of the notch-rooted 8-connected component. The rooted
/// component is the one reaching closest to the notch edge; ties go to the
/// most advanced front. Empty maps give no front.
std::optional<FrontPoint> extract_front(const dic::CrackEdgeMap& map, Axis axis);

struct CrackFrontTrace {
  std::vector<std::optional<FrontPoint>> fronts;
  std::vector<double> timestamps_s;  // strictly increasing
  double mm_per_px = 0.0;
  Axis axis = Axis::kUp;
};

CrackFrontTrace trace_fronts(std::span<const dic::CrackEdgeMap> maps, std::span<const double> timestamps_s,
                             double mm_per_px, Axis axis);

struct SpeedReport {
  double mean_mm_s = 0.0;
  double path_length_mm = 0.0;
  /// Speed of the interval containing each frame; empty before the first front.
  std::vector<std::optional<double>> frame_speed_mm_s;
  std::vector<double> interval_speeds_mm_s;
  std::vector<double> interval_lengths_mm;
  /// Frames whose front fell back by more than the tolerance.
  std::vector<std::size_t> retreats;
};

/// Intervals run between successive changes of the front. Interval speed is the
/// Euclidean front displacement over the elapsed time; the mean weights each
/// interval by its path length. Backward motion beyond `tolerance_px` is flagged
/// and otherwise ignored (cracks do not heal).
SpeedReport compute_speed(const CrackFrontTrace& trace, double tolerance_px = 1.0);

/// "frame, t_s, front_px, interval_mm_s" lines and a summary line.
std::string report_text(const CrackFrontTrace& trace, const SpeedReport& report);
void write_report(const std::filesystem::path& path, const CrackFrontTrace& trace, const SpeedReport& report);

}  // namespace cpn::speed
