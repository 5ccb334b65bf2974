#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cpn/dic.hpp"

/// Pixel-exact edge evaluation: precision/recall, ODS and OIS F-1.
namespace cpn::eval {

/// Per-pixel crack-edge probabilities, row-major.
struct EdgeProbabilityMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> values;

  EdgeProbabilityMap() = default;
  EdgeProbabilityMap(std::size_t w, std::size_t h, float fill = 0.0f) : width(w), height(h), values(w * h, fill) {}
  float at(std::size_t x, std::size_t y) const { return values[y * width + x]; }
  float& at(std::size_t x, std::size_t y) { return values[y * width + x]; }
};

struct Confusion {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  Confusion& operator+=(const Confusion& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

inline constexpr int kThresholdSteps = 99;
/// Grid threshold i / 100 for i = 1..99.
inline double grid_threshold(int i) { return static_cast<double>(i) / 100.0; }

/// TP: p >= t and gt = 1; FP: p >= t and gt = 0; FN: p < t and gt = 1.
Confusion confusion_at_threshold(const EdgeProbabilityMap& pred, const dic::CrackEdgeMap& gt, double t);

double precision(const Confusion& c);
double recall(const Confusion& c);
/// 2PR / (P + R), 0 when P + R = 0.
double f1(const Confusion& c);

struct PRPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  Confusion counts;
};

struct OdsResult {
  double f1 = 0.0;
  double threshold = 0.0;
};

/// Dataset-pooled counts per grid threshold; first maximum wins ties.
OdsResult ods_f1(std::span<const EdgeProbabilityMap> predictions, std::span<const dic::CrackEdgeMap> gts);
/// Mean over images of the per-image best F-1.
double ois_f1(std::span<const EdgeProbabilityMap> predictions, std::span<const dic::CrackEdgeMap> gts);
std::vector<PRPoint> pr_curve(std::span<const EdgeProbabilityMap> predictions, std::span<const dic::CrackEdgeMap> gts);
/// Best F-1 of each frame over the grid. A frame with empty ground truth and no
/// detection at some threshold scores 1 there.
std::vector<double> per_frame_f1(std::span<const EdgeProbabilityMap> predictions,
                                 std::span<const dic::CrackEdgeMap> gts);

struct EvalReport {
  OdsResult ods;
  double ois = 0.0;
  std::vector<double> per_frame;
  std::vector<PRPoint> curve;
};

EvalReport evaluate(std::span<const EdgeProbabilityMap> predictions, std::span<const dic::CrackEdgeMap> gts);

std::string report_text(const EvalReport& report);
std::string pr_curve_csv(const EvalReport& report);
void write_report(const EvalReport& report, const std::filesystem::path& text_path,
                  const std::filesystem::path& csv_path);

/// Binary map of p >= t.
dic::CrackEdgeMap threshold_map(const EdgeProbabilityMap& pred, double t);

/// One-plane float file (see write_float_planes).
void write_probability_map(const std::filesystem::path& path, const EdgeProbabilityMap& map);
EdgeProbabilityMap read_probability_map(const std::filesystem::path& path);

}  // namespace cpn::eval
