#include "cpn/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "cpn/error.hpp"
#include "cpn/image.hpp"

namespace cpn::eval {

namespace {

void check_pair(const EdgeProbabilityMap& pred, const dic::CrackEdgeMap& gt) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw ShapeError("prediction " + std::to_string(pred.width) + "x" + std::to_string(pred.height) +
                     " and ground truth " + std::to_string(gt.width) + "x" + std::to_string(gt.height) + " differ");
}

void check_lists(std::span<const EdgeProbabilityMap> predictions, std::span<const dic::CrackEdgeMap> gts) {
  if (predictions.size() != gts.size())
    throw ShapeError("prediction count " + std::to_string(predictions.size()) + " does not match ground-truth count " +
                     std::to_string(gts.size()));
  if (predictions.empty()) throw ShapeError("evaluation needs at least one frame");
  for (std::size_t i = 0; i < gts.size(); ++i) check_pair(predictions[i], gts[i]);
}

/// Counts for every grid threshold in one sweep: a pixel with probability p
/// is predicted positive at thresholds i/100 <= p.
std::vector<Confusion> sweep(const EdgeProbabilityMap& pred, const dic::CrackEdgeMap& gt) {
  // Histogram of the highest grid index each pixel passes, then a suffix sum.
  std::vector<std::uint64_t> pos_hist(kThresholdSteps + 2, 0), neg_hist(kThresholdSteps + 2, 0);
  std::uint64_t total_pos = 0;
  for (std::size_t i = 0; i < gt.pixels.size(); ++i) {
    const double p = pred.values[i];
    int top = 0;  // largest i with grid_threshold(i) <= p
    int lo = 1, hi = kThresholdSteps;
    while (lo <= hi) {
      const int mid = (lo + hi) / 2;
      if (grid_threshold(mid) <= p) {
        top = mid;
        lo = mid + 1;
      } else {
        hi = mid - 1;
      }
    }
    if (gt.pixels[i]) {
      ++pos_hist[static_cast<std::size_t>(top)];
      ++total_pos;
    } else {
      ++neg_hist[static_cast<std::size_t>(top)];
    }
  }
  std::vector<Confusion> out(kThresholdSteps + 1);
  std::uint64_t tp = 0, fp = 0;
  for (int i = kThresholdSteps; i >= 1; --i) {
    tp += pos_hist[static_cast<std::size_t>(i)];
    fp += neg_hist[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(i)] = Confusion{tp, fp, total_pos - tp};
  }
  return out;
}

double frame_f1(const Confusion& c) {
  if (c.tp == 0 && c.fp == 0 && c.fn == 0) return 1.0;
  return f1(c);
}

}  // namespace

Confusion confusion_at_threshold(const EdgeProbabilityMap& pred, const dic::CrackEdgeMap& gt, double t) {
  check_pair(pred, gt);
  Confusion c;
  for (std::size_t i = 0; i < gt.pixels.size(); ++i) {
    const bool positive = static_cast<double>(pred.values[i]) >= t;
    if (positive && gt.pixels[i]) ++c.tp;
    else if (positive) ++c.fp;
    else if (gt.pixels[i]) ++c.fn;
  }
  return c;
}

double precision(const Confusion& c) {
  return c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

double recall(const Confusion& c) {
  return c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

double f1(const Confusion& c) {
  const double p = precision(c), r = recall(c);
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

std::vector<PRPoint> pr_curve(std::span<const EdgeProbabilityMap> predictions, std::span<const dic::CrackEdgeMap> gts) {
  check_lists(predictions, gts);
  std::vector<Confusion> pooled(kThresholdSteps + 1);
  for (std::size_t f = 0; f < gts.size(); ++f) {
    const auto counts = sweep(predictions[f], gts[f]);
    for (int i = 1; i <= kThresholdSteps; ++i) pooled[static_cast<std::size_t>(i)] += counts[static_cast<std::size_t>(i)];
  }
  std::vector<PRPoint> curve;
  curve.reserve(kThresholdSteps);
  for (int i = 1; i <= kThresholdSteps; ++i) {
    const Confusion& c = pooled[static_cast<std::size_t>(i)];
    curve.push_back(PRPoint{grid_threshold(i), precision(c), recall(c), f1(c), c});
  }
  return curve;
}

OdsResult ods_f1(std::span<const EdgeProbabilityMap> predictions, std::span<const dic::CrackEdgeMap> gts) {
  OdsResult best{-1.0, 0.0};
  for (const auto& p : pr_curve(predictions, gts))
    if (p.f1 > best.f1) best = {p.f1, p.threshold};
  return best;
}

std::vector<double> per_frame_f1(std::span<const EdgeProbabilityMap> predictions,
                                 std::span<const dic::CrackEdgeMap> gts) {
  check_lists(predictions, gts);
  std::vector<double> out(gts.size());
  for (std::size_t f = 0; f < gts.size(); ++f) {
    const auto counts = sweep(predictions[f], gts[f]);
    double best = 0.0;
    for (int i = 1; i <= kThresholdSteps; ++i) best = std::max(best, frame_f1(counts[static_cast<std::size_t>(i)]));
    out[f] = best;
  }
  return out;
}

double ois_f1(std::span<const EdgeProbabilityMap> predictions, std::span<const dic::CrackEdgeMap> gts) {
  const auto frames = per_frame_f1(predictions, gts);
  double sum = 0.0;
  for (double f : frames) sum += f;
  return sum / static_cast<double>(frames.size());
}

EvalReport evaluate(std::span<const EdgeProbabilityMap> predictions, std::span<const dic::CrackEdgeMap> gts) {
  EvalReport r;
  r.curve = pr_curve(predictions, gts);
  r.ods = {-1.0, 0.0};
  for (const auto& p : r.curve)
    if (p.f1 > r.ods.f1) r.ods = {p.f1, p.threshold};
  r.per_frame = per_frame_f1(predictions, gts);
  double sum = 0.0;
  for (double f : r.per_frame) sum += f;
  r.ois = sum / static_cast<double>(r.per_frame.size());
  return r;
}

namespace {
std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}
}  // namespace

std::string report_text(const EvalReport& report) {
  std::string s;
  s += "ods_f1 " + fmt("%.6f", report.ods.f1) + "\n";
  s += "ods_threshold " + fmt("%.2f", report.ods.threshold) + "\n";
  s += "ois_f1 " + fmt("%.6f", report.ois) + "\n";
  s += "frames " + std::to_string(report.per_frame.size()) + "\n";
  for (std::size_t i = 0; i < report.per_frame.size(); ++i)
    s += "frame " + std::to_string(i) + " best_f1 " + fmt("%.6f", report.per_frame[i]) + "\n";
  return s;
}

std::string pr_curve_csv(const EvalReport& report) {
  std::string s = "t, precision, recall, f1\n";
  for (const auto& p : report.curve)
    s += fmt("%.2f", p.threshold) + ", " + fmt("%.6f", p.precision) + ", " + fmt("%.6f", p.recall) + ", " +
         fmt("%.6f", p.f1) + "\n";
  return s;
}

void write_report(const EvalReport& report, const std::filesystem::path& text_path,
                  const std::filesystem::path& csv_path) {
  for (const auto& [path, body] : {std::pair{text_path, report_text(report)}, std::pair{csv_path, pr_curve_csv(report)}}) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write report: " + path.string());
    out << body;
  }
}

dic::CrackEdgeMap threshold_map(const EdgeProbabilityMap& pred, double t) {
  dic::CrackEdgeMap m(pred.width, pred.height);
  for (std::size_t i = 0; i < pred.values.size(); ++i) m.pixels[i] = static_cast<double>(pred.values[i]) >= t ? 1 : 0;
  return m;
}

void write_probability_map(const std::filesystem::path& path, const EdgeProbabilityMap& map) {
  write_float_planes(path, map.width, map.height, {&map.values});
}

EdgeProbabilityMap read_probability_map(const std::filesystem::path& path) {
  EdgeProbabilityMap m;
  auto planes = read_float_planes(path, 1, &m.width, &m.height);
  m.values = std::move(planes[0]);
  return m;
}

}  // namespace cpn::eval
