#pragma once

// Independent reference implementations used by the unit and acceptance tests.
// Everything here is written for clarity, not speed, and shares no code with
// the library kernels it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "cpn/dic.hpp"
#include "cpn/eval.hpp"
#include "cpn/tensor.hpp"

namespace cpn::oracle {

inline TensorD random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  TensorD t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

/// Direct convolution, N x C x H x W with O x C x kh x kw weights.
inline TensorD conv2d(const TensorD& x, const TensorD& w, const TensorD* bias, int stride, int pad) {
  const long n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const long o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const long oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  TensorD out(Shape{static_cast<std::size_t>(n), static_cast<std::size_t>(o), static_cast<std::size_t>(oh),
                    static_cast<std::size_t>(ow)});
  for (long b = 0; b < n; ++b)
    for (long oc = 0; oc < o; ++oc)
      for (long y = 0; y < oh; ++y)
        for (long xx = 0; xx < ow; ++xx) {
          double s = bias ? (*bias)[static_cast<std::size_t>(oc)] : 0.0;
          for (long ic = 0; ic < c; ++ic)
            for (long i = 0; i < kh; ++i)
              for (long j = 0; j < kw; ++j) {
                const long iy = y * stride - pad + i, ix = xx * stride - pad + j;
                if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
                s += x.at(b, ic, iy, ix) * w.at(oc, ic, i, j);
              }
          out.at(b, oc, y, xx) = s;
        }
  return out;
}

/// Transposed convolution by scattering every input pixel; weights Cin x Cout x kh x kw.
inline TensorD deconv2d(const TensorD& x, const TensorD& w, const TensorD* bias, int stride, int pad) {
  const long n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const long o = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const long oh = (h - 1) * stride - 2 * pad + kh, ow = (wd - 1) * stride - 2 * pad + kw;
  TensorD out(Shape{static_cast<std::size_t>(n), static_cast<std::size_t>(o), static_cast<std::size_t>(oh),
                    static_cast<std::size_t>(ow)});
  for (long b = 0; b < n; ++b) {
    for (long oc = 0; oc < o; ++oc)
      for (long y = 0; y < oh; ++y)
        for (long xx = 0; xx < ow; ++xx) out.at(b, oc, y, xx) = bias ? (*bias)[static_cast<std::size_t>(oc)] : 0.0;
    for (long ic = 0; ic < c; ++ic)
      for (long y = 0; y < h; ++y)
        for (long xx = 0; xx < wd; ++xx)
          for (long oc = 0; oc < o; ++oc)
            for (long i = 0; i < kh; ++i)
              for (long j = 0; j < kw; ++j) {
                const long ty = y * stride - pad + i, tx = xx * stride - pad + j;
                if (ty < 0 || tx < 0 || ty >= oh || tx >= ow) continue;
                out.at(b, oc, ty, tx) += x.at(b, ic, y, xx) * w.at(ic, oc, i, j);
              }
  }
  return out;
}

/// Patch correlation written directly from its definition:
/// c(x1, x1 + delta) = sum over o in [-k, k]^2 of <f1(x1 + o), f2(x1 + delta + o)>.
inline TensorD correlate(const TensorD& f1, const TensorD& f2, int k, int d) {
  const long n = f1.dim(0), c = f1.dim(1), h = f1.dim(2), w = f1.dim(3);
  const long side = 2 * d + 1;
  TensorD out(Shape{static_cast<std::size_t>(n), static_cast<std::size_t>(side * side), static_cast<std::size_t>(h),
                    static_cast<std::size_t>(w)});
  auto val = [&](const TensorD& f, long b, long ch, long y, long x) {
    return (y < 0 || x < 0 || y >= h || x >= w) ? 0.0 : f.at(b, ch, y, x);
  };
  for (long b = 0; b < n; ++b)
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x)
        for (long dy = -d; dy <= d; ++dy)
          for (long dx = -d; dx <= d; ++dx) {
            double s = 0;
            for (long oy = -k; oy <= k; ++oy)
              for (long ox = -k; ox <= k; ++ox)
                for (long ch = 0; ch < c; ++ch)
                  s += val(f1, b, ch, y + oy, x + ox) * val(f2, b, ch, y + dy + oy, x + dx + ox);
            out.at(b, (dy + d) * side + (dx + d), y, x) = s;
          }
  return out;
}

/// Central finite differences of the scalar f at x, one coordinate at a time.
inline std::vector<double> numeric_gradient(const std::function<double(const TensorD&)>& f, TensorD x,
                                            double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// Largest |a - n| / max(|a|, |n|, floor) over all entries.
inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                                 double floor = 1e-6) {
  double worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

/// Sum of out * r for a fixed random r: turns any op into a scalar.
inline double project(const TensorD& out, const TensorD& r) {
  double s = 0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * r[i];
  return s;
}

struct Counts {
  std::uint64_t tp = 0, fp = 0, fn = 0;
};

/// Recount at threshold t with nothing shared with the library code path.
inline Counts recount(const eval::EdgeProbabilityMap& p, const dic::CrackEdgeMap& g, double t) {
  Counts c;
  for (std::size_t y = 0; y < g.height; ++y)
    for (std::size_t x = 0; x < g.width; ++x) {
      const bool pred = static_cast<double>(p.values[y * p.width + x]) >= t;
      const bool truth = g.pixels[y * g.width + x] != 0;
      c.tp += pred && truth;
      c.fp += pred && !truth;
      c.fn += !pred && truth;
    }
  return c;
}

inline double f_measure(const Counts& c) {
  const double p = c.tp + c.fp ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
  const double r = c.tp + c.fn ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
  return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

/// Brute-force ODS: pooled counts per threshold, best F over t = 0.01..0.99.
inline std::pair<double, double> ods(const std::vector<eval::EdgeProbabilityMap>& preds,
                                     const std::vector<dic::CrackEdgeMap>& gts) {
  double best = -1, best_t = 0;
  for (int i = 1; i <= 99; ++i) {
    const double t = i / 100.0;
    Counts pooled;
    for (std::size_t f = 0; f < preds.size(); ++f) {
      const Counts c = recount(preds[f], gts[f], t);
      pooled.tp += c.tp;
      pooled.fp += c.fp;
      pooled.fn += c.fn;
    }
    const double fm = f_measure(pooled);
    if (fm > best) {
      best = fm;
      best_t = t;
    }
  }
  return {best, best_t};
}

/// Brute-force OIS with the no-crack convention (nothing to find, nothing found -> 1).
inline double ois(const std::vector<eval::EdgeProbabilityMap>& preds, const std::vector<dic::CrackEdgeMap>& gts) {
  double sum = 0;
  for (std::size_t f = 0; f < preds.size(); ++f) {
    double best = 0;
    for (int i = 1; i <= 99; ++i) {
      const Counts c = recount(preds[f], gts[f], i / 100.0);
      best = std::max(best, c.tp + c.fp + c.fn == 0 ? 1.0 : f_measure(c));
    }
    sum += best;
  }
  return sum / static_cast<double>(preds.size());
}

}  // namespace cpn::oracle
