#include "cpn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cpn/detail/gemm.hpp"
#include "cpn/error.hpp"

namespace cpn::ops {
namespace {

using detail::gemm;
using detail::Trans;

struct Dims {
  std::size_t n, c, h, w;
  bool batched;
  std::size_t plane() const { return h * w; }
};

Dims dims_of(const Shape& s, const char* op) {
  if (s.rank() == 4) return {s[0], s[1], s[2], s[3], true};
  if (s.rank() == 3) return {1, s[0], s[1], s[2], false};
  throw ShapeError(std::string(op) + ": expected rank 3 or 4, got " + s.str());
}

Shape make_shape(const Dims& d, std::size_t c, std::size_t h, std::size_t w) {
  return d.batched ? Shape{d.n, c, h, w} : Shape{c, h, w};
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

// Budget for one im2col buffer, in elements.
constexpr std::size_t kColBudget = std::size_t{1} << 22;

std::size_t chunk_for(std::size_t rows, std::size_t positions) {
  std::size_t chunk = std::max<std::size_t>(64, kColBudget / std::max<std::size_t>(rows, 1));
  chunk = (chunk + 31) / 32 * 32;
  return std::min(chunk, positions);
}

struct ConvGeom {
  std::size_t channels, in_h, in_w, kh, kw, out_h, out_w;
  int stride, pad;
};

// col[(c * kh + i) * kw + j][p - p0] for output positions p in [p0, p1).
template <typename T>
void im2col(const T* src, const ConvGeom& g, std::size_t p0, std::size_t p1, T* col) {
  const std::size_t len = p1 - p0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* plane = src + c * g.in_h * g.in_w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* row = col + ((c * g.kh + i) * g.kw + j) * len;
        std::size_t p = p0;
        while (p < p1) {
          const std::size_t oy = p / g.out_w;
          const std::size_t ox0 = p % g.out_w;
          const std::size_t ox1 = std::min(g.out_w, ox0 + (p1 - p));
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(i);
          T* dst = row + (p - p0);
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) {
            std::fill(dst, dst + (ox1 - ox0), T(0));
          } else {
            const T* srow = plane + static_cast<std::size_t>(iy) * g.in_w;
            for (std::size_t ox = ox0; ox < ox1; ++ox) {
              const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(j);
              dst[ox - ox0] = (ix >= 0 && ix < static_cast<long>(g.in_w)) ? srow[ix] : T(0);
            }
          }
          p += ox1 - ox0;
        }
      }
    }
  }
}

// Adjoint of im2col: dst += scatter(col).
template <typename T>
void col2im_add(const T* col, const ConvGeom& g, std::size_t p0, std::size_t p1, T* dst) {
  const std::size_t len = p1 - p0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* plane = dst + c * g.in_h * g.in_w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* row = col + ((c * g.kh + i) * g.kw + j) * len;
        for (std::size_t p = p0; p < p1; ++p) {
          const std::size_t oy = p / g.out_w;
          const std::size_t ox = p % g.out_w;
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(i);
          const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(j);
          if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.in_h) || ix >= static_cast<long>(g.in_w)) continue;
          plane[static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)] += row[p - p0];
        }
      }
    }
  }
}

template <typename T>
void add_bias(T* out, const Tensor<T>& bias, std::size_t channels, std::size_t plane) {
  if (bias.empty()) return;
  for (std::size_t o = 0; o < channels; ++o) {
    const T b = bias[o];
    T* row = out + o * plane;
    for (std::size_t p = 0; p < plane; ++p) row[p] += b;
  }
}

template <typename T>
Tensor<T> bias_grad(const Tensor<T>& grad_out, const Dims& d) {
  Tensor<T> db(Shape{d.c});
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t o = 0; o < d.c; ++o) {
      const T* row = grad_out.ptr() + (n * d.c + o) * d.plane();
      T acc = db[o];
      for (std::size_t p = 0; p < d.plane(); ++p) acc += row[p];
      db[o] = acc;
    }
  return db;
}

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

}  // namespace

std::size_t conv_out_size(std::size_t in, std::size_t kernel, int stride, int padding) {
  require(stride >= 1 && padding >= 0, "conv: stride must be positive and padding non-negative");
  const long padded = static_cast<long>(in) + 2L * padding;
  require(static_cast<long>(kernel) <= padded,
          "conv: kernel " + std::to_string(kernel) + " larger than padded input " + std::to_string(padded));
  return static_cast<std::size_t>((padded - static_cast<long>(kernel)) / stride + 1);
}

std::size_t deconv_out_size(std::size_t in, std::size_t kernel, int stride, int padding) {
  require(stride >= 1 && padding >= 0, "deconv: stride must be positive and padding non-negative");
  const long out = (static_cast<long>(in) - 1) * stride - 2L * padding + static_cast<long>(kernel);
  require(out > 0, "deconv: non-positive output size " + std::to_string(out));
  return static_cast<std::size_t>(out);
}

// ---------------------------------------------------------------------------
// conv2d

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias, int stride,
                 int padding) {
  const Dims d = dims_of(input.shape(), "conv2d");
  require(weights.rank() == 4, "conv2d: weights must be O x C x kh x kw, got " + weights.shape().str());
  const std::size_t out_c = weights.dim(0);
  require(weights.dim(1) == d.c, "conv2d: weight channels " + std::to_string(weights.dim(1)) +
                                     " do not match input channels " + std::to_string(d.c));
  require(bias.empty() || bias.size() == out_c, "conv2d: bias length does not match output channels");
  const ConvGeom g{d.c, d.h, d.w, weights.dim(2), weights.dim(3),
                   conv_out_size(d.h, weights.dim(2), stride, padding),
                   conv_out_size(d.w, weights.dim(3), stride, padding), stride, padding};
  const std::size_t ck = d.c * g.kh * g.kw;
  const std::size_t positions = g.out_h * g.out_w;
  Tensor<T> out(make_shape(d, out_c, g.out_h, g.out_w));
  const std::size_t chunk = chunk_for(ck, positions);
  std::vector<T> col(ck * chunk);
  for (std::size_t n = 0; n < d.n; ++n) {
    const T* src = input.ptr() + n * d.c * d.plane();
    T* dst = out.ptr() + n * out_c * positions;
    for (std::size_t p0 = 0; p0 < positions; p0 += chunk) {
      const std::size_t p1 = std::min(positions, p0 + chunk);
      im2col(src, g, p0, p1, col.data());
      gemm(Trans::kNo, Trans::kNo, out_c, p1 - p0, ck, weights.ptr(), ck, col.data(), p1 - p0, dst + p0, positions,
           false);
    }
    add_bias(dst, bias, out_c, positions);
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights, bool has_bias,
                             const Tensor<T>& grad_out, int stride, int padding, bool need_input_grad) {
  const Dims d = dims_of(input.shape(), "conv2d_backward");
  const Dims od = dims_of(grad_out.shape(), "conv2d_backward");
  const std::size_t out_c = weights.dim(0);
  const ConvGeom g{d.c, d.h, d.w, weights.dim(2), weights.dim(3), od.h, od.w, stride, padding};
  const std::size_t ck = d.c * g.kh * g.kw;
  const std::size_t positions = g.out_h * g.out_w;

  ConvGrads<T> grads;
  grads.weights = Tensor<T>(weights.shape());
  if (need_input_grad) grads.input = Tensor<T>(input.shape());
  if (has_bias) grads.bias = bias_grad(grad_out, od);

  const std::size_t chunk = chunk_for(ck, positions);
  std::vector<T> col(ck * chunk);
  for (std::size_t n = 0; n < d.n; ++n) {
    const T* src = input.ptr() + n * d.c * d.plane();
    const T* gout = grad_out.ptr() + n * out_c * positions;
    for (std::size_t p0 = 0; p0 < positions; p0 += chunk) {
      const std::size_t p1 = std::min(positions, p0 + chunk);
      const std::size_t len = p1 - p0;
      im2col(src, g, p0, p1, col.data());
      gemm(Trans::kNo, Trans::kYes, out_c, ck, len, gout + p0, positions, col.data(), len, grads.weights.ptr(), ck,
           true);
      if (need_input_grad) {
        gemm(Trans::kYes, Trans::kNo, ck, len, out_c, weights.ptr(), ck, gout + p0, positions, col.data(), len, false);
        col2im_add(col.data(), g, p0, p1, grads.input.ptr() + n * d.c * d.plane());
      }
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// deconv2d

template <typename T>
Tensor<T> deconv2d(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias, int stride,
                   int padding) {
  const Dims d = dims_of(input.shape(), "deconv2d");
  require(weights.rank() == 4, "deconv2d: weights must be Cin x Cout x kh x kw, got " + weights.shape().str());
  require(weights.dim(0) == d.c, "deconv2d: weight input channels " + std::to_string(weights.dim(0)) +
                                     " do not match input channels " + std::to_string(d.c));
  const std::size_t out_c = weights.dim(1);
  require(bias.empty() || bias.size() == out_c, "deconv2d: bias length does not match output channels");
  const std::size_t kh = weights.dim(2), kw = weights.dim(3);
  const std::size_t out_h = deconv_out_size(d.h, kh, stride, padding);
  const std::size_t out_w = deconv_out_size(d.w, kw, stride, padding);
  const ConvGeom g{out_c, out_h, out_w, kh, kw, d.h, d.w, stride, padding};
  const std::size_t ck = out_c * kh * kw;
  const std::size_t positions = d.plane();

  Tensor<T> out(make_shape(d, out_c, out_h, out_w));
  const std::size_t chunk = chunk_for(ck, positions);
  std::vector<T> col(ck * chunk);
  for (std::size_t n = 0; n < d.n; ++n) {
    const T* src = input.ptr() + n * d.c * positions;
    T* dst = out.ptr() + n * out_c * out_h * out_w;
    for (std::size_t p0 = 0; p0 < positions; p0 += chunk) {
      const std::size_t p1 = std::min(positions, p0 + chunk);
      gemm(Trans::kYes, Trans::kNo, ck, p1 - p0, d.c, weights.ptr(), ck, src + p0, positions, col.data(), p1 - p0,
           false);
      col2im_add(col.data(), g, p0, p1, dst);
    }
    add_bias(dst, bias, out_c, out_h * out_w);
  }
  return out;
}

template <typename T>
ConvGrads<T> deconv2d_backward(const Tensor<T>& input, const Tensor<T>& weights, bool has_bias,
                               const Tensor<T>& grad_out, int stride, int padding, bool need_input_grad) {
  const Dims d = dims_of(input.shape(), "deconv2d_backward");
  const Dims od = dims_of(grad_out.shape(), "deconv2d_backward");
  const std::size_t out_c = weights.dim(1);
  const std::size_t kh = weights.dim(2), kw = weights.dim(3);
  const ConvGeom g{out_c, od.h, od.w, kh, kw, d.h, d.w, stride, padding};
  const std::size_t ck = out_c * kh * kw;
  const std::size_t positions = d.plane();

  ConvGrads<T> grads;
  grads.weights = Tensor<T>(weights.shape());
  if (need_input_grad) grads.input = Tensor<T>(input.shape());
  if (has_bias) grads.bias = bias_grad(grad_out, od);

  const std::size_t chunk = chunk_for(ck, positions);
  std::vector<T> col(ck * chunk);
  for (std::size_t n = 0; n < d.n; ++n) {
    const T* src = input.ptr() + n * d.c * positions;
    const T* gout = grad_out.ptr() + n * out_c * od.plane();
    for (std::size_t p0 = 0; p0 < positions; p0 += chunk) {
      const std::size_t p1 = std::min(positions, p0 + chunk);
      const std::size_t len = p1 - p0;
      im2col(gout, g, p0, p1, col.data());
      gemm(Trans::kNo, Trans::kYes, d.c, ck, len, src + p0, positions, col.data(), len, grads.weights.ptr(), ck, true);
      if (need_input_grad)
        gemm(Trans::kNo, Trans::kNo, d.c, len, ck, weights.ptr(), ck, col.data(), len,
             grads.input.ptr() + n * d.c * positions + p0, positions, false);
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// pointwise

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& input, T slope) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T(0) ? input[i] : slope * input[i];
  return out;
}

template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out, T slope) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T(0) ? grad_out[i] : slope * grad_out[i];
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    const T x = input[i];
    if (x >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-x));
    } else {
      const T e = std::exp(x);
      out[i] = e / (T(1) + e);
    }
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& output, const Tensor<T>& grad_out) {
  Tensor<T> out(output.shape());
  for (std::size_t i = 0; i < output.size(); ++i) out[i] = grad_out[i] * output[i] * (T(1) - output[i]);
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& input, T factor) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] * factor;
  return out;
}

// ---------------------------------------------------------------------------
// correlation

namespace {

// Valid index range [lo, hi) of x such that 0 <= x + a < n and 0 <= x + b < n.
inline std::pair<long, long> overlap(long n, long a, long b) {
  const long lo = std::max({0L, -a, -b});
  const long hi = std::min({n, n - a, n - b});
  return {lo, std::max(lo, hi)};
}

}  // namespace

template <typename T>
Tensor<T> correlate(const Tensor<T>& f1, const Tensor<T>& f2, int k, int d) {
  require_same(f1, f2, "correlate");
  require(k >= 0 && d >= 0, "correlate: k and d must be non-negative");
  const Dims dm = dims_of(f1.shape(), "correlate");
  const long span = 2L * d + 1;
  const long h = static_cast<long>(dm.h), w = static_cast<long>(dm.w);
  Tensor<T> out(make_shape(dm, static_cast<std::size_t>(span * span), dm.h, dm.w));
  for (std::size_t n = 0; n < dm.n; ++n) {
    const T* a = f1.ptr() + n * dm.c * dm.plane();
    const T* b = f2.ptr() + n * dm.c * dm.plane();
    for (long dy = -d; dy <= d; ++dy) {
      for (long dx = -d; dx <= d; ++dx) {
        T* o = out.ptr() + (n * span * span + (dy + d) * span + (dx + d)) * dm.plane();
        for (long oy = -k; oy <= k; ++oy) {
          const auto [y0, y1] = overlap(h, oy, dy + oy);
          for (long ox = -k; ox <= k; ++ox) {
            const auto [x0, x1] = overlap(w, ox, dx + ox);
            for (std::size_t c = 0; c < dm.c; ++c) {
              const T* pa = a + c * dm.plane();
              const T* pb = b + c * dm.plane();
              for (long y = y0; y < y1; ++y) {
                const T* ra = pa + (y + oy) * w + ox;
                const T* rb = pb + (y + dy + oy) * w + dx + ox;
                T* ro = o + y * w;
                for (long x = x0; x < x1; ++x) ro[x] += ra[x] * rb[x];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> correlate_backward(const Tensor<T>& f1, const Tensor<T>& f2,
                                                   const Tensor<T>& grad_out, int k, int d) {
  const Dims dm = dims_of(f1.shape(), "correlate_backward");
  const long span = 2L * d + 1;
  const long h = static_cast<long>(dm.h), w = static_cast<long>(dm.w);
  Tensor<T> g1(f1.shape()), g2(f2.shape());
  for (std::size_t n = 0; n < dm.n; ++n) {
    const T* a = f1.ptr() + n * dm.c * dm.plane();
    const T* b = f2.ptr() + n * dm.c * dm.plane();
    T* ga = g1.ptr() + n * dm.c * dm.plane();
    T* gb = g2.ptr() + n * dm.c * dm.plane();
    for (long dy = -d; dy <= d; ++dy) {
      for (long dx = -d; dx <= d; ++dx) {
        const T* go = grad_out.ptr() + (n * span * span + (dy + d) * span + (dx + d)) * dm.plane();
        for (long oy = -k; oy <= k; ++oy) {
          const auto [y0, y1] = overlap(h, oy, dy + oy);
          for (long ox = -k; ox <= k; ++ox) {
            const auto [x0, x1] = overlap(w, ox, dx + ox);
            for (std::size_t c = 0; c < dm.c; ++c) {
              const std::size_t off = c * dm.plane();
              for (long y = y0; y < y1; ++y) {
                const long ia = (y + oy) * w + ox;
                const long ib = (y + dy + oy) * w + dx + ox;
                const T* row = go + y * w;
                for (long x = x0; x < x1; ++x) {
                  ga[off + ia + x] += row[x] * b[off + ib + x];
                  gb[off + ib + x] += row[x] * a[off + ia + x];
                }
              }
            }
          }
        }
      }
    }
  }
  return {std::move(g1), std::move(g2)};
}

// ---------------------------------------------------------------------------
// warp

template <typename T>
Tensor<T> warp(const Tensor<T>& image, const Tensor<T>& flow) {
  const Dims di = dims_of(image.shape(), "warp");
  const Dims df = dims_of(flow.shape(), "warp");
  require(df.n == di.n && df.c == 2 && df.h == di.h && df.w == di.w,
          "warp: flow " + flow.shape().str() + " does not match image " + image.shape().str());
  const long h = static_cast<long>(di.h), w = static_cast<long>(di.w);
  Tensor<T> out(image.shape());
  for (std::size_t n = 0; n < di.n; ++n) {
    const T* u = flow.ptr() + n * 2 * di.plane();
    const T* v = u + di.plane();
    for (long y = 0; y < h; ++y) {
      for (long x = 0; x < w; ++x) {
        const std::size_t p = static_cast<std::size_t>(y * w + x);
        const T sx = static_cast<T>(x) + u[p];
        const T sy = static_cast<T>(y) + v[p];
        const T fx0 = std::floor(sx), fy0 = std::floor(sy);
        const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
        const T ax = sx - fx0, ay = sy - fy0;
        const T wts[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
        const long cx[4] = {x0, x0 + 1, x0, x0 + 1};
        const long cy[4] = {y0, y0, y0 + 1, y0 + 1};
        for (std::size_t c = 0; c < di.c; ++c) {
          const T* plane = image.ptr() + (n * di.c + c) * di.plane();
          T acc = 0;
          for (int q = 0; q < 4; ++q)
            if (cx[q] >= 0 && cx[q] < w && cy[q] >= 0 && cy[q] < h) acc += wts[q] * plane[cy[q] * w + cx[q]];
          out.ptr()[(n * di.c + c) * di.plane() + p] = acc;
        }
      }
    }
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> warp_backward(const Tensor<T>& image, const Tensor<T>& flow,
                                              const Tensor<T>& grad_out) {
  const Dims di = dims_of(image.shape(), "warp_backward");
  const long h = static_cast<long>(di.h), w = static_cast<long>(di.w);
  Tensor<T> gimg(image.shape()), gflow(flow.shape());
  for (std::size_t n = 0; n < di.n; ++n) {
    const T* u = flow.ptr() + n * 2 * di.plane();
    const T* v = u + di.plane();
    T* gu = gflow.ptr() + n * 2 * di.plane();
    T* gv = gu + di.plane();
    for (long y = 0; y < h; ++y) {
      for (long x = 0; x < w; ++x) {
        const std::size_t p = static_cast<std::size_t>(y * w + x);
        const T sx = static_cast<T>(x) + u[p];
        const T sy = static_cast<T>(y) + v[p];
        const T fx0 = std::floor(sx), fy0 = std::floor(sy);
        const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
        const T ax = sx - fx0, ay = sy - fy0;
        auto inside = [&](long cx, long cy) { return cx >= 0 && cx < w && cy >= 0 && cy < h; };
        const bool in00 = inside(x0, y0), in10 = inside(x0 + 1, y0);
        const bool in01 = inside(x0, y0 + 1), in11 = inside(x0 + 1, y0 + 1);
        T du = 0, dv = 0;
        for (std::size_t c = 0; c < di.c; ++c) {
          const std::size_t base = (n * di.c + c) * di.plane();
          const T* plane = image.ptr() + base;
          T* gplane = gimg.ptr() + base;
          const T g = grad_out.ptr()[base + p];
          const T i00 = in00 ? plane[y0 * w + x0] : T(0);
          const T i10 = in10 ? plane[y0 * w + x0 + 1] : T(0);
          const T i01 = in01 ? plane[(y0 + 1) * w + x0] : T(0);
          const T i11 = in11 ? plane[(y0 + 1) * w + x0 + 1] : T(0);
          if (in00) gplane[y0 * w + x0] += g * (1 - ax) * (1 - ay);
          if (in10) gplane[y0 * w + x0 + 1] += g * ax * (1 - ay);
          if (in01) gplane[(y0 + 1) * w + x0] += g * (1 - ax) * ay;
          if (in11) gplane[(y0 + 1) * w + x0 + 1] += g * ax * ay;
          du += g * ((1 - ay) * (i10 - i00) + ay * (i11 - i01));
          dv += g * ((1 - ax) * (i01 - i00) + ax * (i11 - i10));
        }
        gu[p] = du;
        gv[p] = dv;
      }
    }
  }
  return {std::move(gimg), std::move(gflow)};
}

// ---------------------------------------------------------------------------
// brightness error

template <typename T>
Tensor<T> brightness_error(const Tensor<T>& warped, const Tensor<T>& reference) {
  require_same(warped, reference, "brightness_error");
  const Dims d = dims_of(warped.shape(), "brightness_error");
  Tensor<T> out(make_shape(d, 1, d.h, d.w));
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t p = 0; p < d.plane(); ++p) {
      T acc = 0;
      for (std::size_t c = 0; c < d.c; ++c) {
        const std::size_t i = (n * d.c + c) * d.plane() + p;
        const T diff = warped[i] - reference[i];
        acc += diff * diff;
      }
      out[n * d.plane() + p] = std::sqrt(acc);
    }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> brightness_error_backward(const Tensor<T>& warped, const Tensor<T>& reference,
                                                          const Tensor<T>& grad_out) {
  const Dims d = dims_of(warped.shape(), "brightness_error_backward");
  Tensor<T> gw(warped.shape()), gr(reference.shape());
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t p = 0; p < d.plane(); ++p) {
      T sq = 0;
      for (std::size_t c = 0; c < d.c; ++c) {
        const std::size_t i = (n * d.c + c) * d.plane() + p;
        sq += (warped[i] - reference[i]) * (warped[i] - reference[i]);
      }
      const T norm = std::sqrt(sq);
      if (norm == T(0)) continue;  // subgradient 0 at the cusp
      const T g = grad_out[n * d.plane() + p] / norm;
      for (std::size_t c = 0; c < d.c; ++c) {
        const std::size_t i = (n * d.c + c) * d.plane() + p;
        gw[i] = g * (warped[i] - reference[i]);
        gr[i] = -gw[i];
      }
    }
  return {std::move(gw), std::move(gr)};
}

// ---------------------------------------------------------------------------
// bilinear upsampling

namespace {

struct Tap {
  std::size_t i0, i1;
  double frac;
};

std::vector<Tap> taps(std::size_t in, int factor) {
  std::vector<Tap> out(in * static_cast<std::size_t>(factor));
  for (std::size_t o = 0; o < out.size(); ++o) {
    double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
    if (src < 0) src = 0;
    const std::size_t i0 = std::min(static_cast<std::size_t>(src), in - 1);
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    out[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& input, int factor) {
  require(factor >= 1, "upsample_bilinear: factor must be positive");
  const Dims d = dims_of(input.shape(), "upsample_bilinear");
  if (factor == 1) return input;
  const auto ty = taps(d.h, factor), tx = taps(d.w, factor);
  const std::size_t oh = ty.size(), ow = tx.size();
  Tensor<T> out(make_shape(d, d.c, oh, ow));
  for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
    const T* src = input.ptr() + nc * d.plane();
    T* dst = out.ptr() + nc * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      const T fy = static_cast<T>(ty[y].frac);
      const T* r0 = src + ty[y].i0 * d.w;
      const T* r1 = src + ty[y].i1 * d.w;
      for (std::size_t x = 0; x < ow; ++x) {
        const T fx = static_cast<T>(tx[x].frac);
        const T top = (1 - fx) * r0[tx[x].i0] + fx * r0[tx[x].i1];
        const T bot = (1 - fx) * r1[tx[x].i0] + fx * r1[tx[x].i1];
        dst[y * ow + x] = (1 - fy) * top + fy * bot;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> upsample_bilinear_backward(const Tensor<T>& grad_out, const Shape& input_shape, int factor) {
  if (factor == 1) return grad_out;
  const Dims d = dims_of(input_shape, "upsample_bilinear_backward");
  const auto ty = taps(d.h, factor), tx = taps(d.w, factor);
  const std::size_t oh = ty.size(), ow = tx.size();
  Tensor<T> gin(input_shape);
  for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
    const T* g = grad_out.ptr() + nc * oh * ow;
    T* dst = gin.ptr() + nc * d.plane();
    for (std::size_t y = 0; y < oh; ++y) {
      const T fy = static_cast<T>(ty[y].frac);
      T* r0 = dst + ty[y].i0 * d.w;
      T* r1 = dst + ty[y].i1 * d.w;
      for (std::size_t x = 0; x < ow; ++x) {
        const T fx = static_cast<T>(tx[x].frac);
        const T v = g[y * ow + x];
        r0[tx[x].i0] += (1 - fy) * (1 - fx) * v;
        r0[tx[x].i1] += (1 - fy) * fx * v;
        r1[tx[x].i0] += fy * (1 - fx) * v;
        r1[tx[x].i1] += fy * fx * v;
      }
    }
  }
  return gin;
}

// ---------------------------------------------------------------------------
// concat

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>* const> parts) {
  require(!parts.empty(), "concat: no inputs");
  const Dims d0 = dims_of(parts[0]->shape(), "concat");
  std::size_t channels = 0;
  for (const auto* p : parts) {
    const Dims d = dims_of(p->shape(), "concat");
    require(d.batched == d0.batched && d.n == d0.n && d.h == d0.h && d.w == d0.w,
            "concat: spatial mismatch " + p->shape().str() + " vs " + parts[0]->shape().str());
    channels += d.c;
  }
  Tensor<T> out(make_shape(d0, channels, d0.h, d0.w));
  for (std::size_t n = 0; n < d0.n; ++n) {
    T* dst = out.ptr() + n * channels * d0.plane();
    for (const auto* p : parts) {
      const std::size_t c = p->shape()[d0.batched ? 1 : 0];
      const T* src = p->ptr() + n * c * d0.plane();
      std::copy(src, src + c * d0.plane(), dst);
      dst += c * d0.plane();
    }
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> concat_backward(const Tensor<T>& grad_out, std::span<const Shape> part_shapes) {
  const Dims d = dims_of(grad_out.shape(), "concat_backward");
  std::vector<Tensor<T>> out;
  out.reserve(part_shapes.size());
  for (const auto& s : part_shapes) out.emplace_back(s);
  for (std::size_t n = 0; n < d.n; ++n) {
    const T* src = grad_out.ptr() + n * d.c * d.plane();
    for (auto& part : out) {
      const std::size_t c = part.shape()[d.batched ? 1 : 0];
      std::copy(src, src + c * d.plane(), part.ptr() + n * c * d.plane());
      src += c * d.plane();
    }
  }
  return out;
}

#define CPN_INSTANTIATE_OPS(T)                                                                                   \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);                     \
  template ConvGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, bool, const Tensor<T>&, int, int,   \
                                        bool);                                                                   \
  template Tensor<T> deconv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);                   \
  template ConvGrads<T> deconv2d_backward(const Tensor<T>&, const Tensor<T>&, bool, const Tensor<T>&, int, int, \
                                          bool);                                                                 \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                                            \
  template Tensor<T> leaky_relu_backward(const Tensor<T>&, const Tensor<T>&, T);                                 \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                                  \
  template Tensor<T> sigmoid_backward(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> correlate(const Tensor<T>&, const Tensor<T>&, int, int);                                    \
  template std::pair<Tensor<T>, Tensor<T>> correlate_backward(const Tensor<T>&, const Tensor<T>&,               \
                                                              const Tensor<T>&, int, int);                       \
  template Tensor<T> warp(const Tensor<T>&, const Tensor<T>&);                                                   \
  template std::pair<Tensor<T>, Tensor<T>> warp_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);  \
  template Tensor<T> brightness_error(const Tensor<T>&, const Tensor<T>&);                                       \
  template std::pair<Tensor<T>, Tensor<T>> brightness_error_backward(const Tensor<T>&, const Tensor<T>&,        \
                                                                     const Tensor<T>&);                          \
  template Tensor<T> upsample_bilinear(const Tensor<T>&, int);                                                   \
  template Tensor<T> upsample_bilinear_backward(const Tensor<T>&, const Shape&, int);                            \
  template Tensor<T> concat(std::span<const Tensor<T>* const>);                                                  \
  template std::vector<Tensor<T>> concat_backward(const Tensor<T>&, std::span<const Shape>);                     \
  template Tensor<T> scale(const Tensor<T>&, T);

CPN_INSTANTIATE_OPS(float)
CPN_INSTANTIATE_OPS(double)

#undef CPN_INSTANTIATE_OPS

}  // namespace cpn::ops
