#pragma once

// Finite-difference checks of every differentiable kernel and of the loss.
// Each check draws a random small instance, projects the op output onto a
// random direction and compares analytic gradients against central
// differences for every input.

#include <map>
#include <string>

#include "cpn/ops.hpp"
#include "cpn/train.hpp"
#include "oracles.hpp"

namespace cpn::oracle {

namespace detail {

inline std::vector<double> as_vector(const TensorD& t) { return {t.data().begin(), t.data().end()}; }

inline int pick(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

inline std::size_t pz(std::mt19937_64& rng, int lo, int hi) { return static_cast<std::size_t>(pick(rng, lo, hi)); }

/// Worst relative error of d/dx project(op(x...), r) for every operand.
inline double check_operands(std::vector<TensorD> operands,
                             const std::function<TensorD(const std::vector<TensorD>&)>& forward,
                             const std::function<std::vector<TensorD>(const std::vector<TensorD>&, const TensorD&)>& backward,
                             std::mt19937_64& rng) {
  const TensorD out = forward(operands);
  const TensorD r = random_tensor(out.shape(), rng);
  const auto grads = backward(operands, r);
  double worst = 0;
  for (std::size_t k = 0; k < operands.size(); ++k) {
    auto f = [&](const TensorD& probe) {
      auto ops = operands;
      ops[k] = probe;
      return project(forward(ops), r);
    };
    const auto numeric = numeric_gradient(f, operands[k]);
    worst = std::max(worst, max_relative_error(as_vector(grads[k]), numeric));
  }
  return worst;
}

}  // namespace detail

/// Worst relative error over `instances` random instances, per op name.
inline std::map<std::string, double> gradient_check_all(int instances, std::uint64_t seed) {
  using detail::pick;
  using detail::pz;
  std::mt19937_64 rng(seed);
  std::map<std::string, double> worst;
  auto note = [&](const std::string& name, double e) { worst[name] = std::max(worst[name], e); };

  for (int it = 0; it < instances; ++it) {
    {  // conv2d
      const std::size_t n = pz(rng, 1, 2), c = pz(rng, 1, 3), o = pz(rng, 1, 3);
      const std::size_t k = pick(rng, 0, 1) ? 3 : 1;
      const int stride = pick(rng, 1, 2), pad = pick(rng, 0, static_cast<int>(k / 2));
      const std::size_t h = pz(rng, 3, 6), w = pz(rng, 3, 6);
      std::vector<TensorD> in{random_tensor(Shape{n, c, h, w}, rng), random_tensor(Shape{o, c, k, k}, rng),
                              random_tensor(Shape{o}, rng)};
      note("conv2d", detail::check_operands(
                         in, [&](const auto& v) { return ops::conv2d(v[0], v[1], v[2], stride, pad); },
                         [&](const auto& v, const TensorD& g) {
                           auto r = ops::conv2d_backward(v[0], v[1], true, g, stride, pad);
                           return std::vector<TensorD>{r.input, r.weights, r.bias};
                         },
                         rng));
    }
    {  // deconv2d
      const std::size_t n = pz(rng, 1, 2), c = pz(rng, 1, 3), o = pz(rng, 1, 3);
      const int stride = pick(rng, 1, 2);
      const std::size_t k = stride == 2 ? 4 : 3;
      const int pad = pick(rng, 0, 1);
      const std::size_t h = pz(rng, 2, 5), w = pz(rng, 2, 5);
      std::vector<TensorD> in{random_tensor(Shape{n, c, h, w}, rng), random_tensor(Shape{c, o, k, k}, rng),
                              random_tensor(Shape{o}, rng)};
      note("deconv2d", detail::check_operands(
                           in, [&](const auto& v) { return ops::deconv2d(v[0], v[1], v[2], stride, pad); },
                           [&](const auto& v, const TensorD& g) {
                             auto r = ops::deconv2d_backward(v[0], v[1], true, g, stride, pad);
                             return std::vector<TensorD>{r.input, r.weights, r.bias};
                           },
                           rng));
    }
    const Shape img{pz(rng, 1, 2), pz(rng, 1, 3), pz(rng, 2, 6), pz(rng, 2, 6)};
    {
      std::vector<TensorD> in{random_tensor(img, rng)};
      note("leaky_relu", detail::check_operands(
                             in, [](const auto& v) { return ops::leaky_relu(v[0], 0.1); },
                             [](const auto& v, const TensorD& g) {
                               return std::vector<TensorD>{ops::leaky_relu_backward(v[0], g, 0.1)};
                             },
                             rng));
      note("sigmoid", detail::check_operands(
                          in, [](const auto& v) { return ops::sigmoid(v[0]); },
                          [](const auto& v, const TensorD& g) {
                            return std::vector<TensorD>{ops::sigmoid_backward(ops::sigmoid(v[0]), g)};
                          },
                          rng));
      const double s = std::uniform_real_distribution<double>(-2, 2)(rng);
      note("scale", detail::check_operands(
                        in, [s](const auto& v) { return ops::scale(v[0], s); },
                        [s](const auto&, const TensorD& g) { return std::vector<TensorD>{ops::scale(g, s)}; }, rng));
    }
    {  // correlate
      const int k = pick(rng, 0, 1), d = pick(rng, 0, 2);
      std::vector<TensorD> in{random_tensor(img, rng), random_tensor(img, rng)};
      note("correlate", detail::check_operands(
                            in, [&](const auto& v) { return ops::correlate(v[0], v[1], k, d); },
                            [&](const auto& v, const TensorD& g) {
                              auto [a, b] = ops::correlate_backward(v[0], v[1], g, k, d);
                              return std::vector<TensorD>{a, b};
                            },
                            rng));
    }
    {  // warp
      const Shape flow{img[0], 2, img[2], img[3]};
      std::vector<TensorD> in{random_tensor(img, rng), random_tensor(flow, rng, -2.0, 2.0)};
      note("warp", detail::check_operands(
                       in, [](const auto& v) { return ops::warp(v[0], v[1]); },
                       [](const auto& v, const TensorD& g) {
                         auto [a, b] = ops::warp_backward(v[0], v[1], g);
                         return std::vector<TensorD>{a, b};
                       },
                       rng));
    }
    {  // brightness error
      std::vector<TensorD> in{random_tensor(img, rng), random_tensor(img, rng)};
      note("brightness_error", detail::check_operands(
                                   in, [](const auto& v) { return ops::brightness_error(v[0], v[1]); },
                                   [](const auto& v, const TensorD& g) {
                                     auto [a, b] = ops::brightness_error_backward(v[0], v[1], g);
                                     return std::vector<TensorD>{a, b};
                                   },
                                   rng));
    }
    {  // upsample
      const int factor = pick(rng, 2, 4);
      std::vector<TensorD> in{random_tensor(img, rng)};
      note("upsample_bilinear", detail::check_operands(
                                    in, [&](const auto& v) { return ops::upsample_bilinear(v[0], factor); },
                                    [&](const auto& v, const TensorD& g) {
                                      return std::vector<TensorD>{ops::upsample_bilinear_backward(g, v[0].shape(), factor)};
                                    },
                                    rng));
    }
    {  // concat
      const std::size_t parts = pz(rng, 2, 3);
      std::vector<TensorD> in;
      for (std::size_t p = 0; p < parts; ++p) in.push_back(random_tensor(Shape{img[0], pz(rng, 1, 3), img[2], img[3]}, rng));
      note("concat", detail::check_operands(
                         in,
                         [](const auto& v) {
                           std::vector<const TensorD*> ptrs;
                           for (const auto& t : v) ptrs.push_back(&t);
                           return ops::concat<double>(ptrs);
                         },
                         [](const auto& v, const TensorD& g) {
                           std::vector<Shape> shapes;
                           for (const auto& t : v) shapes.push_back(t.shape());
                           return ops::concat_backward(g, std::span<const Shape>(shapes));
                         },
                         rng));
    }
    {  // class-balanced loss, logits straight in
      const std::size_t n = pz(rng, 1, 3), h = pz(rng, 3, 8), w = pz(rng, 3, 8);
      std::vector<dic::CrackEdgeMap> gts;
      std::bernoulli_distribution edge(0.2);
      for (std::size_t b = 0; b < n; ++b) {
        dic::CrackEdgeMap m(w, h);
        for (auto& p : m.pixels) p = edge(rng) ? 1 : 0;
        gts.push_back(m);
      }
      train::LossConfig cfg{std::uniform_real_distribution<double>(0, 0.2)(rng),
                            std::uniform_real_distribution<double>(0.8, 1.3)(rng)};
      const TensorD z = random_tensor(Shape{n, 1, h, w}, rng, -4.0, 4.0);
      const auto analytic = train::class_balanced_bce(z, gts, cfg);
      const auto numeric =
          numeric_gradient([&](const TensorD& probe) { return train::class_balanced_bce(probe, gts, cfg).loss; }, z);
      note("class_balanced_bce", max_relative_error(detail::as_vector(analytic.grad), numeric));
    }
  }
  return worst;
}

}  // namespace cpn::oracle
