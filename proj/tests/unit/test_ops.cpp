#include "doctest.h"

#include "cpn/error.hpp"
#include "cpn/ops.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace cpn;

namespace {

double max_abs_diff(const TensorD& a, const TensorD& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("conv2d matches direct convolution") {
  std::mt19937_64 rng(11);
  for (int it = 0; it < 30; ++it) {
    const std::size_t c = 1 + it % 4, o = 1 + it % 3, k = (it % 2) ? 3 : 5;
    const int stride = 1 + it % 2, pad = it % 3;
    const TensorD x = oracle::random_tensor(Shape{2, c, 9, 7}, rng);
    const TensorD w = oracle::random_tensor(Shape{o, c, k, k}, rng);
    const TensorD b = oracle::random_tensor(Shape{o}, rng);
    CHECK(max_abs_diff(ops::conv2d(x, w, b, stride, pad), oracle::conv2d(x, w, &b, stride, pad)) < 1e-12);
    CHECK(max_abs_diff(ops::conv2d(x, w, TensorD(), stride, pad), oracle::conv2d(x, w, nullptr, stride, pad)) < 1e-12);
  }
}

TEST_CASE("deconv2d matches scatter-based transposed convolution") {
  std::mt19937_64 rng(12);
  for (int it = 0; it < 20; ++it) {
    const std::size_t c = 1 + it % 3, o = 1 + it % 4;
    const int stride = 1 + it % 2, pad = it % 2;
    const std::size_t k = stride == 2 ? 4 : 3;
    const TensorD x = oracle::random_tensor(Shape{1, c, 5, 6}, rng);
    const TensorD w = oracle::random_tensor(Shape{c, o, k, k}, rng);
    const TensorD b = oracle::random_tensor(Shape{o}, rng);
    CHECK(max_abs_diff(ops::deconv2d(x, w, b, stride, pad), oracle::deconv2d(x, w, &b, stride, pad)) < 1e-12);
  }
}

TEST_CASE("stride-2 deconvolution with 4x4 kernels doubles the side") {
  CHECK(ops::deconv_out_size(16, 4, 2, 1) == 32);
  CHECK(ops::conv_out_size(32, 3, 2, 1) == 16);
  CHECK_THROWS_AS(ops::conv_out_size(2, 7, 1, 0), ShapeError);
}

TEST_CASE("correlation equals brute-force summation and has D^2 channels") {
  std::mt19937_64 rng(13);
  for (int it = 0; it < 40; ++it) {
    const std::size_t c = 1 + it % 4, h = 2 + it % 5, w = 2 + (it / 2) % 5;
    const int k = it % 2, d = it % 3;
    const TensorD f1 = oracle::random_tensor(Shape{1, c, h, w}, rng);
    const TensorD f2 = oracle::random_tensor(Shape{1, c, h, w}, rng);
    const TensorD got = ops::correlate(f1, f2, k, d);
    CHECK(got.dim(1) == static_cast<std::size_t>((2 * d + 1) * (2 * d + 1)));
    CHECK(max_abs_diff(got, oracle::correlate(f1, f2, k, d)) <= 1e-10);
  }
}

TEST_CASE("every differentiable op passes finite differences") {
  const auto worst = oracle::gradient_check_all(20, 99);
  CHECK(worst.size() == 11);
  for (const auto& [name, err] : worst) {
    INFO(name);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("warp by an integer flow shifts and zero-fills") {
  TensorD img(Shape{1, 1, 3, 4});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i + 1);
  TensorD flow(Shape{1, 2, 3, 4});
  for (std::size_t i = 0; i < 12; ++i) flow[i] = 1.0;  // u = 1: sample one column to the right
  const TensorD out = ops::warp(img, flow);
  for (std::size_t y = 0; y < 3; ++y) {
    for (std::size_t x = 0; x < 3; ++x) CHECK(out.at(0, 0, y, x) == img.at(0, 0, y, x + 1));
    CHECK(out.at(0, 0, y, 3) == 0.0);
  }
}

TEST_CASE("zero flow warp is the identity") {
  std::mt19937_64 rng(5);
  const TensorD img = oracle::random_tensor(Shape{2, 3, 5, 6}, rng);
  const TensorD out = ops::warp(img, TensorD(Shape{2, 2, 5, 6}));
  CHECK(max_abs_diff(out, img) == 0.0);
}

TEST_CASE("brightness error is the channel-wise Euclidean norm") {
  TensorD a(Shape{1, 3, 1, 1}), b(Shape{1, 3, 1, 1});
  a[0] = 3;
  a[1] = 4;
  const TensorD e = ops::brightness_error(a, b);
  CHECK(e.dim(1) == 1);
  CHECK(e[0] == doctest::Approx(5.0));
}

TEST_CASE("bilinear upsampling keeps constants and uses half-pixel centres") {
  TensorD c(Shape{1, 1, 3, 3}, 2.5);
  const TensorD up = ops::upsample_bilinear(c, 4);
  CHECK(up.dim(2) == 12);
  for (std::size_t i = 0; i < up.size(); ++i) CHECK(up[i] == doctest::Approx(2.5));
  // Two columns 0 and 1, factor 2: output x maps to source (x + 0.5) / 2 - 0.5.
  TensorD r(Shape{1, 1, 1, 2});
  r[1] = 1.0;
  const TensorD u = ops::upsample_bilinear(r, 2);
  CHECK(u[0] == doctest::Approx(0.0));
  CHECK(u[1] == doctest::Approx(0.25));
  CHECK(u[2] == doctest::Approx(0.75));
  CHECK(u[3] == doctest::Approx(1.0));
}

TEST_CASE("concat stacks channels in argument order") {
  TensorD a(Shape{1, 1, 1, 2}, 1.0), b(Shape{1, 2, 1, 2}, 2.0);
  const TensorD* parts[] = {&a, &b};
  const TensorD c = ops::concat<double>(parts);
  CHECK(c.dim(1) == 3);
  CHECK(c.at(0, 0, 0, 1) == 1.0);
  CHECK(c.at(0, 2, 0, 0) == 2.0);
}

TEST_CASE("shape contracts are enforced") {
  TensorD x(Shape{1, 2, 4, 4}), w(Shape{3, 5, 3, 3});
  CHECK_THROWS_AS(ops::conv2d(x, w, TensorD(), 1, 1), ShapeError);
  CHECK_THROWS_AS(ops::correlate(x, TensorD(Shape{1, 2, 4, 5}), 0, 1), ShapeError);
  CHECK_THROWS_AS(ops::warp(x, TensorD(Shape{1, 3, 4, 4})), ShapeError);
}

TEST_CASE("sigmoid is stable for large logits") {
  TensorD z(Shape{3});
  z[0] = -800;
  z[1] = 0;
  z[2] = 800;
  const TensorD s = ops::sigmoid(z);
  CHECK(s[0] == 0.0);
  CHECK(s[1] == 0.5);
  CHECK(s[2] == 1.0);
}
