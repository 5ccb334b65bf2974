#include "doctest.h"

#include <array>

#include <random>
#include <vector>

#include "cpn/detail/gemm.hpp"

using cpn::detail::gemm;
using cpn::detail::Trans;

namespace {

template <typename T>
std::vector<T> naive(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const std::vector<T>& a,
                     const std::vector<T>& b) {
  std::vector<T> c(m * n, T(0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = ta == Trans::kNo ? a[i * k + p] : a[p * m + i];
        const T bv = tb == Trans::kNo ? b[p * n + j] : b[j * k + p];
        s += static_cast<double>(av) * bv;
      }
      c[i * n + j] = static_cast<T>(s);
    }
  return c;
}

}  // namespace

TEST_CASE_TEMPLATE("gemm matches a naive product for every transpose combination", T, float, double) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1, 1);
  const std::array<std::array<std::size_t, 3>, 5> shapes{{{1, 1, 1}, {5, 7, 3}, {17, 33, 300}, {40, 2100, 9}, {130, 20, 520}}};
  for (auto [m, n, k] : shapes) {
    for (Trans ta : {Trans::kNo, Trans::kYes})
      for (Trans tb : {Trans::kNo, Trans::kYes}) {
        std::vector<T> a(m * k), b(k * n);
        for (auto& v : a) v = static_cast<T>(u(rng));
        for (auto& v : b) v = static_cast<T>(u(rng));
        const auto want = naive(ta, tb, m, n, k, a, b);
        std::vector<T> c(m * n, T(0));
        gemm<T>(ta, tb, m, n, k, a.data(), ta == Trans::kNo ? k : m, b.data(), tb == Trans::kNo ? n : k, c.data(), n,
                false);
        const double tol = std::is_same_v<T, float> ? 1e-4 * std::sqrt(double(k)) : 1e-12 * double(k);
        for (std::size_t i = 0; i < c.size(); ++i) REQUIRE(std::abs(double(c[i]) - double(want[i])) <= tol);
      }
  }
}

TEST_CASE("gemm accumulates into C and honours leading dimensions") {
  const std::size_t m = 3, n = 4, k = 2, ldc = 6;
  std::vector<double> a{1, 2, 3, 4, 5, 6}, b{1, 0, 2, 1, 0, 1, 1, 2};
  std::vector<double> c(m * ldc, 10.0);
  gemm<double>(Trans::kNo, Trans::kNo, m, n, k, a.data(), k, b.data(), n, c.data(), ldc, true);
  const auto want = naive(Trans::kNo, Trans::kNo, m, n, k, a, b);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) CHECK(c[i * ldc + j] == 10.0 + want[i * n + j]);
    CHECK(c[i * ldc + 4] == 10.0);  // padding untouched
  }
}

TEST_CASE("gemm is bit-reproducible across calls") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(-1, 1);
  const std::size_t m = 70, n = 300, k = 700;
  std::vector<float> a(m * k), b(k * n);
  for (auto& v : a) v = u(rng);
  for (auto& v : b) v = u(rng);
  std::vector<float> c1(m * n), c2(m * n);
  gemm<float>(Trans::kNo, Trans::kNo, m, n, k, a.data(), k, b.data(), n, c1.data(), n, false);
  gemm<float>(Trans::kNo, Trans::kNo, m, n, k, a.data(), k, b.data(), n, c2.data(), n, false);
  CHECK(c1 == c2);
}
