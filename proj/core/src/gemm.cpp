#include "cpn/detail/gemm.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace cpn::detail {
namespace {

template <typename T>
struct Tile;
template <>
struct Tile<float> {
  static constexpr std::size_t kMr = 8;
  static constexpr std::size_t kNr = 32;
};
template <>
struct Tile<double> {
  static constexpr std::size_t kMr = 8;
  static constexpr std::size_t kNr = 16;
};

constexpr std::size_t kKc = 256;
constexpr std::size_t kMc = 128;
constexpr std::size_t kNc = 2048;

template <typename T>
inline T load(const T* m, std::size_t ld, Trans t, std::size_t row, std::size_t col) {
  return t == Trans::kNo ? m[row * ld + col] : m[col * ld + row];
}

// Packs op(A)[i0:i0+mc, p0:p0+kc] into row panels of kMr, k-major inside a panel.
template <typename T>
void pack_a(const T* a, std::size_t lda, Trans ta, std::size_t i0, std::size_t mc, std::size_t p0,
            std::size_t kc, T* out) {
  constexpr std::size_t mr = Tile<T>::kMr;
  for (std::size_t ip = 0; ip < mc; ip += mr) {
    const std::size_t rows = std::min(mr, mc - ip);
    for (std::size_t p = 0; p < kc; ++p) {
      for (std::size_t r = 0; r < rows; ++r) out[r] = load(a, lda, ta, i0 + ip + r, p0 + p);
      for (std::size_t r = rows; r < mr; ++r) out[r] = T(0);
      out += mr;
    }
  }
}

// Packs op(B)[p0:p0+kc, j0:j0+nc] into column panels of kNr, k-major inside a panel.
template <typename T>
void pack_b(const T* b, std::size_t ldb, Trans tb, std::size_t p0, std::size_t kc, std::size_t j0,
            std::size_t nc, T* out) {
  constexpr std::size_t nr = Tile<T>::kNr;
  for (std::size_t jp = 0; jp < nc; jp += nr) {
    const std::size_t cols = std::min(nr, nc - jp);
    for (std::size_t p = 0; p < kc; ++p) {
      if (tb == Trans::kNo && cols == nr) {
        std::memcpy(out, b + (p0 + p) * ldb + j0 + jp, nr * sizeof(T));
      } else {
        for (std::size_t c = 0; c < cols; ++c) out[c] = load(b, ldb, tb, p0 + p, j0 + jp + c);
        for (std::size_t c = cols; c < nr; ++c) out[c] = T(0);
      }
      out += nr;
    }
  }
}

template <typename T>
void micro_kernel(std::size_t kc, const T* __restrict ap, const T* __restrict bp, T* __restrict acc) {
  constexpr std::size_t mr = Tile<T>::kMr;
  constexpr std::size_t nr = Tile<T>::kNr;
  T c[mr][nr];
  for (std::size_t i = 0; i < mr; ++i)
    for (std::size_t j = 0; j < nr; ++j) c[i][j] = acc[i * nr + j];
  for (std::size_t p = 0; p < kc; ++p) {
    const T* bk = bp + p * nr;
    const T* ak = ap + p * mr;
#pragma GCC unroll 8
    for (std::size_t i = 0; i < mr; ++i) {
      const T ai = ak[i];
#pragma GCC unroll 32
      for (std::size_t j = 0; j < nr; ++j) c[i][j] += ai * bk[j];
    }
  }
  for (std::size_t i = 0; i < mr; ++i)
    for (std::size_t j = 0; j < nr; ++j) acc[i * nr + j] = c[i][j];
}

}  // namespace

template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  constexpr std::size_t mr = Tile<T>::kMr;
  constexpr std::size_t nr = Tile<T>::kNr;
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate)
      for (std::size_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, T(0));
    return;
  }

  std::vector<T> bpack(kKc * (kNc + nr));
  std::vector<T> apack(kKc * (kMc + mr));

  for (std::size_t j0 = 0; j0 < n; j0 += kNc) {
    const std::size_t nc = std::min(kNc, n - j0);
    const std::size_t npanels = (nc + nr - 1) / nr;
    for (std::size_t p0 = 0; p0 < k; p0 += kKc) {
      const std::size_t kc = std::min(kKc, k - p0);
      const bool load_c = accumulate || p0 > 0;
      pack_b(b, ldb, trans_b, p0, kc, j0, nc, bpack.data());
      for (std::size_t i0 = 0; i0 < m; i0 += kMc) {
        const std::size_t mc = std::min(kMc, m - i0);
        const std::size_t mpanels = (mc + mr - 1) / mr;
        pack_a(a, lda, trans_a, i0, mc, p0, kc, apack.data());
        const long long tiles = static_cast<long long>(mpanels * npanels);
#pragma omp parallel for schedule(static)
        for (long long t = 0; t < tiles; ++t) {
          const std::size_t ip = static_cast<std::size_t>(t) / npanels;
          const std::size_t jp = static_cast<std::size_t>(t) % npanels;
          const std::size_t row0 = i0 + ip * mr;
          const std::size_t col0 = j0 + jp * nr;
          const std::size_t rows = std::min(mr, m - row0);
          const std::size_t cols = std::min(nr, n - col0);
          alignas(64) T acc[mr * nr];
          for (std::size_t i = 0; i < mr; ++i)
            for (std::size_t j = 0; j < nr; ++j)
              acc[i * nr + j] = (load_c && i < rows && j < cols) ? c[(row0 + i) * ldc + col0 + j] : T(0);
          micro_kernel<T>(kc, apack.data() + ip * mr * kc, bpack.data() + jp * nr * kc, acc);
          for (std::size_t i = 0; i < rows; ++i)
            std::memcpy(c + (row0 + i) * ldc + col0, acc + i * nr, cols * sizeof(T));
        }
      }
    }
  }
}

template void gemm<float>(Trans, Trans, std::size_t, std::size_t, std::size_t, const float*, std::size_t,
                          const float*, std::size_t, float*, std::size_t, bool);
template void gemm<double>(Trans, Trans, std::size_t, std::size_t, std::size_t, const double*, std::size_t,
                           const double*, std::size_t, double*, std::size_t, bool);

}  // namespace cpn::detail
