#pragma once

#include <cstddef>

namespace cpn::detail {

enum class Trans { kNo, kYes };

/// C (M x N) = op(A) (M x K) * op(B) (K x N), or C += ... when `accumulate`.
///
/// Leading dimensions are the row strides of the matrices as stored. Every
/// output element is reduced over k in ascending order starting from its
/// initial value, independent of tiling and thread count, so results are
/// bit-reproducible.
template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);

}  // namespace cpn::detail
