#include "rmn/detail/gemm.hpp"

#include <algorithm>
#include <cstring>

namespace rmn::detail {

namespace {

constexpr std::int64_t kColBlock = 512;
constexpr std::int64_t kDepthBlock = 256;
constexpr std::int64_t kRows = 4;

// 64-byte lanes; the compiler lowers these to whatever the target offers.
template <Scalar T>
struct Lanes {
  typedef T vec __attribute__((vector_size(64)));
  static constexpr std::int64_t width = 64 / sizeof(T);
};

// Register tile of kRows x (2 vectors). Each lane still sums its products in
// ascending depth order, one multiply and one add at a time.
template <Scalar T>
inline void tile_full(std::int64_t kn, const T* __restrict a, std::int64_t lda, const T* __restrict b,
                      std::int64_t ldb, T* __restrict c, std::int64_t ldc) {
  using V = typename Lanes<T>::vec;
  constexpr std::int64_t w = Lanes<T>::width;
  V acc[kRows][2];
  for (std::int64_t r = 0; r < kRows; ++r) {
    std::memcpy(&acc[r][0], c + r * ldc, sizeof(V));
    std::memcpy(&acc[r][1], c + r * ldc + w, sizeof(V));
  }
  for (std::int64_t p = 0; p < kn; ++p) {
    V b0, b1;
    std::memcpy(&b0, b + p * ldb, sizeof(V));
    std::memcpy(&b1, b + p * ldb + w, sizeof(V));
    for (std::int64_t r = 0; r < kRows; ++r) {
      const T av = a[r * lda + p];
      acc[r][0] += av * b0;
      acc[r][1] += av * b1;
    }
  }
  for (std::int64_t r = 0; r < kRows; ++r) {
    std::memcpy(c + r * ldc, &acc[r][0], sizeof(V));
    std::memcpy(c + r * ldc + w, &acc[r][1], sizeof(V));
  }
}

template <Scalar T>
inline void tile_edge(std::int64_t rows, std::int64_t cols, std::int64_t kn, const T* a, std::int64_t lda,
                      const T* b, std::int64_t ldb, T* c, std::int64_t ldc) {
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t t = 0; t < cols; ++t) {
      T acc = c[r * ldc + t];
      for (std::int64_t p = 0; p < kn; ++p) acc += a[r * lda + p] * b[p * ldb + t];
      c[r * ldc + t] = acc;
    }
  }
}

}  // namespace

template <Scalar T>
void gemm(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c) {
  for (std::int64_t j0 = 0; j0 < n; j0 += kColBlock) {
    const std::int64_t jn = std::min(kColBlock, n - j0);
    // Depth blocks run in ascending order, preserving per-element summation order.
    for (std::int64_t k0 = 0; k0 < k; k0 += kDepthBlock) {
      const std::int64_t kn = std::min(kDepthBlock, k - k0);
      for (std::int64_t i = 0; i < m; i += kRows) {
        const std::int64_t rows = std::min(kRows, m - i);
        const T* ap = a + i * k + k0;
        const T* bp = b + k0 * n + j0;
        T* cp = c + i * n + j0;
        std::int64_t j = 0;
        if (rows == kRows) {
          constexpr std::int64_t cols = 2 * Lanes<T>::width;
          for (; j + cols <= jn; j += cols) tile_full(kn, ap, k, bp + j, n, cp + j, n);
        }
        if (j < jn) tile_edge(rows, jn - j, kn, ap, k, bp + j, n, cp + j, n);
      }
    }
  }
}

template <Scalar T>
std::vector<T> transpose(const T* src, std::int64_t rows, std::int64_t cols) {
  std::vector<T> out(static_cast<std::size_t>(rows * cols));
  constexpr std::int64_t block = 32;
  for (std::int64_t i0 = 0; i0 < rows; i0 += block)
    for (std::int64_t j0 = 0; j0 < cols; j0 += block)
      for (std::int64_t i = i0; i < std::min(rows, i0 + block); ++i)
        for (std::int64_t j = j0; j < std::min(cols, j0 + block); ++j) out[j * rows + i] = src[i * cols + j];
  return out;
}

template void gemm(std::int64_t, std::int64_t, std::int64_t, const float*, const float*, float*);
template void gemm(std::int64_t, std::int64_t, std::int64_t, const double*, const double*, double*);
template std::vector<float> transpose(const float*, std::int64_t, std::int64_t);
template std::vector<double> transpose(const double*, std::int64_t, std::int64_t);

}  // namespace rmn::detail
