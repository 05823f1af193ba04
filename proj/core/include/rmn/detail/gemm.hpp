#pragma once

#include <cstdint>
#include <vector>

#include "rmn/tensor.hpp"

namespace rmn::detail {

// c[m x n] += a[m x k] . b[k x n], all dense row-major.
//
// Each output element accumulates its k products strictly in ascending k
// order, so the result is bitwise identical to a naive triple loop compiled
// without floating-point contraction. The convolution oracle tests rely on
// this.
template <Scalar T>
void gemm(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c);

// Returns the [cols x rows] transpose of a dense [rows x cols] matrix.
template <Scalar T>
std::vector<T> transpose(const T* src, std::int64_t rows, std::int64_t cols);

extern template void gemm(std::int64_t, std::int64_t, std::int64_t, const float*, const float*, float*);
extern template void gemm(std::int64_t, std::int64_t, std::int64_t, const double*, const double*, double*);
extern template std::vector<float> transpose(const float*, std::int64_t, std::int64_t);
extern template std::vector<double> transpose(const double*, std::int64_t, std::int64_t);

}  // namespace rmn::detail
