#pragma once

#include "rmn/tape.hpp"
#include "rmn/tensor.hpp"

namespace rmn {

// Element-wise arithmetic. Operands must have identical shapes, except that
// a single-element tensor broadcasts against any shape.
template <Scalar T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <Scalar T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <Scalar T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <Scalar T>
Tensor<T> scale(const Tensor<T>& x, T factor);

// [m x k] . [k x n] -> [m x n]
template <Scalar T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Reductions to a single-element tensor of shape [1].
template <Scalar T>
Tensor<T> sum(const Tensor<T>& x);
template <Scalar T>
Tensor<T> mean(const Tensor<T>& x);

// Same data, new shape; element counts must agree.
template <Scalar T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

}  // namespace rmn
