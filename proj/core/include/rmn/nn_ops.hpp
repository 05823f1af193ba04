#pragma once

#include <cstdint>
#include <span>

#include "rmn/tape.hpp"
#include "rmn/tensor.hpp"

namespace rmn {

enum class Mode { train, eval };

/// Weights are [out_ch x in_ch x kH x kW]. `bias` may be left undefined.
template <Scalar T>
struct Conv2dParams {
  Tensor<T> weight;
  Tensor<T> bias;
  std::int64_t stride = 1;
  std::int64_t padding = 0;
};

template <Scalar T>
struct BatchNorm2dParams {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double eps = 1e-5;
  double momentum = 0.1;
};

// floor((size + 2*padding - kernel) / stride) + 1; ConfigError when < 1.
std::int64_t window_output_size(std::int64_t size, std::int64_t kernel, std::int64_t stride,
                                std::int64_t padding);

/// 2-D cross-correlation (no kernel flip) with symmetric zero padding.
/// Lowered to im2col + GEMM; input is [N x C x H x W].
template <Scalar T>
Tensor<T> conv2d(const Tensor<T>& input, const Conv2dParams<T>& p);

/// Max over each window. Padding cells never win. On ties the first cell in
/// row-major window order is the argmax and receives the gradient.
template <Scalar T>
Tensor<T> maxpool2d(const Tensor<T>& input, std::int64_t kernel, std::int64_t stride,
                    std::int64_t padding = 0);

// [N x C x H x W] -> [N x C x 1 x 1]
template <Scalar T>
Tensor<T> global_avgpool(const Tensor<T>& input);

/// Nearest-neighbour resize to an explicit size not smaller than the input.
/// Destination row r reads source row floor(r * h / target_h), likewise for
/// columns, so odd sizes such as 3 -> 7 are handled.
template <Scalar T>
Tensor<T> upsample_to(const Tensor<T>& input, std::int64_t target_h, std::int64_t target_w);

/// Per-channel normalization. Train mode uses batch statistics over N*H*W and
/// updates the running estimates (unbiased variance); eval mode is a fixed
/// affine map built from the running estimates.
template <Scalar T>
Tensor<T> batchnorm2d(const Tensor<T>& input, BatchNorm2dParams<T>& p, Mode mode);

template <Scalar T>
Tensor<T> relu(const Tensor<T>& x);

// Outputs are clamped into the open interval (0, 1).
template <Scalar T>
Tensor<T> sigmoid(const Tensor<T>& x);

// Row-wise over the last axis of an [N x K] tensor.
template <Scalar T>
Tensor<T> softmax(const Tensor<T>& logits);

// Mean over the batch of -log softmax(logits)[label].
template <Scalar T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

// Channel-axis concatenation. Undefined tensors stand for empty (0-channel)
// operands and are skipped.
template <Scalar T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts);

template <Scalar T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Tensor<T> parts[] = {a, b};
  return concat_channels<T>(std::span<const Tensor<T>>(parts));
}

// x [N x in] . weight^T [in x out] + bias [out]
template <Scalar T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

}  // namespace rmn
