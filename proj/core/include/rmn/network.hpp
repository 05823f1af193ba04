#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rmn/nn_ops.hpp"
#include "rmn/tensor.hpp"

namespace rmn {

/// One residual-masking stage: a stack of basic blocks followed, when
/// mask_depth > 0, by an encoder-decoder masking block of that depth.
struct StageSpec {
  int blocks = 1;
  int channels = 64;
  int stride = 1;
  int mask_depth = 0;
};

struct NetworkSpec {
  std::string name = "default";
  int input_channels = 3;
  int input_size = 224;
  int stem_channels = 64;
  int stem_kernel = 7;
  int stem_stride = 2;
  int stem_padding = 3;
  int pool_kernel = 3;
  int pool_stride = 2;
  int pool_padding = 1;
  std::vector<StageSpec> stages;
  int num_classes = 7;

  // 34-layer residual backbone (3/4/6/3 blocks, 64-512 channels) with
  // masking depths 4/3/2/1 on a 3x224x224 input.
  static NetworkSpec resmasking();
  // Same topology at widths 8/16/32/64, masking depths 2/2/1/1, 3x64x64 input.
  static NetworkSpec mini();
  static NetworkSpec preset(const std::string& name);

  // Copy with every masking block removed.
  NetworkSpec backbone_only() const;
  bool has_masking() const;
};

// Spatial size entering each stage and leaving it, plus stem and pool sizes.
struct ShapeChain {
  int stem = 0;
  int pool = 0;
  std::vector<int> stage_out;
  // Smallest side of any batch-normalized feature map (masking bottoms included).
  int min_normalized_side = 0;
};

// Throws BuildError naming the offending stage when the spec cannot be built.
ShapeChain shape_chain(const NetworkSpec& spec);

template <Scalar T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
};

// Called with every named intermediate value during a forward pass; the
// returned tensor replaces the value downstream. Lets callers capture
// activations or inject perturbations at a layer.
template <Scalar T>
using LayerHook = std::function<Tensor<T>(const std::string& layer, const Tensor<T>& value)>;

template <Scalar T>
struct ForwardContext {
  Mode mode = Mode::eval;
  const LayerHook<T>* hook = nullptr;

  Tensor<T> tap(const std::string& layer, Tensor<T> value) const {
    return hook && *hook ? (*hook)(layer, value) : value;
  }
};

template <Scalar T>
class ConvLayer {
 public:
  ConvLayer() = default;
  ConvLayer(std::string name, int in, int out, int kernel, int stride, int padding, bool bias);

  Tensor<T> forward(const Tensor<T>& x, const ForwardContext<T>& ctx) const;
  void collect(std::vector<NamedTensor<T>>& out) const;
  const std::string& name() const noexcept { return name_; }
  Conv2dParams<T>& params() noexcept { return params_; }
  const Conv2dParams<T>& params() const noexcept { return params_; }

 private:
  std::string name_;
  Conv2dParams<T> params_;
};

template <Scalar T>
class BatchNormLayer {
 public:
  BatchNormLayer() = default;
  BatchNormLayer(std::string name, int channels);

  Tensor<T> forward(const Tensor<T>& x, const ForwardContext<T>& ctx);
  void collect(std::vector<NamedTensor<T>>& out) const;

 private:
  std::string name_;
  BatchNorm2dParams<T> params_;
};

// conv3x3-BN-ReLU-conv3x3-BN plus identity or 1x1 projection shortcut, then ReLU.
template <Scalar T>
class BasicBlock {
 public:
  BasicBlock(const std::string& prefix, int in, int out, int stride);

  Tensor<T> forward(const Tensor<T>& x, const ForwardContext<T>& ctx);
  void collect(std::vector<NamedTensor<T>>& out) const;
  const ConvLayer<T>& last_conv() const noexcept { return conv2_; }
  void conv_names(std::vector<std::string>& out) const;

 private:
  ConvLayer<T> conv1_, conv2_;
  BatchNormLayer<T> bn1_, bn2_;
  bool projection_ = false;
  ConvLayer<T> shortcut_conv_;
  BatchNormLayer<T> shortcut_bn_;
};

// Two conv3x3-BN-ReLU units.
template <Scalar T>
class DoubleConv {
 public:
  DoubleConv(const std::string& prefix, int in, int out);

  Tensor<T> forward(const Tensor<T>& x, const ForwardContext<T>& ctx);
  void collect(std::vector<NamedTensor<T>>& out) const;
  void conv_names(std::vector<std::string>& out) const;

 private:
  ConvLayer<T> conv1_, conv2_;
  BatchNormLayer<T> bn1_, bn2_;
};

/// Unet-style encoder-decoder producing a per-element mask in [0, 1].
/// Encoder step l: 2x2 max-pool, then a double conv widening to
/// channels * 2^l. Decoder step l: upsample to the size recorded at encoder
/// level l-1, concatenate that level's features, double conv back to
/// channels * 2^(l-1). A 1x1 conv and a sigmoid produce the mask.
template <Scalar T>
class MaskingBlock {
 public:
  MaskingBlock(const std::string& prefix, int channels, int depth);

  Tensor<T> forward(const Tensor<T>& features, const ForwardContext<T>& ctx);
  void collect(std::vector<NamedTensor<T>>& out) const;
  void conv_names(std::vector<std::string>& out) const;
  int depth() const noexcept { return static_cast<int>(encoders_.size()); }
  ConvLayer<T>& head() noexcept { return head_; }

 private:
  std::string prefix_;
  int channels_;
  std::vector<DoubleConv<T>> encoders_;
  std::vector<DoubleConv<T>> decoders_;  // decoders_[l-1] serves level l
  ConvLayer<T> head_;
};

// F_R + F_R * F_M, computed as one add and one element-wise multiply.
template <Scalar T>
Tensor<T> fuse_residual_mask(const Tensor<T>& residual, const Tensor<T>& mask);

template <Scalar T>
struct ResMaskingOutput {
  Tensor<T> residual;  // F_R
  Tensor<T> mask;      // F_M; undefined without a masking block
  Tensor<T> fused;     // F_N
};

template <Scalar T>
class ResMaskingBlock {
 public:
  ResMaskingBlock(int index, int in, const StageSpec& stage);

  ResMaskingOutput<T> forward_parts(const Tensor<T>& x, const ForwardContext<T>& ctx);
  Tensor<T> forward(const Tensor<T>& x, const ForwardContext<T>& ctx) { return forward_parts(x, ctx).fused; }

  void collect(std::vector<NamedTensor<T>>& out) const;
  void conv_names(std::vector<std::string>& out) const;
  bool has_mask() const noexcept { return mask_ != nullptr; }
  MaskingBlock<T>& mask() { return *mask_; }
  const std::string& name() const noexcept { return name_; }
  std::string last_residual_conv() const { return blocks_.back().last_conv().name(); }

 private:
  std::string name_;
  std::vector<BasicBlock<T>> blocks_;
  std::unique_ptr<MaskingBlock<T>> mask_;
};

struct LayerSummary {
  std::string layer;
  std::string output;  // "CxHxW", or "K" for the classifier
  std::int64_t params = 0;
};

/// The residual masking network: stem, residual-masking stages, global
/// average pooling and a linear classifier. Move-only; parameters are
/// owned through tensor handles so copies would alias.
template <Scalar T>
class Network {
 public:
  explicit Network(NetworkSpec spec);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  const NetworkSpec& spec() const noexcept { return spec_; }

  // Logits [N x classes]. Train mode uses and updates batch statistics.
  Tensor<T> forward(const Tensor<T>& batch, Mode mode, const LayerHook<T>* hook = nullptr);

  // Trainable parameters followed by normalization statistics, in a stable order.
  std::vector<NamedTensor<T>> state() const;
  std::vector<Tensor<T>> parameters() const;

  std::int64_t count_parameters() const;
  std::vector<LayerSummary> describe() const;

  // Layers usable as explanation targets: every convolution plus each stage output.
  std::vector<std::string> layer_names() const;
  std::string default_cam_layer() const { return stages_.back().last_residual_conv(); }

  std::vector<ResMaskingBlock<T>>& stages() noexcept { return stages_; }
  Tensor<T>& fc_weight() noexcept { return fc_weight_; }
  Tensor<T>& fc_bias() noexcept { return fc_bias_; }

  Network clone() const;

 private:
  NetworkSpec spec_;
  ConvLayer<T> stem_conv_;
  BatchNormLayer<T> stem_bn_;
  std::vector<ResMaskingBlock<T>> stages_;
  Tensor<T> fc_weight_;
  Tensor<T> fc_bias_;
};

// Builds the network and initializes it: Kaiming-normal convolutions,
// unit/zero batch-norm affine terms, zero biases, uniform(+-1/sqrt(fan_in))
// classifier weights. Bit-identical for equal seeds.
template <Scalar T>
Network<T> build_network(const NetworkSpec& spec, std::uint64_t seed);

// Sum of trainable parameter sizes.
template <Scalar T>
std::int64_t count_parameters(const Network<T>& net) {
  return net.count_parameters();
}

std::string format_summary_table(const std::vector<LayerSummary>& rows, std::int64_t total);

extern template class Network<float>;
extern template class Network<double>;
extern template Network<float> build_network(const NetworkSpec&, std::uint64_t);
extern template Network<double> build_network(const NetworkSpec&, std::uint64_t);
extern template Tensor<float> fuse_residual_mask(const Tensor<float>&, const Tensor<float>&);
extern template Tensor<double> fuse_residual_mask(const Tensor<double>&, const Tensor<double>&);

}  // namespace rmn
