#include "rmn/network.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "rmn/ops.hpp"
#include "rmn/random.hpp"

namespace rmn {

NetworkSpec NetworkSpec::resmasking() {
  NetworkSpec s;
  s.name = "default";
  s.stages = {{3, 64, 1, 4}, {4, 128, 2, 3}, {6, 256, 2, 2}, {3, 512, 2, 1}};
  return s;
}

NetworkSpec NetworkSpec::mini() {
  NetworkSpec s;
  s.name = "mini";
  s.input_size = 64;
  s.stem_channels = 8;
  s.stages = {{3, 8, 1, 2}, {4, 16, 2, 2}, {6, 32, 2, 1}, {3, 64, 2, 1}};
  return s;
}

NetworkSpec NetworkSpec::preset(const std::string& name) {
  if (name == "default") return resmasking();
  if (name == "mini") return mini();
  if (name == "backbone") return resmasking().backbone_only();
  if (name == "mini-backbone") return mini().backbone_only();
  throw ConfigError("unknown architecture preset '" + name +
                    "' (expected default, mini, backbone or mini-backbone)");
}

NetworkSpec NetworkSpec::backbone_only() const {
  NetworkSpec s = *this;
  if (s.name.find("backbone") == std::string::npos) {
    s.name = s.name == "default" ? "backbone" : s.name + "-backbone";
  }
  for (auto& st : s.stages) st.mask_depth = 0;
  return s;
}

bool NetworkSpec::has_masking() const {
  for (const auto& st : stages)
    if (st.mask_depth > 0) return true;
  return false;
}

ShapeChain shape_chain(const NetworkSpec& spec) {
  auto fail = [](const std::string& where, const std::string& why) -> BuildError {
    return BuildError(where + ": " + why);
  };
  if (spec.input_channels < 1 || spec.input_size < 1)
    throw fail("input", "channels and size must be positive");
  if (spec.num_classes < 2) throw fail("fc", "need at least 2 classes");
  if (spec.stem_channels < 1) throw fail("stem", "channels must be positive");
  if (spec.stages.empty()) throw fail("network", "at least one stage is required");

  ShapeChain chain;
  try {
    chain.stem = static_cast<int>(
        window_output_size(spec.input_size, spec.stem_kernel, spec.stem_stride, spec.stem_padding));
  } catch (const ConfigError& e) {
    throw fail("stem", e.what());
  }
  try {
    chain.pool = static_cast<int>(
        window_output_size(chain.stem, spec.pool_kernel, spec.pool_stride, spec.pool_padding));
  } catch (const ConfigError& e) {
    throw fail("max-pool", e.what());
  }

  int size = chain.pool;
  chain.min_normalized_side = chain.stem;
  for (std::size_t i = 0; i < spec.stages.size(); ++i) {
    const auto& st = spec.stages[i];
    const std::string where = "stage" + std::to_string(i + 1);
    if (st.blocks < 1) throw fail(where, "needs at least one residual block");
    if (st.channels < 1) throw fail(where, "channels must be positive");
    if (st.stride < 1) throw fail(where, "stride must be positive");
    if (st.mask_depth < 0) throw fail(where, "masking depth must be non-negative");
    try {
      size = static_cast<int>(window_output_size(size, 3, st.stride, 1));
    } catch (const ConfigError& e) {
      throw fail(where, e.what());
    }
    int bottom = size;
    for (int l = 0; l < st.mask_depth; ++l) bottom /= 2;
    if (bottom < 1) {
      throw fail(where, "masking depth " + std::to_string(st.mask_depth) +
                            " does not fit a " + std::to_string(size) + "x" +
                            std::to_string(size) + " feature map");
    }
    chain.min_normalized_side = std::min({chain.min_normalized_side, size, bottom});
    chain.stage_out.push_back(size);
  }
  return chain;
}

// ---------------------------------------------------------------- layers

template <Scalar T>
ConvLayer<T>::ConvLayer(std::string name, int in, int out, int kernel, int stride, int padding,
                        bool bias)
    : name_(std::move(name)) {
  params_.weight = Tensor<T>::create({out, in, kernel, kernel}, init::Zeros{}, true);
  if (bias) params_.bias = Tensor<T>::create({out}, init::Zeros{}, true);
  params_.stride = stride;
  params_.padding = padding;
}

template <Scalar T>
Tensor<T> ConvLayer<T>::forward(const Tensor<T>& x, const ForwardContext<T>& ctx) const {
  return ctx.tap(name_, conv2d(x, params_));
}

template <Scalar T>
void ConvLayer<T>::collect(std::vector<NamedTensor<T>>& out) const {
  out.push_back({name_ + ".weight", params_.weight, true});
  if (params_.bias.defined()) out.push_back({name_ + ".bias", params_.bias, true});
}

template <Scalar T>
BatchNormLayer<T>::BatchNormLayer(std::string name, int channels) : name_(std::move(name)) {
  params_.gamma = Tensor<T>::create({channels}, init::Constant{1.0}, true);
  params_.beta = Tensor<T>::create({channels}, init::Zeros{}, true);
  params_.running_mean = Tensor<T>::zeros({channels});
  params_.running_var = Tensor<T>::full({channels}, T(1));
}

template <Scalar T>
Tensor<T> BatchNormLayer<T>::forward(const Tensor<T>& x, const ForwardContext<T>& ctx) {
  return batchnorm2d(x, params_, ctx.mode);
}

template <Scalar T>
void BatchNormLayer<T>::collect(std::vector<NamedTensor<T>>& out) const {
  out.push_back({name_ + ".weight", params_.gamma, true});
  out.push_back({name_ + ".bias", params_.beta, true});
  out.push_back({name_ + ".running_mean", params_.running_mean, false});
  out.push_back({name_ + ".running_var", params_.running_var, false});
}

template <Scalar T>
BasicBlock<T>::BasicBlock(const std::string& prefix, int in, int out, int stride)
    : conv1_(prefix + ".conv1", in, out, 3, stride, 1, false),
      conv2_(prefix + ".conv2", out, out, 3, 1, 1, false),
      bn1_(prefix + ".bn1", out),
      bn2_(prefix + ".bn2", out),
      projection_(stride != 1 || in != out) {
  if (projection_) {
    shortcut_conv_ = ConvLayer<T>(prefix + ".shortcut.conv", in, out, 1, stride, 0, false);
    shortcut_bn_ = BatchNormLayer<T>(prefix + ".shortcut.bn", out);
  }
}

template <Scalar T>
Tensor<T> BasicBlock<T>::forward(const Tensor<T>& x, const ForwardContext<T>& ctx) {
  Tensor<T> h = relu(bn1_.forward(conv1_.forward(x, ctx), ctx));
  h = bn2_.forward(conv2_.forward(h, ctx), ctx);
  Tensor<T> skip = projection_ ? shortcut_bn_.forward(shortcut_conv_.forward(x, ctx), ctx) : x;
  return relu(add(h, skip));
}

template <Scalar T>
void BasicBlock<T>::collect(std::vector<NamedTensor<T>>& out) const {
  conv1_.collect(out);
  bn1_.collect(out);
  conv2_.collect(out);
  bn2_.collect(out);
  if (projection_) {
    shortcut_conv_.collect(out);
    shortcut_bn_.collect(out);
  }
}

template <Scalar T>
void BasicBlock<T>::conv_names(std::vector<std::string>& out) const {
  out.push_back(conv1_.name());
  out.push_back(conv2_.name());
  if (projection_) out.push_back(shortcut_conv_.name());
}

template <Scalar T>
DoubleConv<T>::DoubleConv(const std::string& prefix, int in, int out)
    : conv1_(prefix + ".conv1", in, out, 3, 1, 1, false),
      conv2_(prefix + ".conv2", out, out, 3, 1, 1, false),
      bn1_(prefix + ".bn1", out),
      bn2_(prefix + ".bn2", out) {}

template <Scalar T>
Tensor<T> DoubleConv<T>::forward(const Tensor<T>& x, const ForwardContext<T>& ctx) {
  Tensor<T> h = relu(bn1_.forward(conv1_.forward(x, ctx), ctx));
  return relu(bn2_.forward(conv2_.forward(h, ctx), ctx));
}

template <Scalar T>
void DoubleConv<T>::collect(std::vector<NamedTensor<T>>& out) const {
  conv1_.collect(out);
  bn1_.collect(out);
  conv2_.collect(out);
  bn2_.collect(out);
}

template <Scalar T>
void DoubleConv<T>::conv_names(std::vector<std::string>& out) const {
  out.push_back(conv1_.name());
  out.push_back(conv2_.name());
}

template <Scalar T>
MaskingBlock<T>::MaskingBlock(const std::string& prefix, int channels, int depth)
    : prefix_(prefix), channels_(channels) {
  for (int l = 1; l <= depth; ++l) {
    const int c = channels << (l - 1);
    encoders_.emplace_back(prefix + ".enc" + std::to_string(l), c, 2 * c);
    decoders_.emplace_back(prefix + ".dec" + std::to_string(l), 3 * c, c);
  }
  head_ = ConvLayer<T>(prefix + ".head", channels, channels, 1, 1, 0, true);
}

template <Scalar T>
Tensor<T> MaskingBlock<T>::forward(const Tensor<T>& features, const ForwardContext<T>& ctx) {
  std::vector<Tensor<T>> skips{features};
  Tensor<T> h = features;
  for (auto& enc : encoders_) {
    h = enc.forward(maxpool2d(h, 2, 2), ctx);
    skips.push_back(h);
  }
  for (int l = depth(); l >= 1; --l) {
    const Tensor<T>& skip = skips[static_cast<std::size_t>(l - 1)];
    Tensor<T> up = upsample_to(h, skip.dim(2), skip.dim(3));
    h = decoders_[static_cast<std::size_t>(l - 1)].forward(concat_channels(up, skip), ctx);
  }
  return sigmoid(head_.forward(h, ctx));
}

template <Scalar T>
void MaskingBlock<T>::collect(std::vector<NamedTensor<T>>& out) const {
  for (const auto& e : encoders_) e.collect(out);
  for (const auto& d : decoders_) d.collect(out);
  head_.collect(out);
}

template <Scalar T>
void MaskingBlock<T>::conv_names(std::vector<std::string>& out) const {
  for (const auto& e : encoders_) e.conv_names(out);
  for (const auto& d : decoders_) d.conv_names(out);
  out.push_back(head_.name());
}

template <Scalar T>
Tensor<T> fuse_residual_mask(const Tensor<T>& residual, const Tensor<T>& mask) {
  if (residual.shape() != mask.shape()) {
    throw ShapeError("fuse: residual " + to_string(residual.shape()) + " vs mask " +
                     to_string(mask.shape()));
  }
  return add(residual, mul(residual, mask));
}

template <Scalar T>
ResMaskingBlock<T>::ResMaskingBlock(int index, int in, const StageSpec& stage)
    : name_("stage" + std::to_string(index)) {
  for (int b = 0; b < stage.blocks; ++b) {
    blocks_.emplace_back(name_ + ".residual.block" + std::to_string(b), b == 0 ? in : stage.channels,
                         stage.channels, b == 0 ? stage.stride : 1);
  }
  if (stage.mask_depth > 0)
    mask_ = std::make_unique<MaskingBlock<T>>(name_ + ".mask", stage.channels, stage.mask_depth);
}

template <Scalar T>
ResMaskingOutput<T> ResMaskingBlock<T>::forward_parts(const Tensor<T>& x,
                                                      const ForwardContext<T>& ctx) {
  ResMaskingOutput<T> out;
  Tensor<T> h = x;
  for (auto& b : blocks_) h = b.forward(h, ctx);
  out.residual = ctx.tap(name_ + ".residual", h);
  if (!mask_) {
    out.fused = ctx.tap(name_ + ".fused", out.residual);
    return out;
  }
  out.mask = ctx.tap(name_ + ".mask", mask_->forward(out.residual, ctx));
  out.fused = ctx.tap(name_ + ".fused", fuse_residual_mask(out.residual, out.mask));
  return out;
}

template <Scalar T>
void ResMaskingBlock<T>::collect(std::vector<NamedTensor<T>>& out) const {
  for (const auto& b : blocks_) b.collect(out);
  if (mask_) mask_->collect(out);
}

template <Scalar T>
void ResMaskingBlock<T>::conv_names(std::vector<std::string>& out) const {
  for (const auto& b : blocks_) b.conv_names(out);
  if (mask_) mask_->conv_names(out);
}

// --------------------------------------------------------------- network

template <Scalar T>
Network<T>::Network(NetworkSpec spec) : spec_(std::move(spec)) {
  shape_chain(spec_);
  stem_conv_ = ConvLayer<T>("stem.conv", spec_.input_channels, spec_.stem_channels,
                            spec_.stem_kernel, spec_.stem_stride, spec_.stem_padding, true);
  stem_bn_ = BatchNormLayer<T>("stem.bn", spec_.stem_channels);
  int in = spec_.stem_channels;
  for (std::size_t i = 0; i < spec_.stages.size(); ++i) {
    stages_.emplace_back(static_cast<int>(i + 1), in, spec_.stages[i]);
    in = spec_.stages[i].channels;
  }
  fc_weight_ = Tensor<T>::create({spec_.num_classes, in}, init::Zeros{}, true);
  fc_bias_ = Tensor<T>::create({spec_.num_classes}, init::Zeros{}, true);
}

template <Scalar T>
Tensor<T> Network<T>::forward(const Tensor<T>& batch, Mode mode, const LayerHook<T>* hook) {
  const Shape want{spec_.input_channels, spec_.input_size, spec_.input_size};
  if (batch.rank() != 4 || Shape(batch.shape().begin() + 1, batch.shape().end()) != want) {
    throw ShapeError("network: expected input [N, " + std::to_string(want[0]) + ", " +
                     std::to_string(want[1]) + ", " + std::to_string(want[2]) + "], got " +
                     to_string(batch.shape()));
  }
  const ForwardContext<T> ctx{mode, hook};
  Tensor<T> h = ctx.tap("stem", relu(stem_bn_.forward(stem_conv_.forward(batch, ctx), ctx)));
  h = ctx.tap("maxpool", maxpool2d(h, spec_.pool_kernel, spec_.pool_stride, spec_.pool_padding));
  for (auto& st : stages_) h = st.forward(h, ctx);
  h = ctx.tap("avgpool", global_avgpool(h));
  h = reshape(h, {h.dim(0), h.dim(1)});
  return ctx.tap("logits", linear(h, fc_weight_, fc_bias_));
}

template <Scalar T>
std::vector<NamedTensor<T>> Network<T>::state() const {
  std::vector<NamedTensor<T>> all;
  stem_conv_.collect(all);
  stem_bn_.collect(all);
  for (const auto& st : stages_) st.collect(all);
  all.push_back({"fc.weight", fc_weight_, true});
  all.push_back({"fc.bias", fc_bias_, true});
  std::vector<NamedTensor<T>> ordered;
  ordered.reserve(all.size());
  for (auto& e : all)
    if (e.trainable) ordered.push_back(e);
  for (auto& e : all)
    if (!e.trainable) ordered.push_back(e);
  return ordered;
}

template <Scalar T>
std::vector<Tensor<T>> Network<T>::parameters() const {
  std::vector<Tensor<T>> out;
  for (auto& e : state())
    if (e.trainable) out.push_back(e.tensor);
  return out;
}

template <Scalar T>
std::int64_t Network<T>::count_parameters() const {
  std::int64_t total = 0;
  for (const auto& p : parameters()) total += p.numel();
  return total;
}

namespace {

std::string chw(int c, int h, int w) {
  return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

}  // namespace

template <Scalar T>
std::vector<LayerSummary> Network<T>::describe() const {
  const ShapeChain chain = shape_chain(spec_);
  std::vector<LayerSummary> rows;
  std::vector<NamedTensor<T>> v;
  stem_conv_.collect(v);
  stem_bn_.collect(v);
  std::int64_t stem_params = 0;
  for (const auto& e : v)
    if (e.trainable) stem_params += e.tensor.numel();
  rows.push_back({"Conv1", chw(spec_.stem_channels, chain.stem, chain.stem), stem_params});
  rows.push_back({"MaxPooling", chw(spec_.stem_channels, chain.pool, chain.pool), 0});
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    v.clear();
    stages_[i].collect(v);
    std::int64_t n = 0;
    for (const auto& e : v)
      if (e.trainable) n += e.tensor.numel();
    const int s = chain.stage_out[i];
    rows.push_back({(stages_[i].has_mask() ? "Resmasking Block " : "Residual Block ") +
                        std::to_string(i + 1),
                    chw(spec_.stages[i].channels, s, s), n});
  }
  rows.push_back({"Average pooling", chw(spec_.stages.back().channels, 1, 1), 0});
  rows.push_back({"FC, Softmax", std::to_string(spec_.num_classes),
                  fc_weight_.numel() + fc_bias_.numel()});
  return rows;
}

template <Scalar T>
std::vector<std::string> Network<T>::layer_names() const {
  std::vector<std::string> names{"stem.conv"};
  for (const auto& st : stages_) {
    st.conv_names(names);
    names.push_back(st.name() + ".residual");
    if (st.has_mask()) names.push_back(st.name() + ".mask");
    names.push_back(st.name() + ".fused");
  }
  return names;
}

template <Scalar T>
Network<T> Network<T>::clone() const {
  Network<T> copy(spec_);
  auto src = state();
  auto dst = copy.state();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto from = src[i].tensor.data();
    auto to = dst[i].tensor.mutable_data();
    std::copy(from.begin(), from.end(), to.begin());
  }
  return copy;
}

template <Scalar T>
Network<T> build_network(const NetworkSpec& spec, std::uint64_t seed) {
  Network<T> net(spec);
  std::uint64_t stream = 0;
  for (auto& e : net.state()) {
    ++stream;
    const Shape& s = e.tensor.shape();
    Tensor<T> fresh;
    if (e.name == "fc.weight") {
      const double bound = 1.0 / std::sqrt(static_cast<double>(s[1]));
      fresh = Tensor<T>::create(s, init::Uniform{derive_seed(seed, stream), -bound, bound});
    } else if (s.size() == 4) {
      fresh = Tensor<T>::create(s, init::KaimingNormal{derive_seed(seed, stream), s[1] * s[2] * s[3]});
    } else {
      continue;  // biases and normalization terms keep their constructed values
    }
    auto to = e.tensor.mutable_data();
    auto from = fresh.data();
    std::copy(from.begin(), from.end(), to.begin());
  }
  return net;
}

std::string format_summary_table(const std::vector<LayerSummary>& rows, std::int64_t total) {
  std::ostringstream os;
  os << std::left << std::setw(22) << "Layer" << std::setw(14) << "Output" << std::right
     << std::setw(14) << "Params" << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(22) << r.layer << std::setw(14) << r.output << std::right
       << std::setw(14) << r.params << '\n';
  }
  os << std::left << std::setw(36) << "Total" << std::right << std::setw(14) << total << '\n';
  return os.str();
}

template class ConvLayer<float>;
template class ConvLayer<double>;
template class BatchNormLayer<float>;
template class BatchNormLayer<double>;
template class BasicBlock<float>;
template class BasicBlock<double>;
template class DoubleConv<float>;
template class DoubleConv<double>;
template class MaskingBlock<float>;
template class MaskingBlock<double>;
template class ResMaskingBlock<float>;
template class ResMaskingBlock<double>;
template class Network<float>;
template class Network<double>;
template Network<float> build_network(const NetworkSpec&, std::uint64_t);
template Network<double> build_network(const NetworkSpec&, std::uint64_t);
template Tensor<float> fuse_residual_mask(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> fuse_residual_mask(const Tensor<double>&, const Tensor<double>&);

}  // namespace rmn
