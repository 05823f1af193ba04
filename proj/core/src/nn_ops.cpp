#include "rmn/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "rmn/detail/gemm.hpp"

namespace rmn {

namespace {

template <Scalar T>
void require_rank4(const char* op, const Tensor<T>& x) {
  if (x.rank() != 4) {
    throw ShapeError(std::string(op) + " expects an N x C x H x W tensor, got " + to_string(x.shape()));
  }
}

struct ConvGeometry {
  std::int64_t channels, height, width;
  std::int64_t kh, kw, stride, padding;
  std::int64_t out_h, out_w;

  std::int64_t depth() const { return channels * kh * kw; }
  std::int64_t positions() const { return out_h * out_w; }
  bool direct() const { return kh == 1 && kw == 1 && stride == 1 && padding == 0; }
};

// Rows of `col` are ordered (channel, kernel row, kernel col); columns are
// output positions in row-major order.
template <Scalar T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const std::int64_t positions = g.positions();
  for (std::int64_t c = 0; c < g.channels; ++c) {
    const T* plane = x + c * g.height * g.width;
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        T* row = col + ((c * g.kh + i) * g.kw + j) * positions;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.stride - g.padding + i;
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = plane + iy * g.width;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t ix = ox * g.stride - g.padding + j;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <Scalar T>
void col2im_add(const T* col, const ConvGeometry& g, T* x) {
  const std::int64_t positions = g.positions();
  for (std::int64_t c = 0; c < g.channels; ++c) {
    T* plane = x + c * g.height * g.width;
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        const T* row = col + ((c * g.kh + i) * g.kw + j) * positions;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.stride - g.padding + i;
          if (iy < 0 || iy >= g.height) continue;
          T* dst = plane + iy * g.width;
          const T* src = row + oy * g.out_w;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t ix = ox * g.stride - g.padding + j;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <Scalar T>
T stable_sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

std::int64_t window_output_size(std::int64_t size, std::int64_t kernel, std::int64_t stride,
                                std::int64_t padding) {
  if (kernel < 1 || stride < 1 || padding < 0) {
    throw ConfigError("invalid window: kernel " + std::to_string(kernel) + ", stride " +
                      std::to_string(stride) + ", padding " + std::to_string(padding));
  }
  if (size + 2 * padding < kernel) {
    throw ConfigError("window " + std::to_string(kernel) + " larger than padded input " +
                      std::to_string(size + 2 * padding));
  }
  return (size + 2 * padding - kernel) / stride + 1;
}

template <Scalar T>
Tensor<T> conv2d(const Tensor<T>& input, const Conv2dParams<T>& p) {
  require_rank4("conv2d", input);
  const auto& w = p.weight;
  if (!w.defined() || w.rank() != 4) throw ShapeError("conv2d weights must be out x in x kH x kW");
  const std::int64_t n = input.dim(0), out_ch = w.dim(0);
  if (input.dim(1) != w.dim(1)) {
    throw ShapeError("conv2d: input " + to_string(input.shape()) + " has " + std::to_string(input.dim(1)) +
                     " channels, weights " + to_string(w.shape()) + " expect " + std::to_string(w.dim(1)));
  }
  const bool has_bias = p.bias.defined();
  if (has_bias && p.bias.shape() != Shape{out_ch}) {
    throw ShapeError("conv2d bias " + to_string(p.bias.shape()) + " does not match " + std::to_string(out_ch) +
                     " output channels");
  }
  ConvGeometry g{input.dim(1), input.dim(2), input.dim(3), w.dim(2), w.dim(3), p.stride, p.padding, 0, 0};
  g.out_h = window_output_size(g.height, g.kh, g.stride, g.padding);
  g.out_w = window_output_size(g.width, g.kw, g.stride, g.padding);

  const std::int64_t depth = g.depth(), positions = g.positions();
  const std::int64_t in_stride = g.channels * g.height * g.width;
  const std::int64_t out_stride = out_ch * positions;
  std::vector<T> out(static_cast<std::size_t>(n * out_stride), T(0));
  std::vector<T> col(g.direct() ? 0 : static_cast<std::size_t>(depth * positions));
  const T* x = input.data().data();
  for (std::int64_t b = 0; b < n; ++b) {
    const T* cols = x + b * in_stride;
    if (!g.direct()) {
      im2col(cols, g, col.data());
      cols = col.data();
    }
    T* y = out.data() + b * out_stride;
    detail::gemm(out_ch, positions, depth, w.data().data(), cols, y);
    if (has_bias) {
      auto bias = p.bias.data();
      for (std::int64_t o = 0; o < out_ch; ++o)
        for (std::int64_t q = 0; q < positions; ++q) y[o * positions + q] += bias[o];
    }
  }
  auto result = detail::make_result("conv2d", {n, out_ch, g.out_h, g.out_w}, std::move(out));

  Tape<T>* tape = has_bias ? detail::recording_tape({&input, &w, &p.bias}) : detail::recording_tape({&input, &w});
  if (tape) {
    auto rule = [input, w, g, n, out_ch](std::span<const T> grad, typename Tape<T>::GradSlots slots) {
      const std::int64_t depth = g.depth(), positions = g.positions();
      const std::int64_t in_stride = g.channels * g.height * g.width;
      const T* x = input.data().data();
      std::vector<T> col(g.direct() ? 0 : static_cast<std::size_t>(depth * positions));
      std::vector<T> grad_col(g.direct() ? 0 : static_cast<std::size_t>(depth * positions));
      std::vector<T> w_t;
      if (!slots[0].empty()) w_t = detail::transpose(w.data().data(), out_ch, depth);
      for (std::int64_t b = 0; b < n; ++b) {
        const T* gb = grad.data() + b * out_ch * positions;
        if (slots.size() > 2 && !slots[2].empty()) {
          for (std::int64_t o = 0; o < out_ch; ++o) {
            T acc = 0;
            for (std::int64_t q = 0; q < positions; ++q) acc += gb[o * positions + q];
            slots[2][o] += acc;
          }
        }
        if (!slots[1].empty()) {
          const T* cols = x + b * in_stride;
          if (!g.direct()) {
            im2col(cols, g, col.data());
            cols = col.data();
          }
          auto cols_t = detail::transpose(cols, depth, positions);
          detail::gemm(out_ch, depth, positions, gb, cols_t.data(), slots[1].data());
        }
        if (!slots[0].empty()) {
          T* gx = slots[0].data() + b * in_stride;
          if (g.direct()) {
            detail::gemm(depth, positions, out_ch, w_t.data(), gb, gx);
          } else {
            std::fill(grad_col.begin(), grad_col.end(), T(0));
            detail::gemm(depth, positions, out_ch, w_t.data(), gb, grad_col.data());
            col2im_add(grad_col.data(), g, gx);
          }
        }
      }
    };
    if (has_bias) {
      tape->record(result, {&input, &w, &p.bias}, std::move(rule));
    } else {
      tape->record(result, {&input, &w}, std::move(rule));
    }
  }
  return result;
}

template <Scalar T>
Tensor<T> maxpool2d(const Tensor<T>& input, std::int64_t kernel, std::int64_t stride, std::int64_t padding) {
  require_rank4("maxpool2d", input);
  if (padding >= kernel) {
    throw ConfigError("maxpool2d padding " + std::to_string(padding) + " must be smaller than kernel " +
                      std::to_string(kernel));
  }
  const std::int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::int64_t oh = window_output_size(h, kernel, stride, padding);
  const std::int64_t ow = window_output_size(w, kernel, stride, padding);
  const std::int64_t planes = n * c;
  std::vector<T> out(static_cast<std::size_t>(planes * oh * ow));
  auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
  const T* x = input.data().data();
  for (std::int64_t pl = 0; pl < planes; ++pl) {
    const T* plane = x + pl * h * w;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        std::int64_t best_at = -1;
        for (std::int64_t i = 0; i < kernel; ++i) {
          const std::int64_t iy = oy * stride - padding + i;
          if (iy < 0 || iy >= h) continue;
          for (std::int64_t j = 0; j < kernel; ++j) {
            const std::int64_t ix = ox * stride - padding + j;
            if (ix < 0 || ix >= w) continue;
            const T v = plane[iy * w + ix];
            if (best_at < 0 || v > best) {
              best = v;
              best_at = iy * w + ix;
            }
          }
        }
        const std::int64_t o = (pl * oh + oy) * ow + ox;
        out[o] = best;
        (*argmax)[o] = pl * h * w + best_at;
      }
    }
  }
  auto result = detail::make_result("maxpool2d", {n, c, oh, ow}, std::move(out));
  if (auto* tape = detail::recording_tape({&input})) {
    tape->record(result, {&input}, [argmax](std::span<const T> g, typename Tape<T>::GradSlots slots) {
      for (std::size_t o = 0; o < g.size(); ++o) slots[0][(*argmax)[o]] += g[o];
    });
  }
  return result;
}

template <Scalar T>
Tensor<T> global_avgpool(const Tensor<T>& input) {
  require_rank4("global_avgpool", input);
  const std::int64_t n = input.dim(0), c = input.dim(1);
  const std::int64_t area = input.dim(2) * input.dim(3);
  const T* x = input.data().data();
  std::vector<T> out(static_cast<std::size_t>(n * c));
  for (std::int64_t pl = 0; pl < n * c; ++pl) {
    T acc = 0;
    for (std::int64_t q = 0; q < area; ++q) acc += x[pl * area + q];
    out[pl] = acc / static_cast<T>(area);
  }
  auto result = detail::make_result("global_avgpool", {n, c, 1, 1}, std::move(out));
  if (auto* tape = detail::recording_tape({&input})) {
    tape->record(result, {&input}, [area](std::span<const T> g, typename Tape<T>::GradSlots slots) {
      const T inv = T(1) / static_cast<T>(area);
      for (std::size_t pl = 0; pl < g.size(); ++pl)
        for (std::int64_t q = 0; q < area; ++q) slots[0][pl * area + q] += g[pl] * inv;
    });
  }
  return result;
}

template <Scalar T>
Tensor<T> upsample_to(const Tensor<T>& input, std::int64_t target_h, std::int64_t target_w) {
  require_rank4("upsample_to", input);
  const std::int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (target_h < h || target_w < w) {
    throw ConfigError("upsample_to cannot shrink " + std::to_string(h) + "x" + std::to_string(w) + " to " +
                      std::to_string(target_h) + "x" + std::to_string(target_w));
  }
  std::vector<std::int64_t> src_row(target_h), src_col(target_w);
  for (std::int64_t r = 0; r < target_h; ++r) src_row[r] = r * h / target_h;
  for (std::int64_t q = 0; q < target_w; ++q) src_col[q] = q * w / target_w;
  const T* x = input.data().data();
  std::vector<T> out(static_cast<std::size_t>(n * c * target_h * target_w));
  for (std::int64_t pl = 0; pl < n * c; ++pl) {
    const T* plane = x + pl * h * w;
    T* dst = out.data() + pl * target_h * target_w;
    for (std::int64_t r = 0; r < target_h; ++r)
      for (std::int64_t q = 0; q < target_w; ++q) dst[r * target_w + q] = plane[src_row[r] * w + src_col[q]];
  }
  auto result = detail::make_result("upsample_to", {n, c, target_h, target_w}, std::move(out));
  if (auto* tape = detail::recording_tape({&input})) {
    tape->record(result, {&input},
                 [src_row, src_col, planes = n * c, h, w](std::span<const T> g, typename Tape<T>::GradSlots slots) {
                   const auto th = static_cast<std::int64_t>(src_row.size());
                   const auto tw = static_cast<std::int64_t>(src_col.size());
                   for (std::int64_t pl = 0; pl < planes; ++pl) {
                     T* gx = slots[0].data() + pl * h * w;
                     const T* gy = g.data() + pl * th * tw;
                     for (std::int64_t r = 0; r < th; ++r)
                       for (std::int64_t q = 0; q < tw; ++q) gx[src_row[r] * w + src_col[q]] += gy[r * tw + q];
                   }
                 });
  }
  return result;
}

template <Scalar T>
Tensor<T> batchnorm2d(const Tensor<T>& input, BatchNorm2dParams<T>& p, Mode mode) {
  require_rank4("batchnorm2d", input);
  const std::int64_t n = input.dim(0), c = input.dim(1);
  const std::int64_t area = input.dim(2) * input.dim(3);
  const Shape per_channel{c};
  if (p.gamma.shape() != per_channel || p.beta.shape() != per_channel || p.running_mean.shape() != per_channel ||
      p.running_var.shape() != per_channel) {
    throw ShapeError("batchnorm2d parameters do not match " + std::to_string(c) + " channels of input " +
                     to_string(input.shape()));
  }
  const std::int64_t count = n * area;
  if (mode == Mode::train && count < 2) {
    throw DegenerateBatchError("batchnorm2d in train mode needs at least 2 values per channel, got " +
                               std::to_string(count) + " for input " + to_string(input.shape()));
  }
  const T* x = input.data().data();
  auto gamma = p.gamma.data();
  auto beta = p.beta.data();
  std::vector<T> mean(c), inv_std(c);
  if (mode == Mode::train) {
    auto rm = p.running_mean.mutable_data();
    auto rv = p.running_var.mutable_data();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::int64_t b = 0; b < n; ++b) {
        const T* plane = x + (b * c + ch) * area;
        for (std::int64_t q = 0; q < area; ++q) s += plane[q];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::int64_t b = 0; b < n; ++b) {
        const T* plane = x + (b * c + ch) * area;
        for (std::int64_t q = 0; q < area; ++q) {
          const double d = plane[q] - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(count);
      mean[ch] = static_cast<T>(mu);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + p.eps));
      const double unbiased = ss / static_cast<double>(count - 1);
      rm[ch] = static_cast<T>((1.0 - p.momentum) * rm[ch] + p.momentum * mu);
      rv[ch] = static_cast<T>((1.0 - p.momentum) * rv[ch] + p.momentum * unbiased);
    }
  } else {
    auto rm = p.running_mean.data();
    auto rv = p.running_var.data();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      mean[ch] = rm[ch];
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(rv[ch]) + p.eps));
    }
  }

  auto xhat = std::make_shared<std::vector<T>>(input.data().size());
  std::vector<T> out(xhat->size());
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const std::int64_t base = (b * c + ch) * area;
      for (std::int64_t q = 0; q < area; ++q) {
        const T v = (x[base + q] - mean[ch]) * inv_std[ch];
        (*xhat)[base + q] = v;
        out[base + q] = gamma[ch] * v + beta[ch];
      }
    }
  }
  auto result = detail::make_result("batchnorm2d", input.shape(), std::move(out));
  if (auto* tape = detail::recording_tape({&input, &p.gamma, &p.beta})) {
    tape->record(result, {&input, &p.gamma, &p.beta},
                 [xhat, inv_std, gamma_t = p.gamma, mode, n, c, area](std::span<const T> g,
                                                                     typename Tape<T>::GradSlots slots) {
                   auto gamma = gamma_t.data();
                   const auto count = static_cast<T>(n * area);
                   for (std::int64_t ch = 0; ch < c; ++ch) {
                     T sum_g = 0, sum_gx = 0;
                     for (std::int64_t b = 0; b < n; ++b) {
                       const std::int64_t base = (b * c + ch) * area;
                       for (std::int64_t q = 0; q < area; ++q) {
                         sum_g += g[base + q];
                         sum_gx += g[base + q] * (*xhat)[base + q];
                       }
                     }
                     if (!slots[1].empty()) slots[1][ch] += sum_gx;
                     if (!slots[2].empty()) slots[2][ch] += sum_g;
                     if (slots[0].empty()) continue;
                     const T k = gamma[ch] * inv_std[ch];
                     for (std::int64_t b = 0; b < n; ++b) {
                       const std::int64_t base = (b * c + ch) * area;
                       for (std::int64_t q = 0; q < area; ++q) {
                         if (mode == Mode::train) {
                           slots[0][base + q] +=
                               k / count * (count * g[base + q] - sum_g - (*xhat)[base + q] * sum_gx);
                         } else {
                           slots[0][base + q] += k * g[base + q];
                         }
                       }
                     }
                   }
                 });
  }
  return result;
}

template <Scalar T>
Tensor<T> relu(const Tensor<T>& x) {
  auto d = x.data();
  std::vector<T> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = d[i] > T(0) ? d[i] : T(0);
  auto result = detail::make_result("relu", x.shape(), std::move(out));
  if (auto* tape = detail::recording_tape({&x})) {
    tape->record(result, {&x}, [x](std::span<const T> g, typename Tape<T>::GradSlots slots) {
      auto d = x.data();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (d[i] > T(0)) slots[0][i] += g[i];
    });
  }
  return result;
}

template <Scalar T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  const T lo = std::numeric_limits<T>::min();
  const T hi = std::nextafter(T(1), T(0));
  auto d = x.data();
  auto y = std::make_shared<std::vector<T>>(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) (*y)[i] = std::clamp(stable_sigmoid(d[i]), lo, hi);
  auto result = detail::make_result("sigmoid", x.shape(), *y);
  if (auto* tape = detail::recording_tape({&x})) {
    tape->record(result, {&x}, [y](std::span<const T> g, typename Tape<T>::GradSlots slots) {
      for (std::size_t i = 0; i < g.size(); ++i) slots[0][i] += g[i] * (*y)[i] * (T(1) - (*y)[i]);
    });
  }
  return result;
}

template <Scalar T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax expects N x K logits, got " + to_string(logits.shape()));
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  auto z = logits.data();
  auto y = std::make_shared<std::vector<T>>(z.size());
  for (std::int64_t r = 0; r < n; ++r) {
    const T* row = z.data() + r * k;
    T* out = y->data() + r * k;
    const T peak = *std::max_element(row, row + k);
    T total = 0;
    for (std::int64_t j = 0; j < k; ++j) total += (out[j] = std::exp(row[j] - peak));
    for (std::int64_t j = 0; j < k; ++j) out[j] /= total;
  }
  auto result = detail::make_result("softmax", logits.shape(), *y);
  if (auto* tape = detail::recording_tape({&logits})) {
    tape->record(result, {&logits}, [y, n, k](std::span<const T> g, typename Tape<T>::GradSlots slots) {
      for (std::int64_t r = 0; r < n; ++r) {
        const T* yr = y->data() + r * k;
        const T* gr = g.data() + r * k;
        T dot = 0;
        for (std::int64_t j = 0; j < k; ++j) dot += gr[j] * yr[j];
        for (std::int64_t j = 0; j < k; ++j) slots[0][r * k + j] += yr[j] * (gr[j] - dot);
      }
    });
  }
  return result;
}

template <Scalar T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy expects N x K logits, got " + to_string(logits.shape()));
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                     " rows");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k) {
      throw LabelError("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                       " outside [0, " + std::to_string(k) + ")");
    }
  }
  auto z = logits.data();
  auto probs = std::make_shared<std::vector<T>>(z.size());
  T loss = 0;
  for (std::int64_t r = 0; r < n; ++r) {
    const T* row = z.data() + r * k;
    T* p = probs->data() + r * k;
    const T peak = *std::max_element(row, row + k);
    T total = 0;
    for (std::int64_t j = 0; j < k; ++j) total += (p[j] = std::exp(row[j] - peak));
    for (std::int64_t j = 0; j < k; ++j) p[j] /= total;
    loss += std::log(total) + peak - row[labels[r]];
  }
  loss /= static_cast<T>(n);
  auto result = detail::make_result("cross_entropy", {1}, std::vector<T>{loss});
  if (auto* tape = detail::recording_tape({&logits})) {
    std::vector<int> owned(labels.begin(), labels.end());
    tape->record(result, {&logits},
                 [probs, owned = std::move(owned), n, k](std::span<const T> g, typename Tape<T>::GradSlots slots) {
                   const T scale = g[0] / static_cast<T>(n);
                   for (std::int64_t r = 0; r < n; ++r) {
                     for (std::int64_t j = 0; j < k; ++j) {
                       const T onehot = j == owned[r] ? T(1) : T(0);
                       slots[0][r * k + j] += ((*probs)[r * k + j] - onehot) * scale;
                     }
                   }
                 });
  }
  return result;
}

template <Scalar T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts) {
  std::vector<Tensor<T>> present;
  for (const auto& t : parts)
    if (t.defined()) present.push_back(t);
  if (present.empty()) throw ContractError("concat_channels needs at least one non-empty operand");
  for (const auto& t : present) require_rank4("concat_channels", t);
  const auto& first = present.front().shape();
  std::int64_t channels = 0;
  for (const auto& t : present) {
    const auto& s = t.shape();
    if (s[0] != first[0] || s[2] != first[2] || s[3] != first[3]) {
      throw ShapeError("concat_channels: " + to_string(s) + " does not match " + to_string(first) +
                       " outside the channel axis");
    }
    channels += s[1];
  }
  const std::int64_t n = first[0], area = first[2] * first[3];
  std::vector<T> out(static_cast<std::size_t>(n * channels * area));
  std::vector<std::int64_t> offsets;
  std::int64_t offset = 0;
  for (const auto& t : present) {
    const std::int64_t c = t.dim(1);
    const T* src = t.data().data();
    for (std::int64_t b = 0; b < n; ++b)
      std::copy(src + b * c * area, src + (b + 1) * c * area, out.data() + (b * channels + offset) * area);
    offsets.push_back(offset);
    offset += c;
  }
  auto result = detail::make_result("concat_channels", {n, channels, first[2], first[3]}, std::move(out));
  bool needs_grad = false;
  for (const auto& t : present) needs_grad = needs_grad || t.requires_grad();
  Tape<T>* tape = Tape<T>::current();
  if (needs_grad && tape && !tape->consumed()) {
    std::vector<std::int64_t> widths;
    for (const auto& t : present) widths.push_back(t.dim(1));
    tape->record(result, std::span<const Tensor<T>>(present),
                 [offsets, widths, n, channels, area](std::span<const T> g, typename Tape<T>::GradSlots slots) {
                   for (std::size_t i = 0; i < widths.size(); ++i) {
                     if (slots[i].empty()) continue;
                     const std::int64_t c = widths[i];
                     for (std::int64_t b = 0; b < n; ++b) {
                       const T* src = g.data() + (b * channels + offsets[i]) * area;
                       T* dst = slots[i].data() + b * c * area;
                       for (std::int64_t q = 0; q < c * area; ++q) dst[q] += src[q];
                     }
                   }
                 });
  }
  return result;
}

template <Scalar T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1)) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " incompatible with weight " +
                     to_string(weight.shape()));
  }
  const std::int64_t n = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  if (bias.shape() != Shape{out_dim}) throw ShapeError("linear bias must have shape [" + std::to_string(out_dim) + "]");
  std::vector<T> out(static_cast<std::size_t>(n * out_dim), T(0));
  auto w_t = detail::transpose(weight.data().data(), out_dim, in);
  detail::gemm(n, out_dim, in, x.data().data(), w_t.data(), out.data());
  auto b = bias.data();
  for (std::int64_t r = 0; r < n; ++r)
    for (std::int64_t j = 0; j < out_dim; ++j) out[r * out_dim + j] += b[j];
  auto result = detail::make_result("linear", {n, out_dim}, std::move(out));
  if (auto* tape = detail::recording_tape({&x, &weight, &bias})) {
    tape->record(result, {&x, &weight, &bias},
                 [x, weight, n, in, out_dim](std::span<const T> g, typename Tape<T>::GradSlots slots) {
                   if (!slots[0].empty()) detail::gemm(n, in, out_dim, g.data(), weight.data().data(), slots[0].data());
                   if (!slots[1].empty()) {
                     auto g_t = detail::transpose(g.data(), n, out_dim);
                     detail::gemm(out_dim, in, n, g_t.data(), x.data().data(), slots[1].data());
                   }
                   if (!slots[2].empty()) {
                     for (std::int64_t r = 0; r < n; ++r)
                       for (std::int64_t j = 0; j < out_dim; ++j) slots[2][j] += g[r * out_dim + j];
                   }
                 });
  }
  return result;
}

#define RMN_INSTANTIATE_NN_OPS(T)                                                                 \
  template Tensor<T> conv2d(const Tensor<T>&, const Conv2dParams<T>&);                            \
  template Tensor<T> maxpool2d(const Tensor<T>&, std::int64_t, std::int64_t, std::int64_t);       \
  template Tensor<T> global_avgpool(const Tensor<T>&);                                            \
  template Tensor<T> upsample_to(const Tensor<T>&, std::int64_t, std::int64_t);                   \
  template Tensor<T> batchnorm2d(const Tensor<T>&, BatchNorm2dParams<T>&, Mode);                  \
  template Tensor<T> relu(const Tensor<T>&);                                                      \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                   \
  template Tensor<T> softmax(const Tensor<T>&);                                                   \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>);                       \
  template Tensor<T> concat_channels(std::span<const Tensor<T>>);                                 \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

RMN_INSTANTIATE_NN_OPS(float)
RMN_INSTANTIATE_NN_OPS(double)

}  // namespace rmn
