#include "rmn/ops.hpp"

#include "rmn/detail/gemm.hpp"

namespace rmn {

namespace {

enum class Broadcast { none, scalar_a, scalar_b };

template <Scalar T>
Broadcast check_elementwise(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) return Broadcast::none;
  if (b.numel() == 1) return Broadcast::scalar_b;
  if (a.numel() == 1) return Broadcast::scalar_a;
  throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                   to_string(b.shape()));
}

// Accumulates `g * factor_i` into a gradient slot, reducing to one element
// when the operand was broadcast.
template <Scalar T, typename Factor>
void accumulate(std::span<T> slot, std::span<const T> g, bool reduced, Factor factor) {
  if (slot.empty()) return;
  if (reduced) {
    T total = 0;
    for (std::size_t i = 0; i < g.size(); ++i) total += g[i] * factor(i);
    slot[0] += total;
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i] * factor(i);
  }
}

template <Scalar T, typename Fn>
Tensor<T> binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, Fn fn, Broadcast& mode) {
  mode = check_elementwise(op, a, b);
  const Shape& shape = mode == Broadcast::scalar_a ? b.shape() : a.shape();
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  auto da = a.data();
  auto db = b.data();
  std::vector<T> out(n);
  switch (mode) {
    case Broadcast::none:
      for (std::size_t i = 0; i < n; ++i) out[i] = fn(da[i], db[i]);
      break;
    case Broadcast::scalar_b:
      for (std::size_t i = 0; i < n; ++i) out[i] = fn(da[i], db[0]);
      break;
    case Broadcast::scalar_a:
      for (std::size_t i = 0; i < n; ++i) out[i] = fn(da[0], db[i]);
      break;
  }
  return detail::make_result(op, shape, std::move(out));
}

}  // namespace

template <Scalar T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  Broadcast mode;
  auto out = binary("add", a, b, [](T x, T y) { return x + y; }, mode);
  if (auto* tape = detail::recording_tape({&a, &b})) {
    tape->record(out, {&a, &b}, [mode](std::span<const T> g, typename Tape<T>::GradSlots slots) {
      auto one = [](std::size_t) { return T(1); };
      accumulate<T>(slots[0], g, mode == Broadcast::scalar_a, one);
      accumulate<T>(slots[1], g, mode == Broadcast::scalar_b, one);
    });
  }
  return out;
}

template <Scalar T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  Broadcast mode;
  auto out = binary("sub", a, b, [](T x, T y) { return x - y; }, mode);
  if (auto* tape = detail::recording_tape({&a, &b})) {
    tape->record(out, {&a, &b}, [mode](std::span<const T> g, typename Tape<T>::GradSlots slots) {
      accumulate<T>(slots[0], g, mode == Broadcast::scalar_a, [](std::size_t) { return T(1); });
      accumulate<T>(slots[1], g, mode == Broadcast::scalar_b, [](std::size_t) { return T(-1); });
    });
  }
  return out;
}

template <Scalar T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  Broadcast mode;
  auto out = binary("mul", a, b, [](T x, T y) { return x * y; }, mode);
  if (auto* tape = detail::recording_tape({&a, &b})) {
    tape->record(out, {&a, &b}, [a, b, mode](std::span<const T> g, typename Tape<T>::GradSlots slots) {
      auto da = a.data();
      auto db = b.data();
      // d(a*b)/da = b and d(a*b)/db = a, with broadcast operands indexed at 0.
      auto b_at = [&](std::size_t i) { return mode == Broadcast::scalar_b ? db[0] : db[i]; };
      auto a_at = [&](std::size_t i) { return mode == Broadcast::scalar_a ? da[0] : da[i]; };
      accumulate<T>(slots[0], g, mode == Broadcast::scalar_a, b_at);
      accumulate<T>(slots[1], g, mode == Broadcast::scalar_b, a_at);
    });
  }
  return out;
}

template <Scalar T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  auto dx = x.data();
  std::vector<T> out(dx.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dx[i] * factor;
  auto result = detail::make_result("scale", x.shape(), std::move(out));
  if (auto* tape = detail::recording_tape({&x})) {
    tape->record(result, {&x}, [factor](std::span<const T> g, typename Tape<T>::GradSlots slots) {
      for (std::size_t i = 0; i < g.size(); ++i) slots[0][i] += g[i] * factor;
    });
  }
  return result;
}

template <Scalar T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul needs rank-2 operands, got " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul inner dimensions differ: " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  std::vector<T> out(static_cast<std::size_t>(m * n), T(0));
  detail::gemm(m, n, k, a.data().data(), b.data().data(), out.data());
  auto result = detail::make_result("matmul", {m, n}, std::move(out));
  if (auto* tape = detail::recording_tape({&a, &b})) {
    tape->record(result, {&a, &b}, [a, b, m, n, k](std::span<const T> g, typename Tape<T>::GradSlots slots) {
      if (!slots[0].empty()) {
        // grad_a = g . b^T
        auto bt = detail::transpose(b.data().data(), k, n);
        detail::gemm(m, k, n, g.data(), bt.data(), slots[0].data());
      }
      if (!slots[1].empty()) {
        // grad_b = a^T . g
        auto at = detail::transpose(a.data().data(), m, k);
        detail::gemm(k, n, m, at.data(), g.data(), slots[1].data());
      }
    });
  }
  return result;
}

template <Scalar T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  auto result = detail::make_result("sum", {1}, std::vector<T>{total});
  if (auto* tape = detail::recording_tape({&x})) {
    tape->record(result, {&x}, [](std::span<const T> g, typename Tape<T>::GradSlots slots) {
      for (auto& v : slots[0]) v += g[0];
    });
  }
  return result;
}

template <Scalar T>
Tensor<T> mean(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  const T inv = T(1) / static_cast<T>(x.numel());
  auto result = detail::make_result("mean", {1}, std::vector<T>{total * inv});
  if (auto* tape = detail::recording_tape({&x})) {
    tape->record(result, {&x}, [inv](std::span<const T> g, typename Tape<T>::GradSlots slots) {
      for (auto& v : slots[0]) v += g[0] * inv;
    });
  }
  return result;
}

template <Scalar T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  validate_shape(shape);
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  auto d = x.data();
  Tensor<T> result(std::move(shape), std::vector<T>(d.begin(), d.end()));
  if (auto* tape = detail::recording_tape({&x})) {
    tape->record(result, {&x}, [](std::span<const T> g, typename Tape<T>::GradSlots slots) {
      for (std::size_t i = 0; i < g.size(); ++i) slots[0][i] += g[i];
    });
  }
  return result;
}

#define RMN_INSTANTIATE_OPS(T)                                           \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> scale(const Tensor<T>&, T);                         \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);         \
  template Tensor<T> sum(const Tensor<T>&);                              \
  template Tensor<T> mean(const Tensor<T>&);                             \
  template Tensor<T> reshape(const Tensor<T>&, Shape);

RMN_INSTANTIATE_OPS(float)
RMN_INSTANTIATE_OPS(double)

}  // namespace rmn
