#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "rmn/tensor.hpp"

namespace rmn {

/// Gradients produced by Tape::backward, keyed by tensor identity.
template <Scalar T>
class GradMap {
 public:
  bool contains(const Tensor<T>& t) const { return grads_.contains(t.id()); }
  // Throws ContractError when no gradient was recorded for t.
  const Tensor<T>& operator[](const Tensor<T>& t) const;
  std::size_t size() const noexcept { return grads_.size(); }

  void insert(std::shared_ptr<detail::TensorImpl<T>> key, Tensor<T> grad);

 private:
  struct Entry {
    std::shared_ptr<detail::TensorImpl<T>> key;  // pins the address used as map key
    Tensor<T> grad;
  };
  std::unordered_map<const detail::TensorImpl<T>*, Entry> grads_;
};

/// Records operations for reverse-mode differentiation.
///
/// Constructing a Tape makes it the current tape of the calling thread until
/// it is destroyed (tapes nest). While a tape is current, every operation
/// that has an input with requires_grad appends a node holding its operands
/// and a backward rule. Nodes are appended in execution order, so the record
/// is topologically sorted by construction. A tape is single-use: backward()
/// consumes it.
template <Scalar T>
class Tape {
 public:
  using Buffer = std::vector<T>;
  // Receives the output gradient and one slot per operand. A slot is empty
  // when its operand does not need a gradient; otherwise the rule must add
  // (not assign) its contribution.
  using GradSlots = std::span<const std::span<T>>;
  using BackwardFn = std::function<void(std::span<const T> grad_out, GradSlots grad_in)>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() noexcept;

  std::uint64_t id() const noexcept { return id_; }
  std::size_t size() const noexcept { return recorded_; }
  bool consumed() const noexcept { return consumed_; }

  // Keeps the gradient of an intermediate value so backward() returns it.
  void watch(const Tensor<T>& t);

  GradMap<T> backward(const Tensor<T>& loss);

  void record(const Tensor<T>& output, std::initializer_list<const Tensor<T>*> inputs, BackwardFn fn);
  void record(const Tensor<T>& output, std::span<const Tensor<T>> inputs, BackwardFn fn);

 private:
  struct Node {
    std::shared_ptr<detail::TensorImpl<T>> output;
    std::vector<std::shared_ptr<detail::TensorImpl<T>>> inputs;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::unordered_set<std::size_t> watched_;
  std::uint64_t id_;
  std::size_t recorded_ = 0;
  Tape* previous_;
  bool consumed_ = false;
};

namespace detail {

// The current tape if any of the operands needs a gradient, else nullptr.
template <Scalar T>
Tape<T>* recording_tape(std::initializer_list<const Tensor<T>*> inputs) noexcept {
  Tape<T>* tape = Tape<T>::current();
  if (!tape || tape->consumed()) return nullptr;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

// Wraps freshly computed values in a tensor; non-finite values raise NumericError.
template <Scalar T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data);

}  // namespace detail

extern template class GradMap<float>;
extern template class GradMap<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace rmn
