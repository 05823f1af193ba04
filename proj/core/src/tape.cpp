#include "rmn/tape.hpp"

#include <atomic>
#include <cmath>
#include <string>

namespace rmn {

namespace {

std::atomic<std::uint64_t> next_tape_id{1};

template <Scalar T>
Tape<T>*& current_slot() noexcept {
  thread_local Tape<T>* current = nullptr;
  return current;
}

}  // namespace

template <Scalar T>
const Tensor<T>& GradMap<T>::operator[](const Tensor<T>& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) throw ContractError("no gradient recorded for tensor " + to_string(t.shape()));
  return it->second.grad;
}

template <Scalar T>
void GradMap<T>::insert(std::shared_ptr<detail::TensorImpl<T>> key, Tensor<T> grad) {
  const auto* ptr = key.get();
  grads_[ptr] = Entry{std::move(key), std::move(grad)};
}

template <Scalar T>
Tape<T>::Tape() : id_(next_tape_id.fetch_add(1)), previous_(current_slot<T>()) {
  current_slot<T>() = this;
}

template <Scalar T>
Tape<T>::~Tape() {
  // Tapes nest strictly; restore whichever was current before this one.
  if (current_slot<T>() == this) current_slot<T>() = previous_;
}

template <Scalar T>
Tape<T>* Tape<T>::current() noexcept {
  return current_slot<T>();
}

template <Scalar T>
void Tape<T>::record(const Tensor<T>& output, std::initializer_list<const Tensor<T>*> inputs,
                     BackwardFn fn) {
  Node node;
  node.output = output.impl();
  node.inputs.reserve(inputs.size());
  for (const auto* t : inputs) node.inputs.push_back(t->impl());
  node.backward = std::move(fn);
  node.output->requires_grad = true;
  node.output->tape_id = id_;
  node.output->node = nodes_.size();
  nodes_.push_back(std::move(node));
  ++recorded_;
}

template <Scalar T>
void Tape<T>::record(const Tensor<T>& output, std::span<const Tensor<T>> inputs, BackwardFn fn) {
  Node node;
  node.output = output.impl();
  for (const auto& t : inputs) node.inputs.push_back(t.impl());
  node.backward = std::move(fn);
  node.output->requires_grad = true;
  node.output->tape_id = id_;
  node.output->node = nodes_.size();
  nodes_.push_back(std::move(node));
  ++recorded_;
}

template <Scalar T>
void Tape<T>::watch(const Tensor<T>& t) {
  if (!t.defined() || t.id()->tape_id != id_) {
    throw MissingTapeError("watched tensor was not produced on this tape");
  }
  watched_.insert(t.id()->node);
}

template <Scalar T>
GradMap<T> Tape<T>::backward(const Tensor<T>& loss) {
  if (consumed_) throw ContractError("backward() already ran on this tape; record a new pass");
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (nodes_.empty() || loss.id()->tape_id != id_) {
    throw MissingTapeError("loss was not recorded on this tape (detached graph)");
  }
  consumed_ = true;

  using Impl = detail::TensorImpl<T>;
  std::vector<Buffer> node_grads(nodes_.size());
  std::unordered_map<const Impl*, Buffer> leaf_grads;
  std::unordered_map<const Impl*, std::shared_ptr<Impl>> leaves;

  // Every participating leaf gets a gradient, zero if nothing reaches it.
  for (const auto& node : nodes_) {
    for (const auto& in : node.inputs) {
      if (in->tape_id != id_ && in->requires_grad && !leaf_grads.contains(in.get())) {
        leaf_grads.emplace(in.get(), Buffer(in->data.size(), T(0)));
        leaves.emplace(in.get(), in);
      }
    }
  }

  const std::size_t root = loss.id()->node;
  node_grads[root].assign(1, T(1));
  std::vector<std::span<T>> slots;
  for (std::size_t i = root + 1; i-- > 0;) {
    if (node_grads[i].empty()) continue;
    Node& node = nodes_[i];
    slots.clear();
    for (const auto& in : node.inputs) {
      if (in->tape_id == id_) {
        auto& g = node_grads[in->node];
        if (g.empty()) g.assign(in->data.size(), T(0));
        slots.emplace_back(g);
      } else if (in->requires_grad) {
        slots.emplace_back(leaf_grads.at(in.get()));
      } else {
        slots.emplace_back();
      }
    }
    node.backward(node_grads[i], slots);
    if (!watched_.contains(i)) Buffer().swap(node_grads[i]);
  }

  GradMap<T> out;
  for (auto& [ptr, grad] : leaf_grads) {
    const auto& impl = leaves.at(ptr);
    out.insert(impl, Tensor<T>(impl->shape, std::move(grad)));
  }
  for (std::size_t i : watched_) {
    const auto& impl = nodes_[i].output;
    auto grad = node_grads[i].empty() ? Buffer(impl->data.size(), T(0)) : std::move(node_grads[i]);
    out.insert(impl, Tensor<T>(impl->shape, std::move(grad)));
  }
  // Release operands and closures; the tape cannot be replayed.
  nodes_.clear();
  nodes_.shrink_to_fit();
  return out;
}

namespace detail {

template <Scalar T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data) {
  for (T v : data) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
  }
  return Tensor<T>(std::move(shape), std::move(data));
}

template Tensor<float> make_result(const char*, Shape, std::vector<float>);
template Tensor<double> make_result(const char*, Shape, std::vector<double>);

}  // namespace detail

template class GradMap<float>;
template class GradMap<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace rmn
