#include "rmn/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "rmn/random.hpp"

namespace rmn {

std::int64_t shape_numel(const Shape& shape) noexcept {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void validate_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 4) {
    throw InvalidShapeError("tensor rank must be 1-4, got shape " + to_string(shape));
  }
  for (auto d : shape) {
    if (d < 1) throw InvalidShapeError("non-positive dimension in shape " + to_string(shape));
  }
}

template <Scalar T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) {
  validate_shape(shape);
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("shape " + to_string(shape) + " needs " + std::to_string(shape_numel(shape)) +
                     " elements, got " + std::to_string(data.size()));
  }
  impl_ = std::make_shared<detail::TensorImpl<T>>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

template <Scalar T>
Tensor<T> Tensor<T>::create(Shape shape, const Init& init, bool requires_grad) {
  validate_shape(shape);
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  std::vector<T> data(n, T(0));
  std::visit(
      [&](const auto& how) {
        using K = std::decay_t<decltype(how)>;
        if constexpr (std::is_same_v<K, init::Constant>) {
          std::fill(data.begin(), data.end(), static_cast<T>(how.value));
        } else if constexpr (std::is_same_v<K, init::Uniform>) {
          Rng rng(how.seed);
          for (auto& v : data) v = static_cast<T>(rng.uniform(how.lo, how.hi));
        } else if constexpr (std::is_same_v<K, init::KaimingNormal>) {
          if (how.fan_in < 1) throw ContractError("kaiming init needs fan_in >= 1");
          Rng rng(how.seed);
          const double stddev = std::sqrt(2.0 / static_cast<double>(how.fan_in));
          for (auto& v : data) v = static_cast<T>(stddev * rng.normal());
        }
      },
      init);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

template <Scalar T>
const detail::TensorImpl<T>& Tensor<T>::checked() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return *impl_;
}

template <Scalar T>
const Shape& Tensor<T>::shape() const {
  return checked().shape;
}

template <Scalar T>
std::int64_t Tensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(s));
  }
  return s[axis];
}

template <Scalar T>
std::span<const T> Tensor<T>::data() const {
  return checked().data;
}

template <Scalar T>
std::span<T> Tensor<T>::mutable_data() {
  checked();
  if (impl_->tape_id != 0) throw ContractError("cannot modify a value recorded on a tape");
  return impl_->data;
}

template <Scalar T>
T Tensor<T>::item() const {
  const auto& d = checked().data;
  if (d.size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
  return d[0];
}

template <Scalar T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  checked();
  if (impl_->tape_id != 0) throw ContractError("requires_grad can only be set on leaves");
  impl_->requires_grad = on;
  return *this;
}

template <Scalar T>
Tensor<T> Tensor<T>::detach() const {
  const auto& impl = checked();
  return Tensor(impl.shape, impl.data);
}

template <Scalar T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(), a.data().size_bytes()) == 0;
}

template class Tensor<float>;
template class Tensor<double>;
template bool bit_equal(const Tensor<float>&, const Tensor<float>&);
template bool bit_equal(const Tensor<double>&, const Tensor<double>&);

}  // namespace rmn
