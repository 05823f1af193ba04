#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "rmn/errors.hpp"

namespace rmn {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape) noexcept;
std::string to_string(const Shape& shape);

// Throws InvalidShapeError unless the shape has rank 1-4 and positive extents.
void validate_shape(const Shape& shape);

namespace init {
struct Zeros {};
struct Constant {
  double value = 0.0;
};
struct Uniform {
  std::uint64_t seed = 0;
  double lo = 0.0;
  double hi = 1.0;
};
// Normal(0, 2 / fan_in).
struct KaimingNormal {
  std::uint64_t seed = 0;
  std::int64_t fan_in = 1;
};
}  // namespace init

using Init = std::variant<init::Zeros, init::Constant, init::Uniform, init::KaimingNormal>;

template <typename T>
concept Scalar = std::is_same_v<T, float> || std::is_same_v<T, double>;

namespace detail {

template <Scalar T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;
  // Id of the tape that produced this value; 0 for leaves and untracked values.
  std::uint64_t tape_id = 0;
  std::size_t node = 0;
};

}  // namespace detail

/// Dense row-major array shared by handle. Copies of a Tensor alias the same
/// storage; values produced by operations are never modified afterwards.
/// Leaves (parameters, inputs) may be updated in place through
/// mutable_data(), which is how optimizers and initializers write them.
template <Scalar T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor create(Shape shape, const Init& init, bool requires_grad = false);
  static Tensor zeros(Shape shape) { return create(std::move(shape), init::Zeros{}); }
  static Tensor full(Shape shape, T value) {
    return create(std::move(shape), init::Constant{static_cast<double>(value)});
  }
  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::int64_t dim(std::size_t axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(data().size()); }

  std::span<const T> data() const;
  // Only leaves may be written; tape-produced values are immutable.
  std::span<T> mutable_data();
  T item() const;
  T operator[](std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const noexcept { return impl_ && impl_->requires_grad; }
  bool is_leaf() const noexcept { return !impl_ || impl_->tape_id == 0; }
  Tensor& set_requires_grad(bool on);

  // Fresh leaf holding a copy of the values.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  template <Scalar U>
  Tensor<U> cast() const {
    std::vector<U> out(data().begin(), data().end());
    return Tensor<U>(shape(), std::move(out));
  }

  const detail::TensorImpl<T>* id() const noexcept { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl<T>>& impl() const noexcept { return impl_; }

 private:
  const detail::TensorImpl<T>& checked() const;

  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

// True when every element is bitwise identical and the shapes agree.
template <Scalar T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template bool bit_equal(const Tensor<float>&, const Tensor<float>&);
extern template bool bit_equal(const Tensor<double>&, const Tensor<double>&);

}  // namespace rmn
