#include "rmn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "rmn/random.hpp"

namespace rmn {

template <Scalar T>
GradCheckResult grad_check(const std::function<Tensor<T>()>& f, std::span<Tensor<T>> wrt,
                           const GradCheckOptions& options) {
  for (auto& t : wrt) {
    if (!t.is_leaf()) throw ContractError("grad_check can only differentiate with respect to leaves");
  }
  std::vector<bool> saved_flags;
  for (auto& t : wrt) {
    saved_flags.push_back(t.requires_grad());
    t.set_requires_grad(true);
  }

  std::vector<Tensor<T>> analytic;
  {
    Tape<T> tape;
    Tensor<T> out = f();
    if (!out.defined() || out.numel() != 1) throw ContractError("grad_check needs a scalar-valued function");
    auto grads = tape.backward(out);
    for (auto& t : wrt) {
      analytic.push_back(grads.contains(t) ? grads[t] : Tensor<T>::zeros(t.shape()));
    }
  }

  const auto value = [&]() {
    Tensor<T> out = f();
    if (out.numel() != 1) throw ContractError("grad_check needs a scalar-valued function");
    return static_cast<double>(out.item());
  };

  Rng rng(options.seed);
  GradCheckResult result;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    auto data = wrt[ti].mutable_data();
    std::vector<std::size_t> indices(data.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    if (options.max_elements_per_tensor != 0 && indices.size() > options.max_elements_per_tensor) {
      rng.shuffle(std::span<std::size_t>(indices));
      indices.resize(options.max_elements_per_tensor);
      std::sort(indices.begin(), indices.end());
    }
    for (std::size_t i : indices) {
      const T original = data[i];
      data[i] = static_cast<T>(original + options.step);
      const double plus = value();
      data[i] = static_cast<T>(original - options.step);
      const double minus = value();
      data[i] = original;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[ti][i];
      const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      ++result.checked;
      if (err > result.max_rel_error || result.checked == 1) {
        result.max_rel_error = std::max(err, result.max_rel_error);
        if (err >= result.max_rel_error) {
          result.worst_tensor = ti;
          result.worst_element = i;
          result.analytic = a;
          result.numeric = numeric;
        }
      }
    }
  }
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) wrt[ti].set_requires_grad(saved_flags[ti]);
  return result;
}

template GradCheckResult grad_check(const std::function<Tensor<float>()>&, std::span<Tensor<float>>,
                                    const GradCheckOptions&);
template GradCheckResult grad_check(const std::function<Tensor<double>()>&, std::span<Tensor<double>>,
                                    const GradCheckOptions&);

}  // namespace rmn
