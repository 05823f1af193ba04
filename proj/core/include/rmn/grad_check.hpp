#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "rmn/tape.hpp"

namespace rmn {

struct GradCheckOptions {
  double step = 1e-5;
  // Check at most this many elements per tensor, chosen at random; 0 checks all.
  std::size_t max_elements_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. `wrt` must be leaves; they are perturbed in place (and
/// restored), so `f` sees the perturbation through any handle it holds.
///
/// Per element: |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
template <Scalar T>
GradCheckResult grad_check(const std::function<Tensor<T>()>& f, std::span<Tensor<T>> wrt,
                           const GradCheckOptions& options = {});

extern template GradCheckResult grad_check(const std::function<Tensor<float>()>&, std::span<Tensor<float>>,
                                           const GradCheckOptions&);
extern template GradCheckResult grad_check(const std::function<Tensor<double>()>&, std::span<Tensor<double>>,
                                           const GradCheckOptions&);

}  // namespace rmn
