#pragma once

#include <functional>

#include "kacl/tensor.hpp"

namespace kacl {

// Central-difference check of reverse-mode gradients.
// f must be scalar-valued and is called both under a recording (for the
// analytic gradient) and without one (for probing). Returns the max over
// coordinates of |analytic - fd| / max(1, |analytic|).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps);

}  // namespace kacl
