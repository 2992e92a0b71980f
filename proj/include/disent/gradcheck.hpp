#pragma once

#include <functional>

#include "disent/tensor.hpp"

namespace disent {

// Central-difference gradient of a scalar function, one probe per element.
// Throws DomainError if an evaluation is non-finite.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f,
                        const Tensor& x, double h = 1e-5);

// max over elements of |a-b| / max(|a|+|b|, floor)
double max_rel_error(const Tensor& a, const Tensor& b, double floor = 1e-8);

}  // namespace disent
