#pragma once

#include <functional>

#include "metaemb/tensor.hpp"

namespace metaemb {

// Central-difference gradient of a scalar function at x.
Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

// Central difference of a gradient function along v:
// (g(x + h v) - g(x - h v)) / 2h. The finite-difference counterpart of a
// Hessian-vector product.
Tensor numeric_hvp(const std::function<Tensor(const Tensor&)>& grad_fn, const Tensor& x, const Tensor& v,
                   double h = 1e-4);

// ||a - b||_inf / max(||a||_inf, ||b||_inf, floor).
double relative_error(const Tensor& a, const Tensor& b, double floor = 1e-8);

}  // namespace metaemb
