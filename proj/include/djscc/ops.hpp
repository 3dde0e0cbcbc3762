#pragma once

#include <functional>
#include <vector>

#include "djscc/autodiff.hpp"

namespace djscc {

// Elementwise binary ops. Shapes must be equal, or the shorter shape must be a
// trailing suffix of the longer one (it is then repeated along the leading dims).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);

Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var square(Var a);
Var sigmoid(Var a);
double sigmoid_value(double x);
// log(1 + e^x), evaluated without overflow.
Var softplus(Var a);

Var sum(Var a);
Var reduce_mean(Var a);
Var reshape(Var a, Shape shape);

// Mean of squared differences over every element.
Var mse(Var a, Var b);

// Result shape of a trailing-suffix broadcast; throws ShapeError naming both shapes.
Shape broadcast_shape(const Shape& a, const Shape& b);

using ScalarFn = std::function<Var(Tape&, Var)>;

/// Worst relative disagreement between reverse-mode and central-difference
/// gradients of f at x: max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-8).
double grad_check(const ScalarFn& f, const Tensor& x, double eps = 1e-5);

/// Same check over a set of parameter tensors read by f. When max_coords is
/// nonzero, at most that many coordinates per tensor are probed (evenly strided).
double grad_check_params(const std::function<Var(Tape&)>& f, const std::vector<Tensor*>& params,
                         double eps = 1e-5, std::size_t max_coords = 0);

}  // namespace djscc
