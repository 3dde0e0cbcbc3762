#include "djscc/ops.hpp"

#include <algorithm>
#include <cmath>

#include "djscc/error.hpp"

namespace djscc {

namespace {

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Tape& tape_of(const Var& a, const Var& b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) throw Error("operands live on different tapes");
  return *a.tape();
}

enum class BinaryKind { Add, Sub, Mul };

Var binary(Var a, Var b, BinaryKind kind) {
  Tape& tape = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Shape out_shape = broadcast_shape(av.shape(), bv.shape());
  const std::size_t n = shape_numel(out_shape);
  const std::size_t na = av.numel();
  const std::size_t nb = bv.numel();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[i % na];
    const double y = bv[i % nb];
    switch (kind) {
      case BinaryKind::Add: out[i] = x + y; break;
      case BinaryKind::Sub: out[i] = x - y; break;
      case BinaryKind::Mul: out[i] = x * y; break;
    }
  }
  return tape.record(Tensor(out_shape, std::move(out)), {a, b}, [kind](const BackwardContext& ctx) {
    const Tensor& x = ctx.input(0);
    const Tensor& y = ctx.input(1);
    const std::size_t nx = x.numel();
    const std::size_t ny = y.numel();
    auto* gx = ctx.grad(0);
    auto* gy = ctx.grad(1);
    for (std::size_t i = 0; i < ctx.grad_out.size(); ++i) {
      const double g = ctx.grad_out[i];
      switch (kind) {
        case BinaryKind::Add:
          if (gx) (*gx)[i % nx] += g;
          if (gy) (*gy)[i % ny] += g;
          break;
        case BinaryKind::Sub:
          if (gx) (*gx)[i % nx] += g;
          if (gy) (*gy)[i % ny] -= g;
          break;
        case BinaryKind::Mul:
          if (gx) (*gx)[i % nx] += g * y[i % ny];
          if (gy) (*gy)[i % ny] += g * x[i % nx];
          break;
      }
    }
  });
}

template <class Fwd, class Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
  const Tensor& av = a.value();
  std::vector<double> out(av.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  return a.tape()->record(Tensor(av.shape(), std::move(out)), {a}, [deriv](const BackwardContext& ctx) {
    auto& gx = *ctx.grad(0);
    const Tensor& x = ctx.input(0);
    const Tensor& y = ctx.output;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += ctx.grad_out[i] * deriv(x[i], y[i]);
  });
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  if (a == b) return a;
  if (is_suffix(b, a)) return a;
  if (is_suffix(a, b)) return b;
  throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) + " are not broadcastable");
}

Var add(Var a, Var b) { return binary(a, b, BinaryKind::Add); }
Var sub(Var a, Var b) { return binary(a, b, BinaryKind::Sub); }
Var mul(Var a, Var b) { return binary(a, b, BinaryKind::Mul); }

Var scale(Var a, double factor) {
  return unary(a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double offset) {
  return unary(a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Var sigmoid(Var a) {
  return unary(a, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

Var softplus(Var a) {
  return unary(
      a, [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) { return sigmoid_value(x); });
}

Var sum(Var a) {
  const Tensor& av = a.value();
  double s = 0.0;
  for (double v : av.data()) s += v;
  return a.tape()->record(Tensor::scalar(s), {a}, [](const BackwardContext& ctx) {
    const double g = ctx.grad_out[0];
    for (double& v : *ctx.grad(0)) v += g;
  });
}

Var reduce_mean(Var a) {
  const Tensor& av = a.value();
  if (av.numel() == 0) throw ShapeError("mean of an empty tensor");
  double s = 0.0;
  for (double v : av.data()) s += v;
  const double n = static_cast<double>(av.numel());
  return a.tape()->record(Tensor::scalar(s / n), {a}, [n](const BackwardContext& ctx) {
    const double g = ctx.grad_out[0] / n;
    for (double& v : *ctx.grad(0)) v += g;
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape()->record(std::move(out), {a}, [](const BackwardContext& ctx) {
    auto& gx = *ctx.grad(0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += ctx.grad_out[i];
  });
}

Var mse(Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mse of mismatched shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  return reduce_mean(square(sub(a, b)));
}

double grad_check(const ScalarFn& f, const Tensor& x, double eps) {
  Tensor probe(x.shape(), x.values());
  probe.set_requires_grad(true);
  return grad_check_params(
      [&](Tape& tape) { return f(tape, tape.parameter(probe)); }, {&probe}, eps, 0);
}

double grad_check_params(const std::function<Var(Tape&)>& f, const std::vector<Tensor*>& params, double eps,
                         std::size_t max_coords) {
  std::vector<bool> saved_flags;
  for (Tensor* p : params) {
    saved_flags.push_back(p->requires_grad());
    p->set_requires_grad(true);
    p->clear_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Var loss = f(tape);
    tape.backward(loss);
    for (Tensor* p : params) {
      analytic.push_back(p->grad() ? *p->grad() : std::vector<double>(p->numel(), 0.0));
      p->clear_grad();
    }
  }
  auto eval = [&]() {
    Tape tape;
    return f(tape).value().item();
  };

  double worst = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = *params[t];
    const std::size_t n = p.numel();
    const std::size_t step = (max_coords == 0 || n <= max_coords) ? 1 : (n + max_coords - 1) / max_coords;
    for (std::size_t i = 0; i < n; i += step) {
      const double orig = p[i];
      p[i] = orig + eps;
      const double up = eval();
      p[i] = orig - eps;
      const double down = eval();
      p[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[t][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  for (std::size_t t = 0; t < params.size(); ++t) params[t]->set_requires_grad(saved_flags[t]);
  return worst;
}

}  // namespace djscc
