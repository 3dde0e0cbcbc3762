#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "djscc/tensor.hpp"

namespace djscc {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; invalidated by Tape::clear().
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t numel() const { return value().numel(); }
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id, std::uint64_t generation) : tape_(tape), id_(id), generation_(generation) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
  std::uint64_t generation_ = 0;
};

/// What a primitive's backward rule sees: the upstream gradient, its saved
/// output and inputs, and one accumulation buffer per input (null when that
/// input does not need a gradient).
struct BackwardContext {
  std::span<const double> grad_out;
  const Tensor& output;
  std::span<const Tensor* const> inputs;
  std::span<std::vector<double>* const> input_grads;

  const Tensor& input(std::size_t i) const { return *inputs[i]; }
  std::vector<double>* grad(std::size_t i) const { return input_grads[i]; }
};

using BackwardFn = std::function<void(const BackwardContext&)>;
using GradientMap = std::unordered_map<const Tensor*, std::vector<double>>;

/// Define-by-run record of primitive applications.
///
/// Nodes are appended in evaluation order, so walking them back to front is a
/// reverse topological order. Parameters are leaves bound to caller-owned
/// tensors; backward() accumulates into those tensors' grad buffers, but only
/// for tensors whose requires_grad() flag was set when they were bound.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(Tensor& param);
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  // Gradients of a scalar loss into every bound parameter that requires one.
  GradientMap backward(const Var& loss);

  // Drops every node and all saved intermediates; outstanding Vars become stale.
  void clear();
  std::size_t size() const { return nodes_.size(); }

  const Tensor& value(const Var& v) const;
  bool requires_grad(const Var& v) const;

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    Tensor* bound = nullptr;
  };

  void check(const Var& v) const;

  std::deque<Node> nodes_;
  std::uint64_t generation_ = 1;
};

}  // namespace djscc
