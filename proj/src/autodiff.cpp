#include "djscc/autodiff.hpp"

#include "djscc/error.hpp"

namespace djscc {

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw Error("use of an empty Var");
  return tape_->value(*this);
}

bool Var::requires_grad() const { return tape_ != nullptr && tape_->requires_grad(*this); }

void Tape::check(const Var& v) const {
  if (v.tape_ != this || v.generation_ != generation_ || v.id_ >= nodes_.size()) {
    throw Error("Var does not belong to this tape (detached or cleared)");
  }
}

const Tensor& Tape::value(const Var& v) const {
  check(v);
  return nodes_[v.id_].value;
}

bool Tape::requires_grad(const Var& v) const {
  check(v);
  return nodes_[v.id_].requires_grad;
}

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  node.value.set_requires_grad(false);
  node.value.clear_grad();
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1, generation_);
}

Var Tape::parameter(Tensor& param) {
  Node node;
  node.value = Tensor(param.shape(), param.values());
  node.requires_grad = param.requires_grad();
  node.bound = node.requires_grad ? &param : nullptr;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1, generation_);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    check(in);
    node.inputs.push_back(in.id_);
    node.requires_grad = node.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1, generation_);
}

GradientMap Tape::backward(const Var& loss) {
  check(loss);
  const Node& root = nodes_[loss.id_];
  if (root.value.numel() != 1 || root.value.rank() != 0) {
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(root.value.shape()));
  }

  GradientMap result;
  std::vector<std::vector<double>> grads(loss.id_ + 1);
  if (root.requires_grad) grads[loss.id_].assign(1, 1.0);

  std::vector<const Tensor*> in_values;
  std::vector<std::vector<double>*> in_grads;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || grads[i].empty()) continue;
    if (node.bound != nullptr) {
      node.bound->accumulate_grad(grads[i]);
      auto& acc = result[node.bound];
      if (acc.empty()) acc.assign(grads[i].size(), 0.0);
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += grads[i][j];
      continue;
    }
    if (!node.backward) continue;
    in_values.clear();
    in_grads.clear();
    for (std::size_t in : node.inputs) {
      in_values.push_back(&nodes_[in].value);
      if (nodes_[in].requires_grad) {
        if (grads[in].empty()) grads[in].assign(nodes_[in].value.numel(), 0.0);
        in_grads.push_back(&grads[in]);
      } else {
        in_grads.push_back(nullptr);
      }
    }
    node.backward(BackwardContext{grads[i], node.value, in_values, in_grads});
    std::vector<double>().swap(grads[i]);
  }

  // Parameters that require a gradient but were not reached still get zeros.
  for (std::size_t i = 0; i <= loss.id_; ++i) {
    Node& node = nodes_[i];
    if (node.bound != nullptr && !result.contains(node.bound)) {
      std::vector<double> zeros(node.value.numel(), 0.0);
      node.bound->accumulate_grad(zeros);
      result.emplace(node.bound, std::move(zeros));
    }
  }
  return result;
}

void Tape::clear() {
  nodes_.clear();
  ++generation_;
}

}  // namespace djscc
