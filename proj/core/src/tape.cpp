#include "enf/tape.hpp"

#include <optional>

#include "enf/error.hpp"
#include "enf/ops.hpp"

namespace enf {

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("value() of an empty Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Var Tape::param(Tensor value) {
  if (value.dtype() != dtype_) value = value.as_dtype(dtype_);
  if (!value.all_finite()) throw NumericError("param: non-finite initial value");
  Node node;
  node.value = std::move(value);
  node.requires_grad = true;
  node.is_leaf = true;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  if (value.dtype() != dtype_) value = value.as_dtype(dtype_);
  if (!value.all_finite()) throw NumericError("constant: non-finite value");
  Node node;
  node.value = std::move(value);
  node.is_leaf = true;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn fn) {
  if (value.dtype() != dtype_) value = value.as_dtype(dtype_);
  if (!value.all_finite()) {
    throw NumericError(std::string(op) + ": non-finite value in output of shape " +
                       shape_string(value.shape()));
  }
  Node node;
  node.value = std::move(value);
  bool needs_grad = false;
  for (const auto& in : inputs) {
    if (&in.tape() != this) throw ContractError(std::string(op) + ": operands live on different tapes");
    needs_grad = needs_grad || in.requires_grad();
  }
  if (recording_ && needs_grad) {
    node.inputs = std::move(inputs);
    node.backward = std::move(fn);
    node.requires_grad = true;
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::truncate(std::size_t n) {
  if (n < nodes_.size()) nodes_.resize(n);
}

std::vector<Var> Tape::run_backward(const Var& loss, std::span<const Var> wrt, bool create_graph) {
  if (!loss.valid() || &loss.tape() != this) throw ContractError("backward: loss is not on this tape");
  if (loss.value().numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
  }
  const NodeId top = loss.id();

  // Only nodes with a path to some target need a gradient.
  std::vector<char> relevant(top + 1, 0);
  for (const auto& w : wrt) {
    if (&w.tape() != this) throw ContractError("backward: target is not on this tape");
    if (w.id() <= top) relevant[w.id()] = 1;
  }
  for (NodeId id = 0; id <= top; ++id) {
    if (relevant[id] || !nodes_[id].requires_grad) continue;
    for (const auto& in : nodes_[id].inputs) {
      if (relevant[in.id()]) {
        relevant[id] = 1;
        break;
      }
    }
  }

  std::optional<NoGradGuard> guard;
  if (!create_graph) guard.emplace(*this);

  std::vector<Var> grads(top + 1);
  grads[top] = constant(Tensor::full(loss.shape(), 1.0, dtype_));
  for (NodeId id = top + 1; id-- > 0;) {
    if (!grads[id].valid() || !relevant[id]) continue;
    // nodes_ is a deque: references stay valid while the closure appends.
    const Node& node = nodes_[id];
    if (!node.backward) continue;
    std::vector<Var> in_grads = node.backward(grads[id]);
    for (std::size_t k = 0; k < node.inputs.size() && k < in_grads.size(); ++k) {
      const Var& in = node.inputs[k];
      if (!in_grads[k].valid() || !relevant[in.id()]) continue;
      grads[in.id()] = grads[in.id()].valid() ? add(grads[in.id()], in_grads[k]) : in_grads[k];
    }
  }

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    if (w.id() <= top && grads[w.id()].valid()) {
      out.push_back(grads[w.id()]);
    } else {
      out.push_back(constant(Tensor::zeros(w.shape(), dtype_)));
    }
  }
  return out;
}

std::vector<Var> Tape::grad(const Var& loss, std::span<const Var> wrt) {
  return run_backward(loss, wrt, /*create_graph=*/true);
}

std::vector<Tensor> Tape::gradients(const Var& loss, std::span<const Var> wrt) {
  const std::size_t mark = nodes_.size();
  std::vector<Var> vars = run_backward(loss, wrt, /*create_graph=*/false);
  std::vector<Tensor> out;
  out.reserve(vars.size());
  for (const auto& v : vars) out.push_back(v.value());
  truncate(mark);
  return out;
}

std::unordered_map<NodeId, Tensor> Tape::backward(const Var& loss) {
  std::vector<Var> leaves;
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    if (nodes_[id].is_leaf && nodes_[id].requires_grad) leaves.emplace_back(this, id);
  }
  std::vector<Tensor> grads = gradients(loss, leaves);
  std::unordered_map<NodeId, Tensor> out;
  for (std::size_t i = 0; i < leaves.size(); ++i) out.emplace(leaves[i].id(), std::move(grads[i]));
  return out;
}

}  // namespace enf
