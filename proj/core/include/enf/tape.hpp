#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "enf/tensor.hpp"

namespace enf {

class Tape;
using NodeId = std::size_t;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive and has not been truncated below `id()`.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  NodeId id() const { return id_; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

/// Maps the upstream gradient of a node to one gradient per input. Entries for
/// inputs that need no gradient may be left invalid.
using BackwardFn = std::function<std::vector<Var>(const Var& grad_out)>;

/// Ordered record of primitive operations for reverse-mode differentiation.
///
/// Single-writer: one tape belongs to one thread. Node ids are creation order,
/// which is a topological order, so the reverse pass is a reverse scan.
/// Backward closures are themselves expressed with taped ops, so gradients
/// obtained via grad() can be differentiated again (used by second-order
/// meta-learning).
class Tape {
 public:
  explicit Tape(DType dtype = DType::F64) : dtype_(dtype) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  DType dtype() const { return dtype_; }
  std::size_t size() const { return nodes_.size(); }

  /// Trainable leaf.
  Var param(Tensor value);
  /// Leaf that never receives a gradient.
  Var constant(Tensor value);

  /// Appends the result of a primitive. Inputs and `fn` are dropped when no
  /// input requires a gradient or recording is disabled. Throws NumericError
  /// naming `op` if `value` holds NaN/Inf.
  Var record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn fn);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
  bool recording() const { return recording_; }

  /// Differentiable gradients of `loss` w.r.t. each of `wrt` (graph kept).
  /// Unreached targets get a zero constant.
  std::vector<Var> grad(const Var& loss, std::span<const Var> wrt);

  /// Gradient values of `loss` w.r.t. `wrt`. Nodes created by the reverse pass
  /// are discarded afterwards, so the tape is left as it was.
  std::vector<Tensor> gradients(const Var& loss, std::span<const Var> wrt);

  /// Gradient of `loss` for every trainable leaf on the tape, keyed by node id.
  /// Leaves not reachable from `loss` map to zeros.
  std::unordered_map<NodeId, Tensor> backward(const Var& loss);

  /// Drops every node with id >= n.
  void truncate(std::size_t n);

  /// Disables recording of backward closures for its lifetime.
  class NoGradGuard {
   public:
    explicit NoGradGuard(Tape& tape) : tape_(tape), previous_(tape.recording_) {
      tape_.recording_ = false;
    }
    ~NoGradGuard() { tape_.recording_ = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    Tape& tape_;
    bool previous_;
  };

 private:
  struct Node {
    Tensor value;
    std::vector<Var> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
  };

  std::vector<Var> run_backward(const Var& loss, std::span<const Var> wrt, bool create_graph);

  DType dtype_;
  bool recording_ = true;
  std::deque<Node> nodes_;
};

}  // namespace enf
