#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "ccdc/common.hpp"

namespace ccdc {

using Array = Eigen::ArrayXd;

class Tape;
struct Node;
struct BackwardCtx;

// A named, trainable value that outlives any single tape. Forward passes bind
// parameters onto a tape as leaves; backward writes gradients back here.
struct Parameter {
  std::string name;
  Shape shape;
  Array value;
  Array grad;

  Index numel() const { return value.size(); }
  void zero_grad() { grad.setZero(); }
};

// Ordered, named collection of all learnable tensors of a model. Order is the
// serialization identity, so construction order must be deterministic.
class ParameterStore {
 public:
  Parameter& create(std::string name, Shape shape);
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;

  std::size_t size() const { return items_.size(); }
  Parameter& at(std::size_t i) { return *items_[i]; }
  const Parameter& at(std::size_t i) const { return *items_[i]; }

  Index total_values() const;
  void zero_grads();

 private:
  std::vector<std::unique_ptr<Parameter>> items_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

using ForwardFn = std::function<Array(const std::vector<std::shared_ptr<Node>>&)>;
using BackwardFn = std::function<void(const Node& self, const Array& self_adj, BackwardCtx& ctx)>;

// One record on the tape: the operation kind, its inputs, the recorded output
// value, and the closures that recompute it (replay) and push adjoints back.
struct Node {
  Tape* tape = nullptr;
  Index id = -1;
  const char* op = "leaf";
  Shape shape;
  Array value;
  Array grad;  // persistent; accumulates across backward() calls
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  ForwardFn forward_fn;    // empty for leaves
  BackwardFn backward_fn;  // empty for leaves
  Parameter* param = nullptr;
};

// Per-backward-pass adjoint buffers, indexed by node id. Keeping these apart
// from Node::grad makes repeated backward() calls accumulate linearly.
struct BackwardCtx {
  explicit BackwardCtx(std::size_t n) : adj(n) {}
  std::vector<Array> adj;

  // Returns the adjoint buffer for `n`, or nullptr if it does not require
  // gradient (constants never receive adjoints).
  Array* buffer(const Node& n) {
    if (!n.requires_grad) return nullptr;
    Array& a = adj[static_cast<std::size_t>(n.id)];
    if (a.size() == 0) a = Array::Zero(n.value.size());
    return &a;
  }
};

// Lightweight handle to a tape node. Copies share the node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  bool valid() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  Index rank() const { return static_cast<Index>(n_->shape.size()); }
  Index numel() const { return n_->value.size(); }
  bool requires_grad() const { return n_->requires_grad; }
  const Array& value() const { return n_->value; }
  const Array& grad() const { return n_->grad; }
  bool has_grad() const { return n_->grad.size() > 0; }
  void clear_grad() { n_->grad.resize(0); }

  double scalar() const {
    if (numel() != 1) throw UsageError("scalar() on tensor of shape " + shape_str(shape()));
    return n_->value[0];
  }

  Node* node() const { return n_.get(); }
  const std::shared_ptr<Node>& handle() const { return n_; }

 private:
  std::shared_ptr<Node> n_;
};

// Wengert list. Owns the nodes of one forward computation; single-threaded.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(Shape shape, Array data, bool requires_grad = false);
  Tensor constant(Shape shape, Array data) { return leaf(std::move(shape), std::move(data), false); }
  Tensor scalar_const(double v);

  // Binds a parameter as a leaf, one node per tape regardless of how many
  // times it is requested.
  Tensor bind(Parameter& p);

  // Records a new operation node; runs `fwd` immediately to produce the value.
  Tensor make(const char* op, const std::vector<Tensor>& inputs, Shape out_shape, ForwardFn fwd,
              BackwardFn bwd);

  // Reverse-mode sweep from `loss` (scalar, recorded on this tape). Gradients
  // accumulate into Node::grad and bound Parameter::grad.
  void backward(const Tensor& loss);

  // Re-runs every non-leaf forward closure and checks the recorded values are
  // reproduced bit-identically.
  bool replay_matches() const;

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::shared_ptr<Node>> nodes_;
  std::unordered_map<const Parameter*, std::shared_ptr<Node>> bound_;
};

inline void backward(const Tensor& loss) {
  if (!loss.valid()) throw UsageError("backward: empty tensor");
  loss.node()->tape->backward(loss);
}

}  // namespace ccdc
