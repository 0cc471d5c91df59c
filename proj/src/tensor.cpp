#include "ccdc/tensor.hpp"

#include <cstdlib>
#include <cstring>
#include <thread>

namespace ccdc {

int thread_cap() {
  static const int cap = [] {
    if (const char* env = std::getenv("CCDC_THREADS")) {
      char* end = nullptr;
      long v = std::strtol(env, &end, 10);
      if (end != env && v >= 1) return static_cast<int>(v);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
  }();
  return cap;
}

Parameter& ParameterStore::create(std::string name, Shape shape) {
  if (by_name_.count(name)) throw UsageError("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->shape = std::move(shape);
  const Index n = numel(p->shape);
  p->value = Array::Zero(n);
  p->grad = Array::Zero(n);
  by_name_[name] = items_.size();
  items_.push_back(std::move(p));
  return *items_.back();
}

Parameter* ParameterStore::find(std::string_view name) {
  auto it = by_name_.find(std::string(name));
  return it == by_name_.end() ? nullptr : items_[it->second].get();
}

const Parameter* ParameterStore::find(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  return it == by_name_.end() ? nullptr : items_[it->second].get();
}

Index ParameterStore::total_values() const {
  Index n = 0;
  for (const auto& p : items_) n += p->numel();
  return n;
}

void ParameterStore::zero_grads() {
  for (auto& p : items_) p->zero_grad();
}

Tensor Tape::leaf(Shape shape, Array data, bool requires_grad) {
  if (numel(shape) != data.size())
    throw ShapeError("leaf: shape " + shape_str(shape) + " does not match data length " +
                     std::to_string(data.size()));
  auto n = std::make_shared<Node>();
  n->tape = this;
  n->id = static_cast<Index>(nodes_.size());
  n->op = "leaf";
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  nodes_.push_back(n);
  return Tensor(n);
}

Tensor Tape::scalar_const(double v) {
  Array a(1);
  a[0] = v;
  return leaf(Shape{1}, std::move(a), false);
}

Tensor Tape::bind(Parameter& p) {
  auto it = bound_.find(&p);
  if (it != bound_.end()) return Tensor(it->second);
  Tensor t = leaf(p.shape, p.value, true);
  t.node()->op = "param";
  t.node()->param = &p;
  bound_[&p] = t.handle();
  return t;
}

Tensor Tape::make(const char* op, const std::vector<Tensor>& inputs, Shape out_shape, ForwardFn fwd,
                  BackwardFn bwd) {
  auto n = std::make_shared<Node>();
  n->tape = this;
  n->op = op;
  n->shape = std::move(out_shape);
  for (const Tensor& t : inputs) {
    if (!t.valid()) throw UsageError(std::string(op) + ": empty input tensor");
    if (t.node()->tape != this) throw UsageError(std::string(op) + ": inputs recorded on a different tape");
    n->inputs.push_back(t.handle());
    n->requires_grad = n->requires_grad || t.requires_grad();
  }
  n->value = fwd(n->inputs);
  if (n->value.size() != numel(n->shape))
    throw ShapeError(std::string(op) + ": forward produced " + std::to_string(n->value.size()) +
                     " values for shape " + shape_str(n->shape));
  n->forward_fn = std::move(fwd);
  n->backward_fn = std::move(bwd);
  n->id = static_cast<Index>(nodes_.size());
  nodes_.push_back(n);
  return Tensor(n);
}

void Tape::backward(const Tensor& loss) {
  if (!loss.valid() || loss.node()->tape != this)
    throw UsageError("backward: loss was not recorded on this tape");
  if (loss.numel() != 1)
    throw UsageError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;  // nothing trainable feeds the loss

  BackwardCtx ctx(nodes_.size());
  ctx.adj[static_cast<std::size_t>(loss.node()->id)] = Array::Ones(1);

  for (Index id = loss.node()->id; id >= 0; --id) {
    Node& n = *nodes_[static_cast<std::size_t>(id)];
    const Array& a = ctx.adj[static_cast<std::size_t>(id)];
    if (a.size() == 0) continue;
    if (n.backward_fn) n.backward_fn(n, a, ctx);
  }

  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Array& a = ctx.adj[i];
    if (a.size() == 0) continue;
    Node& n = *nodes_[i];
    if (n.grad.size() == 0) n.grad = Array::Zero(n.value.size());
    n.grad += a;
    if (n.param) n.param->grad += a;
  }
}

bool Tape::replay_matches() const {
  for (const auto& n : nodes_) {
    if (!n->forward_fn) continue;
    Array redo = n->forward_fn(n->inputs);
    if (redo.size() != n->value.size()) return false;
    if (std::memcmp(redo.data(), n->value.data(), sizeof(double) * static_cast<std::size_t>(redo.size())) != 0)
      return false;
  }
  return true;
}

}  // namespace ccdc
