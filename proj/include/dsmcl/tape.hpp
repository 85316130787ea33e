#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dsmcl/tensor.hpp"

namespace dsmcl {

class Tape;

/// Cheap handle to a node on a Tape. Valid only while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Index size() const { return value().size(); }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// d(root)/d(leaf) for every trainable leaf, keyed by the name the leaf was
/// registered under. Leaves with no path to the root hold exact zeros.
class Gradient {
 public:
  const Tensor& at(const std::string& name) const {
    auto it = grads_.find(name);
    if (it == grads_.end())
      throw std::invalid_argument("Gradient: no leaf named '" + name + "'");
    return it->second;
  }
  Tensor& at(const std::string& name) {
    return const_cast<Tensor&>(std::as_const(*this).at(name));
  }
  bool contains(const std::string& name) const {
    return grads_.count(name) != 0;
  }
  void set(std::string name, Tensor g) {
    grads_[std::move(name)] = std::move(g);
  }
  std::size_t size() const { return grads_.size(); }
  auto begin() const { return grads_.begin(); }
  auto end() const { return grads_.end(); }

 private:
  std::map<std::string, Tensor> grads_;
};

/// Record of one training step's computation: nodes in creation order form a
/// DAG (inputs always precede their consumers). One tape per thread; tensors
/// read from it are immutable once recorded.
class Tape {
 public:
  /// Called during the reverse sweep with this node's value and accumulated
  /// output gradient; responsible for pushing gradient to the node's inputs
  /// via add_grad().
  using BackwardFn =
      std::function<void(Tape&, const Tensor& value, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Non-trainable leaf.
  Var input(Tensor value) {
    return push(std::move(value), nullptr, std::string(), false);
  }

  /// Trainable leaf; `name` keys its entry in the Gradient.
  Var parameter(std::string name, Tensor value) {
    return push(std::move(value), nullptr, std::move(name), true);
  }

  Var record(Tensor value, BackwardFn back) {
    return push(std::move(value), std::move(back), std::string(), false);
  }

  const Tensor& value(int id) const { return nodes_[id].value; }
  std::size_t node_count() const { return nodes_.size(); }

  /// Accumulate gradient into node `id` (used by BackwardFns).
  void add_grad(int id, const Tensor& g) {
    Tensor& slot = adjoints_[id];
    if (!slot.defined())
      slot = g;
    else
      slot.flat() += g.flat();
  }

  /// Gradient of the last backward()'s root with respect to node `v`.
  /// Nodes the root does not depend on yield exact zeros.
  Tensor adjoint(Var v) const {
    if (adjoints_.empty())
      throw std::logic_error("Tape: adjoint() before backward()");
    const Tensor& a = adjoints_[v.id()];
    if (a.defined()) return a;
    return Tensor::zeros(nodes_[v.id()].value.shape());
  }

  friend Gradient backward(Tape& tape, Var root);

 private:
  struct Node {
    Tensor value;
    BackwardFn back;     // null for leaves
    std::string name;    // set for trainable leaves
    bool trainable = false;
  };

  Var push(Tensor value, BackwardFn back, std::string name, bool trainable) {
    nodes_.push_back(
        Node{std::move(value), std::move(back), std::move(name), trainable});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> adjoints_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

/// Reverse sweep from a scalar root. Each node is visited at most once, in
/// reverse creation order; nodes whose adjoint was never touched are skipped,
/// which keeps unreachable leaves at exact (bitwise) zero.
Gradient backward(Tape& tape, Var root);

// ---- primitives -----------------------------------------------------------
// Every primitive validates shapes up front and records a local-gradient
// rule. Elementwise binaries accept equal shapes or a scalar on either side;
// no other broadcasting exists.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var matmul(Var a, Var b);
Var sigmoid(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var abs(Var a);
Var softmax(Var a);      // over the last axis, max-subtracted
Var log_softmax(Var a);  // over the last axis, log-sum-exp form
Var concat(std::span<const Var> parts, int axis);
Var concat(std::initializer_list<Var> parts, int axis);
Var slice(Var a, int axis, Index start, Index count);
Var reshape(Var a, Shape shape);
Var tile_rows(Var a, Index copies);  // repeat a single-row tensor `copies` times
Var sum(Var a);
Var mean(Var a);
Var norm_rows(Var a);  // Euclidean norm over the last axis

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator-(Var a) { return scale(a, -1.0); }

}  // namespace dsmcl
