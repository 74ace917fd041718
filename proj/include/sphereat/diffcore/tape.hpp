#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "sphereat/diffcore/tensor.hpp"

namespace sphereat::diff {

enum class OpKind {
  leaf,
  constant,
  matmul,
  add,
  sub,
  mul,
  divide,
  relu,
  negate,
  scale,
  sum,
  mean,
  sum_axis,
  l2norm_axis,
  arccos,
  log,
  exp,
  max_axis,
  concat,
  log_softmax,
  reshape,
  conv2d,
  maxpool2d,
};

const char* op_name(OpKind kind);

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Write access to gradient buffers during a backward sweep.
class GradSink {
 public:
  /// Buffer for node `id`, zero-initialised on first use; empty when the node needs no gradient.
  std::span<double> operator()(std::size_t id);

 private:
  friend class Tape;
  GradSink(Tape& tape, std::vector<std::vector<double>>& buffers) : tape_(tape), buffers_(buffers) {}
  Tape& tape_;
  std::vector<std::vector<double>>& buffers_;
};

using BackwardFn = std::function<void(const Tape&, std::span<const double> out_grad, GradSink&)>;

/// Gradients of a scalar with respect to every gradient-carrying leaf.
class Gradients {
 public:
  const Tensor& operator[](Var v) const;
  const Tensor& at(std::size_t id) const;
  bool contains(Var v) const { return by_id_.count(v.id) > 0; }
  std::size_t size() const { return by_id_.size(); }

 private:
  friend class Tape;
  std::map<std::size_t, Tensor> by_id_;
};

/// Append-only record of a computation. Node creation order is a topological
/// order, so the backward sweep walks the node list in reverse.
/// A tape is confined to one thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value);

  /// Used by primitive implementations; marks inputs as consumed.
  Var record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const Tensor& value(Var v) const { return value(v.id); }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }

  /// True once any recorded op has read this node.
  bool consumed(Var v) const { return nodes_.at(v.id).consumed; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar node. Every gradient-carrying leaf gets an
  /// entry (zeros when unused) and its tensor grad slot is populated.
  Gradients backward(Var seed);

 private:
  friend class GradSink;
  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Tensor value;
    BackwardFn backward;
    bool requires_grad = false;
    bool consumed = false;
  };
  std::vector<Node> nodes_;
};

}  // namespace sphereat::diff
