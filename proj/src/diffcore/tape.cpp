#include "sphereat/diffcore/tape.hpp"

namespace sphereat::diff {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::constant: return "constant";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::divide: return "divide";
    case OpKind::relu: return "relu";
    case OpKind::negate: return "negate";
    case OpKind::scale: return "scale";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::sum_axis: return "sum_axis";
    case OpKind::l2norm_axis: return "l2norm_axis";
    case OpKind::arccos: return "arccos";
    case OpKind::log: return "log";
    case OpKind::exp: return "exp";
    case OpKind::max_axis: return "max_axis";
    case OpKind::concat: return "concat";
    case OpKind::log_softmax: return "log_softmax";
    case OpKind::reshape: return "reshape";
    case OpKind::conv2d: return "conv2d";
    case OpKind::maxpool2d: return "maxpool2d";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (!tape) throw ContractViolation("unbound Var");
  return tape->value(id);
}

std::span<double> GradSink::operator()(std::size_t id) {
  if (!tape_.nodes_[id].requires_grad) return {};
  auto& buf = buffers_[id];
  if (buf.empty()) buf.assign(tape_.nodes_[id].value.size(), 0.0);
  return buf;
}

const Tensor& Gradients::operator[](Var v) const { return at(v.id); }

const Tensor& Gradients::at(std::size_t id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) throw ContractViolation("no gradient recorded for node " + std::to_string(id));
  return it->second;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{OpKind::leaf, {}, std::move(value), {}, requires_grad, false});
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) { return leaf(std::move(value), false); }

Var Tape::record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward) {
  bool needs = false;
  for (auto id : inputs) {
    auto& in = nodes_.at(id);
    in.consumed = true;
    needs = needs || in.requires_grad;
  }
  if (!needs) backward = nullptr;
  nodes_.push_back(Node{kind, std::move(inputs), std::move(value), std::move(backward), needs, false});
  return Var{this, nodes_.size() - 1};
}

Gradients Tape::backward(Var seed) {
  if (seed.tape != this) throw ContractViolation("backward seed belongs to another tape");
  if (nodes_.at(seed.id).value.size() != 1) {
    throw ContractViolation("backward seed must be scalar, got shape " + shape_str(nodes_[seed.id].value.shape()));
  }
  std::vector<std::vector<double>> buffers(nodes_.size());
  GradSink sink(*this, buffers);
  if (nodes_[seed.id].requires_grad) buffers[seed.id] = {1.0};

  for (std::size_t i = seed.id + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.backward || buffers[i].empty()) continue;
    node.backward(*this, buffers[i], sink);
  }

  Gradients out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    auto& node = nodes_[i];
    if (node.kind != OpKind::leaf || !node.requires_grad) continue;
    if (buffers[i].empty()) buffers[i].assign(node.value.size(), 0.0);
    node.value.set_grad(buffers[i]);
    out.by_id_.emplace(i, Tensor(node.value.shape(), std::move(buffers[i])));
  }
  return out;
}

}  // namespace sphereat::diff
