// SPDX-License-Identifier: Apache-2.0
#include "sfl/tape.hpp"

#include <variant>

namespace sfl {

Var Tape::push(Node node) {
  for (auto in : node.inputs)
    if (in >= nodes_.size()) throw UsageError("tape input refers to an unrecorded value");
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.constant = true;
  return push(std::move(n));
}

Var Tape::conv2d(Var x, Var w, std::size_t stride) {
  Node n;
  n.op = Op::conv2d;
  n.inputs = {x.index, w.index};
  n.stride = stride;
  n.value = conv2d_forward(value(x), value(w), stride);
  return push(std::move(n));
}

Var Tape::batch_norm(Var x, Var gamma, Var beta, BatchNormStats& stats, Mode mode) {
  Node n;
  n.op = Op::batch_norm;
  n.inputs = {x.index, gamma.index, beta.index};
  n.value = batch_norm_forward(value(x), value(gamma), value(beta), stats, mode, &n.bn);
  return push(std::move(n));
}

Var Tape::max_pool(Var x) {
  Node n;
  n.op = Op::max_pool;
  n.inputs = {x.index};
  n.value = max_pool_forward(value(x), &n.argmax);
  return push(std::move(n));
}

Var Tape::global_avg_pool(Var x) {
  Node n;
  n.op = Op::global_avg_pool;
  n.inputs = {x.index};
  n.value = global_avg_pool_forward(value(x));
  return push(std::move(n));
}

Var Tape::linear(Var x, Var w, Var b) {
  Node n;
  n.op = Op::linear;
  n.inputs = {x.index, w.index, b.index};
  n.value = linear_forward(value(x), value(w), value(b));
  return push(std::move(n));
}

Var Tape::relu(Var x) {
  Node n;
  n.op = Op::relu;
  n.inputs = {x.index};
  n.value = relu_forward(value(x));
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  if (!value(a).same_shape(value(b)))
    throw ShapeError("add: " + to_string(value(a).dims()) + " vs " + to_string(value(b).dims()));
  Node n;
  n.op = Op::add;
  n.inputs = {a.index, b.index};
  n.value = value(a);
  n.value += value(b);
  return push(std::move(n));
}

Var Tape::apply(const LayerKind& layer, std::span<const Var> params, Var input, Mode mode, BatchNormStats* stats) {
  (void)output_dims(layer, value(input).dims());
  const auto expected = parameter_dims(layer);
  if (params.size() != expected.size())
    throw ShapeError(describe(layer) + ": expected " + std::to_string(expected.size()) + " parameter tensors, got " +
                     std::to_string(params.size()));
  for (std::size_t i = 0; i < expected.size(); ++i)
    if (value(params[i]).dims() != expected[i])
      throw ShapeError(describe(layer) + ": expected parameter " + to_string(expected[i]) + ", got " +
                       to_string(value(params[i]).dims()));
  if (const auto* c = std::get_if<Conv2d>(&layer)) return conv2d(input, params[0], c->stride);
  if (std::holds_alternative<BatchNorm>(layer)) {
    if (!stats) throw UsageError("BatchNorm on tape requires running statistics");
    return batch_norm(input, params[0], params[1], *stats, mode);
  }
  if (std::holds_alternative<MaxPool>(layer)) return max_pool(input);
  if (std::holds_alternative<GlobalAvgPool>(layer)) return global_avg_pool(input);
  if (std::holds_alternative<Linear>(layer)) return linear(input, params[0], params[1]);
  return relu(input);
}

Gradients Tape::backward(Var output, const Tensor& seed) {
  if (nodes_.empty()) throw UsageError("backward called without a recorded forward pass");
  if (output.index >= nodes_.size()) throw UsageError("backward output is not on the tape");
  if (!seed.same_shape(nodes_[output.index].value))
    throw ShapeError("backward seed " + to_string(seed.dims()) + " vs output " +
                     to_string(nodes_[output.index].value.dims()));

  std::vector<Tensor> grads(nodes_.size());
  grads[output.index] = seed;
  auto accumulate = [&](std::size_t idx, Tensor g) {
    if (nodes_[idx].constant) return;
    if (grads[idx].empty())
      grads[idx] = std::move(g);
    else
      grads[idx] += g;
  };

  for (std::size_t i = output.index + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.op == Op::leaf || grads[i].empty()) continue;
    const Tensor& dy = grads[i];
    const auto& in = node.inputs;
    switch (node.op) {
      case Op::conv2d: {
        auto g = conv2d_backward(nodes_[in[0]].value, nodes_[in[1]].value, node.stride, dy,
                                 !nodes_[in[0]].constant);
        accumulate(in[0], std::move(g.dx));
        accumulate(in[1], std::move(g.dw));
        break;
      }
      case Op::batch_norm: {
        auto g = batch_norm_backward(nodes_[in[1]].value, node.bn, dy);
        accumulate(in[0], std::move(g.dx));
        accumulate(in[1], std::move(g.dgamma));
        accumulate(in[2], std::move(g.dbeta));
        break;
      }
      case Op::max_pool:
        accumulate(in[0], max_pool_backward(nodes_[in[0]].value.dims(), node.argmax, dy));
        break;
      case Op::global_avg_pool:
        accumulate(in[0], global_avg_pool_backward(nodes_[in[0]].value.dims(), dy));
        break;
      case Op::linear: {
        auto g = linear_backward(nodes_[in[0]].value, nodes_[in[1]].value, dy);
        accumulate(in[0], std::move(g.dx));
        accumulate(in[1], std::move(g.dw));
        accumulate(in[2], std::move(g.db));
        break;
      }
      case Op::relu:
        accumulate(in[0], relu_backward(node.value, dy));
        break;
      case Op::add:
        accumulate(in[0], dy);
        accumulate(in[1], dy);
        break;
      case Op::leaf:
        break;
    }
    // Intermediate gradients are no longer needed once propagated.
    grads[i] = Tensor();
  }

  // Leaves (and anything unreached) report zeros of matching dims.
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op != Op::leaf) {
      grads[i] = Tensor();
    } else if (grads[i].empty()) {
      grads[i] = Tensor::zeros_like(nodes_[i].value);
    }
  }
  nodes_.clear();
  return Gradients(std::move(grads));
}

}  // namespace sfl
