// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "sfl/layers.hpp"

namespace sfl {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t index = 0;
};

/// Gradients produced by Tape::backward, indexed by the Var they belong to.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<Tensor> grads) : grads_(std::move(grads)) {}
  /// Gradient of `v`; zeros if nothing flowed into it.
  const Tensor& operator[](Var v) const { return grads_.at(v.index); }

 private:
  std::vector<Tensor> grads_;
};

/// Reverse-mode tape. Values are appended in execution order, which is a
/// topological order, so backward is a single reverse sweep that visits
/// each node once.
class Tape {
 public:
  /// Leaf holding a copy of `value` (inputs and parameters alike).
  Var leaf(Tensor value);
  /// Leaf whose gradient is never needed (model inputs). backward reports
  /// zeros for it and skips work that only feeds it.
  Var constant(Tensor value);

  Var conv2d(Var x, Var w, std::size_t stride);
  Var batch_norm(Var x, Var gamma, Var beta, BatchNormStats& stats, Mode mode);
  Var max_pool(Var x);
  Var global_avg_pool(Var x);
  Var linear(Var x, Var w, Var b);
  Var relu(Var x);
  Var add(Var a, Var b);
  /// Records `layer` applied to `input` with the given parameter leaves.
  Var apply(const LayerKind& layer, std::span<const Var> params, Var input, Mode mode,
            BatchNormStats* stats = nullptr);

  const Tensor& value(Var v) const { return nodes_.at(v.index).value; }
  std::size_t size() const { return nodes_.size(); }

  /// Propagates `seed` (d loss / d output) back through the tape and clears
  /// it. Throws UsageError if nothing was recorded or `output` is unknown.
  Gradients backward(Var output, const Tensor& seed);
  void clear() { nodes_.clear(); }

 private:
  enum class Op { leaf, conv2d, batch_norm, max_pool, global_avg_pool, linear, relu, add };
  struct Node {
    Op op = Op::leaf;
    bool constant = false;
    std::vector<std::size_t> inputs;
    Tensor value;
    std::size_t stride = 1;
    BatchNormCache bn;
    std::vector<std::size_t> argmax;
  };
  Var push(Node node);

  std::vector<Node> nodes_;
};

}  // namespace sfl
