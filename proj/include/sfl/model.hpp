// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sfl/arch.hpp"
#include "sfl/layers.hpp"
#include "sfl/param_space.hpp"
#include "sfl/tape.hpp"

namespace sfl {

/// A client's private parameters. BN affine terms and the head (when
/// private), BN running statistics and, optionally, optimizer velocity.
/// Never sent to the server.
struct LocalState {
  int client_id = 0;
  NamedTensors private_params;
  std::map<std::string, BatchNormStats> bn_stats;  // keyed by BN prefix, e.g. "stage1.bn"
  NamedTensors velocity;                           // only kept when momentum persists across rounds
};

/// Fresh private state cut from the store's private templates.
LocalState init_local_state(int client_id, const ModelSpec& spec, const NamedTensorSpace& space);

/// The assembled client network: shared weights plus private state bound
/// to the layer plan of `spec`.
class LocalModel {
 public:
  struct Param {
    TensorDecl decl;
    Tensor value;
  };

  /// Throws ShapeError naming the tensor on any dims mismatch, and
  /// std::invalid_argument on missing or unexpected tensors.
  LocalModel(ModelSpec spec, const NamedTensors& shared, const LocalState& state);

  const ModelSpec& spec() const { return spec_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  const Tensor& param(const std::string& name) const;

  /// Records the network on `tape`; `param_vars` receives one leaf per
  /// entry of params() in order.
  Var forward(Tape& tape, const Tensor& images, Mode mode, std::vector<Var>* param_vars = nullptr);
  /// Eval-mode logits; running statistics are left untouched.
  Tensor logits(const Tensor& images);

  NamedTensors shared_weights() const;
  /// Writes private params and BN statistics back into `state`.
  void store_private(LocalState& state) const;

  std::int64_t parameter_count() const;
  std::size_t forward_passes() const { return forward_passes_; }

 private:
  std::size_t index_of(const std::string& name) const;

  ModelSpec spec_;
  std::vector<Param> params_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, BatchNormStats> stats_;
  std::size_t forward_passes_ = 0;
};

}  // namespace sfl
