// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <variant>
#include <vector>

#include "sfl/tensor.hpp"

namespace sfl {

enum class Mode { train, eval };

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// Layer kinds. Convolutions are square with padding kernel/2 and no bias;
// the stage convolutions always use kernel 3, kernel 1 is reserved for
// residual projections.
struct Conv2d {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
};
struct BatchNorm {
  std::size_t channels = 0;
};
struct MaxPool {};  // 3x3, stride 2, padding 1
struct GlobalAvgPool {};
struct Linear {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
};
struct ReLU {};

using LayerKind = std::variant<Conv2d, BatchNorm, MaxPool, GlobalAvgPool, Linear, ReLU>;

std::string describe(const LayerKind& layer);

/// Output dims as a pure function of the layer and the input dims.
Dims output_dims(const LayerKind& layer, const Dims& input);
/// Dims of each parameter tensor the layer expects, in binding order.
std::vector<Dims> parameter_dims(const LayerKind& layer);

/// Running statistics owned by a batch-norm layer.
struct BatchNormStats {
  Tensor mean;
  Tensor var;
  static BatchNormStats fresh(std::size_t channels);
};

/// Single-layer forward pass. BatchNorm needs `stats`; in train mode the
/// stats are updated, in eval mode they normalize the input.
Tensor forward(const LayerKind& layer, std::span<const Tensor> params, const Tensor& input, Mode mode,
               BatchNormStats* stats = nullptr);

// Raw kernels. Each backward returns gradients with the dims of the
// corresponding forward operand.

Tensor conv2d_forward(const Tensor& x, const Tensor& w, std::size_t stride);
struct Conv2dGrads {
  Tensor dx;
  Tensor dw;
};
/// dx is left empty when `need_dx` is false.
Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& w, std::size_t stride, const Tensor& dy,
                            bool need_dx = true);

struct BatchNormCache {
  Tensor xhat;
  std::vector<double> inv_std;
  Mode mode = Mode::train;
};
Tensor batch_norm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                          Mode mode, BatchNormCache* cache);
struct BatchNormGrads {
  Tensor dx;
  Tensor dgamma;
  Tensor dbeta;
};
BatchNormGrads batch_norm_backward(const Tensor& gamma, const BatchNormCache& cache, const Tensor& dy);

/// Max pooling; `argmax` receives the flat input index each output reads.
/// Ties resolve to the lowest flat index.
Tensor max_pool_forward(const Tensor& x, std::vector<std::size_t>* argmax);
Tensor max_pool_backward(const Dims& input_dims, const std::vector<std::size_t>& argmax, const Tensor& dy);

Tensor global_avg_pool_forward(const Tensor& x);
Tensor global_avg_pool_backward(const Dims& input_dims, const Tensor& dy);

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b);
struct LinearGrads {
  Tensor dx;
  Tensor dw;
  Tensor db;
};
LinearGrads linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy);

Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& y, const Tensor& dy);

}  // namespace sfl
