// SPDX-License-Identifier: Apache-2.0
#include "sfl/optim.hpp"

#include <cmath>

namespace sfl {

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, int client_id) {
  if (logits.rank() != 2) throw ShapeError("softmax_cross_entropy: logits must be [batch, K], got " + to_string(logits.dims()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(n));

  LossResult r{0.0, Tensor(logits.dims()), 0};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t s = 0; s < n; ++s) {
    const int y = labels[s];
    if (y < 0 || static_cast<std::size_t>(y) >= k)
      throw std::out_of_range("client " + std::to_string(client_id) + ", sample " + std::to_string(s) + ": label " +
                              std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
    const double* z = logits.data().data() + s * k;
    double zmax = z[0];
    std::size_t arg = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (z[j] > zmax) {
        zmax = z[j];
        arg = j;
      }
    if (arg == static_cast<std::size_t>(y)) ++r.correct;
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - zmax);
    const double log_sum = std::log(sum);
    r.loss += (log_sum - (z[y] - zmax)) * inv_n;
    for (std::size_t j = 0; j < k; ++j) r.grad[s * k + j] = std::exp(z[j] - zmax - log_sum) * inv_n;
    r.grad[s * k + static_cast<std::size_t>(y)] -= inv_n;
  }
  return r;
}

void sgd_momentum_step(Tensor& param, const Tensor& grad, Tensor& velocity, const SgdHyper& hyper, bool decay,
                       std::string_view name) {
  if (!param.same_shape(grad) || !param.same_shape(velocity))
    throw ShapeError("sgd step on '" + std::string(name) + "': param " + to_string(param.dims()) + ", grad " +
                     to_string(grad.dims()) + ", velocity " + to_string(velocity.dims()));
  if (!grad.all_finite()) throw NumericError("non-finite gradient in tensor '" + std::string(name) + "'");
  const double wd = decay ? hyper.weight_decay : 0.0;
  for (std::size_t i = 0; i < param.numel(); ++i) {
    double g = grad[i];
    if (wd != 0.0) g += wd * param[i];
    velocity[i] = hyper.momentum * velocity[i] + g;
    param[i] -= hyper.lr * velocity[i];
  }
}

}  // namespace sfl
