// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sfl/tensor.hpp"

namespace sfl {

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // d loss / d logits, same dims as the logits
  std::size_t correct = 0;
};

/// Mean softmax cross-entropy over the batch. `client_id` only labels the
/// error raised for an out-of-range label.
LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, int client_id = -1);

struct SgdHyper {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// v <- momentum * v + (grad + weight_decay * param * [decay]);
/// param <- param - lr * v.
/// Throws NumericError naming `name` on a non-finite gradient.
void sgd_momentum_step(Tensor& param, const Tensor& grad, Tensor& velocity, const SgdHyper& hyper, bool decay,
                       std::string_view name = {});

}  // namespace sfl
