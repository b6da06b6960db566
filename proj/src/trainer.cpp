// SPDX-License-Identifier: Apache-2.0
#include "sfl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sfl/rng.hpp"

namespace sfl {

LocalUpdateResult local_update(LocalModel& model, LocalState& state, const Dataset& data, const LocalHyper& hyper,
                               std::uint64_t shuffle_seed) {
  if (hyper.iterations < 1) throw std::invalid_argument("local update needs at least one iteration");
  if (hyper.batch_size < 1) throw std::invalid_argument("batch size must be positive");
  if (!(hyper.sgd.lr >= 0.0)) throw std::invalid_argument("learning rate must be non-negative");
  if (data.size() == 0) throw std::invalid_argument("client " + std::to_string(state.client_id) + " has no data");

  auto& params = model.params();
  std::vector<Tensor> velocity;
  velocity.reserve(params.size());
  if (hyper.persist_momentum && state.velocity.size() == params.size()) {
    for (std::size_t i = 0; i < params.size(); ++i) velocity.push_back(state.velocity[i].tensor);
  } else {
    for (const auto& p : params) velocity.push_back(Tensor::zeros_like(p.value));
  }

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(shuffle_seed);
  std::shuffle(order.begin(), order.end(), rng);

  const auto batch = static_cast<std::size_t>(hyper.batch_size);
  const std::size_t passes_before = model.forward_passes();
  LocalMetrics metrics;
  std::size_t seen = 0, correct = 0;
  std::vector<std::size_t> idx(batch);
  std::vector<Var> vars;
  for (int step = 0; step < hyper.iterations; ++step) {
    for (std::size_t i = 0; i < batch; ++i) idx[i] = order[(static_cast<std::size_t>(step) * batch + i) % order.size()];
    const Tensor images = data.batch_images(idx);
    const auto labels = data.batch_labels(idx);

    Tape tape;
    const Var out = model.forward(tape, images, Mode::train, &vars);
    const auto loss = softmax_cross_entropy(tape.value(out), labels, state.client_id);
    if (!std::isfinite(loss.loss))
      throw NumericError("client " + std::to_string(state.client_id) + ": non-finite loss at local step " +
                         std::to_string(step));
    const Gradients grads = tape.backward(out, loss.grad);
    try {
      for (std::size_t i = 0; i < params.size(); ++i)
        sgd_momentum_step(params[i].value, grads[vars[i]], velocity[i], hyper.sgd, params[i].decl.decays(),
                          params[i].decl.name);
    } catch (const NumericError& e) {
      throw NumericError("client " + std::to_string(state.client_id) + ": " + e.what() + " at local step " +
                         std::to_string(step));
    }
    metrics.mean_loss += loss.loss;
    correct += loss.correct;
    seen += batch;
    ++metrics.steps;
  }
  metrics.mean_loss /= hyper.iterations;
  metrics.accuracy = static_cast<double>(correct) / static_cast<double>(seen);
  metrics.forward_passes = model.forward_passes() - passes_before;

  model.store_private(state);
  if (hyper.persist_momentum) {
    state.velocity.clear();
    for (std::size_t i = 0; i < params.size(); ++i) state.velocity.push_back({params[i].decl.name, velocity[i]});
  }
  return {model.shared_weights(), metrics};
}

}  // namespace sfl
