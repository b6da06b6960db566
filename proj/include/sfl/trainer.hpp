// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "sfl/dataset.hpp"
#include "sfl/model.hpp"
#include "sfl/optim.hpp"

namespace sfl {

struct LocalHyper {
  int iterations = 10;  // E, optimizer steps per round
  int batch_size = 16;
  SgdHyper sgd;
  bool persist_momentum = false;
};

struct LocalMetrics {
  double mean_loss = 0.0;  // over the E mini-batches
  double accuracy = 0.0;   // fraction of argmax-correct samples over the E mini-batches
  int steps = 0;
  std::size_t forward_passes = 0;
};

struct LocalUpdateResult {
  NamedTensors shared;  // only tensors flagged shared
  LocalMetrics metrics;
};

/// Runs E momentum-SGD steps on consecutive mini-batches of one shuffle of
/// `data` (wrapping cyclically), writes private parameters and BN
/// statistics back into `state` and returns the updated shared weights.
/// Throws NumericError naming the client and step on a non-finite loss.
LocalUpdateResult local_update(LocalModel& model, LocalState& state, const Dataset& data, const LocalHyper& hyper,
                               std::uint64_t shuffle_seed);

}  // namespace sfl
