// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <vector>

#include "sfl/dataset.hpp"
#include "sfl/model.hpp"

namespace sfl {

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
};

/// Mean cross-entropy and argmax accuracy (ties go to the lowest index)
/// in eval mode. Neither parameters nor running statistics change.
EvalResult evaluate(LocalModel& model, const Dataset& data, std::size_t batch_size = 128);

struct TaskGap {
  std::size_t n = 0;
  double alpha = 0.0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double accuracy = 0.0;
};

/// alpha-weighted training/test losses over M tasks and their per-level
/// discrepancy radii.
struct GapReport {
  std::vector<TaskGap> tasks;
  double train_loss = 0.0;  // sum_m alpha_m * train_m
  double test_loss = 0.0;   // sum_m alpha_m * test_m
  double gap = 0.0;         // train_loss - test_loss
  std::vector<double> rhat;  // one per level, level j at index j - 1
};

GapReport weighted_gap(std::span<const double> train_losses, std::span<const double> test_losses,
                       std::span<const std::size_t> sample_counts);

/// One member of a nested model family, ordered by growing label set.
struct NestedLevel {
  int image_size = 0;
  std::vector<int> classes;  // master class ids behind output coordinates 0..K-1
  std::function<Tensor(const Tensor& images)> logits;  // [n, C, H, H] -> [n, K]
};

/// Empirical norm of f^(j) - f^(j-1) over the samples of tasks m >= j,
/// restricted to the first K_{j-1} outputs (all K_1 outputs for j = 1,
/// where f^(0) = 0). `level` is 1-based; `task_data[m - 1]` holds task m's
/// inputs at its own resolution and every level sees them area-resized to
/// its own resolution. Throws std::invalid_argument if level j-1's classes
/// are not a prefix of level j's.
double discrepancy_radius(std::size_t level, std::span<const NestedLevel> levels, std::span<const Dataset> task_data);

}  // namespace sfl
