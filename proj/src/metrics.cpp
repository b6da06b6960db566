// SPDX-License-Identifier: Apache-2.0
#include "sfl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sfl/data.hpp"
#include "sfl/optim.hpp"

namespace sfl {

EvalResult evaluate(LocalModel& model, const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) throw std::invalid_argument("evaluate on an empty dataset");
  if (batch_size == 0) throw std::invalid_argument("evaluation batch size must be positive");
  EvalResult r;
  std::size_t correct = 0;
  double loss_sum = 0.0;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t count = std::min(batch_size, data.size() - begin);
    const Tensor logits = model.logits(slice_batch(data.images, begin, count));
    const std::span<const int> labels(data.labels.data() + begin, count);
    const auto loss = softmax_cross_entropy(logits, labels);
    loss_sum += loss.loss * static_cast<double>(count);
    correct += loss.correct;
  }
  r.count = data.size();
  r.loss = loss_sum / static_cast<double>(r.count);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.count);
  return r;
}

GapReport weighted_gap(std::span<const double> train_losses, std::span<const double> test_losses,
                       std::span<const std::size_t> sample_counts) {
  const std::size_t m = sample_counts.size();
  if (m == 0 || train_losses.size() != m || test_losses.size() != m)
    throw std::invalid_argument("weighted_gap needs M >= 1 tasks with matching list lengths");
  const double total = static_cast<double>(std::accumulate(sample_counts.begin(), sample_counts.end(), std::size_t{0}));
  if (total <= 0.0) throw std::invalid_argument("weighted_gap needs a positive total sample count");
  GapReport g;
  for (std::size_t i = 0; i < m; ++i) {
    TaskGap t;
    t.n = sample_counts[i];
    t.alpha = static_cast<double>(t.n) / total;
    t.train_loss = train_losses[i];
    t.test_loss = test_losses[i];
    g.train_loss += t.alpha * t.train_loss;
    g.test_loss += t.alpha * t.test_loss;
    g.tasks.push_back(t);
  }
  g.gap = g.train_loss - g.test_loss;
  return g;
}

double discrepancy_radius(std::size_t level, std::span<const NestedLevel> levels, std::span<const Dataset> task_data) {
  const std::size_t m_count = levels.size();
  if (level < 1 || level > m_count) throw std::out_of_range("discrepancy level must be in [1, M]");
  if (task_data.size() != m_count) throw std::invalid_argument("need one evaluation set per task");
  const NestedLevel& upper = levels[level - 1];
  const NestedLevel* lower = level >= 2 ? &levels[level - 2] : nullptr;
  if (lower) {
    if (lower->classes.size() > upper.classes.size() ||
        !std::equal(lower->classes.begin(), lower->classes.end(), upper.classes.begin()))
      throw std::invalid_argument("levels " + std::to_string(level - 1) + " and " + std::to_string(level) +
                                  " do not have nested label sets; discrepancy is undefined");
  }
  const std::size_t coords = lower ? lower->classes.size() : upper.classes.size();

  auto resized = [](const Tensor& images, int size) {
    return static_cast<int>(images.dim(2)) == size ? images : downsample(images, size);
  };

  double sum = 0.0;
  std::size_t n_bar = 0;
  for (std::size_t m = level; m <= m_count; ++m) {
    const Dataset& d = task_data[m - 1];
    if (d.size() == 0) continue;
    const Tensor fu = upper.logits(resized(d.images, upper.image_size));
    Tensor fl;
    if (lower) fl = lower->logits(resized(d.images, lower->image_size));
    const std::size_t ku = fu.dim(1);
    const std::size_t kl = lower ? fl.dim(1) : 0;
    if (fu.dim(0) != d.size() || ku < coords || (lower && kl < coords))
      throw ShapeError("discrepancy: model outputs do not cover the shared label prefix");
    for (std::size_t i = 0; i < d.size(); ++i)
      for (std::size_t k = 0; k < coords; ++k) {
        const double diff = fu[i * ku + k] - (lower ? fl[i * kl + k] : 0.0);
        sum += diff * diff;
      }
    n_bar += d.size();
  }
  if (n_bar == 0) throw std::invalid_argument("discrepancy: no samples for tasks m >= " + std::to_string(level));
  return std::sqrt(sum / static_cast<double>(n_bar));
}

}  // namespace sfl
