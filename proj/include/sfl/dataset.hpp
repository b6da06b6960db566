// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sfl/tensor.hpp"

namespace sfl {

/// Labeled images of one client split or one group's test split.
struct Dataset {
  Tensor images;  // [n, C, H, W], values in [0, 1]
  std::vector<int> labels;
  std::vector<std::int64_t> sample_ids;  // provenance, unique across all splits
  int group_id = 0;
  int image_size = 0;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  Tensor batch_images(std::span<const std::size_t> indices) const { return gather_batch(images, indices); }
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(labels.at(i));
    return out;
  }
};

}  // namespace sfl
