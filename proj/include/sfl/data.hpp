// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sfl/arch.hpp"
#include "sfl/dataset.hpp"

namespace sfl {

enum class SubsetMode { prefix, random };

std::string to_string(SubsetMode mode);
SubsetMode parse_subset_mode(const std::string& text);

/// One client group: resolution, category count and split sizes.
struct GroupSpec {
  int image_size = 32;
  int num_classes = 10;
  int clients = 1;
  int train_per_client = 64;
  int test_size = 100;
  bool operator==(const GroupSpec&) const = default;
};

struct SyntheticTaskSpec {
  int master_classes = 10;      // K_max
  int master_resolution = 64;   // H_max, prototypes live at this size
  int channels = 3;
  int prototype_grid = 8;       // control points per side of the smooth field
  std::vector<GroupSpec> groups;
  double noise = 0.0;           // Gaussian pixel noise at master resolution
  double max_shift = 0.1;       // fraction of H_max
  double gain_spread = 0.2;     // per-channel gain in [1 - s, 1 + s]
  SubsetMode subset = SubsetMode::prefix;
  std::uint64_t seed = 0;

  /// Groups must be ordered by nonincreasing (H, K) and every H must divide
  /// H_max by a power of two.
  void validate() const;
  bool operator==(const SyntheticTaskSpec&) const = default;
};

struct FederatedData {
  std::vector<ClientProfile> profiles;          // client ids 0..N-1, group by group
  std::vector<Dataset> train;                   // indexed by client id
  std::vector<Dataset> test;                    // indexed by group id
  std::vector<std::vector<int>> group_classes;  // label l of group g is master class group_classes[g][l]
  Tensor prototypes;                            // [K_max, C, H_max, H_max]
};

/// Client profiles in generation order: ids 0..N-1, group by group.
std::vector<ClientProfile> client_profiles(const SyntheticTaskSpec& spec);

/// Deterministic synthetic federation. Each master class has a smooth
/// random prototype; a sample is its prototype shifted, gain-scaled per
/// channel, corrupted by pixel noise, clipped to [0, 1] and area-downsampled
/// to the group resolution. Labels are class-balanced per client.
FederatedData generate(const SyntheticTaskSpec& spec);

/// Area-mean downsampling of [C, H, W] or [N, C, H, W] images to `to` x `to`.
Tensor downsample(const Tensor& images, int to);

/// Fraction of samples whose nearest (L2) downsampled prototype among the
/// group's classes is their own class.
double nearest_prototype_accuracy(const Dataset& data, const Tensor& prototypes, std::span<const int> classes);

/// CRC-32 over every split's images and labels.
std::uint32_t dataset_checksum(const FederatedData& data);

/// One tensor file per split plus a u32 little-endian `.labels` sidecar.
void export_dataset(const FederatedData& data, const std::filesystem::path& dir);

}  // namespace sfl
