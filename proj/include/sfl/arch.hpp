// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sfl/tensor.hpp"

namespace sfl {

class DesignError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// One client's task: input resolution, category count and sample count.
struct ClientProfile {
  int client_id = 0;
  int image_size = 0;   // H_j (square inputs)
  int num_classes = 0;  // K_j
  int num_samples = 1;  // n_j
  int group_id = 0;     // shared by clients with equal (image_size, num_classes)
};

enum class BlockKind { plain, residual_pair };

std::string to_string(BlockKind kind);
BlockKind parse_block_kind(const std::string& text);

/// Base architecture the per-client designs are scaled from.
struct DesignBase {
  int base_classes = 10;           // K_0
  int base_feature_size = 8;       // H_0
  std::vector<int> base_widths;    // b_0 per stage, nondecreasing
  int input_channels = 3;
  BlockKind block = BlockKind::plain;

  void validate() const;
  bool operator==(const DesignBase&) const = default;
};

struct StageSpec {
  int in_channels = 0;
  int out_channels = 0;
  int stride = 2;
  bool operator==(const StageSpec&) const = default;
};

/// Per-client (or global) layer plan: stages of stride-2 3x3 convs with BN,
/// global average pooling and a linear head.
struct ModelSpec {
  std::vector<StageSpec> stages;
  BlockKind block = BlockKind::plain;
  int input_channels = 3;
  int image_size = 0;
  int num_classes = 0;
  int head_features = 0;  // head input width; the last stage's width for a client spec
  double ratio = 1.0;     // width multiplier used to build the stages
  bool private_bn = true;
  bool private_head = true;

  int depth() const { return static_cast<int>(stages.size()); }
  bool operator==(const ModelSpec&) const = default;
};

enum class TensorRole { conv_weight, bn_gamma, bn_beta, head_weight, head_bias };

/// A named parameter tensor implied by a ModelSpec.
struct TensorDecl {
  std::string name;
  Dims dims;
  TensorRole role;
  bool shared;  // aggregated by the server; false means client-private
  bool decays() const { return role == TensorRole::conv_weight || role == TensorRole::head_weight; }
};

/// kappa = log10(K) / log10(K_0).
double channel_ratio(int num_classes, int base_classes);
/// c = ceil(log2(H / H_0)).
int stage_count(int image_size, int base_feature_size);
/// ceil(kappa * b_0), at least 1.
int scale_width(int base_width, double ratio);

ModelSpec design_local(const ClientProfile& profile, const DesignBase& base);
/// Fixed-depth variant used by the width-only baseline.
ModelSpec design_with(const ClientProfile& profile, const DesignBase& base, int depth, double ratio);
/// Coordinate-wise max over depths, output widths and input widths.
ModelSpec enclosing_spec(std::span<const ModelSpec> specs);
ModelSpec design_global(std::span<const ClientProfile> profiles, const DesignBase& base);

struct HeteroDesign {
  ModelSpec spec;
  double ratio = 1.0;
  std::int64_t target_parameters = 0;
};
/// For each client, a `fixed_depth` spec whose width ratio is chosen by
/// bisection so its parameter count matches the depth-scaled design
/// within 2%.
std::vector<HeteroDesign> design_heterofl_baseline(std::span<const ClientProfile> profiles, const DesignBase& base,
                                                   int fixed_depth);

std::vector<TensorDecl> enumerate_tensors(const ModelSpec& spec);
std::int64_t count_parameters(const ModelSpec& spec);

/// Checks the chaining invariants of a client spec.
void validate_local_spec(const ModelSpec& spec);
/// Checks profile ranges and that group ids are a function of (H, K).
void validate_profiles(std::span<const ClientProfile> profiles, const DesignBase& base);

/// Text table of per-group local specs plus the enclosing global spec.
std::string format_arch_table(std::span<const ClientProfile> profiles, const DesignBase& base);

}  // namespace sfl
