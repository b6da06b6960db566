// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sfl/arch.hpp"
#include "sfl/tensor.hpp"

namespace sfl {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using NamedTensors = std::vector<NamedTensor>;

enum class Sharing { shared, private_template };

/// The server-side store: ordered named tensors at global dims. Shared
/// entries are aggregated every round; private templates only seed each
/// client's private state and are never written back.
class NamedTensorSpace {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    Sharing sharing = Sharing::shared;
  };

  void add(std::string name, Tensor tensor, Sharing sharing = Sharing::shared);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Entry& entry(const std::string& name) const;
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  NamedTensors shared_tensors() const;
  bool bitwise_equal(const NamedTensorSpace& other) const;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Which leading corner of which global tensor each client owns.
struct SliceEntry {
  std::string name;
  Dims sub_dims;
};

class SliceMap {
 public:
  void assign(int client_id, std::vector<SliceEntry> slices);
  bool contains(int client_id) const { return slices_.count(client_id) != 0; }
  const std::vector<SliceEntry>& of(int client_id) const;
  std::vector<int> clients() const;

 private:
  std::map<int, std::vector<SliceEntry>> slices_;
};

/// Registers the shared tensors of `spec` for `client_id`, checking that
/// each is present in `space` and dominated by its global dims.
void register_client(SliceMap& map, const NamedTensorSpace& space, int client_id, const ModelSpec& spec);

/// Leading-corner copy: global[:d0, :d1, ...].
Tensor corner(const Tensor& global, const Dims& sub_dims);

/// Copies of the client's corner blocks; the store is not modified.
NamedTensors extract(const NamedTensorSpace& space, const SliceMap& map, int client_id);

struct ClientUpdate {
  int client_id = 0;
  NamedTensors tensors;
  double weight = 1.0;  // only used for weighted aggregation
};

struct AggregationOptions {
  bool weighted = false;
};

/// Element-wise averaging over covering clients. Every update is validated
/// before the store is touched; elements no participant covers keep their
/// value. Summation runs in ascending client id, followed by one division.
void aggregate(NamedTensorSpace& space, std::span<const ClientUpdate> updates, const SliceMap& map,
               const AggregationOptions& options = {});

/// Global store for `spec`: conv/linear weights ~ N(0, 2 / fan_in) of the
/// global tensor, BN gamma = 1, beta = 0, head bias = 0.
NamedTensorSpace init_global(const ModelSpec& spec, std::uint64_t seed);

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, unsupported_version, truncated, dim_overflow, malformed };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Tensor file layout (little-endian): "SFL1", u32 version, u32 count, then
// per tensor u16 name length, UTF-8 name, u8 rank, u32 dims, f32 payload.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_tensors(std::span<const NamedTensor> tensors);
NamedTensors decode_tensors(std::span<const std::uint8_t> bytes);
void write_tensor_file(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
NamedTensors read_tensor_file(const std::filesystem::path& path);

/// Writes the shared (trained) tensors of the store.
void save_checkpoint(const NamedTensorSpace& space, const std::filesystem::path& path);
/// Loads a store whose entries are all marked shared.
NamedTensorSpace load_checkpoint(const std::filesystem::path& path);

/// CRC-32 of the tensor's f32 little-endian payload, as written to disk.
std::uint32_t payload_checksum(const Tensor& tensor);
/// One line per tensor: name, dims, checksum.
std::string format_dump(std::span<const NamedTensor> tensors);

}  // namespace sfl
