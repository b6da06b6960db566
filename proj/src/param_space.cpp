// SPDX-License-Identifier: Apache-2.0
#include "sfl/param_space.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>

#include "sfl/rng.hpp"

namespace sfl {

void NamedTensorSpace::add(std::string name, Tensor tensor, Sharing sharing) {
  if (name.empty()) throw std::invalid_argument("tensor names must be non-empty");
  if (contains(name)) throw std::invalid_argument("duplicate tensor name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(tensor), sharing});
}

const NamedTensorSpace::Entry& NamedTensorSpace::entry(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no tensor named '" + name + "' in the global store");
  return entries_[it->second];
}

Tensor& NamedTensorSpace::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no tensor named '" + name + "' in the global store");
  return entries_[it->second].tensor;
}

const Tensor& NamedTensorSpace::at(const std::string& name) const { return entry(name).tensor; }

NamedTensors NamedTensorSpace::shared_tensors() const {
  NamedTensors out;
  for (const auto& e : entries_)
    if (e.sharing == Sharing::shared) out.push_back({e.name, e.tensor});
  return out;
}

bool NamedTensorSpace::bitwise_equal(const NamedTensorSpace& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.sharing != b.sharing || !a.tensor.bitwise_equal(b.tensor)) return false;
  }
  return true;
}

void SliceMap::assign(int client_id, std::vector<SliceEntry> slices) { slices_[client_id] = std::move(slices); }

const std::vector<SliceEntry>& SliceMap::of(int client_id) const {
  auto it = slices_.find(client_id);
  if (it == slices_.end()) throw std::out_of_range("unknown client " + std::to_string(client_id));
  return it->second;
}

std::vector<int> SliceMap::clients() const {
  std::vector<int> ids;
  for (const auto& [id, _] : slices_) ids.push_back(id);
  return ids;
}

namespace {

bool dominated(const Dims& sub, const Dims& global) {
  if (sub.size() != global.size()) return false;
  for (std::size_t i = 0; i < sub.size(); ++i)
    if (sub[i] > global[i] || sub[i] == 0) return false;
  return true;
}

// Calls fn(global_flat, sub_flat) for every element of the leading corner.
template <class Fn>
void for_each_corner(const Dims& global, const Dims& sub, Fn&& fn) {
  std::array<std::size_t, 4> g{1, 1, 1, 1}, s{1, 1, 1, 1};
  std::copy(global.begin(), global.end(), g.begin());
  std::copy(sub.begin(), sub.end(), s.begin());
  std::size_t k = 0;
  for (std::size_t i0 = 0; i0 < s[0]; ++i0)
    for (std::size_t i1 = 0; i1 < s[1]; ++i1)
      for (std::size_t i2 = 0; i2 < s[2]; ++i2) {
        const std::size_t row = ((i0 * g[1] + i1) * g[2] + i2) * g[3];
        for (std::size_t i3 = 0; i3 < s[3]; ++i3) fn(row + i3, k++);
      }
}

}  // namespace

void register_client(SliceMap& map, const NamedTensorSpace& space, int client_id, const ModelSpec& spec) {
  std::vector<SliceEntry> slices;
  for (const auto& decl : enumerate_tensors(spec)) {
    if (!decl.shared) continue;
    const auto& global = space.entry(decl.name);
    if (global.sharing != Sharing::shared)
      throw std::invalid_argument("tensor '" + decl.name + "' is shared for client " + std::to_string(client_id) +
                                  " but private in the global store");
    if (!dominated(decl.dims, global.tensor.dims()))
      throw ShapeError("client " + std::to_string(client_id) + " slice " + to_string(decl.dims) + " of '" + decl.name +
                       "' exceeds global dims " + to_string(global.tensor.dims()));
    slices.push_back({decl.name, decl.dims});
  }
  map.assign(client_id, std::move(slices));
}

Tensor corner(const Tensor& global, const Dims& sub_dims) {
  if (!dominated(sub_dims, global.dims()))
    throw ShapeError("corner " + to_string(sub_dims) + " exceeds global dims " + to_string(global.dims()));
  Tensor out(sub_dims);
  for_each_corner(global.dims(), sub_dims, [&](std::size_t gi, std::size_t si) { out[si] = global[gi]; });
  return out;
}

NamedTensors extract(const NamedTensorSpace& space, const SliceMap& map, int client_id) {
  NamedTensors out;
  for (const auto& s : map.of(client_id)) out.push_back({s.name, corner(space.at(s.name), s.sub_dims)});
  return out;
}

void aggregate(NamedTensorSpace& space, std::span<const ClientUpdate> updates, const SliceMap& map,
               const AggregationOptions& options) {
  if (updates.empty()) throw std::invalid_argument("aggregate needs at least one client update");

  std::vector<std::size_t> order(updates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return updates[a].client_id < updates[b].client_id; });

  // Validate everything first so a bad update never leaves a half-written store.
  std::set<int> seen;
  for (std::size_t idx : order) {
    const auto& u = updates[idx];
    if (!seen.insert(u.client_id).second)
      throw std::invalid_argument("client " + std::to_string(u.client_id) + " submitted more than one update");
    const auto& slices = map.of(u.client_id);
    if (u.tensors.size() != slices.size())
      throw ShapeError("client " + std::to_string(u.client_id) + " sent " + std::to_string(u.tensors.size()) +
                       " tensors, expected " + std::to_string(slices.size()));
    for (std::size_t i = 0; i < slices.size(); ++i) {
      const auto& t = u.tensors[i];
      if (t.name != slices[i].name || t.tensor.dims() != slices[i].sub_dims)
        throw ShapeError("client " + std::to_string(u.client_id) + " tensor '" + t.name + "' " +
                         to_string(t.tensor.dims()) + " does not match slice '" + slices[i].name + "' " +
                         to_string(slices[i].sub_dims));
      if (!t.tensor.all_finite())
        throw NumericError("client " + std::to_string(u.client_id) + " tensor '" + t.name +
                           "' contains non-finite values; round aborted");
    }
    if (options.weighted && !(u.weight > 0.0))
      throw std::invalid_argument("client " + std::to_string(u.client_id) + " has a non-positive aggregation weight");
  }

  for (auto& entry : space.entries()) {
    if (entry.sharing != Sharing::shared) continue;
    const Dims& gdims = entry.tensor.dims();
    // Extended-precision sums keep the mean of identical values exact.
    std::vector<long double> sum(entry.tensor.numel(), 0.0L);
    std::vector<double> count(entry.tensor.numel(), 0.0);
    bool touched = false;
    for (std::size_t idx : order) {
      const auto& u = updates[idx];
      const auto it = std::find_if(u.tensors.begin(), u.tensors.end(), [&](const NamedTensor& t) { return t.name == entry.name; });
      if (it == u.tensors.end()) continue;
      touched = true;
      const double w = options.weighted ? u.weight : 1.0;
      for_each_corner(gdims, it->tensor.dims(), [&](std::size_t gi, std::size_t si) {
        sum[gi] += options.weighted ? static_cast<long double>(w) * it->tensor[si] : it->tensor[si];
        count[gi] += w;
      });
    }
    if (!touched) continue;
    Tensor& g = space.at(entry.name);
    for (std::size_t i = 0; i < sum.size(); ++i)
      if (count[i] > 0.0) g[i] = static_cast<double>(sum[i] / count[i]);
  }
}

NamedTensorSpace init_global(const ModelSpec& spec, std::uint64_t seed) {
  NamedTensorSpace space;
  for (const auto& decl : enumerate_tensors(spec)) {
    Tensor t(decl.dims);
    switch (decl.role) {
      case TensorRole::conv_weight:
      case TensorRole::head_weight: {
        const std::size_t fan_in = t.numel() / decl.dims[0];
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        auto rng = make_rng(seed, "init:" + decl.name);
        for (auto& v : t.data()) v = normal(rng);
        break;
      }
      case TensorRole::bn_gamma:
        t.fill(1.0);
        break;
      case TensorRole::bn_beta:
      case TensorRole::head_bias:
        break;
    }
    space.add(decl.name, std::move(t), decl.shared ? Sharing::shared : Sharing::private_template);
  }
  return space;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  void need(std::size_t n, const char* what) const {
    if (remaining() < n)
      throw CheckpointError(CheckpointError::Kind::truncated,
                            std::string("tensor file truncated while reading ") + what + " at byte " +
                                std::to_string(pos_));
  }
  std::uint32_t u(std::size_t width, const char* what) {
    need(width, what);
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < width; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += width;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

bool valid_utf8(std::span<const std::uint8_t> s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = s[i];
    std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xe ? 3 : (c >> 3) == 0x1e ? 4 : 0;
    if (len == 0 || i + len > s.size()) return false;
    if (len == 1 && c < 0x20) return false;  // no control characters in names
    for (std::size_t k = 1; k < len; ++k)
      if ((s[i + k] >> 6) != 0x2) return false;
    i += len;
  }
  return true;
}

}  // namespace

std::vector<std::uint8_t> encode_tensors(std::span<const NamedTensor> tensors) {
  std::vector<std::uint8_t> out{'S', 'F', 'L', '1'};
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.empty() || t.name.size() > 0xffff) throw std::invalid_argument("tensor name length out of range");
    out.push_back(static_cast<std::uint8_t>(t.name.size() & 0xff));
    out.push_back(static_cast<std::uint8_t>(t.name.size() >> 8));
    out.insert(out.end(), t.name.begin(), t.name.end());
    out.push_back(static_cast<std::uint8_t>(t.tensor.rank()));
    for (auto d : t.tensor.dims()) {
      if (d > 0xffffffffULL) throw std::invalid_argument("dimension does not fit in u32");
      put_u32(out, static_cast<std::uint32_t>(d));
    }
    for (double v : t.tensor.data()) {
      const float f = static_cast<float>(v);
      std::uint32_t bits = 0;
      std::memcpy(&bits, &f, sizeof bits);
      put_u32(out, bits);
    }
  }
  return out;
}

NamedTensors decode_tensors(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), "SFL1", 4) != 0)
    throw CheckpointError(CheckpointError::Kind::bad_magic, "not a tensor file (bad magic)");
  const auto version = r.u(4, "version");
  if (version != kCheckpointVersion)
    throw CheckpointError(CheckpointError::Kind::unsupported_version,
                          "unsupported tensor file version " + std::to_string(version));
  const auto count = r.u(4, "tensor count");
  NamedTensors out;
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.u(2, "name length");
    if (name_len == 0) throw CheckpointError(CheckpointError::Kind::malformed, "empty tensor name");
    const auto name_bytes = r.take(name_len, "name");
    if (!valid_utf8(name_bytes))
      throw CheckpointError(CheckpointError::Kind::malformed, "tensor name is not valid UTF-8");
    std::string name(name_bytes.begin(), name_bytes.end());
    if (!names.insert(name).second)
      throw CheckpointError(CheckpointError::Kind::malformed, "duplicate tensor name '" + name + "'");
    const auto rank = r.u(1, "rank");
    if (rank == 0 || rank > 4)
      throw CheckpointError(CheckpointError::Kind::malformed, "tensor '" + name + "' has rank " + std::to_string(rank));
    Dims dims;
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto v = r.u(4, "dims");
      if (v == 0) throw CheckpointError(CheckpointError::Kind::malformed, "tensor '" + name + "' has a zero dim");
      dims.push_back(v);
      numel *= v;
      if (numel > r.remaining() / 4 + 1)
        throw CheckpointError(CheckpointError::Kind::dim_overflow,
                              "tensor '" + name + "' dims " + to_string(dims) + " exceed the file size");
    }
    const auto payload = r.take(static_cast<std::size_t>(numel) * 4, "payload");
    std::vector<double> data(static_cast<std::size_t>(numel));
    for (std::size_t k = 0; k < data.size(); ++k) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(payload[4 * k + b]) << (8 * b);
      float f;
      std::memcpy(&f, &bits, sizeof f);
      data[k] = f;
    }
    out.push_back({std::move(name), Tensor(std::move(dims), std::move(data))});
  }
  if (!r.done())
    throw CheckpointError(CheckpointError::Kind::malformed,
                          std::to_string(r.remaining()) + " trailing bytes after the last tensor");
  return out;
}

void write_tensor_file(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
  const auto bytes = encode_tensors(tensors);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError(CheckpointError::Kind::io, "cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError(CheckpointError::Kind::io, "write to '" + path.string() + "' failed");
}

NamedTensors read_tensor_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointError::Kind::io, "cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_tensors(bytes);
}

void save_checkpoint(const NamedTensorSpace& space, const std::filesystem::path& path) {
  write_tensor_file(path, space.shared_tensors());
}

NamedTensorSpace load_checkpoint(const std::filesystem::path& path) {
  NamedTensorSpace space;
  for (auto& t : read_tensor_file(path)) space.add(std::move(t.name), std::move(t.tensor));
  return space;
}

std::uint32_t payload_checksum(const Tensor& tensor) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(tensor.numel() * 4);
  for (double v : tensor.data()) {
    const float f = static_cast<float>(v);
    std::uint32_t bits = 0;
    std::memcpy(&bits, &f, sizeof bits);
    put_u32(bytes, bits);
  }
  return static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

std::string format_dump(std::span<const NamedTensor> tensors) {
  std::ostringstream os;
  for (const auto& t : tensors) {
    char crc[16];
    std::snprintf(crc, sizeof crc, "%08x", payload_checksum(t.tensor));
    os << t.name << ' ' << to_string(t.tensor.dims()) << " crc32=" << crc << '\n';
  }
  return os.str();
}

}  // namespace sfl
