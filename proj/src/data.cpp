// SPDX-License-Identifier: Apache-2.0
#include "sfl/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "sfl/param_space.hpp"
#include "sfl/rng.hpp"

namespace sfl {

std::string to_string(SubsetMode mode) { return mode == SubsetMode::prefix ? "prefix" : "random"; }

SubsetMode parse_subset_mode(const std::string& text) {
  if (text == "prefix") return SubsetMode::prefix;
  if (text == "random" || text == "random-subset") return SubsetMode::random;
  throw std::invalid_argument("unknown subset mode '" + text + "' (expected prefix | random)");
}

namespace {
bool power_of_two_ratio(int from, int to) {
  if (to < 1 || from % to != 0) return false;
  const int r = from / to;
  return (r & (r - 1)) == 0;
}
}  // namespace

void SyntheticTaskSpec::validate() const {
  if (master_classes < 2) throw std::invalid_argument("data: master class count must be >= 2");
  if (master_resolution < 1 || channels < 1 || prototype_grid < 2)
    throw std::invalid_argument("data: resolution, channels and prototype grid must be positive");
  if (groups.empty()) throw std::invalid_argument("data: at least one group is required");
  if (!(noise >= 0.0) || !(max_shift >= 0.0 && max_shift < 0.5) || !(gain_spread >= 0.0 && gain_spread < 1.0))
    throw std::invalid_argument("data: noise >= 0, shift in [0, 0.5), gain spread in [0, 1) required");
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& gs = groups[g];
    const std::string tag = "data: group " + std::to_string(g) + ": ";
    if (gs.num_classes < 2 || gs.num_classes > master_classes)
      throw std::invalid_argument(tag + "class count must be in [2, " + std::to_string(master_classes) + "]");
    if (gs.image_size > master_resolution || !power_of_two_ratio(master_resolution, gs.image_size))
      throw std::invalid_argument(tag + "resolution must divide " + std::to_string(master_resolution) +
                                  " by a power of two");
    if (gs.clients < 1 || gs.test_size < 1) throw std::invalid_argument(tag + "needs clients and test samples");
    if (gs.train_per_client < gs.num_classes)
      throw std::invalid_argument(tag + std::to_string(gs.train_per_client) + " samples per client cannot class-balance " +
                                  std::to_string(gs.num_classes) + " classes");
    if (g > 0 && (gs.image_size > groups[g - 1].image_size || gs.num_classes > groups[g - 1].num_classes))
      throw std::invalid_argument(tag + "groups must be ordered by nonincreasing (resolution, classes)");
  }
}

Tensor downsample(const Tensor& images, int to) {
  const bool batched = images.rank() == 4;
  if (!batched && images.rank() != 3) throw ShapeError("downsample expects [C, H, W] or [N, C, H, W], got " + to_string(images.dims()));
  const std::size_t n = batched ? images.dim(0) : 1;
  const std::size_t c = images.dim(batched ? 1 : 0);
  const std::size_t h = images.dim(batched ? 2 : 1), w = images.dim(batched ? 3 : 2);
  if (h != w) throw ShapeError("downsample expects square images, got " + to_string(images.dims()));
  if (to < 1 || h % static_cast<std::size_t>(to) != 0)
    throw std::invalid_argument("downsample: " + std::to_string(h) + " is not divisible by " + std::to_string(to));
  const auto out = static_cast<std::size_t>(to);
  const std::size_t f = h / out;
  Tensor y(batched ? Dims{n, c, out, out} : Dims{c, out, out});
  const double inv = 1.0 / static_cast<double>(f * f);
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = images.data().data() + p * h * w;
    double* dst = y.data().data() + p * out * out;
    for (std::size_t i = 0; i < out; ++i)
      for (std::size_t j = 0; j < out; ++j) {
        double acc = 0.0;
        for (std::size_t a = 0; a < f; ++a)
          for (std::size_t b = 0; b < f; ++b) acc += src[(i * f + a) * w + j * f + b];
        dst[i * out + j] = acc * inv;
      }
  }
  return y;
}

namespace {

// Smooth field: bilinear interpolation of a grid x grid Gaussian lattice,
// rescaled so the whole prototype spans [0, 1].
Tensor make_prototype(const SyntheticTaskSpec& spec, int cls) {
  const auto h = static_cast<std::size_t>(spec.master_resolution);
  const auto c = static_cast<std::size_t>(spec.channels);
  const auto g = static_cast<std::size_t>(spec.prototype_grid);
  auto rng = make_rng(spec.seed, "prototype", static_cast<std::uint64_t>(cls));
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor proto({c, h, h});
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::vector<double> lattice(g * g);
    for (auto& v : lattice) v = normal(rng);
    for (std::size_t i = 0; i < h; ++i) {
      const double y = (static_cast<double>(i) + 0.5) / static_cast<double>(h) * static_cast<double>(g - 1);
      const auto y0 = std::min(static_cast<std::size_t>(y), g - 2);
      const double ty = y - static_cast<double>(y0);
      for (std::size_t j = 0; j < h; ++j) {
        const double x = (static_cast<double>(j) + 0.5) / static_cast<double>(h) * static_cast<double>(g - 1);
        const auto x0 = std::min(static_cast<std::size_t>(x), g - 2);
        const double tx = x - static_cast<double>(x0);
        const double top = lattice[y0 * g + x0] * (1 - tx) + lattice[y0 * g + x0 + 1] * tx;
        const double bot = lattice[(y0 + 1) * g + x0] * (1 - tx) + lattice[(y0 + 1) * g + x0 + 1] * tx;
        proto[(ch * h + i) * h + j] = top * (1 - ty) + bot * ty;
      }
    }
  }
  const auto [lo, hi] = std::minmax_element(proto.data().begin(), proto.data().end());
  const double min = *lo, range = std::max(*hi - *lo, 1e-12);
  for (auto& v : proto.data()) v = (v - min) / range;
  return proto;
}

// One sample at master resolution, written into `out` ([C, H, W]).
void render_sample(const SyntheticTaskSpec& spec, const Tensor& prototypes, int cls, std::int64_t sample_id,
                   double* out) {
  const auto h = static_cast<std::size_t>(spec.master_resolution);
  const auto c = static_cast<std::size_t>(spec.channels);
  auto rng = make_rng(spec.seed, "sample", static_cast<std::uint64_t>(sample_id));
  const int max_px = static_cast<int>(std::floor(spec.max_shift * spec.master_resolution));
  std::uniform_int_distribution<int> shift(-max_px, max_px);
  std::uniform_real_distribution<double> gain(1.0 - spec.gain_spread, 1.0 + spec.gain_spread);
  std::normal_distribution<double> noise(0.0, 1.0);
  const int dy = shift(rng), dx = shift(rng);
  const double* proto = prototypes.data().data() + static_cast<std::size_t>(cls) * c * h * h;
  const auto hi = static_cast<int>(h) - 1;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double gch = gain(rng);
    for (std::size_t i = 0; i < h; ++i) {
      const auto si = static_cast<std::size_t>(std::clamp(static_cast<int>(i) - dy, 0, hi));
      for (std::size_t j = 0; j < h; ++j) {
        const auto sj = static_cast<std::size_t>(std::clamp(static_cast<int>(j) - dx, 0, hi));
        double v = gch * proto[(ch * h + si) * h + sj];
        if (spec.noise > 0.0) v += spec.noise * noise(rng);
        out[(ch * h + i) * h + j] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
}

Dataset render_split(const SyntheticTaskSpec& spec, const Tensor& prototypes, const std::vector<int>& classes,
                     std::vector<int> labels, std::int64_t first_id, int group_id, const GroupSpec& gs) {
  const auto h = static_cast<std::size_t>(spec.master_resolution);
  const auto c = static_cast<std::size_t>(spec.channels);
  const std::size_t n = labels.size();
  Tensor master({n, c, h, h});
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = first_id + static_cast<std::int64_t>(i);
    render_sample(spec, prototypes, classes[static_cast<std::size_t>(labels[i])], id, master.data().data() + i * c * h * h);
    d.sample_ids.push_back(id);
  }
  d.images = gs.image_size == spec.master_resolution ? std::move(master) : downsample(master, gs.image_size);
  d.labels = std::move(labels);
  d.group_id = group_id;
  d.image_size = gs.image_size;
  d.num_classes = gs.num_classes;
  return d;
}

}  // namespace

std::vector<ClientProfile> client_profiles(const SyntheticTaskSpec& spec) {
  std::vector<ClientProfile> out;
  int client_id = 0;
  for (std::size_t g = 0; g < spec.groups.size(); ++g) {
    const auto& gs = spec.groups[g];
    for (int j = 0; j < gs.clients; ++j, ++client_id)
      out.push_back({client_id, gs.image_size, gs.num_classes, gs.train_per_client, static_cast<int>(g)});
  }
  return out;
}

FederatedData generate(const SyntheticTaskSpec& spec) {
  spec.validate();
  FederatedData out;
  const auto h = static_cast<std::size_t>(spec.master_resolution);
  const auto c = static_cast<std::size_t>(spec.channels);
  out.prototypes = Tensor({static_cast<std::size_t>(spec.master_classes), c, h, h});
  for (int k = 0; k < spec.master_classes; ++k) {
    const Tensor p = make_prototype(spec, k);
    std::copy(p.data().begin(), p.data().end(), out.prototypes.data().begin() + static_cast<std::ptrdiff_t>(k * c * h * h));
  }

  for (std::size_t g = 0; g < spec.groups.size(); ++g) {
    std::vector<int> classes(static_cast<std::size_t>(spec.master_classes));
    std::iota(classes.begin(), classes.end(), 0);
    if (spec.subset == SubsetMode::random) {
      auto rng = make_rng(spec.seed, "subset", g);
      std::shuffle(classes.begin(), classes.end(), rng);
    }
    classes.resize(static_cast<std::size_t>(spec.groups[g].num_classes));
    out.group_classes.push_back(std::move(classes));
  }

  out.profiles = client_profiles(spec);
  std::int64_t next_id = 0;
  int client_id = 0;
  for (std::size_t g = 0; g < spec.groups.size(); ++g) {
    const auto& gs = spec.groups[g];
    for (int j = 0; j < gs.clients; ++j, ++client_id) {
      std::vector<int> labels(static_cast<std::size_t>(gs.train_per_client));
      for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % static_cast<std::size_t>(gs.num_classes));
      auto rng = make_rng(spec.seed, "labels", static_cast<std::uint64_t>(client_id));
      std::shuffle(labels.begin(), labels.end(), rng);
      out.train.push_back(render_split(spec, out.prototypes, out.group_classes[g], std::move(labels), next_id,
                                       static_cast<int>(g), gs));
      next_id += gs.train_per_client;
    }
  }
  for (std::size_t g = 0; g < spec.groups.size(); ++g) {
    const auto& gs = spec.groups[g];
    std::vector<int> labels(static_cast<std::size_t>(gs.test_size));
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % static_cast<std::size_t>(gs.num_classes));
    out.test.push_back(render_split(spec, out.prototypes, out.group_classes[g], std::move(labels), next_id,
                                    static_cast<int>(g), gs));
    next_id += gs.test_size;
  }
  return out;
}

double nearest_prototype_accuracy(const Dataset& data, const Tensor& prototypes, std::span<const int> classes) {
  if (data.size() == 0) throw std::invalid_argument("nearest_prototype_accuracy on an empty dataset");
  std::vector<Tensor> refs;
  for (int k : classes) {
    const std::size_t per = prototypes.numel() / prototypes.dim(0);
    Tensor p(Dims{prototypes.dim(1), prototypes.dim(2), prototypes.dim(3)},
             std::vector<double>(prototypes.data().begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(k) * per),
                                 prototypes.data().begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(k) + 1) * per)));
    refs.push_back(static_cast<int>(p.dim(1)) == data.image_size ? std::move(p) : downsample(p, data.image_size));
  }
  const std::size_t per = data.images.numel() / data.size();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double* x = data.images.data().data() + i * per;
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t k = 0; k < refs.size(); ++k) {
      double d = 0.0;
      for (std::size_t p = 0; p < per; ++p) d += (x[p] - refs[k][p]) * (x[p] - refs[k][p]);
      if (d < best) {
        best = d;
        arg = k;
      }
    }
    if (arg == static_cast<std::size_t>(data.labels[i])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {
std::uint32_t crc_dataset(std::uint32_t crc, const Dataset& d) {
  for (double v : d.images.data()) {
    unsigned char b[sizeof v];
    std::memcpy(b, &v, sizeof v);
    crc = static_cast<std::uint32_t>(crc32(crc, b, sizeof b));
  }
  for (int l : d.labels) {
    const auto u = static_cast<std::uint32_t>(l);
    const unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                                static_cast<unsigned char>(u >> 16), static_cast<unsigned char>(u >> 24)};
    crc = static_cast<std::uint32_t>(crc32(crc, b, 4));
  }
  return crc;
}

void write_labels(const std::filesystem::path& path, const std::vector<int>& labels) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  for (int l : labels) {
    const auto u = static_cast<std::uint32_t>(l);
    const char b[4] = {static_cast<char>(u & 0xff), static_cast<char>((u >> 8) & 0xff), static_cast<char>((u >> 16) & 0xff),
                       static_cast<char>((u >> 24) & 0xff)};
    f.write(b, 4);
  }
  if (!f) throw std::runtime_error("write to '" + path.string() + "' failed");
}
}  // namespace

std::uint32_t dataset_checksum(const FederatedData& data) {
  auto crc = static_cast<std::uint32_t>(crc32(0L, Z_NULL, 0));
  for (const auto& d : data.train) crc = crc_dataset(crc, d);
  for (const auto& d : data.test) crc = crc_dataset(crc, d);
  return crc;
}

void export_dataset(const FederatedData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto emit = [&](const std::string& stem, const Dataset& d) {
    const NamedTensor t{"images", d.images};
    write_tensor_file(dir / (stem + ".sfl"), std::span<const NamedTensor>(&t, 1));
    write_labels(dir / (stem + ".labels"), d.labels);
  };
  for (std::size_t i = 0; i < data.train.size(); ++i) emit("client_" + std::to_string(i) + "_train", data.train[i]);
  for (std::size_t g = 0; g < data.test.size(); ++g) emit("group_" + std::to_string(g) + "_test", data.test[g]);
}

}  // namespace sfl
