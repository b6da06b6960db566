// SPDX-License-Identifier: Apache-2.0
#include "sfl/arch.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

namespace sfl {

std::string to_string(BlockKind kind) { return kind == BlockKind::plain ? "plain" : "residual-pair"; }

BlockKind parse_block_kind(const std::string& text) {
  if (text == "plain") return BlockKind::plain;
  if (text == "residual-pair") return BlockKind::residual_pair;
  throw DesignError("unknown block kind '" + text + "' (expected plain | residual-pair)");
}

void DesignBase::validate() const {
  if (base_classes < 2) throw DesignError("base class count K_0 must be >= 2");
  if (base_feature_size < 1) throw DesignError("base feature size H_0 must be >= 1");
  if (input_channels < 1) throw DesignError("input channel count must be >= 1");
  if (base_widths.empty()) throw DesignError("base widths must list at least one stage");
  for (std::size_t i = 0; i < base_widths.size(); ++i) {
    if (base_widths[i] < 1) throw DesignError("base widths must be positive");
    if (i && base_widths[i] < base_widths[i - 1]) throw DesignError("base widths must be nondecreasing");
  }
}

double channel_ratio(int num_classes, int base_classes) {
  if (num_classes < 2 || base_classes < 2)
    throw DesignError("channel ratio needs K >= 2 and K_0 >= 2 (got K=" + std::to_string(num_classes) +
                      ", K_0=" + std::to_string(base_classes) + ")");
  return std::log10(static_cast<double>(num_classes)) / std::log10(static_cast<double>(base_classes));
}

int stage_count(int image_size, int base_feature_size) {
  if (base_feature_size < 1 || image_size <= base_feature_size)
    throw DesignError("input smaller than base feature map (H=" + std::to_string(image_size) +
                      ", H_0=" + std::to_string(base_feature_size) + ")");
  const double c = std::ceil(std::log2(static_cast<double>(image_size) / base_feature_size));
  return static_cast<int>(c);
}

int scale_width(int base_width, double ratio) {
  if (base_width < 1 || !(ratio > 0.0)) throw DesignError("scale_width needs b_0 >= 1 and ratio > 0");
  // Products that land on an integer up to rounding (e.g. 2/3 * 96) must not
  // be bumped to the next integer.
  const double scaled = ratio * base_width;
  const double nearest = std::round(scaled);
  const double width = std::abs(scaled - nearest) < 1e-9 * std::max(1.0, scaled) ? nearest : std::ceil(scaled);
  return std::max(1, static_cast<int>(width));
}

ModelSpec design_with(const ClientProfile& profile, const DesignBase& base, int depth, double ratio) {
  base.validate();
  if (profile.num_classes < 2) throw DesignError("client " + std::to_string(profile.client_id) + ": K must be >= 2");
  if (depth < 1) throw DesignError("depth must be >= 1");
  if (static_cast<std::size_t>(depth) > base.base_widths.size())
    throw DesignError("client " + std::to_string(profile.client_id) + " needs " + std::to_string(depth) +
                      " stages but the base plan lists " + std::to_string(base.base_widths.size()));
  if (depth >= 31 || (1LL << depth) > profile.image_size)
    throw DesignError("client " + std::to_string(profile.client_id) + ": " + std::to_string(depth) +
                      " stride-2 stages shrink a " + std::to_string(profile.image_size) + "px input below 1x1");
  ModelSpec spec;
  spec.block = base.block;
  spec.input_channels = base.input_channels;
  spec.image_size = profile.image_size;
  spec.num_classes = profile.num_classes;
  spec.ratio = ratio;
  int in = base.input_channels;
  for (int l = 0; l < depth; ++l) {
    const int out = scale_width(base.base_widths[static_cast<std::size_t>(l)], ratio);
    spec.stages.push_back({in, out, 2});
    in = out;
  }
  spec.head_features = in;
  return spec;
}

ModelSpec design_local(const ClientProfile& profile, const DesignBase& base) {
  const double kappa = channel_ratio(profile.num_classes, base.base_classes);
  const int depth = stage_count(profile.image_size, base.base_feature_size);
  return design_with(profile, base, depth, kappa);
}

ModelSpec enclosing_spec(std::span<const ModelSpec> specs) {
  if (specs.empty()) throw DesignError("cannot build a global model from zero client specs");
  if (specs.size() == 1) return specs.front();
  ModelSpec g;
  g.block = specs.front().block;
  g.input_channels = specs.front().input_channels;
  g.private_bn = specs.front().private_bn;
  g.private_head = specs.front().private_head;
  g.ratio = 0.0;
  for (const auto& s : specs) {
    if (s.block != g.block || s.input_channels != g.input_channels)
      throw DesignError("client specs disagree on block kind or input channels");
    g.image_size = std::max(g.image_size, s.image_size);
    g.num_classes = std::max(g.num_classes, s.num_classes);
    g.head_features = std::max(g.head_features, s.head_features);
    g.ratio = std::max(g.ratio, s.ratio);
    if (s.stages.size() > g.stages.size()) g.stages.resize(s.stages.size(), StageSpec{0, 0, 2});
    for (std::size_t l = 0; l < s.stages.size(); ++l) {
      g.stages[l].in_channels = std::max(g.stages[l].in_channels, s.stages[l].in_channels);
      g.stages[l].out_channels = std::max(g.stages[l].out_channels, s.stages[l].out_channels);
      g.stages[l].stride = s.stages[l].stride;
    }
  }
  return g;
}

ModelSpec design_global(std::span<const ClientProfile> profiles, const DesignBase& base) {
  if (profiles.empty()) throw DesignError("design_global needs at least one client profile");
  std::vector<ModelSpec> specs;
  specs.reserve(profiles.size());
  for (const auto& p : profiles) specs.push_back(design_local(p, base));
  return enclosing_spec(specs);
}

std::vector<TensorDecl> enumerate_tensors(const ModelSpec& spec) {
  std::vector<TensorDecl> out;
  auto u = [](int v) { return static_cast<std::size_t>(v); };
  auto add_bn = [&](const std::string& prefix, int channels) {
    out.push_back({prefix + ".gamma", {u(channels)}, TensorRole::bn_gamma, !spec.private_bn});
    out.push_back({prefix + ".beta", {u(channels)}, TensorRole::bn_beta, !spec.private_bn});
  };
  for (std::size_t l = 0; l < spec.stages.size(); ++l) {
    const auto& st = spec.stages[l];
    const std::string stage = "stage" + std::to_string(l + 1);
    if (spec.block == BlockKind::plain) {
      out.push_back({stage + ".conv.weight", {u(st.out_channels), u(st.in_channels), 3, 3}, TensorRole::conv_weight, true});
      add_bn(stage + ".bn", st.out_channels);
    } else {
      out.push_back({stage + ".conv1.weight", {u(st.out_channels), u(st.in_channels), 3, 3}, TensorRole::conv_weight, true});
      add_bn(stage + ".bn1", st.out_channels);
      out.push_back({stage + ".conv2.weight", {u(st.out_channels), u(st.out_channels), 3, 3}, TensorRole::conv_weight, true});
      add_bn(stage + ".bn2", st.out_channels);
      out.push_back({stage + ".shortcut.weight", {u(st.out_channels), u(st.in_channels), 1, 1}, TensorRole::conv_weight, true});
      add_bn(stage + ".shortcut_bn", st.out_channels);
    }
  }
  out.push_back({"head.weight", {u(spec.num_classes), u(spec.head_features)}, TensorRole::head_weight, !spec.private_head});
  out.push_back({"head.bias", {u(spec.num_classes)}, TensorRole::head_bias, !spec.private_head});
  return out;
}

std::int64_t count_parameters(const ModelSpec& spec) {
  std::int64_t total = 0;
  for (const auto& t : enumerate_tensors(spec)) total += static_cast<std::int64_t>(product(t.dims));
  return total;
}

std::vector<HeteroDesign> design_heterofl_baseline(std::span<const ClientProfile> profiles, const DesignBase& base,
                                                   int fixed_depth) {
  constexpr double kTolerance = 0.02;
  constexpr double kMaxRatio = 8.0;
  std::vector<HeteroDesign> out;
  out.reserve(profiles.size());
  for (const auto& p : profiles) {
    const ModelSpec own = design_local(p, base);
    const std::int64_t target = count_parameters(own);
    if (own.depth() == fixed_depth) {
      out.push_back({own, own.ratio, target});
      continue;
    }
    auto count_at = [&](double r) { return count_parameters(design_with(p, base, fixed_depth, r)); };
    double lo = 1e-9, hi = kMaxRatio;
    if (count_at(hi) < target && std::abs(static_cast<double>(count_at(hi) - target)) > kTolerance * target)
      throw DesignError("client " + std::to_string(p.client_id) + ": no ratio in (0, 8] reaches parameter parity at " +
                        std::to_string(fixed_depth) + " stages");
    // Smallest ratio whose count reaches the target; count is monotone in r.
    for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
      const double mid = 0.5 * (lo + hi);
      (count_at(mid) >= target ? hi : lo) = mid;
    }
    const double err_hi = std::abs(static_cast<double>(count_at(hi) - target));
    const double err_lo = std::abs(static_cast<double>(count_at(lo) - target));
    const double best = err_lo < err_hi ? lo : hi;
    const double err = std::min(err_lo, err_hi);
    if (err > kTolerance * static_cast<double>(target))
      throw DesignError("client " + std::to_string(p.client_id) + ": closest parameter count misses parity by " +
                        std::to_string(100.0 * err / static_cast<double>(target)) + "%");
    out.push_back({design_with(p, base, fixed_depth, best), best, target});
  }
  return out;
}

void validate_local_spec(const ModelSpec& spec) {
  if (spec.num_classes < 2) throw DesignError("spec head must have at least 2 outputs");
  int in = spec.input_channels;
  for (std::size_t l = 0; l < spec.stages.size(); ++l) {
    if (spec.stages[l].in_channels != in)
      throw DesignError("stage " + std::to_string(l + 1) + " input width " + std::to_string(spec.stages[l].in_channels) +
                        " does not chain from " + std::to_string(in));
    if (spec.stages[l].out_channels < 1) throw DesignError("stage widths must be positive");
    in = spec.stages[l].out_channels;
  }
  if (spec.head_features != in)
    throw DesignError("head input width " + std::to_string(spec.head_features) + " != last stage width " +
                      std::to_string(in));
}

void validate_profiles(std::span<const ClientProfile> profiles, const DesignBase& base) {
  std::map<std::pair<int, int>, int> group_of;
  std::map<int, std::pair<int, int>> key_of;
  std::map<int, int> ids;
  for (const auto& p : profiles) {
    if (p.image_size <= base.base_feature_size)
      throw DesignError("client " + std::to_string(p.client_id) + ": input smaller than base feature map");
    if (p.num_classes < 2) throw DesignError("client " + std::to_string(p.client_id) + ": K must be >= 2");
    if (p.num_samples < 1) throw DesignError("client " + std::to_string(p.client_id) + ": needs at least one sample");
    if (ids[p.client_id]++) throw DesignError("duplicate client id " + std::to_string(p.client_id));
    const std::pair<int, int> key{p.image_size, p.num_classes};
    auto [it, fresh] = group_of.emplace(key, p.group_id);
    if (!fresh && it->second != p.group_id)
      throw DesignError("clients with equal (H, K) carry different group ids");
    auto [kt, kfresh] = key_of.emplace(p.group_id, key);
    if (!kfresh && kt->second != key) throw DesignError("group " + std::to_string(p.group_id) + " mixes (H, K) pairs");
  }
}

std::string format_arch_table(std::span<const ClientProfile> profiles, const DesignBase& base) {
  // One representative per group, in group-id order.
  std::map<int, ClientProfile> reps;
  for (const auto& p : profiles) reps.emplace(p.group_id, p);
  std::vector<std::string> headers{"layer", "shared"};
  std::vector<ModelSpec> specs;
  for (const auto& [gid, p] : reps) {
    headers.push_back("group " + std::to_string(gid) + " (" + std::to_string(p.image_size) + "px, " +
                      std::to_string(p.num_classes) + " cls)");
    specs.push_back(design_local(p, base));
  }
  headers.push_back("global");
  const ModelSpec global = design_global(profiles, base);

  std::vector<std::vector<std::string>> rows;
  auto fmt_ratio = [](double r) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << r;
    return os.str();
  };
  {
    std::vector<std::string> r{"# of stages", ""};
    for (const auto& s : specs) r.push_back(std::to_string(s.depth()));
    r.push_back(std::to_string(global.depth()));
    rows.push_back(r);
    std::vector<std::string> k{"channel ratio", ""};
    for (const auto& s : specs) k.push_back(fmt_ratio(s.ratio));
    k.push_back(fmt_ratio(global.ratio));
    rows.push_back(k);
  }
  const char* kernel = base.block == BlockKind::plain ? "3x3, " : "[3x3, 3x3] ";
  for (int l = 0; l < global.depth(); ++l) {
    std::vector<std::string> r{"stage" + std::to_string(l + 1), "yes"};
    auto cell = [&](const ModelSpec& s) -> std::string {
      if (l >= s.depth()) return "";
      return kernel + std::to_string(s.stages[static_cast<std::size_t>(l)].out_channels) + ", stride 2";
    };
    for (const auto& s : specs) r.push_back(cell(s));
    r.push_back(cell(global));
    rows.push_back(r);
  }
  {
    std::vector<std::string> r{"output", ""};
    for (std::size_t i = 0; i < specs.size(); ++i) r.push_back("average pool");
    r.push_back("average pool");
    rows.push_back(r);
    std::vector<std::string> h{"", "private"};
    for (const auto& s : specs) h.push_back(std::to_string(s.num_classes) + "-d fc");
    h.push_back(std::to_string(global.num_classes) + "-d fc");
    rows.push_back(h);
    std::vector<std::string> c{"# of parameters", ""};
    for (const auto& s : specs) c.push_back(std::to_string(count_parameters(s)));
    c.push_back(std::to_string(count_parameters(global)));
    rows.push_back(c);
  }

  std::vector<std::size_t> width(headers.size());
  for (std::size_t i = 0; i < headers.size(); ++i) width[i] = headers[i].size();
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? " | " : "") << std::left << std::setw(static_cast<int>(width[i])) << r[i];
    os << '\n';
  };
  line(headers);
  std::size_t total = 0;
  for (auto w : width) total += w + 3;
  os << std::string(total - 3, '-') << '\n';
  for (const auto& r : rows) line(r);
  return os.str();
}

}  // namespace sfl
