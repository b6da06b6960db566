// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "sfl/arch.hpp"

using namespace sfl;

namespace {

std::vector<ClientProfile> profiles(const std::vector<std::pair<int, int>>& hk) {
  std::vector<ClientProfile> out;
  for (std::size_t i = 0; i < hk.size(); ++i)
    out.push_back({static_cast<int>(i), hk[i].first, hk[i].second, 100, static_cast<int>(i)});
  return out;
}

std::vector<int> widths(const ModelSpec& s) {
  std::vector<int> w;
  for (const auto& st : s.stages) w.push_back(st.out_channels);
  return w;
}

const DesignBase kImageNet{1000, 8, {64, 64, 128, 256, 512}, 3, BlockKind::plain};
const DesignBase kFigure{10, 8, {32, 64, 128, 256}, 3, BlockKind::plain};

// Independent count: conv k*k*in*out, BN 2*out per conv, head K*F + K.
std::int64_t oracle_count(const ModelSpec& s) {
  std::int64_t n = 0;
  for (const auto& st : s.stages) {
    n += 9LL * st.in_channels * st.out_channels + 2LL * st.out_channels;
    if (s.block == BlockKind::residual_pair)
      n += 9LL * st.out_channels * st.out_channels + 2LL * st.out_channels + 1LL * st.in_channels * st.out_channels +
           2LL * st.out_channels;
  }
  return n + static_cast<std::int64_t>(s.num_classes) * s.head_features + s.num_classes;
}

}  // namespace

TEST_CASE("channel ratio") {
  CHECK(channel_ratio(1000, 1000) == 1.0);
  CHECK(channel_ratio(100, 1000) == doctest::Approx(0.6667).epsilon(1e-4));
  CHECK(channel_ratio(500, 1000) == doctest::Approx(0.8997).epsilon(1e-4));
  CHECK(std::round(channel_ratio(500, 1000) * 100) / 100 == 0.9);
  CHECK(std::round(channel_ratio(200, 1000) * 100) / 100 == 0.77);
  CHECK_THROWS(channel_ratio(1, 1000));
}

TEST_CASE("stage count") {
  CHECK(stage_count(128, 8) == 4);
  CHECK(stage_count(64, 8) == 3);
  CHECK(stage_count(32, 8) == 2);
  CHECK(stage_count(256, 8) == 5);
  CHECK(stage_count(96, 8) == 4);
  CHECK(stage_count(512, 4) == 7);
  CHECK(stage_count(256, 4) == 6);
  try {
    (void)stage_count(8, 8);
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("input smaller than base feature map") != std::string::npos);
  }
}

TEST_CASE("scale width uses the ceiling") {
  CHECK(scale_width(64, channel_ratio(500, 1000)) == 58);
  CHECK(scale_width(256, channel_ratio(200, 1000)) == 197);
  CHECK(scale_width(512, channel_ratio(500, 1000)) == 461);
  for (int b = 1; b <= 600; ++b) CHECK(scale_width(b, 1.0) == b);
  // Every golden ImageNet-profile width.
  const double k2 = channel_ratio(500, 1000), k3 = channel_ratio(200, 1000), k4 = channel_ratio(100, 1000);
  const std::vector<std::tuple<int, double, int>> table{{64, k2, 58},  {64, k3, 50},  {64, k4, 43},  {128, k2, 116},
                                                        {128, k3, 99}, {128, k4, 86}, {256, k2, 231}, {256, k3, 197},
                                                        {256, k4, 171}, {512, k2, 461}};
  for (const auto& [b, k, want] : table) CHECK(scale_width(b, k) == want);
}

TEST_CASE("worked example") {
  const auto ps = profiles({{128, 10}, {64, 5}, {32, 2}});
  const ModelSpec c1 = design_local(ps[0], kFigure);
  const ModelSpec c2 = design_local(ps[1], kFigure);
  const ModelSpec c3 = design_local(ps[2], kFigure);
  CHECK(widths(c1) == std::vector<int>{32, 64, 128, 256});
  CHECK(c1.num_classes == 10);
  CHECK(c2.depth() == 3);
  CHECK(widths(c3) == std::vector<int>{10, 20});
  CHECK(c3.num_classes == 2);
  CHECK(c3.head_features == 20);
  for (const auto& s : {c1, c2, c3}) {
    CHECK(s.private_bn);
    CHECK(s.private_head);
    validate_local_spec(s);
  }
  const ModelSpec g = design_global(ps, kFigure);
  CHECK(g.depth() == 4);
  CHECK(widths(g) == std::vector<int>{32, 64, 128, 256});
  CHECK(design_global(std::span(ps).first(1), kFigure) == c1);
  CHECK_THROWS(design_global(std::span<const ClientProfile>{}, kFigure));
}

TEST_CASE("global takes the per-coordinate max of interleaved specs") {
  const DesignBase base{10, 4, {8, 16, 32, 64}, 3, BlockKind::plain};
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ClientProfile> ps;
    const int n = std::uniform_int_distribution<int>(1, 5)(rng);
    for (int i = 0; i < n; ++i) {
      const int h = 8 << std::uniform_int_distribution<int>(0, 2)(rng);
      const int k = std::uniform_int_distribution<int>(2, 10)(rng);
      ps.push_back({i, h, k, 10, h * 100 + k});
    }
    std::vector<ModelSpec> locals;
    for (const auto& p : ps) locals.push_back(design_local(p, base));
    const ModelSpec g = design_global(ps, base);
    std::size_t depth = 0;
    for (const auto& l : locals) depth = std::max(depth, l.stages.size());
    REQUIRE(g.stages.size() == depth);
    for (std::size_t s = 0; s < depth; ++s) {
      int in = 0, out = 0;
      for (const auto& l : locals)
        if (s < l.stages.size()) {
          in = std::max(in, l.stages[s].in_channels);
          out = std::max(out, l.stages[s].out_channels);
        }
      CHECK(g.stages[s].in_channels == in);
      CHECK(g.stages[s].out_channels == out);
    }
    int k = 0, f = 0;
    for (const auto& l : locals) {
      k = std::max(k, l.num_classes);
      f = std::max(f, l.head_features);
    }
    CHECK(g.num_classes == k);
    CHECK(g.head_features == f);
  }
}

TEST_CASE("monotonicity") {
  const DesignBase base{100, 4, {8, 16, 32, 64, 128}, 3, BlockKind::plain};
  for (int h : {16, 32, 64})
    for (int k = 2; k < 100; ++k) {
      const auto a = design_local({0, h, k, 1, 0}, base), b = design_local({1, h, k + 1, 1, 1}, base);
      for (std::size_t s = 0; s < a.stages.size(); ++s) CHECK(a.stages[s].out_channels <= b.stages[s].out_channels);
    }
  CHECK(design_local({0, 16, 50, 1, 0}, base).depth() <= design_local({0, 32, 50, 1, 0}, base).depth());
}

TEST_CASE("full-size client receives the global model") {
  const auto ps = profiles({{256, 1000}, {192, 500}, {128, 200}, {96, 100}});
  const ModelSpec g = design_global(ps, kImageNet);
  const ModelSpec l = design_local(ps[0], kImageNet);
  CHECK(l.ratio == 1.0);
  CHECK(l.stages.size() == g.stages.size());
  CHECK(widths(l) == widths(g));
}

TEST_CASE("parameter counting") {
  ModelSpec linear_only;
  linear_only.num_classes = 2;
  linear_only.head_features = 10;
  linear_only.input_channels = 10;
  CHECK(count_parameters(linear_only) == 22);

  ModelSpec conv;
  conv.stages = {{3, 32, 2}};
  conv.num_classes = 1;
  conv.head_features = 32;
  CHECK(count_parameters(conv) - (32 + 1) == 928);

  for (const auto& p : profiles({{128, 10}, {64, 5}, {32, 2}})) {
    const ModelSpec s = design_local(p, kFigure);
    std::int64_t enumerated = 0;
    for (const auto& d : enumerate_tensors(s)) {
      std::int64_t n = 1;
      for (auto x : d.dims) n *= static_cast<std::int64_t>(x);
      enumerated += n;
    }
    CHECK(count_parameters(s) == enumerated);
    CHECK(count_parameters(s) == oracle_count(s));
  }
  DesignBase res = kFigure;
  res.block = BlockKind::residual_pair;
  const ModelSpec r = design_local(profiles({{64, 5}})[0], res);
  CHECK(count_parameters(r) == oracle_count(r));
}

TEST_CASE("tensor enumeration flags sharing") {
  const ModelSpec s = design_local(profiles({{64, 5}})[0], kFigure);
  for (const auto& d : enumerate_tensors(s)) {
    CHECK(d.shared == (d.role == TensorRole::conv_weight));
    CHECK(d.decays() == (d.role == TensorRole::conv_weight || d.role == TensorRole::head_weight));
  }
}

TEST_CASE("width-only baseline parity") {
  const auto ps = profiles({{256, 1000}, {192, 500}, {128, 200}, {96, 100}});
  const auto designs = design_heterofl_baseline(ps, kImageNet, 4);
  REQUIRE(designs.size() == 4);
  CHECK(designs[0].ratio == doctest::Approx(2.0).epsilon(0.05));
  CHECK(designs[2].ratio == doctest::Approx(channel_ratio(200, 1000)));
  CHECK(designs[2].spec == design_local(ps[2], kImageNet));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const double target = static_cast<double>(count_parameters(design_local(ps[i], kImageNet)));
    CHECK(designs[i].spec.depth() == 4);
    CHECK(std::abs(static_cast<double>(oracle_count(designs[i].spec)) - target) <= 0.02 * target);
  }
  // Synthetic regime: a profile mix where integer widths can reach 2% parity.
  const DesignBase mid{10, 4, {16, 32, 64}, 3, BlockKind::plain};
  const auto syn = profiles({{32, 10}, {16, 6}, {8, 6}});
  const auto d = design_heterofl_baseline(syn, mid, 3);
  for (std::size_t i = 0; i < syn.size(); ++i) {
    const double target = static_cast<double>(count_parameters(design_local(syn[i], mid)));
    CHECK(d[i].spec.depth() == 3);
    CHECK(std::abs(static_cast<double>(oracle_count(d[i].spec)) - target) <= 0.02 * target);
  }
  // Tiny clients: one channel step already moves the count by more than 2%.
  const DesignBase small{10, 8, {8, 16, 32}, 3, BlockKind::plain};
  const auto tiny = profiles({{64, 10}, {32, 5}, {16, 2}});
  for (int depth : {1, 2, 3}) CHECK_THROWS_AS(design_heterofl_baseline(tiny, small, depth), DesignError);
  CHECK_THROWS(design_heterofl_baseline(syn, mid, 7));
}

TEST_CASE("profile validation") {
  auto ps = profiles({{64, 10}, {32, 5}});
  ps[1].group_id = 0;
  CHECK_THROWS(validate_profiles(ps, kFigure));
  auto dup = profiles({{64, 10}, {64, 10}});
  dup[1].client_id = 0;
  CHECK_THROWS(validate_profiles(dup, kFigure));
}

TEST_CASE("arch table") {
  const auto ps = profiles({{256, 1000}, {192, 500}, {128, 200}, {96, 100}});
  const std::string table = format_arch_table(ps, kImageNet);
  for (const char* w : {"3x3, 58, stride 2", "3x3, 50, stride 2", "3x3, 43, stride 2", "3x3, 461, stride 2",
                        "1000-d fc", "# of stages"})
    CHECK(table.find(w) != std::string::npos);
}
