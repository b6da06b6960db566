// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "sfl/harness.hpp"

using namespace sfl;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  return out;
}

std::vector<std::string> lines_of(const std::filesystem::path& p) {
  std::ifstream f(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(f, l);) out.push_back(l);
  return out;
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "sfl_harness_test" / name;
  std::filesystem::remove_all(dir);
  return dir;
}

const char* kTiny = R"(
[design]
base_classes = 4
base_feature_size = 4
base_widths = 4, 8

[federation]
seed = 2
rounds = 2
participation = 0.5
local_iters = 2
batch_size = 4
lr = 0.05

[data]
master_classes = 4
master_resolution = 16
group = 16, 4, 2, 8, 8
group = 8, 2, 2, 8, 8
)";

ExperimentConfig random_config(std::mt19937_64& rng) {
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto real = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto coin = [&]() { return pick(0, 1) == 1; };
  ExperimentConfig c;
  c.design.base_classes = pick(2, 12);
  c.design.base_feature_size = coin() ? 4 : 8;
  c.design.base_widths.clear();
  for (int w = pick(1, 6), i = 0; i < 4; ++i, w += pick(0, 9)) c.design.base_widths.push_back(w);
  c.design.block = coin() ? BlockKind::plain : BlockKind::residual_pair;
  c.design.input_channels = pick(1, 4);

  auto& f = c.federation;
  const Method all[] = {Method::scalablefl, Method::heterofl, Method::fedavg_homogeneous, Method::individual};
  f.method = all[pick(0, 3)];
  c.methods.clear();
  for (Method m : all)
    if (coin()) c.methods.push_back(m);
  if (c.methods.empty()) c.methods.push_back(f.method);
  c.repeats = pick(1, 5);
  f.seed = std::uniform_int_distribution<std::uint64_t>()(rng);
  f.rounds = pick(1, 1000);
  f.participation = coin() ? 1.0 : real(1e-3, 1.0);
  f.local_iters = pick(1, 50);
  f.batch_size = pick(1, 64);
  f.lr = real(0.0, 1.0);
  f.schedule = static_cast<LrSchedule>(pick(0, 2));
  f.momentum = real(0.0, 0.99);
  f.weight_decay = real(0.0, 1e-2);
  f.heterofl_depth = pick(1, 4);
  f.local_bn = coin();
  f.local_head = coin();
  f.weighted_aggregation = coin();
  f.persist_momentum = coin();
  f.threads = pick(1, 8);
  f.eval_every = pick(0, 10);
  f.record_wall_clock = coin();

  auto& d = c.data;
  d.seed = coin() ? f.seed : std::uniform_int_distribution<std::uint64_t>()(rng);
  d.master_classes = pick(c.design.base_classes, 20);
  d.master_resolution = 64;
  d.channels = c.design.input_channels;
  d.prototype_grid = pick(2, 16);
  d.noise = real(0.0, 3.0);
  d.max_shift = real(0.0, 0.49);
  d.gain_spread = real(0.0, 0.99);
  d.subset = coin() ? SubsetMode::prefix : SubsetMode::random;
  int h = 64, k = c.design.base_classes;
  d.groups.clear();
  for (int g = pick(1, 3); g > 0 && h > c.design.base_feature_size; --g) {
    d.groups.push_back({h, k, pick(1, 5), k + pick(0, 40), pick(1, 100)});
    h /= 2;
    k = std::max(2, k - pick(0, 3));
  }
  c.out_dir = "out/run_" + std::to_string(pick(0, 999));
  c.export_data = coin();
  c.validate();
  return c;
}

}  // namespace

TEST_CASE("minimal config fills defaults") {
  const auto c = parse_config("[federation]\nseed = 3\n[data]\ngroup = 32, 10, 2, 20, 20\n");
  CHECK(c.federation.momentum == 0.9);
  CHECK(c.federation.weight_decay == 5e-4);
  CHECK(c.federation.schedule == LrSchedule::cosine);
  CHECK(c.federation.seed == 3);
  CHECK(c.data.seed == 3);
  REQUIRE(c.data.groups.size() == 1);
  CHECK(c.data.groups[0] == GroupSpec{32, 10, 2, 20, 20});
}

TEST_CASE("config errors carry line numbers") {
  try {
    parse_config("[federation]\nseed = 3\n\nparticipation = 0\n[data]\ngroup = 32, 10, 2, 20, 20\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.line() == 4);
    CHECK(std::string(e.what()).find("line 4") != std::string::npos);
  }
  try {
    parse_config("# comment\n[federation]\nlearning_rate = 0.1\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.line() == 3);
    CHECK(std::string(e.what()).find("learning_rate") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("[federation]\nrounds = ten\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[federation]\nrounds = 3\nrounds = 4\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[nonsense]\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[federation]\nseed = 1\n"), ConfigError);  // no groups
}

TEST_CASE("render and parse round-trip on random configs") {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 100; ++i) {
    const ExperimentConfig c = random_config(rng);
    const std::string text = render_config(c);
    CAPTURE(text);
    const ExperimentConfig back = parse_config(text);
    CHECK(back == c);
    CHECK(render_config(back) == text);
  }
}

TEST_CASE("comparison with a single method has one row") {
  ExperimentConfig c = parse_config(kTiny);
  c.methods = {Method::individual};
  const auto t = run_compare(c, {});
  REQUIRE(t.cells.size() == 1);
  CHECK(t.cells[0].size() == c.data.groups.size() + 1);
  const auto rows = split(format_compare_csv(t), '\n');
  CHECK(rows.size() == 1 + c.data.groups.size() + 1);
}

TEST_CASE("comparison SD matches a recomputation from the run CSVs") {
  ExperimentConfig c = parse_config(kTiny);
  c.methods = {Method::scalablefl, Method::individual};
  c.repeats = 3;
  const auto dir = scratch("repeats");
  const auto t = run_compare(c, dir);
  REQUIRE(t.runs.size() == 6);
  for (const auto& r : t.runs) CHECK(r.data_checksum == t.runs[0].data_checksum);

  for (std::size_t m = 0; m < c.methods.size(); ++m) {
    std::map<int, std::vector<double>> acc;  // group -> per-seed final accuracy
    for (std::uint64_t s = c.federation.seed; s < c.federation.seed + 3; ++s) {
      const auto rows = lines_of(dir / to_string(c.methods[m]) / ("seed_" + std::to_string(s)) / "metrics.csv");
      for (const auto& row : rows) {
        const auto f = split(row, ',');
        if (f.size() == 9 && f[0] == std::to_string(c.federation.rounds - 1) && f[2] == "-1" && f[3] == "test")
          acc[std::stoi(f[1])].push_back(std::stod(f[5]));
      }
    }
    REQUIRE(acc.size() == c.data.groups.size());
    for (const auto& [g, v] : acc) {
      REQUIRE(v.size() == 3);
      const double mean = (v[0] + v[1] + v[2]) / 3.0;
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      const CompareCell& cell = t.cells[m][static_cast<std::size_t>(g)];
      CHECK(cell.runs == 3);
      CHECK(cell.mean == doctest::Approx(mean).epsilon(1e-7));
      CHECK(cell.sd == doctest::Approx(std::sqrt(ss / 2.0)).epsilon(1e-7));
    }
  }

  // Schema: every CSV row re-parses with the header's column count.
  const auto csv = lines_of(dir / "comparison.csv");
  REQUIRE(csv.size() == 1 + 2 * (c.data.groups.size() + 1));
  CHECK(csv[0] == "method,column,image_size,num_classes,mean,sd,runs,failed");
  for (std::size_t i = 1; i < csv.size(); ++i) {
    const auto f = split(csv[i], ',');
    REQUIRE(f.size() == 8);
    CHECK_NOTHROW(parse_method(f[0]));
    CHECK(std::isfinite(std::stod(f[4])));
    CHECK(std::stoi(f[6]) == 3);
  }
  const auto metrics = lines_of(dir / "scalablefl" / "seed_2" / "metrics.csv");
  CHECK(metrics[0] == kMetricsHeader);
  for (const auto& row : metrics) CHECK(split(row, ',').size() == 9);
  for (const auto& row : lines_of(dir / "scalablefl" / "seed_2" / "gap.csv")) CHECK(split(row, ',').size() == 10);
  CHECK(parse_config(std::string(std::istreambuf_iterator<char>(std::ifstream(dir / "config.ini").rdbuf()), {})) == c);
}

TEST_CASE("HeteroFL and ScalableFL rows share one dataset") {
  ExperimentConfig c = parse_config(R"(
[design]
base_classes = 10
base_feature_size = 4
base_widths = 16, 32, 64
[federation]
methods = scalablefl, heterofl
heterofl_depth = 3
rounds = 1
participation = 1
local_iters = 1
batch_size = 4
[data]
master_classes = 10
master_resolution = 32
group = 32, 10, 1, 10, 10
group = 16, 6, 1, 6, 6
group = 8, 6, 1, 6, 6
)");
  const auto t = run_compare(c, {});
  REQUIRE(t.runs.size() == 2);
  for (const auto& r : t.runs) CHECK_FALSE(r.failed);
  CHECK(t.runs[0].data_checksum == t.runs[1].data_checksum);
  const std::string text = format_compare_text(t);
  CHECK(text.find("scalablefl") != std::string::npos);
  CHECK(text.find("heterofl") != std::string::npos);
}

TEST_CASE("failed runs are marked, not thrown") {
  ExperimentConfig c = parse_config(kTiny);
  c.methods = {Method::scalablefl, Method::heterofl};
  c.federation.heterofl_depth = 1;  // the 2-stage client cannot reach parity in one stage
  const auto t = run_compare(c, {});
  REQUIRE(t.runs.size() == 2);
  CHECK_FALSE(t.runs[0].failed);
  CHECK(t.runs[1].failed);
  CHECK(format_compare_text(t).find("FAILED") != std::string::npos);
}

TEST_CASE("print_arch") {
  ExperimentConfig img = parse_config(R"(
[design]
base_classes = 1000
base_feature_size = 8
base_widths = 64, 64, 128, 256, 512
[data]
master_classes = 1000
master_resolution = 256
group = 256, 1000, 1, 1000, 1
group = 128, 200, 1, 200, 1
)");
  // 192 px does not divide 256 by a power of two, so the table is checked with the designer's own profiles.
  const std::string t = print_arch(img);
  CHECK(t.find("3x3, 64, stride 2") != std::string::npos);
  CHECK(t.find("3x3, 50, stride 2") != std::string::npos);
  CHECK(t.find("1000-d fc") != std::string::npos);
  const std::vector<ClientProfile> ps{{0, 256, 1000, 1, 0}, {1, 192, 500, 1, 1}, {2, 128, 200, 1, 2}, {3, 96, 100, 1, 3}};
  const std::string full = format_arch_table(ps, img.design);
  for (const char* w : {"3x3, 58, stride 2", "3x3, 43, stride 2"}) CHECK(full.find(w) != std::string::npos);

  ExperimentConfig fig = parse_config(R"(
[design]
base_classes = 10
base_feature_size = 8
base_widths = 32, 64, 128, 256
[data]
master_classes = 10
master_resolution = 128
group = 128, 10, 1, 10, 1
group = 64, 5, 1, 5, 1
group = 32, 2, 1, 2, 1
)");
  const auto rows = split(print_arch(fig), '\n');
  bool stages = false;
  for (const auto& r : rows)
    if (r.rfind("# of stages", 0) == 0) {
      const auto f = split(r, '|');
      REQUIRE(f.size() == 6);
      CHECK(f[2].find('4') != std::string::npos);
      CHECK(f[3].find('3') != std::string::npos);
      CHECK(f[4].find('2') != std::string::npos);
      CHECK(f[5].find('4') != std::string::npos);
      stages = true;
    }
  CHECK(stages);

  ExperimentConfig one = parse_config("[data]\ngroup = 32, 10, 1, 10, 1\n");
  for (const auto& r : split(print_arch(one), '\n')) {
    const auto f = split(r, '|');
    if (f.size() == 4 && r.find("---") == std::string::npos && r.rfind("layer", 0) != 0) {
      auto trim = [](std::string s) {
        while (!s.empty() && s.back() == ' ') s.pop_back();
        while (!s.empty() && s.front() == ' ') s.erase(s.begin());
        return s;
      };
      CHECK(trim(f[2]) == trim(f[3]));
    }
  }
}

TEST_CASE("selftest passes") {
  for (const auto& r : selftest(3)) {
    CAPTURE(r.name);
    CAPTURE(r.detail);
    CHECK(r.passed);
  }
}
