// SPDX-License-Identifier: Apache-2.0
#include "sfl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace sfl {

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out.flush()) throw std::runtime_error("cannot write '" + path.string() + "'");
}

std::string group_label(const GroupSpec& g) {
  return "H=" + std::to_string(g.image_size) + " K=" + std::to_string(g.num_classes);
}

std::string fixed(double v, int digits) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

ExperimentResult run_single(const ExperimentConfig& config, const FederatedData& data,
                            const std::filesystem::path& out_dir, std::ostream* log) {
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_text(out_dir / "config.ini", render_config(config));
    if (config.export_data) export_dataset(data, out_dir / "data");
  }
  auto on_round = [&](const RoundReport& r) {
    if (!log || !r.evaluated) return;
    *log << to_string(config.federation.method) << " seed " << config.federation.seed << " round " << r.round + 1
         << '/' << config.federation.rounds;
    for (const auto& e : r.eval) *log << "  g" << e.group_id << " acc " << fixed(100.0 * e.test_accuracy, 2);
    *log << '\n';
  };
  return run_experiment(config.federation, config.design, data, out_dir, on_round);
}

void summarize(CompareTable& table) {
  const std::size_t columns = table.groups.size() + 1;
  table.cells.assign(table.methods.size(), std::vector<CompareCell>(columns));
  for (std::size_t m = 0; m < table.methods.size(); ++m) {
    std::vector<std::vector<double>> values(columns);
    int failed = 0;
    for (const auto& run : table.runs) {
      if (run.method != table.methods[m]) continue;
      if (run.failed) {
        ++failed;
        continue;
      }
      double sum = 0.0;
      for (std::size_t g = 0; g < table.groups.size(); ++g) {
        values[g].push_back(run.group_accuracy.at(g));
        sum += run.group_accuracy[g];
      }
      values.back().push_back(sum / static_cast<double>(table.groups.size()));
    }
    for (std::size_t c = 0; c < columns; ++c) {
      CompareCell& cell = table.cells[m][c];
      cell.failed = failed;
      cell.runs = static_cast<int>(values[c].size());
      if (values[c].empty()) continue;
      double s = 0.0;
      for (double v : values[c]) s += v;
      cell.mean = s / cell.runs;
      if (cell.runs > 1) {
        double ss = 0.0;
        for (double v : values[c]) ss += (v - cell.mean) * (v - cell.mean);
        cell.sd = std::sqrt(ss / (cell.runs - 1));
      }
    }
  }
}

std::string format_compare_csv(const CompareTable& table) {
  std::ostringstream os;
  os << "method,column,image_size,num_classes,mean,sd,runs,failed\n";
  for (std::size_t m = 0; m < table.methods.size(); ++m)
    for (std::size_t c = 0; c < table.cells[m].size(); ++c) {
      const auto& cell = table.cells[m][c];
      const bool avg = c == table.groups.size();
      os << to_string(table.methods[m]) << ',' << (avg ? std::string("avg") : "group" + std::to_string(c)) << ','
         << (avg ? -1 : table.groups[c].image_size) << ',' << (avg ? -1 : table.groups[c].num_classes) << ',';
      if (cell.runs == 0)
        os << "nan,nan";
      else
        os << fixed(100.0 * cell.mean, 4) << ',' << fixed(100.0 * cell.sd, 4);
      os << ',' << cell.runs << ',' << cell.failed << '\n';
    }
  return os.str();
}

std::string format_compare_text(const CompareTable& table) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"method"};
  for (const auto& g : table.groups) header.push_back(group_label(g));
  header.push_back("avg");
  rows.push_back(header);
  for (std::size_t m = 0; m < table.methods.size(); ++m) {
    std::vector<std::string> row{to_string(table.methods[m])};
    for (const auto& cell : table.cells[m]) {
      std::string text = cell.runs == 0 ? "FAILED"
                                        : fixed(100.0 * cell.mean, 2) + " +- " + fixed(100.0 * cell.sd, 2);
      if (cell.runs > 0 && cell.failed > 0) text += " (" + std::to_string(cell.failed) + " failed)";
      row.push_back(text);
    }
    rows.push_back(row);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream os;
  os << "test accuracy [%], mean +- SD over seeds\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const auto pad = width[c] - rows[r][c].size();
      os << (c ? " | " : "") << (c ? std::string(pad, ' ') + rows[r][c] : rows[r][c] + std::string(pad, ' '));
    }
    os << '\n';
    if (r == 0) {
      for (std::size_t c = 0; c < width.size(); ++c) os << (c ? "-+-" : "") << std::string(width[c], '-');
      os << '\n';
    }
  }
  return os.str();
}

CompareTable run_compare(const ExperimentConfig& config, const std::filesystem::path& out_dir, std::ostream* log) {
  config.validate();
  const FederatedData data = generate(config.data);
  CompareTable table;
  table.groups = config.data.groups;
  table.methods = config.methods;
  for (Method method : config.methods) {
    for (int r = 0; r < config.repeats; ++r) {
      ExperimentConfig run_config = config;
      run_config.federation.method = method;
      run_config.federation.seed = config.federation.seed + static_cast<std::uint64_t>(r);
      CompareRun run{method, run_config.federation.seed, false, {}, {}, 0};
      const auto run_dir = out_dir.empty() ? std::filesystem::path{}
                                           : out_dir / to_string(method) / ("seed_" + std::to_string(run.seed));
      try {
        const ExperimentResult result = run_single(run_config, data, run_dir, log);
        for (const auto& e : result.reports.back().eval) run.group_accuracy.push_back(e.test_accuracy);
        run.data_checksum = result.data_checksum;
      } catch (const std::exception& e) {
        run.failed = true;
        run.error = e.what();
        if (log) *log << to_string(method) << " seed " << run.seed << " failed: " << e.what() << '\n';
      }
      table.runs.push_back(std::move(run));
    }
  }
  summarize(table);
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_text(out_dir / "comparison.csv", format_compare_csv(table));
    write_text(out_dir / "comparison.txt", format_compare_text(table));
    write_text(out_dir / "config.ini", render_config(config));
  }
  return table;
}

std::string print_arch(const ExperimentConfig& config) {
  config.validate();
  const auto profiles = client_profiles(config.data);
  return format_arch_table(profiles, config.design);
}

namespace {

std::vector<ClientProfile> make_profiles(const std::vector<std::pair<int, int>>& hk) {
  std::vector<ClientProfile> out;
  for (std::size_t i = 0; i < hk.size(); ++i)
    out.push_back({static_cast<int>(i), hk[i].first, hk[i].second, 100, static_cast<int>(i)});
  return out;
}

std::vector<int> widths_of(const ModelSpec& spec) {
  std::vector<int> w;
  for (const auto& s : spec.stages) w.push_back(s.out_channels);
  return w;
}

template <class T>
std::string list(const std::vector<T>& v) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  os << ')';
  return os.str();
}

CheckResult check_imagenet_tables() {
  const DesignBase base{1000, 8, {64, 64, 128, 256, 512}, 3, BlockKind::plain};
  const auto profiles = make_profiles({{256, 1000}, {192, 500}, {128, 200}, {96, 100}});
  const std::vector<int> stages{5, 5, 4, 4};
  const std::vector<double> ratios{1.0, 0.9, 0.77, 0.67};
  const std::vector<std::vector<int>> widths{
      {64, 64, 128, 256, 512}, {58, 58, 116, 231, 461}, {50, 50, 99, 197}, {43, 43, 86, 171}};
  CheckResult r{"imagenet stage/ratio/width tables", true, {}};
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    const ModelSpec s = design_local(profiles[i], base);
    const double rounded = std::round(s.ratio * 100.0) / 100.0;
    if (s.depth() != stages[i] || std::abs(rounded - ratios[i]) > 1e-9 || widths_of(s) != widths[i]) {
      r.passed = false;
      r.detail += "client " + std::to_string(i) + ": depth " + std::to_string(s.depth()) + " ratio " + fixed(s.ratio, 4) +
                  " widths " + list(widths_of(s)) + "; ";
    }
  }
  if (r.passed) r.detail = "stages (5,5,4,4), ratios (1.0,0.9,0.77,0.67), widths match";
  return r;
}

CheckResult check_detection_table() {
  const DesignBase base{80, 4, {64, 64, 128, 256, 512, 512, 512}, 3, BlockKind::plain};
  const auto profiles = make_profiles({{512, 80}, {256, 20}});
  const ModelSpec a = design_local(profiles[0], base);
  const ModelSpec b = design_local(profiles[1], base);
  const bool ok = a.depth() == 7 && b.depth() == 6 && std::abs(std::round(b.ratio * 100) / 100 - 0.68) < 1e-9;
  return {"detection stage counts", ok,
          "stages (" + std::to_string(a.depth()) + "," + std::to_string(b.depth()) + "), ratio " + fixed(b.ratio, 3)};
}

CheckResult check_worked_example() {
  const DesignBase base{10, 8, {32, 64, 128, 256}, 3, BlockKind::plain};
  const auto profiles = make_profiles({{128, 10}, {64, 5}, {32, 2}});
  std::vector<int> depths;
  for (const auto& p : profiles) depths.push_back(design_local(p, base).depth());
  const ModelSpec g = design_global(profiles, base);
  const bool ok = depths == std::vector<int>{4, 3, 2} && widths_of(g) == std::vector<int>{32, 64, 128, 256};
  return {"three-client worked example", ok, "depths " + list(depths) + ", global widths " + list(widths_of(g))};
}

CheckResult check_heterofl_ratio() {
  const DesignBase base{1000, 8, {64, 64, 128, 256, 512}, 3, BlockKind::plain};
  const auto profiles = make_profiles({{256, 1000}, {192, 500}, {128, 200}, {96, 100}});
  const auto designs = design_heterofl_baseline(profiles, base, 4);
  const double ratio = designs[0].ratio;
  return {"width-only parity ratio (4 stages)", std::abs(ratio - 2.0) <= 0.1, "ratio " + fixed(ratio, 3)};
}

Tensor random_tensor(const Dims& dims, Rng& rng) {
  Tensor t(dims);
  std::normal_distribution<float> nd(0.0f, 1.0f);
  for (auto& v : t.data()) v = nd(rng);
  return t;
}

CheckResult check_aggregation_oracle(std::uint64_t seed, int families) {
  CheckResult r{"slicing/aggregation oracle", true, {}};
  for (int f = 0; f < families && r.passed; ++f) {
    Rng rng = make_rng(seed, "selftest-agg", static_cast<std::uint64_t>(f));
    auto dim = [&](std::size_t hi) { return std::uniform_int_distribution<std::size_t>(1, hi)(rng); };
    NamedTensorSpace space;
    const int n_tensors = static_cast<int>(dim(3));
    for (int t = 0; t < n_tensors; ++t) {
      const Dims d = t == 0 ? Dims{dim(32), dim(32), 3, 3} : Dims{dim(32)};
      space.add("t" + std::to_string(t), random_tensor(d, rng));
    }
    const int n_clients = static_cast<int>(dim(6));
    SliceMap map;
    std::vector<ClientUpdate> updates;
    for (int c = 0; c < n_clients; ++c) {
      std::vector<SliceEntry> slices;
      NamedTensors tensors;
      for (const auto& e : space.entries()) {
        Dims sub = e.tensor.dims();
        for (std::size_t a = 0; a < sub.size(); ++a) sub[a] = dim(sub[a]);
        slices.push_back({e.name, sub});
        tensors.push_back({e.name, random_tensor(sub, rng)});
      }
      map.assign(c, slices);
      updates.push_back({c, tensors, 1.0});
    }
    const NamedTensorSpace before = space;
    NamedTensorSpace identity = space;
    std::vector<ClientUpdate> unchanged;
    for (int c = 0; c < n_clients; ++c) unchanged.push_back({c, extract(space, map, c), 1.0});
    aggregate(identity, unchanged, map);
    if (!identity.bitwise_equal(before)) {
      r.passed = false;
      r.detail = "family " + std::to_string(f) + ": extract-then-aggregate changed the store";
      break;
    }
    aggregate(space, updates, map);
    for (const auto& e : before.entries()) {
      const Tensor& g = e.tensor;
      const Dims& gd = g.dims();
      Dims pad = gd;
      pad.resize(4, 1);
      for (std::size_t i0 = 0; i0 < pad[0]; ++i0)
        for (std::size_t i1 = 0; i1 < pad[1]; ++i1)
          for (std::size_t i2 = 0; i2 < pad[2]; ++i2)
            for (std::size_t i3 = 0; i3 < pad[3]; ++i3) {
              const std::size_t idx[4] = {i0, i1, i2, i3};
              long double sum = 0.0L;
              int count = 0;
              for (const auto& u : updates) {
                const Tensor* sub = nullptr;
                for (const auto& t : u.tensors)
                  if (t.name == e.name) sub = &t.tensor;
                const Dims& sd = sub->dims();
                bool covered = true;
                std::size_t flat = 0;
                for (std::size_t a = 0; a < sd.size(); ++a) {
                  covered = covered && idx[a] < sd[a];
                  flat = flat * sd[a] + idx[a];
                }
                if (!covered) continue;
                sum += (*sub)[flat];
                ++count;
              }
              std::size_t gflat = 0;
              for (std::size_t a = 0; a < gd.size(); ++a) gflat = gflat * gd[a] + idx[a];
              const double expected = count ? static_cast<double>(sum / count) : g[gflat];
              const double got = space.at(e.name)[gflat];
              if (std::memcmp(&expected, &got, sizeof(double)) != 0) {
                r.passed = false;
                r.detail = "family " + std::to_string(f) + " tensor " + e.name + " element " + std::to_string(gflat);
              }
            }
    }
  }
  if (r.passed) r.detail = std::to_string(families) + " random families bit-exact";
  return r;
}

}  // namespace

std::vector<CheckResult> selftest(std::uint64_t seed) {
  std::vector<CheckResult> out;
  auto guarded = [&](const std::string& name, auto&& fn) {
    try {
      out.push_back(fn());
    } catch (const std::exception& e) {
      out.push_back({name, false, std::string("threw: ") + e.what()});
    }
  };
  guarded("imagenet tables", check_imagenet_tables);
  guarded("detection table", check_detection_table);
  guarded("worked example", check_worked_example);
  guarded("width-only parity", check_heterofl_ratio);
  guarded("aggregation oracle", [&] { return check_aggregation_oracle(seed, 200); });
  return out;
}

}  // namespace sfl
