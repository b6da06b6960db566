// SPDX-License-Identifier: Apache-2.0
// Command-line entry point: run, compare, arch, dump, selftest.
#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "sfl/harness.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;
constexpr int kSelftestFailure = 3;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> threads;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool needs_out) {
  cmd->add_option("--config", o.config, "experiment config file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "override the federation and data seeds");
  cmd->add_option("--threads", o.threads, "local-update worker threads")->check(CLI::PositiveNumber);
  if (needs_out) cmd->add_option("--out", o.out, "output directory (overrides [output] dir)");
}

sfl::ExperimentConfig load(const CommonOptions& o) {
  sfl::ExperimentConfig c = sfl::load_config(o.config);
  if (o.seed) {
    c.federation.seed = *o.seed;
    c.data.seed = *o.seed;
  }
  if (o.threads) c.federation.threads = *o.threads;
  if (!o.out.empty()) c.out_dir = o.out;
  try {
    c.validate();
  } catch (const std::exception& e) {
    throw sfl::ConfigError(0, e.what());
  }
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scalable heterogeneous federated learning simulator"};
  app.require_subcommand(1);
  CommonOptions run_opts, compare_opts, arch_opts;
  std::string dump_path;
  std::uint64_t selftest_seed = 1;

  auto* run = app.add_subcommand("run", "train one method and write metrics and checkpoints");
  add_common(run, run_opts, true);
  auto* compare = app.add_subcommand("compare", "run every configured method over repeat seeds");
  add_common(compare, compare_opts, true);
  auto* arch = app.add_subcommand("arch", "print local and global architectures");
  add_common(arch, arch_opts, false);
  auto* dump = app.add_subcommand("dump", "list the tensors of a checkpoint file");
  dump->add_option("path", dump_path, "checkpoint file")->required();
  auto* self = app.add_subcommand("selftest", "golden tables and aggregation oracles");
  self->add_option("--seed", selftest_seed, "seed for the randomized oracles");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) {
      const auto config = load(run_opts);
      const auto data = sfl::generate(config.data);
      const auto result = sfl::run_single(config, data, config.out_dir, &std::cerr);
      const auto& last = result.reports.back();
      for (const auto& e : last.eval)
        std::cout << "group " << e.group_id << " test accuracy " << 100.0 * e.test_accuracy << "% loss " << e.test_loss
                  << '\n';
      std::cout << "outputs in " << config.out_dir.string() << '\n';
    } else if (*compare) {
      const auto config = load(compare_opts);
      const auto table = sfl::run_compare(config, config.out_dir, &std::cerr);
      std::cout << sfl::format_compare_text(table);
      for (const auto& r : table.runs)
        if (r.failed) std::cout << "failed: " << sfl::to_string(r.method) << " seed " << r.seed << ": " << r.error << '\n';
    } else if (*arch) {
      std::cout << sfl::print_arch(load(arch_opts));
    } else if (*dump) {
      std::cout << sfl::format_dump(sfl::read_tensor_file(dump_path));
    } else if (*self) {
      bool ok = true;
      for (const auto& c : sfl::selftest(selftest_seed)) {
        std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
        ok = ok && c.passed;
      }
      return ok ? kOk : kSelftestFailure;
    }
  } catch (const sfl::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}
