// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "sfl/config.hpp"

namespace sfl {

/// Single run of `config.federation.method`; writes the run artifacts and a
/// config snapshot (config.ini) under `out_dir`.
ExperimentResult run_single(const ExperimentConfig& config, const FederatedData& data,
                            const std::filesystem::path& out_dir, std::ostream* log = nullptr);

struct CompareRun {
  Method method;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  std::vector<double> group_accuracy;  // final test accuracy per group
  std::uint32_t data_checksum = 0;
};

struct CompareCell {
  double mean = 0.0;
  double sd = 0.0;  // sample SD, 0 for a single run
  int runs = 0;
  int failed = 0;
};

struct CompareTable {
  std::vector<GroupSpec> groups;
  std::vector<Method> methods;
  std::vector<CompareRun> runs;
  std::vector<std::vector<CompareCell>> cells;  // [method][group], then the average column last
};

/// Runs every listed method for seeds seed .. seed + repeats - 1 on one
/// shared dataset. Failed runs are recorded, not rethrown. Writes
/// comparison.csv, comparison.txt and <method>/seed_<s>/ run directories
/// when `out_dir` is non-empty.
CompareTable run_compare(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                         std::ostream* log = nullptr);

/// Aggregates finished runs into mean +- SD cells.
void summarize(CompareTable& table);
std::string format_compare_csv(const CompareTable& table);
std::string format_compare_text(const CompareTable& table);

std::string print_arch(const ExperimentConfig& config);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Golden architecture tables, the HeteroFL parity ratio and randomized
/// slicing/aggregation oracles.
std::vector<CheckResult> selftest(std::uint64_t seed = 1);

}  // namespace sfl
