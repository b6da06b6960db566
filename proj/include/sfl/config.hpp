// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "sfl/arch.hpp"
#include "sfl/data.hpp"
#include "sfl/orchestrator.hpp"

namespace sfl {

/// Parse or validation failure; `line()` is 0 for whole-file problems.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(int line, const std::string& message);
  int line() const noexcept { return line_; }

 private:
  int line_;
};

struct ExperimentConfig {
  DesignBase design{10, 8, {16, 32, 64}, 3, BlockKind::plain};
  FedConfig federation;
  SyntheticTaskSpec data;
  std::vector<Method> methods{Method::scalablefl};  // compare runs
  int repeats = 1;                                  // compare runs, seeds seed .. seed + repeats - 1
  std::filesystem::path out_dir = "out";
  bool export_data = false;

  /// Cross-field checks (design vs data channels, group shape, FedConfig).
  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

/// Grammar, one statement per line:
///   [section]        one of design, federation, data, output
///   key = value      lists are comma separated
///   # comment        also ';'; blank lines ignored
/// `group = H, K, clients, train_per_client, test_size` in [data] may
/// repeat, one line per group in nonincreasing (H, K) order. If [data]
/// gives no seed it follows the federation seed.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical text form; parse_config(render_config(c)) == c.
std::string render_config(const ExperimentConfig& config);

}  // namespace sfl
