// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "sfl/arch.hpp"
#include "sfl/data.hpp"
#include "sfl/metrics.hpp"
#include "sfl/model.hpp"
#include "sfl/param_space.hpp"
#include "sfl/rng.hpp"
#include "sfl/trainer.hpp"

namespace sfl {

enum class Method { scalablefl, heterofl, fedavg_homogeneous, individual };
enum class LrSchedule { cosine, step, constant };

std::string to_string(Method method);
Method parse_method(const std::string& text);
std::string to_string(LrSchedule schedule);
LrSchedule parse_schedule(const std::string& text);

struct FedConfig {
  int rounds = 100;             // T
  double participation = 0.1;   // xi, per group
  int local_iters = 10;         // E
  int batch_size = 16;
  double lr = 0.1;              // eta_0
  LrSchedule schedule = LrSchedule::cosine;
  double momentum = 0.9;
  double weight_decay = 5e-4;   // conv/linear weights only
  std::uint64_t seed = 0;
  Method method = Method::scalablefl;
  int heterofl_depth = 0;       // fixed stage count for the width-only baseline
  bool local_bn = true;
  bool local_head = true;
  bool weighted_aggregation = false;
  bool persist_momentum = false;
  int threads = 1;
  int eval_every = 0;           // 0: evaluate only after the last round
  bool record_wall_clock = false;

  void validate() const;
  bool operator==(const FedConfig&) const = default;
};

/// Learning rate for round t in [0, T).
double adjust_lr(int round, int total_rounds, double base_lr, LrSchedule schedule);

/// Per-group sample size max(1, round(xi * |group|)).
std::size_t group_sample_size(std::size_t group_size, double participation);

/// Draws group_sample_size distinct clients uniformly from every group.
/// Returns the selected ids in ascending order.
std::vector<int> select_clients(const std::map<int, std::vector<int>>& groups, double participation, Rng& rng);

struct ClientRecord {
  ClientProfile profile;
  ModelSpec spec;
  LocalState state;
  NamedTensors own_weights;  // shared-tensor copy held by individually trained clients
  const Dataset* train = nullptr;
  const Dataset* test = nullptr;
};

/// Server store plus every client's plan and private state.
struct Federation {
  FedConfig config;
  DesignBase base;
  ModelSpec global_spec;
  NamedTensorSpace space;
  SliceMap slices;
  std::vector<ClientRecord> clients;            // indexed by client id
  std::map<int, std::vector<int>> groups;       // group id -> client ids
  std::vector<std::vector<int>> group_classes;  // from the data generator
  bool nested_labels = true;
};

/// Designs every client per `config.method`, builds the enclosing global
/// store and each client's initial private state. `data` must outlive the
/// federation.
Federation build_federation(const FedConfig& config, const DesignBase& base, const FederatedData& data);

struct ClientRoundStat {
  int client_id = 0;
  int group_id = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct GroupEval {
  int group_id = 0;
  double train_loss = 0.0;     // mean over the group's clients, own training data
  double test_loss = 0.0;      // mean over the group's clients, group test set
  double test_accuracy = 0.0;  // mean over the group's clients, group test set
};

struct RoundReport {
  int round = 0;
  double lr = 0.0;
  std::map<int, std::vector<int>> selected;  // group id -> selected client ids
  std::vector<ClientRoundStat> clients;
  bool evaluated = false;
  std::vector<GroupEval> eval;               // one per group when evaluated
  GapReport gap;                             // tasks = groups; rhat empty for non-nested labels
  std::vector<int> level_groups;             // group behind discrepancy level j at index j - 1
  double wall_ms = 0.0;
};

/// One communication round: select, local updates (possibly parallel),
/// then a single aggregation. A failing client aborts the round before any
/// state is committed. `updates_out` receives the submitted updates.
RoundReport run_round(Federation& fed, int round, std::vector<ClientUpdate>* updates_out = nullptr);

/// Evaluates every client model on its own training data and its group's
/// test set and fills eval, gap and discrepancy radii of `report`.
void evaluate_round(Federation& fed, RoundReport& report);

/// Reassembles client `client_id`'s current model.
LocalModel client_model(const Federation& fed, int client_id);

struct ExperimentResult {
  std::vector<RoundReport> reports;
  Federation federation;
  std::uint32_t data_checksum = 0;
};

/// Runs T rounds. When `out_dir` is non-empty writes metrics.csv, gap.csv,
/// global.sfl and clients/client_<id>.sfl there. `on_round` sees each
/// report as it is produced.
ExperimentResult run_experiment(const FedConfig& config, const DesignBase& base, const FederatedData& data,
                                const std::filesystem::path& out_dir = {},
                                const std::function<void(const RoundReport&)>& on_round = {});

inline constexpr const char* kMetricsHeader = "round,group,client,split,loss,accuracy,lr,rhat,wall_ms";
inline constexpr const char* kGapHeader = "round,kind,index,group,n,alpha,train_loss,test_loss,accuracy,rhat";

void write_metrics_rows(std::ostream& os, const RoundReport& report);
void write_gap_rows(std::ostream& os, const RoundReport& report);

/// Private tensors, BN statistics and (for individual training) weights of
/// one client, as named tensors.
NamedTensors client_snapshot(const ClientRecord& client);

}  // namespace sfl
