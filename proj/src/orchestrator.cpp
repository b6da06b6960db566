// SPDX-License-Identifier: Apache-2.0
#include "sfl/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numbers>
#include <thread>

namespace sfl {

std::string to_string(Method method) {
  switch (method) {
    case Method::scalablefl: return "scalablefl";
    case Method::heterofl: return "heterofl";
    case Method::fedavg_homogeneous: return "fedavg_homogeneous";
    case Method::individual: return "individual";
  }
  return "?";
}

Method parse_method(const std::string& text) {
  if (text == "scalablefl") return Method::scalablefl;
  if (text == "heterofl") return Method::heterofl;
  if (text == "fedavg_homogeneous" || text == "fedavg") return Method::fedavg_homogeneous;
  if (text == "individual") return Method::individual;
  throw std::invalid_argument("unknown method '" + text + "' (expected scalablefl | heterofl | fedavg_homogeneous | individual)");
}

std::string to_string(LrSchedule schedule) {
  switch (schedule) {
    case LrSchedule::cosine: return "cosine";
    case LrSchedule::step: return "step";
    case LrSchedule::constant: return "constant";
  }
  return "?";
}

LrSchedule parse_schedule(const std::string& text) {
  if (text == "cosine") return LrSchedule::cosine;
  if (text == "step") return LrSchedule::step;
  if (text == "constant") return LrSchedule::constant;
  throw std::invalid_argument("unknown lr schedule '" + text + "' (expected cosine | step | constant)");
}

void FedConfig::validate() const {
  if (rounds < 1) throw std::invalid_argument("rounds must be >= 1");
  if (!(participation > 0.0 && participation <= 1.0)) throw std::invalid_argument("participation must be in (0, 1]");
  if (local_iters < 1) throw std::invalid_argument("local_iters must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(lr >= 0.0)) throw std::invalid_argument("lr must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be >= 0");
  if (method == Method::heterofl && heterofl_depth < 1)
    throw std::invalid_argument("heterofl needs heterofl_depth >= 1");
  if (threads < 1) throw std::invalid_argument("threads must be >= 1");
  if (eval_every < 0) throw std::invalid_argument("eval_every must be >= 0");
}

double adjust_lr(int round, int total_rounds, double base_lr, LrSchedule schedule) {
  switch (schedule) {
    case LrSchedule::cosine:
      return base_lr * (1.0 + std::cos(std::numbers::pi * round / total_rounds)) / 2.0;
    case LrSchedule::step: {
      double lr = base_lr;
      if (10LL * round >= 7LL * total_rounds) lr *= 0.1;
      if (10LL * round >= 9LL * total_rounds) lr *= 0.1;
      return lr;
    }
    case LrSchedule::constant:
      return base_lr;
  }
  return base_lr;
}

std::size_t group_sample_size(std::size_t group_size, double participation) {
  const auto k = static_cast<std::size_t>(std::llround(participation * static_cast<double>(group_size)));
  return std::clamp<std::size_t>(k, 1, group_size);
}

std::vector<int> select_clients(const std::map<int, std::vector<int>>& groups, double participation, Rng& rng) {
  std::vector<int> selected;
  for (const auto& [gid, members] : groups) {
    if (members.empty()) throw std::invalid_argument("group " + std::to_string(gid) + " has no clients");
    std::vector<int> pool = members;
    const std::size_t k = group_sample_size(pool.size(), participation);
    // Partial Fisher-Yates: the first k slots are a uniform k-subset.
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    selected.insert(selected.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
  }
  std::sort(selected.begin(), selected.end());
  return selected;
}

Federation build_federation(const FedConfig& config, const DesignBase& base, const FederatedData& data) {
  config.validate();
  base.validate();
  validate_profiles(data.profiles, base);
  if (data.train.size() != data.profiles.size()) throw std::invalid_argument("one training split per client required");

  Federation fed;
  fed.config = config;
  fed.base = base;
  fed.group_classes = data.group_classes;
  for (std::size_t g = 1; g < data.group_classes.size(); ++g) {
    const auto& upper = data.group_classes[g - 1];
    const auto& lower = data.group_classes[g];
    if (lower.size() > upper.size() || !std::equal(lower.begin(), lower.end(), upper.begin())) fed.nested_labels = false;
  }

  std::vector<ModelSpec> specs;
  switch (config.method) {
    case Method::scalablefl:
    case Method::individual:
      for (const auto& p : data.profiles) specs.push_back(design_local(p, base));
      break;
    case Method::heterofl:
      for (auto& h : design_heterofl_baseline(data.profiles, base, config.heterofl_depth)) specs.push_back(h.spec);
      break;
    case Method::fedavg_homogeneous: {
      const ModelSpec shared = design_global(data.profiles, base);
      for (const auto& p : data.profiles) {
        ModelSpec s = shared;
        s.image_size = p.image_size;
        s.num_classes = p.num_classes;
        s.head_features = s.stages.empty() ? s.input_channels : s.stages.back().out_channels;
        specs.push_back(s);
      }
      break;
    }
  }
  for (auto& s : specs) {
    s.private_bn = config.local_bn;
    s.private_head = config.local_head;
  }
  fed.global_spec = enclosing_spec(specs);
  fed.space = init_global(fed.global_spec, derive_seed(config.seed, "init"));

  for (std::size_t i = 0; i < data.profiles.size(); ++i) {
    const auto& p = data.profiles[i];
    if (p.client_id != static_cast<int>(i)) throw std::invalid_argument("client ids must be 0..N-1 in order");
    register_client(fed.slices, fed.space, p.client_id, specs[i]);
    ClientRecord rec;
    rec.profile = p;
    rec.spec = specs[i];
    rec.state = init_local_state(p.client_id, specs[i], fed.space);
    if (config.method == Method::individual) rec.own_weights = extract(fed.space, fed.slices, p.client_id);
    rec.train = &data.train[i];
    rec.test = static_cast<std::size_t>(p.group_id) < data.test.size() ? &data.test[static_cast<std::size_t>(p.group_id)] : nullptr;
    fed.groups[p.group_id].push_back(p.client_id);
    fed.clients.push_back(std::move(rec));
  }
  return fed;
}

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers. The first
// exception (by index) is rethrown after all workers finish.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) run(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) run(i);
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

NamedTensors current_weights(const Federation& fed, int client_id) {
  const auto& c = fed.clients.at(static_cast<std::size_t>(client_id));
  return fed.config.method == Method::individual ? c.own_weights : extract(fed.space, fed.slices, client_id);
}

}  // namespace

LocalModel client_model(const Federation& fed, int client_id) {
  const auto& c = fed.clients.at(static_cast<std::size_t>(client_id));
  return LocalModel(c.spec, current_weights(fed, client_id), c.state);
}

RoundReport run_round(Federation& fed, int round, std::vector<ClientUpdate>* updates_out) {
  const auto start = std::chrono::steady_clock::now();
  const FedConfig& cfg = fed.config;
  RoundReport report;
  report.round = round;
  report.lr = adjust_lr(round, cfg.rounds, cfg.lr, cfg.schedule);

  Rng rng = make_rng(cfg.seed, "select", static_cast<std::uint64_t>(round));
  const std::vector<int> selected = select_clients(fed.groups, cfg.participation, rng);
  for (int id : selected) report.selected[fed.clients[static_cast<std::size_t>(id)].profile.group_id].push_back(id);

  LocalHyper hyper;
  hyper.iterations = cfg.local_iters;
  hyper.batch_size = cfg.batch_size;
  hyper.sgd = {report.lr, cfg.momentum, cfg.weight_decay};
  hyper.persist_momentum = cfg.persist_momentum;

  struct Outcome {
    LocalState state;
    LocalUpdateResult result;
  };
  std::vector<Outcome> outcomes(selected.size());
  parallel_for(selected.size(), cfg.threads, [&](std::size_t i) {
    const int id = selected[i];
    const ClientRecord& c = fed.clients[static_cast<std::size_t>(id)];
    LocalState state = c.state;
    LocalModel model(c.spec, current_weights(fed, id), state);
    auto result = local_update(model, state, *c.train, hyper,
                               derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(id)));
    outcomes[i] = {std::move(state), std::move(result)};
  });

  std::vector<ClientUpdate> updates;
  updates.reserve(selected.size());
  for (std::size_t i = 0; i < selected.size(); ++i)
    updates.push_back({selected[i], outcomes[i].result.shared,
                       static_cast<double>(fed.clients[static_cast<std::size_t>(selected[i])].profile.num_samples)});
  if (cfg.method != Method::individual) aggregate(fed.space, updates, fed.slices, {cfg.weighted_aggregation});

  for (std::size_t i = 0; i < selected.size(); ++i) {
    ClientRecord& c = fed.clients[static_cast<std::size_t>(selected[i])];
    c.state = std::move(outcomes[i].state);
    if (cfg.method == Method::individual) c.own_weights = outcomes[i].result.shared;
    report.clients.push_back({c.profile.client_id, c.profile.group_id, outcomes[i].result.metrics.mean_loss,
                              outcomes[i].result.metrics.accuracy});
  }
  if (updates_out) *updates_out = std::move(updates);
  report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return report;
}

void evaluate_round(Federation& fed, RoundReport& report) {
  report.evaluated = true;
  report.eval.clear();
  std::vector<double> train_losses, test_losses;
  std::vector<std::size_t> counts;
  std::vector<double> accs;
  for (const auto& [gid, members] : fed.groups) {
    GroupEval ge;
    ge.group_id = gid;
    std::vector<EvalResult> train_res(members.size()), test_res(members.size());
    parallel_for(members.size(), fed.config.threads, [&](std::size_t i) {
      LocalModel model = client_model(fed, members[i]);
      const auto& c = fed.clients[static_cast<std::size_t>(members[i])];
      train_res[i] = evaluate(model, *c.train);
      if (c.test) test_res[i] = evaluate(model, *c.test);
    });
    std::size_t n = 0;
    for (std::size_t i = 0; i < members.size(); ++i) {
      ge.train_loss += train_res[i].loss;
      ge.test_loss += test_res[i].loss;
      ge.test_accuracy += test_res[i].accuracy;
      n += fed.clients[static_cast<std::size_t>(members[i])].train->size();
    }
    const auto m = static_cast<double>(members.size());
    ge.train_loss /= m;
    ge.test_loss /= m;
    ge.test_accuracy /= m;
    report.eval.push_back(ge);
    train_losses.push_back(ge.train_loss);
    test_losses.push_back(ge.test_loss);
    counts.push_back(n);
    accs.push_back(ge.test_accuracy);
  }
  report.gap = weighted_gap(train_losses, test_losses, counts);
  for (std::size_t i = 0; i < accs.size(); ++i) report.gap.tasks[i].accuracy = accs[i];

  // Discrepancy levels run from the smallest label set (last group) up to
  // the largest; each level is its group's lowest-id client model.
  report.level_groups.clear();
  report.gap.rhat.clear();
  if (!fed.nested_labels) return;
  std::vector<int> level_groups;
  for (auto it = fed.groups.rbegin(); it != fed.groups.rend(); ++it) level_groups.push_back(it->first);
  std::vector<LocalModel> models;
  std::vector<NestedLevel> levels;
  std::vector<Dataset> task_data;
  models.reserve(level_groups.size());
  for (int gid : level_groups) {
    const int canonical = fed.groups.at(gid).front();
    models.push_back(client_model(fed, canonical));
    task_data.push_back(*fed.clients[static_cast<std::size_t>(canonical)].test);
  }
  for (std::size_t j = 0; j < level_groups.size(); ++j) {
    LocalModel* m = &models[j];
    levels.push_back({m->spec().image_size, fed.group_classes.at(static_cast<std::size_t>(level_groups[j])),
                      [m](const Tensor& x) { return m->logits(x); }});
  }
  report.level_groups = level_groups;
  for (std::size_t j = 1; j <= levels.size(); ++j) report.gap.rhat.push_back(discrepancy_radius(j, levels, task_data));
}

NamedTensors client_snapshot(const ClientRecord& client) {
  NamedTensors out = client.state.private_params;
  for (const auto& [prefix, stats] : client.state.bn_stats) {
    out.push_back({prefix + ".running_mean", stats.mean});
    out.push_back({prefix + ".running_var", stats.var});
  }
  for (const auto& t : client.own_weights) out.push_back(t);
  return out;
}

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void write_metrics_rows(std::ostream& os, const RoundReport& r) {
  const std::string lr = num(r.lr);
  const std::string wall = num(r.wall_ms);
  const std::string tail = "," + lr + ",nan," + wall + "\n";
  std::map<int, std::pair<double, double>> group_sum;
  std::map<int, int> group_n;
  for (const auto& c : r.clients) {
    os << r.round << ',' << c.group_id << ',' << c.client_id << ",train," << num(c.loss) << ',' << num(c.accuracy) << tail;
    group_sum[c.group_id].first += c.loss;
    group_sum[c.group_id].second += c.accuracy;
    ++group_n[c.group_id];
  }
  for (const auto& [gid, s] : group_sum)
    os << r.round << ',' << gid << ",-1,train," << num(s.first / group_n[gid]) << ',' << num(s.second / group_n[gid]) << tail;
  if (!r.evaluated) return;
  for (const auto& e : r.eval)
    os << r.round << ',' << e.group_id << ",-1,test," << num(e.test_loss) << ',' << num(e.test_accuracy) << tail;
  for (std::size_t j = 0; j < r.gap.rhat.size(); ++j)
    os << r.round << ',' << r.level_groups[j] << ",-1,rhat,nan,nan," << lr << ',' << num(r.gap.rhat[j]) << ',' << wall
       << '\n';
}

void write_gap_rows(std::ostream& os, const RoundReport& r) {
  if (!r.evaluated) return;
  for (std::size_t m = 0; m < r.gap.tasks.size(); ++m) {
    const auto& t = r.gap.tasks[m];
    os << r.round << ",task," << m + 1 << ',' << r.eval[m].group_id << ',' << t.n << ',' << num(t.alpha) << ','
       << num(t.train_loss) << ',' << num(t.test_loss) << ',' << num(t.accuracy) << ",nan\n";
  }
  std::size_t total = 0;
  for (const auto& t : r.gap.tasks) total += t.n;
  os << r.round << ",aggregate,0,-1," << total << ",1," << num(r.gap.train_loss) << ',' << num(r.gap.test_loss) << ','
     << num(r.gap.gap) << ",nan\n";
  for (std::size_t j = 0; j < r.gap.rhat.size(); ++j)
    os << r.round << ",level," << j + 1 << ',' << r.level_groups[j] << ",nan,nan,nan,nan,nan," << num(r.gap.rhat[j]) << '\n';
}

ExperimentResult run_experiment(const FedConfig& config, const DesignBase& base, const FederatedData& data,
                                const std::filesystem::path& out_dir,
                                const std::function<void(const RoundReport&)>& on_round) {
  ExperimentResult result{{}, build_federation(config, base, data), dataset_checksum(data)};
  Federation& fed = result.federation;

  std::ofstream metrics, gap;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir / "clients");
    metrics.open(out_dir / "metrics.csv", std::ios::trunc);
    gap.open(out_dir / "gap.csv", std::ios::trunc);
    if (!metrics || !gap) throw std::runtime_error("cannot write metrics into '" + out_dir.string() + "'");
    metrics << kMetricsHeader << '\n';
    gap << kGapHeader << '\n';
  }

  for (int t = 0; t < config.rounds; ++t) {
    const auto start = std::chrono::steady_clock::now();
    RoundReport report = run_round(fed, t);
    const bool last = t + 1 == config.rounds;
    if (last || (config.eval_every > 0 && (t + 1) % config.eval_every == 0)) evaluate_round(fed, report);
    report.wall_ms = config.record_wall_clock
                         ? std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count()
                         : 0.0;
    if (metrics.is_open()) {
      write_metrics_rows(metrics, report);
      write_gap_rows(gap, report);
    }
    if (on_round) on_round(report);
    result.reports.push_back(std::move(report));
  }

  if (!out_dir.empty()) {
    if (!metrics.flush() || !gap.flush()) throw std::runtime_error("writing metrics into '" + out_dir.string() + "' failed");
    save_checkpoint(fed.space, out_dir / "global.sfl");
    for (const auto& c : fed.clients)
      write_tensor_file(out_dir / "clients" / ("client_" + std::to_string(c.profile.client_id) + ".sfl"),
                        client_snapshot(c));
  }
  return result;
}

}  // namespace sfl
