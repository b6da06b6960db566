// SPDX-License-Identifier: Apache-2.0
#include "sfl/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>

namespace sfl {

ConfigError::ConfigError(int line, const std::string& message)
    : std::runtime_error(line > 0 ? "config line " + std::to_string(line) + ": " + message : "config: " + message),
      line_(line) {}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(value);
  while (std::getline(is, item, ',')) out.push_back(trim(item));
  if (!value.empty() && value.back() == ',') out.emplace_back();
  return out;
}

template <class T>
T parse_integer(const std::string& text) {
  T v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
    throw std::invalid_argument("expected an integer, got '" + text + "'");
  return v;
}

int parse_int(const std::string& text, int min) {
  const int v = parse_integer<int>(text);
  if (v < min) throw std::invalid_argument("must be >= " + std::to_string(min) + ", got " + text);
  return v;
}

double parse_double(const std::string& text) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
    throw std::invalid_argument("expected a number, got '" + text + "'");
  if (!std::isfinite(v)) throw std::invalid_argument("must be finite");
  return v;
}

double parse_ranged(const std::string& text, double lo, double hi, bool lo_open, bool hi_open) {
  const double v = parse_double(text);
  const bool ok = (lo_open ? v > lo : v >= lo) && (hi_open ? v < hi : v <= hi);
  if (!ok) {
    std::ostringstream os;
    os << "must be in " << (lo_open ? '(' : '[') << lo << ", " << hi << (hi_open ? ')' : ']') << ", got " << text;
    throw std::invalid_argument(os.str());
  }
  return v;
}

bool parse_bool(const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw std::invalid_argument("expected true or false, got '" + text + "'");
}

// Shortest text that parses back to the same double.
std::string fmt(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fmt(bool v) { return v ? "true" : "false"; }

template <class T, class F>
std::string join(const std::vector<T>& items, F&& f) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + f(items[i]);
  return out;
}

struct Key {
  const char* section;
  const char* name;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<Key>& keys() {
  using C = ExperimentConfig;
  using S = const std::string&;
  static const std::vector<Key> table = {
      {"design", "base_classes", [](C& c, S v) { c.design.base_classes = parse_int(v, 2); },
       [](const C& c) { return std::to_string(c.design.base_classes); }},
      {"design", "base_feature_size", [](C& c, S v) { c.design.base_feature_size = parse_int(v, 1); },
       [](const C& c) { return std::to_string(c.design.base_feature_size); }},
      {"design", "base_widths",
       [](C& c, S v) {
         c.design.base_widths.clear();
         for (const auto& w : split_list(v)) c.design.base_widths.push_back(parse_int(w, 1));
         if (c.design.base_widths.empty()) throw std::invalid_argument("needs at least one width");
       },
       [](const C& c) { return join(c.design.base_widths, [](int w) { return std::to_string(w); }); }},
      {"design", "block", [](C& c, S v) { c.design.block = parse_block_kind(v); },
       [](const C& c) { return to_string(c.design.block); }},

      {"federation", "method", [](C& c, S v) { c.federation.method = parse_method(v); },
       [](const C& c) { return to_string(c.federation.method); }},
      {"federation", "methods",
       [](C& c, S v) {
         c.methods.clear();
         for (const auto& m : split_list(v)) c.methods.push_back(parse_method(m));
         if (c.methods.empty()) throw std::invalid_argument("needs at least one method");
       },
       [](const C& c) { return join(c.methods, [](Method m) { return to_string(m); }); }},
      {"federation", "repeats", [](C& c, S v) { c.repeats = parse_int(v, 1); },
       [](const C& c) { return std::to_string(c.repeats); }},
      {"federation", "seed", [](C& c, S v) { c.federation.seed = parse_integer<std::uint64_t>(v); },
       [](const C& c) { return std::to_string(c.federation.seed); }},
      {"federation", "rounds", [](C& c, S v) { c.federation.rounds = parse_int(v, 1); },
       [](const C& c) { return std::to_string(c.federation.rounds); }},
      {"federation", "participation", [](C& c, S v) { c.federation.participation = parse_ranged(v, 0, 1, true, false); },
       [](const C& c) { return fmt(c.federation.participation); }},
      {"federation", "local_iters", [](C& c, S v) { c.federation.local_iters = parse_int(v, 1); },
       [](const C& c) { return std::to_string(c.federation.local_iters); }},
      {"federation", "batch_size", [](C& c, S v) { c.federation.batch_size = parse_int(v, 1); },
       [](const C& c) { return std::to_string(c.federation.batch_size); }},
      {"federation", "lr",
       [](C& c, S v) { c.federation.lr = parse_ranged(v, 0, std::numeric_limits<double>::max(), false, false); },
       [](const C& c) { return fmt(c.federation.lr); }},
      {"federation", "schedule", [](C& c, S v) { c.federation.schedule = parse_schedule(v); },
       [](const C& c) { return to_string(c.federation.schedule); }},
      {"federation", "momentum", [](C& c, S v) { c.federation.momentum = parse_ranged(v, 0, 1, false, true); },
       [](const C& c) { return fmt(c.federation.momentum); }},
      {"federation", "weight_decay",
       [](C& c, S v) { c.federation.weight_decay = parse_ranged(v, 0, std::numeric_limits<double>::max(), false, false); },
       [](const C& c) { return fmt(c.federation.weight_decay); }},
      {"federation", "heterofl_depth", [](C& c, S v) { c.federation.heterofl_depth = parse_int(v, 0); },
       [](const C& c) { return std::to_string(c.federation.heterofl_depth); }},
      {"federation", "local_bn", [](C& c, S v) { c.federation.local_bn = parse_bool(v); },
       [](const C& c) { return fmt(c.federation.local_bn); }},
      {"federation", "local_head", [](C& c, S v) { c.federation.local_head = parse_bool(v); },
       [](const C& c) { return fmt(c.federation.local_head); }},
      {"federation", "weighted_aggregation", [](C& c, S v) { c.federation.weighted_aggregation = parse_bool(v); },
       [](const C& c) { return fmt(c.federation.weighted_aggregation); }},
      {"federation", "persist_momentum", [](C& c, S v) { c.federation.persist_momentum = parse_bool(v); },
       [](const C& c) { return fmt(c.federation.persist_momentum); }},
      {"federation", "threads", [](C& c, S v) { c.federation.threads = parse_int(v, 1); },
       [](const C& c) { return std::to_string(c.federation.threads); }},
      {"federation", "eval_every", [](C& c, S v) { c.federation.eval_every = parse_int(v, 0); },
       [](const C& c) { return std::to_string(c.federation.eval_every); }},
      {"federation", "record_wall_clock", [](C& c, S v) { c.federation.record_wall_clock = parse_bool(v); },
       [](const C& c) { return fmt(c.federation.record_wall_clock); }},

      {"data", "seed", [](C& c, S v) { c.data.seed = parse_integer<std::uint64_t>(v); },
       [](const C& c) { return std::to_string(c.data.seed); }},
      {"data", "master_classes", [](C& c, S v) { c.data.master_classes = parse_int(v, 1); },
       [](const C& c) { return std::to_string(c.data.master_classes); }},
      {"data", "master_resolution", [](C& c, S v) { c.data.master_resolution = parse_int(v, 1); },
       [](const C& c) { return std::to_string(c.data.master_resolution); }},
      {"data", "channels", [](C& c, S v) { c.data.channels = parse_int(v, 1); },
       [](const C& c) { return std::to_string(c.data.channels); }},
      {"data", "prototype_grid", [](C& c, S v) { c.data.prototype_grid = parse_int(v, 2); },
       [](const C& c) { return std::to_string(c.data.prototype_grid); }},
      {"data", "noise",
       [](C& c, S v) { c.data.noise = parse_ranged(v, 0, std::numeric_limits<double>::max(), false, false); },
       [](const C& c) { return fmt(c.data.noise); }},
      {"data", "max_shift", [](C& c, S v) { c.data.max_shift = parse_ranged(v, 0, 0.5, false, false); },
       [](const C& c) { return fmt(c.data.max_shift); }},
      {"data", "gain_spread", [](C& c, S v) { c.data.gain_spread = parse_ranged(v, 0, 1, false, true); },
       [](const C& c) { return fmt(c.data.gain_spread); }},
      {"data", "subset", [](C& c, S v) { c.data.subset = parse_subset_mode(v); },
       [](const C& c) { return to_string(c.data.subset); }},

      {"output", "dir", [](C& c, S v) {
         if (v.empty()) throw std::invalid_argument("must not be empty");
         c.out_dir = v;
       },
       [](const C& c) { return c.out_dir.string(); }},
      {"output", "export_data", [](C& c, S v) { c.export_data = parse_bool(v); },
       [](const C& c) { return fmt(c.export_data); }},
  };
  return table;
}

GroupSpec parse_group(const std::string& value) {
  const auto parts = split_list(value);
  if (parts.size() != 5)
    throw std::invalid_argument("group needs 5 fields (image_size, num_classes, clients, train_per_client, test_size)");
  return {parse_int(parts[0], 1), parse_int(parts[1], 1), parse_int(parts[2], 1), parse_int(parts[3], 1),
          parse_int(parts[4], 1)};
}

std::string render_group(const GroupSpec& g) {
  return std::to_string(g.image_size) + ", " + std::to_string(g.num_classes) + ", " + std::to_string(g.clients) + ", " +
         std::to_string(g.train_per_client) + ", " + std::to_string(g.test_size);
}

}  // namespace

void ExperimentConfig::validate() const {
  if (data.groups.empty()) throw std::invalid_argument("at least one [data] group is required");
  if (design.input_channels != data.channels) throw std::invalid_argument("design input channels differ from data channels");
  if (methods.empty()) throw std::invalid_argument("methods list is empty");
  if (repeats < 1) throw std::invalid_argument("repeats must be >= 1");
  design.validate();
  data.validate();
  federation.validate();
  validate_profiles(client_profiles(data), design);
  for (const auto& p : client_profiles(data)) (void)design_local(p, design);
  if (std::find(methods.begin(), methods.end(), Method::heterofl) != methods.end() && federation.heterofl_depth < 1)
    throw std::invalid_argument("heterofl needs heterofl_depth >= 1");
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig config;
  std::string section;
  std::set<std::string> seen;
  bool data_seed_given = false;
  bool groups_started = false;
  std::istringstream is(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(line_no, "unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (section != "design" && section != "federation" && section != "data" && section != "output")
        throw ConfigError(line_no, "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(line_no, "expected 'key = value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (section.empty()) throw ConfigError(line_no, "key '" + key + "' outside of any section");
    try {
      if (section == "data" && key == "group") {
        if (!groups_started) config.data.groups.clear();
        groups_started = true;
        config.data.groups.push_back(parse_group(value));
        continue;
      }
      const auto& table = keys();
      const auto it = std::find_if(table.begin(), table.end(),
                                   [&](const Key& k) { return section == k.section && key == k.name; });
      if (it == table.end()) throw ConfigError(line_no, "unknown key '" + key + "' in [" + section + "]");
      if (!seen.insert(section + "." + key).second) throw ConfigError(line_no, "duplicate key '" + key + "'");
      it->set(config, value);
      if (section == "data" && key == "seed") data_seed_given = true;
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(line_no, key + ": " + e.what());
    }
  }
  if (!data_seed_given) config.data.seed = config.federation.seed;
  config.design.input_channels = config.data.channels;
  try {
    config.validate();
  } catch (const std::exception& e) {
    throw ConfigError(0, e.what());
  }
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(0, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string render_config(const ExperimentConfig& config) {
  std::ostringstream os;
  std::string section;
  for (const auto& k : keys()) {
    if (section != k.section) {
      if (!section.empty()) {
        if (section == "data")
          for (const auto& g : config.data.groups) os << "group = " << render_group(g) << '\n';
        os << '\n';
      }
      section = k.section;
      os << '[' << section << "]\n";
    }
    os << k.name << " = " << k.get(config) << '\n';
  }
  return os.str();
}

}  // namespace sfl
