// SPDX-License-Identifier: Apache-2.0
#include "sfl/model.hpp"

#include <set>

namespace sfl {

namespace {
std::string bn_prefix(const std::string& name) { return name.substr(0, name.rfind('.')); }
}  // namespace

LocalState init_local_state(int client_id, const ModelSpec& spec, const NamedTensorSpace& space) {
  LocalState state;
  state.client_id = client_id;
  for (const auto& decl : enumerate_tensors(spec)) {
    if (decl.role == TensorRole::bn_gamma) state.bn_stats.emplace(bn_prefix(decl.name), BatchNormStats::fresh(decl.dims[0]));
    if (decl.shared) continue;
    state.private_params.push_back({decl.name, corner(space.at(decl.name), decl.dims)});
  }
  return state;
}

LocalModel::LocalModel(ModelSpec spec, const NamedTensors& shared, const LocalState& state) : spec_(std::move(spec)) {
  validate_local_spec(spec_);
  std::map<std::string, const Tensor*> shared_by_name, private_by_name;
  for (const auto& t : shared) shared_by_name.emplace(t.name, &t.tensor);
  for (const auto& t : state.private_params) private_by_name.emplace(t.name, &t.tensor);

  std::set<std::string> used_shared, used_private;
  for (const auto& decl : enumerate_tensors(spec_)) {
    auto& source = decl.shared ? shared_by_name : private_by_name;
    auto it = source.find(decl.name);
    if (it == source.end())
      throw std::invalid_argument("client " + std::to_string(state.client_id) + ": missing " +
                                  (decl.shared ? "shared" : "private") + " tensor '" + decl.name + "'");
    if (it->second->dims() != decl.dims)
      throw ShapeError("client " + std::to_string(state.client_id) + ": tensor '" + decl.name + "' has dims " +
                       to_string(it->second->dims()) + ", spec expects " + to_string(decl.dims));
    (decl.shared ? used_shared : used_private).insert(decl.name);
    index_.emplace(decl.name, params_.size());
    params_.push_back({decl, *it->second});
    if (decl.role == TensorRole::bn_gamma) {
      const auto prefix = bn_prefix(decl.name);
      auto st = state.bn_stats.find(prefix);
      BatchNormStats stats = st != state.bn_stats.end() ? st->second : BatchNormStats::fresh(decl.dims[0]);
      if (stats.mean.dims() != decl.dims || stats.var.dims() != decl.dims)
        throw ShapeError("client " + std::to_string(state.client_id) + ": running statistics of '" + prefix +
                         "' have dims " + to_string(stats.mean.dims()) + ", spec expects " + to_string(decl.dims));
      stats_.emplace(prefix, std::move(stats));
    }
  }
  for (const auto& t : shared)
    if (!used_shared.count(t.name))
      throw std::invalid_argument("client " + std::to_string(state.client_id) + ": unexpected shared tensor '" + t.name + "'");
  for (const auto& t : state.private_params)
    if (!used_private.count(t.name))
      throw std::invalid_argument("client " + std::to_string(state.client_id) + ": unexpected private tensor '" + t.name +
                                  "'");
}

std::size_t LocalModel::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("model has no tensor '" + name + "'");
  return it->second;
}

const Tensor& LocalModel::param(const std::string& name) const { return params_[index_of(name)].value; }

Var LocalModel::forward(Tape& tape, const Tensor& images, Mode mode, std::vector<Var>* param_vars) {
  const auto c = static_cast<std::size_t>(spec_.input_channels);
  const auto h = static_cast<std::size_t>(spec_.image_size);
  if (images.rank() != 4 || images.dim(1) != c || images.dim(2) != h || images.dim(3) != h)
    throw ShapeError("model input: expected [batch, " + std::to_string(c) + ", " + std::to_string(h) + ", " +
                     std::to_string(h) + "], got " + to_string(images.dims()));
  ++forward_passes_;

  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) vars.push_back(tape.leaf(p.value));
  if (param_vars) *param_vars = vars;
  auto var = [&](const std::string& name) { return vars[index_of(name)]; };
  auto bn = [&](Var x, const std::string& prefix) {
    return tape.batch_norm(x, var(prefix + ".gamma"), var(prefix + ".beta"), stats_.at(prefix), mode);
  };

  Var x = tape.constant(images);
  for (std::size_t l = 0; l < spec_.stages.size(); ++l) {
    const std::string stage = "stage" + std::to_string(l + 1);
    const auto stride = static_cast<std::size_t>(spec_.stages[l].stride);
    if (spec_.block == BlockKind::plain) {
      x = tape.relu(bn(tape.conv2d(x, var(stage + ".conv.weight"), stride), stage + ".bn"));
    } else {
      Var a = tape.relu(bn(tape.conv2d(x, var(stage + ".conv1.weight"), stride), stage + ".bn1"));
      a = bn(tape.conv2d(a, var(stage + ".conv2.weight"), 1), stage + ".bn2");
      Var s = bn(tape.conv2d(x, var(stage + ".shortcut.weight"), stride), stage + ".shortcut_bn");
      x = tape.relu(tape.add(a, s));
    }
  }
  return tape.linear(tape.global_avg_pool(x), var("head.weight"), var("head.bias"));
}

Tensor LocalModel::logits(const Tensor& images) {
  Tape tape;
  const Var out = forward(tape, images, Mode::eval);
  return tape.value(out);
}

NamedTensors LocalModel::shared_weights() const {
  NamedTensors out;
  for (const auto& p : params_)
    if (p.decl.shared) out.push_back({p.decl.name, p.value});
  return out;
}

void LocalModel::store_private(LocalState& state) const {
  state.private_params.clear();
  for (const auto& p : params_)
    if (!p.decl.shared) state.private_params.push_back({p.decl.name, p.value});
  state.bn_stats = stats_;
}

std::int64_t LocalModel::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += static_cast<std::int64_t>(p.value.numel());
  return n;
}

}  // namespace sfl
