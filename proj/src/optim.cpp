#include "skad/optim.hpp"

#include <cmath>

#include "skad/errors.hpp"

namespace skad {

Parameter& ParamSet::add(const std::string& name, Tensor init, bool decay) {
  if (contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
  index_[name] = entries_.size();
  Tensor grad(init.shape());
  entries_.emplace_back(name, Parameter{std::move(init), std::move(grad), decay});
  return entries_.back().second;
}

Parameter& ParamSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw StateError("no parameter named '" + name + "'");
  return entries_[it->second].second;
}

const Parameter& ParamSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw StateError("no parameter named '" + name + "'");
  return entries_[it->second].second;
}

void ParamSet::zero_grad() {
  for (auto& [name, p] : entries_) p.grad.fill(0.0);
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : entries_) n += p.value.size();
  return n;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamMoments& state,
               const AdamConfig& config, long step) {
  if (params.size() != grads.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " params vs " +
                         std::to_string(grads.size()) + " grads");
  }
  if (step < 1) throw StateError("adam_step: step counter must be >= 1");
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam_step: moment buffers do not match parameter size");
  }
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
  }
}

void Adam::step(ParamSet& params) {
  ++step_;
  for (auto& [name, p] : params) {
    adam_step(p.value.data(), p.grad.data(), moments_[name], config_, step_);
  }
}

}  // namespace skad

namespace skad {

Var BoundParams::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw StateError("parameter '" + name + "' is not bound");
  return it->second;
}

BoundParams bind(Tape& tape, const ParamSet& params, bool requires_grad) {
  BoundParams out;
  for (const auto& [name, p] : params) out.insert(name, tape.leaf(p.value, requires_grad));
  return out;
}

void accumulate_grads(const Tape& tape, const BoundParams& bound, ParamSet& params) {
  for (auto& [name, p] : params) {
    if (!bound.vars().count(name)) continue;
    p.grad += tape.grad(bound[name]);
  }
}

}  // namespace skad
