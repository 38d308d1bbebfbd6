#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "skad/tensor.hpp"

namespace skad {

struct Parameter {
  Tensor value;
  Tensor grad;
  bool decay = true;  // included in the weight-decay term
};

/// Named parameters in insertion order.
class ParamSet {
 public:
  Parameter& add(const std::string& name, Tensor init, bool decay = true);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  std::size_t size() const { return entries_.size(); }

  void zero_grad();
  std::size_t scalar_count() const;

 private:
  std::vector<std::pair<std::string, Parameter>> entries_;
  std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

/// One bias-corrected Adam update. `step` is 1-based (the count after this update).
void adam_step(std::span<double> params, std::span<const double> grads, AdamMoments& state,
               const AdamConfig& config, long step);

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(ParamSet& params);
  long steps() const { return step_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  long step_ = 0;
  std::map<std::string, AdamMoments> moments_;
};

}  // namespace skad

#include "skad/tape.hpp"

namespace skad {

/// Tape leaves for every parameter of a ParamSet, looked up by name.
class BoundParams {
 public:
  Var operator[](const std::string& name) const;
  void insert(const std::string& name, Var v) { vars_[name] = v; }
  const std::map<std::string, Var>& vars() const { return vars_; }

 private:
  std::map<std::string, Var> vars_;
};

BoundParams bind(Tape& tape, const ParamSet& params, bool requires_grad);
/// Adds the tape gradients of bound leaves into each Parameter::grad.
void accumulate_grads(const Tape& tape, const BoundParams& bound, ParamSet& params);

}  // namespace skad
