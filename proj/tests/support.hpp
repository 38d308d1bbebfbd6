#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "skad/ops.hpp"
#include "skad/tape.hpp"
#include "skad/tensor.hpp"

namespace skad::test {

using Gen = std::mt19937_64;

inline Tensor random_tensor(Shape shape, Gen& g, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = u(g);
  return t;
}

inline std::size_t pick(Gen& g, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(g);
}

inline double uniform(Gen& g, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(g); }

/// Builds a scalar from leaves created for `inputs`.
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Worst norm-wise relative error ||analytic - numeric|| / (||analytic|| + ||numeric||)
/// over all inputs (absolute error when both norms are below 1e-6), numeric gradients by central differences with step h.
inline double gradcheck(const ScalarFn& f, std::vector<Tensor> inputs, double h = 1e-5) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.variable(t));
    Var out = f(tape, vars);
    tape.backward(out);
    for (Var v : vars) analytic.push_back(tape.grad(v));
  }
  auto eval = [&] {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.constant(t));
    return tape.value(f(tape, vars)).item();
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double keep = inputs[k][i];
      inputs[k][i] = keep + h;
      const double up = eval();
      inputs[k][i] = keep - h;
      const double down = eval();
      inputs[k][i] = keep;
      const double num = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      diff += (a - num) * (a - num);
      na += a * a;
      nn += num * num;
    }
    const double denom = std::sqrt(na) + std::sqrt(nn);
    // gradients that vanish identically (a bias ahead of batchnorm) get an absolute check
    if (denom > 1e-6) worst = std::max(worst, std::sqrt(diff) / denom);
    else worst = std::max(worst, std::sqrt(diff));
  }
  return worst;
}

/// Sum of elementwise products with a fixed random weight tensor, a scalar
/// probe whose gradient exercises every output entry differently.
inline Var probe(Tape& tape, Var x, std::uint64_t seed = 99) {
  Gen g(seed);
  const Shape shape = tape.value(x).shape();
  const std::size_t n = shape_size(shape);
  Tensor w = random_tensor(shape, g);
  Var flat_x = reshape(tape, x, {1, n});
  Var flat_w = tape.constant(w.reshaped({n, 1}));
  return reshape(tape, matmul(tape, flat_x, flat_w), {1});
}

}  // namespace skad::test
