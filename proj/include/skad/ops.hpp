#pragma once

#include <string_view>

#include "skad/tape.hpp"

namespace skad {

enum class Activation { relu, tanh, identity };
Activation parse_activation(std::string_view name);
std::string_view to_string(Activation kind);

enum class Mode { train, infer };

// Dense products. Shapes are checked; mismatches raise DimensionError.
Var matmul(Tape& tape, Var a, Var b);               // [m,k]·[k,n]
Var channel_mix(Tape& tape, Var x, Var w);          // [...,C]·[C,C'] per node
Var add_bias(Tape& tape, Var x, Var bias);          // [N,F] + [F]

/// Per frame t: out[t] = A_s[t]·X[t]. X is [T,V,C] or batched [N,T,V,C].
Var contract_spatial(Tape& tape, Var a_s, Var x);
/// Per joint v: out[:,v,:] = A_t[v]·X[:,v,:]. X is [T,V,C] or [N,T,V,C].
Var contract_temporal(Tape& tape, Var a_t, Var x);

Var activation(Tape& tape, Var x, Activation kind);

Var add(Tape& tape, Var a, Var b);
Var scale(Tape& tape, Var a, double s);
Var reshape(Tape& tape, Var a, Shape shape);

/// [N,T,V,C] -> [N,C], mean over all T·V nodes.
Var mean_pool_nodes(Tape& tape, Var x);
/// [N,C] -> [N,T,V,C], copying each row to every node.
Var broadcast_nodes(Tape& tape, Var z, std::size_t frames, std::size_t joints);

/// Scalar reductions.
Var mean(Tape& tape, Var x);
Var sum_squares(Tape& tape, Var x);
Var mse(Tape& tape, Var x, Var target);
/// [N,...] -> [N]: per-row mean squared error.
Var row_mse(Tape& tape, Var x, Var target);

struct BatchNormBuffers {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormBuffers(std::size_t features = 0)
      : running_mean({features}, 0.0), running_var({features}, 1.0) {}
};

/// x: [N,F]. Train mode normalizes by batch statistics (needs N >= 2) and
/// updates the running statistics; infer mode uses the running statistics.
Var batchnorm(Tape& tape, Var x, Var gamma, Var beta, BatchNormBuffers& buffers,
              Mode mode);

}  // namespace skad
