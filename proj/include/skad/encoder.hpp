#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "skad/ops.hpp"
#include "skad/optim.hpp"

namespace skad {

enum class EncoderKind { separable, plain };
enum class Pooling { mean, flatten };

EncoderKind parse_encoder_kind(std::string_view name);
std::string_view to_string(EncoderKind kind);
Pooling parse_pooling(std::string_view name);
std::string_view to_string(Pooling pooling);

struct EncoderConfig {
  std::size_t frames = 12;
  std::size_t joints = 17;
  std::vector<std::size_t> channels{2, 32, 16, 8, 8};
  std::size_t layer_count = 4;
  EncoderKind kind = EncoderKind::separable;
  Pooling pooling = Pooling::mean;
  Activation activation = Activation::relu;

  void validate() const;
  std::size_t output_channels() const { return channels.back(); }
  /// Width E of the pooled embedding.
  std::size_t embedding_width() const;
};

/// Learnable adjacency scalars of one layer: T·V² + V·T² for the separable
/// factorization, (V·T)² for a full spatio-temporal adjacency.
std::size_t adjacency_parameter_count(EncoderKind kind, std::size_t frames, std::size_t joints);

/// σ(A_s · A_t · X · W) with the temporal factor applied first.
/// x: [T,V,C] or [N,T,V,C]; a_s: [T,V,V]; a_t: [V,T,T]; w: [C,C'].
Var separable_layer(Tape& tape, Var x, Var a_s, Var a_t, Var w, Activation sigma);

/// σ(A_st · X · W) over the V·T nodes in frame-major order.
/// x: [N,T,V,C]; a_st: [VT,VT]; w: [C,C'].
Var plain_gcn_layer(Tape& tape, Var x, Var a_st, Var w, Activation sigma);

using Rng = std::mt19937_64;

/// Four graph-convolution layers with residual connections, then pooling.
/// Parameters are named `<prefix>.l<i>.{A_s,A_t,A_st,W,R}`; R is the 1×1
/// channel projection used when a layer changes width.
class GcnEncoder {
 public:
  explicit GcnEncoder(EncoderConfig config, std::string prefix = "enc");

  void init_params(ParamSet& params, Rng& rng) const;
  /// x: [N,T,V,2] -> [N,T,V,C_out]
  Var forward_nodes(Tape& tape, Var x, const BoundParams& p) const;
  /// x: [N,T,V,2] -> [N,E]
  Var encode(Tape& tape, Var x, const BoundParams& p) const;

  const EncoderConfig& config() const { return config_; }

 private:
  EncoderConfig config_;
  std::string prefix_;
};

/// The encoder run backwards: a learnable E -> C_out map broadcast to every
/// node, then four layers with reversed channel widths ending at 2 channels.
/// The last layer is linear so reconstructions can take any sign.
class GcnDecoder {
 public:
  explicit GcnDecoder(EncoderConfig encoder_config, std::string prefix = "dec");

  void init_params(ParamSet& params, Rng& rng) const;
  /// z: [N,E] -> [N,T,V,2]
  Var decode(Tape& tape, Var z, const BoundParams& p) const;

 private:
  EncoderConfig config_;  // channels already reversed
  std::size_t embedding_width_;
  std::string prefix_;
};

/// Identity plus uniform noise in [-noise, noise], stacked `count` times.
Tensor noisy_identity_stack(std::size_t count, std::size_t n, double noise, Rng& rng);
/// Uniform in ±1/sqrt(fan_in).
Tensor fan_in_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace skad
