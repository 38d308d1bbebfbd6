#include "skad/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "skad/errors.hpp"

namespace skad {
namespace {

std::string layer_name(const std::string& prefix, std::size_t layer, const char* what) {
  return prefix + ".l" + std::to_string(layer) + "." + what;
}

void init_layers(const EncoderConfig& cfg, const std::string& prefix, ParamSet& params, Rng& rng) {
  const std::size_t t = cfg.frames, v = cfg.joints;
  for (std::size_t l = 0; l < cfg.layer_count; ++l) {
    const std::size_t in = cfg.channels[l], out = cfg.channels[l + 1];
    if (cfg.kind == EncoderKind::separable) {
      params.add(layer_name(prefix, l, "A_s"), noisy_identity_stack(t, v, 0.01, rng));
      params.add(layer_name(prefix, l, "A_t"), noisy_identity_stack(v, t, 0.01, rng));
    } else {
      params.add(layer_name(prefix, l, "A_st"), noisy_identity_stack(1, t * v, 0.01, rng).reshaped({t * v, t * v}));
    }
    params.add(layer_name(prefix, l, "W"), fan_in_uniform(in, out, rng));
    if (in != out) params.add(layer_name(prefix, l, "R"), fan_in_uniform(in, out, rng));
  }
}

Var run_layers(Tape& tape, Var h, const EncoderConfig& cfg, const std::string& prefix,
               const BoundParams& p, bool linear_last) {
  for (std::size_t l = 0; l < cfg.layer_count; ++l) {
    const Activation sigma =
        linear_last && l + 1 == cfg.layer_count ? Activation::identity : cfg.activation;
    Var y = cfg.kind == EncoderKind::separable
                ? separable_layer(tape, h, p[layer_name(prefix, l, "A_s")],
                                  p[layer_name(prefix, l, "A_t")], p[layer_name(prefix, l, "W")], sigma)
                : plain_gcn_layer(tape, h, p[layer_name(prefix, l, "A_st")],
                                  p[layer_name(prefix, l, "W")], sigma);
    const bool same = cfg.channels[l] == cfg.channels[l + 1];
    Var skip = same ? h : channel_mix(tape, h, p[layer_name(prefix, l, "R")]);
    h = add(tape, y, skip);
  }
  return h;
}

}  // namespace

EncoderKind parse_encoder_kind(std::string_view name) {
  if (name == "separable") return EncoderKind::separable;
  if (name == "plain") return EncoderKind::plain;
  throw ConfigError("unknown encoder '" + std::string(name) + "' (expected separable | plain)");
}

std::string_view to_string(EncoderKind kind) {
  return kind == EncoderKind::separable ? "separable" : "plain";
}

Pooling parse_pooling(std::string_view name) {
  if (name == "mean") return Pooling::mean;
  if (name == "flatten") return Pooling::flatten;
  throw ConfigError("unknown pooling '" + std::string(name) + "' (expected mean | flatten)");
}

std::string_view to_string(Pooling pooling) { return pooling == Pooling::mean ? "mean" : "flatten"; }

void EncoderConfig::validate() const {
  if (frames < 1 || joints < 1) throw ConfigError("encoder frames and joints must be >= 1");
  if (layer_count < 1) throw ConfigError("encoder needs at least one layer");
  if (channels.size() != layer_count + 1) {
    throw ConfigError("encoder channels list has " + std::to_string(channels.size()) +
                      " entries, expected layer_count + 1 = " + std::to_string(layer_count + 1));
  }
  if (channels.front() != 2) throw ConfigError("encoder input channels must be 2 (x, y)");
  for (std::size_t c : channels)
    if (c == 0) throw ConfigError("encoder channel widths must be positive");
}

std::size_t EncoderConfig::embedding_width() const {
  return pooling == Pooling::mean ? output_channels() : frames * joints * output_channels();
}

std::size_t adjacency_parameter_count(EncoderKind kind, std::size_t frames, std::size_t joints) {
  if (kind == EncoderKind::separable) return frames * joints * joints + joints * frames * frames;
  return (frames * joints) * (frames * joints);
}

Var separable_layer(Tape& tape, Var x, Var a_s, Var a_t, Var w, Activation sigma) {
  const Tensor& wv = tape.value(w);
  const Tensor& xv = tape.value(x);
  if (wv.rank() != 2 || xv.rank() < 1 || xv.shape().back() != wv.dim(0)) {
    throw DimensionError("separable_layer: input channels " + to_string(xv.shape()) +
                         " do not match W " + to_string(wv.shape()));
  }
  // W acts on channels only, so it commutes with both contractions; mixing
  // first is cheaper when the layer narrows.
  Var h;
  if (wv.dim(1) < wv.dim(0)) {
    h = contract_spatial(tape, a_s, contract_temporal(tape, a_t, channel_mix(tape, x, w)));
  } else {
    h = channel_mix(tape, contract_spatial(tape, a_s, contract_temporal(tape, a_t, x)), w);
  }
  return activation(tape, h, sigma);
}

Var plain_gcn_layer(Tape& tape, Var x, Var a_st, Var w, Activation sigma) {
  const Tensor& xv = tape.value(x);
  const Tensor& av = tape.value(a_st);
  if (xv.rank() != 4) throw DimensionError("plain_gcn_layer: expected [N,T,V,C], got " + to_string(xv.shape()));
  const std::size_t n = xv.dim(0), frames = xv.dim(1), joints = xv.dim(2), nodes = frames * joints, c = xv.dim(3);
  const std::size_t c_out = tape.value(w).dim(1);
  if (av.rank() != 2 || av.dim(0) != nodes || av.dim(1) != nodes) {
    throw DimensionError("plain_gcn_layer: adjacency " + to_string(av.shape()) + " does not match " +
                         std::to_string(nodes) + " nodes");
  }
  // A single "frame" holding all V·T nodes turns the spatial contraction into A_st·X.
  Var flat = reshape(tape, x, {n, 1, nodes, c});
  Var adj = reshape(tape, a_st, {1, nodes, nodes});
  Var mixed = channel_mix(tape, contract_spatial(tape, adj, flat), w);
  Var out = reshape(tape, mixed, {n, frames, joints, c_out});
  return activation(tape, out, sigma);
}

Tensor noisy_identity_stack(std::size_t count, std::size_t n, double noise, Rng& rng) {
  std::uniform_real_distribution<double> u(-noise, noise);
  Tensor t = Tensor::identity_stack(count, n);
  for (double& e : t.values()) e += u(rng);
  return t;
}

Tensor fan_in_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t({fan_in, fan_out});
  for (double& e : t.values()) e = u(rng);
  return t;
}

GcnEncoder::GcnEncoder(EncoderConfig config, std::string prefix)
    : config_(std::move(config)), prefix_(std::move(prefix)) {
  config_.validate();
}

void GcnEncoder::init_params(ParamSet& params, Rng& rng) const {
  init_layers(config_, prefix_, params, rng);
}

Var GcnEncoder::forward_nodes(Tape& tape, Var x, const BoundParams& p) const {
  const Tensor& xv = tape.value(x);
  if (xv.rank() != 4 || xv.dim(1) != config_.frames || xv.dim(2) != config_.joints || xv.dim(3) != 2) {
    throw DimensionError("encoder expects [N," + std::to_string(config_.frames) + "," +
                         std::to_string(config_.joints) + ",2], got " + to_string(xv.shape()));
  }
  return run_layers(tape, x, config_, prefix_, p, false);
}

Var GcnEncoder::encode(Tape& tape, Var x, const BoundParams& p) const {
  Var nodes = forward_nodes(tape, x, p);
  if (config_.pooling == Pooling::mean) return mean_pool_nodes(tape, nodes);
  const std::size_t n = tape.value(nodes).dim(0);
  return reshape(tape, nodes, {n, config_.embedding_width()});
}

GcnDecoder::GcnDecoder(EncoderConfig encoder_config, std::string prefix)
    : config_(std::move(encoder_config)), prefix_(std::move(prefix)) {
  config_.validate();
  embedding_width_ = config_.embedding_width();
  std::reverse(config_.channels.begin(), config_.channels.end());
}

void GcnDecoder::init_params(ParamSet& params, Rng& rng) const {
  params.add(prefix_ + ".unpool", fan_in_uniform(embedding_width_, config_.channels.front(), rng));
  init_layers(config_, prefix_, params, rng);
}

Var GcnDecoder::decode(Tape& tape, Var z, const BoundParams& p) const {
  Var seed = channel_mix(tape, z, p[prefix_ + ".unpool"]);
  Var nodes = broadcast_nodes(tape, seed, config_.frames, config_.joints);
  return run_layers(tape, nodes, config_, prefix_, p, true);
}

}  // namespace skad
