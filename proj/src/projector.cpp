#include "skad/projector.hpp"

#include "skad/errors.hpp"

namespace skad {

ProjectorKind parse_projector_kind(std::string_view name) {
  if (name == "identity") return ProjectorKind::identity;
  if (name == "linear") return ProjectorKind::linear;
  if (name == "nonlinear") return ProjectorKind::nonlinear;
  throw ConfigError("unknown projector '" + std::string(name) + "' (expected identity | linear | nonlinear)");
}

std::string_view to_string(ProjectorKind kind) {
  switch (kind) {
    case ProjectorKind::identity: return "identity";
    case ProjectorKind::linear: return "linear";
    case ProjectorKind::nonlinear: return "nonlinear";
  }
  return "?";
}

void ProjectorConfig::validate(std::size_t embedding_width) const {
  if (latent_dim == 0) throw ConfigError("latent_dim must be positive");
  if (kind == ProjectorKind::identity && latent_dim != embedding_width) {
    throw ConfigError("identity projector requires latent_dim (" + std::to_string(latent_dim) +
                      ") to equal the encoder embedding width (" + std::to_string(embedding_width) + ")");
  }
}

Projector::Projector(ProjectorConfig config, std::size_t embedding_width, std::string prefix)
    : config_(config), embedding_width_(embedding_width), prefix_(std::move(prefix)) {
  config_.validate(embedding_width_);
}

std::size_t Projector::batchnorm_count() const {
  return config_.kind == ProjectorKind::nonlinear ? config_.nonlinear_blocks : 0;
}

void Projector::init_params(ParamSet& params, Rng& rng) const {
  const std::size_t n = config_.latent_dim;
  auto add_affine = [&](const std::string& name, std::size_t in, std::size_t out, bool bias) {
    params.add(name + ".W", fan_in_uniform(in, out, rng));
    if (bias) params.add(name + ".b", Tensor({out}), false);
  };
  switch (config_.kind) {
    case ProjectorKind::identity:
      break;
    case ProjectorKind::linear:
      add_affine(prefix_ + ".fc0", embedding_width_, n, true);
      add_affine(prefix_ + ".out", n, n, config_.final_bias);
      break;
    case ProjectorKind::nonlinear: {
      std::size_t in = embedding_width_;
      for (std::size_t b = 0; b < config_.nonlinear_blocks; ++b) {
        const std::string name = prefix_ + ".block" + std::to_string(b);
        add_affine(name + ".fc", in, n, true);
        params.add(name + ".bn.gamma", Tensor({n}, 1.0), false);
        params.add(name + ".bn.beta", Tensor({n}, 0.0), false);
        in = n;
      }
      add_affine(prefix_ + ".out", in, n, config_.final_bias);
      break;
    }
  }
}

std::vector<BatchNormBuffers> Projector::make_buffers() const {
  return std::vector<BatchNormBuffers>(batchnorm_count(), BatchNormBuffers(config_.latent_dim));
}

Var Projector::affine(Tape& tape, Var x, const BoundParams& p, const std::string& name, bool bias) const {
  Var y = matmul(tape, x, p[name + ".W"]);
  return bias ? add_bias(tape, y, p[name + ".b"]) : y;
}

Var Projector::forward(Tape& tape, Var e, const BoundParams& p, std::vector<BatchNormBuffers>& buffers,
                       Mode mode) const {
  const Tensor& ev = tape.value(e);
  if (ev.rank() != 2 || ev.dim(1) != embedding_width_) {
    throw DimensionError("projector expects [N," + std::to_string(embedding_width_) + "], got " +
                         to_string(ev.shape()));
  }
  switch (config_.kind) {
    case ProjectorKind::identity:
      return e;
    case ProjectorKind::linear:
      return affine(tape, affine(tape, e, p, prefix_ + ".fc0", true), p, prefix_ + ".out", config_.final_bias);
    case ProjectorKind::nonlinear: {
      if (buffers.size() != batchnorm_count()) throw StateError("projector batchnorm buffers missing");
      Var h = e;
      for (std::size_t b = 0; b < config_.nonlinear_blocks; ++b) {
        const std::string name = prefix_ + ".block" + std::to_string(b);
        h = activation(tape, affine(tape, h, p, name + ".fc", true), Activation::relu);
        h = batchnorm(tape, h, p[name + ".bn.gamma"], p[name + ".bn.beta"], buffers[b], mode);
      }
      return affine(tape, h, p, prefix_ + ".out", config_.final_bias);
    }
  }
  return e;
}

}  // namespace skad
