#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "skad/encoder.hpp"

namespace skad {

enum class ProjectorKind { identity, linear, nonlinear };

ProjectorKind parse_projector_kind(std::string_view name);
std::string_view to_string(ProjectorKind kind);

struct ProjectorConfig {
  ProjectorKind kind = ProjectorKind::nonlinear;
  std::size_t nonlinear_blocks = 1;
  std::size_t latent_dim = 8;
  bool final_bias = false;

  /// Identity projection requires latent_dim == embedding width.
  void validate(std::size_t embedding_width) const;
};

/// Maps encoder embeddings [N,E] to latent vectors [N,latent_dim].
///  identity:  unchanged
///  linear:    affine(E -> n) then affine(n -> n)
///  nonlinear: `nonlinear_blocks` x (affine -> ReLU -> batchnorm), then affine -> n
/// Only the last affine map honors `final_bias`; inner maps always carry a bias.
class Projector {
 public:
  Projector(ProjectorConfig config, std::size_t embedding_width, std::string prefix = "proj");

  void init_params(ParamSet& params, Rng& rng) const;
  std::vector<BatchNormBuffers> make_buffers() const;
  Var forward(Tape& tape, Var e, const BoundParams& p, std::vector<BatchNormBuffers>& buffers,
              Mode mode) const;

  const ProjectorConfig& config() const { return config_; }
  std::size_t output_width() const { return config_.latent_dim; }
  std::size_t batchnorm_count() const;

 private:
  Var affine(Tape& tape, Var x, const BoundParams& p, const std::string& name, bool bias) const;

  ProjectorConfig config_;
  std::size_t embedding_width_;
  std::string prefix_;
};

}  // namespace skad
