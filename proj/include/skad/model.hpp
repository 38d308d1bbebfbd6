#pragma once

#include <cstdint>
#include <vector>

#include "skad/encoder.hpp"
#include "skad/projector.hpp"

namespace skad {

struct ModelConfig {
  EncoderConfig encoder;
  ProjectorConfig projector;
  bool autoencoder = false;  // adds the reversed-encoder decoder

  void validate() const;
};

struct ModelOutput {
  BoundParams params;
  Var embedding;       // encoder output [N,E]
  Var latent;          // projector output [N,n], before the manifold map
  Var reconstruction;  // [N,T,V,2]; invalid unless autoencoder
};

/// Encoder + projector (+ decoder), owning parameters and batchnorm statistics.
class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);

  /// Train mode updates batchnorm running statistics.
  ModelOutput forward(Tape& tape, const Tensor& batch, Mode mode, bool requires_grad);
  /// Infer-mode forward that leaves the model untouched.
  ModelOutput infer(Tape& tape, const Tensor& batch) const;
  /// Decodes embeddings [N,E]; UnsupportedError unless autoencoder.
  Var decode(Tape& tape, Var embedding, const BoundParams& p) const;

  const ModelConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  std::vector<BatchNormBuffers>& batchnorm_buffers() { return buffers_; }
  const std::vector<BatchNormBuffers>& batchnorm_buffers() const { return buffers_; }
  const GcnEncoder& encoder() const { return encoder_; }
  const Projector& projector() const { return projector_; }

 private:
  ModelOutput run(Tape& tape, const Tensor& batch, Mode mode, bool requires_grad,
                  std::vector<BatchNormBuffers>& buffers) const;

  ModelConfig config_;
  GcnEncoder encoder_;
  Projector projector_;
  GcnDecoder decoder_;
  ParamSet params_;
  std::vector<BatchNormBuffers> buffers_;
};

}  // namespace skad
