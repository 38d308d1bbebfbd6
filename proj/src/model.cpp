#include "skad/model.hpp"

#include "skad/errors.hpp"

namespace skad {

void ModelConfig::validate() const {
  encoder.validate();
  projector.validate(encoder.embedding_width());
}

Model::Model(ModelConfig config, std::uint64_t seed)
    : config_((config.validate(), std::move(config))),
      encoder_(config_.encoder),
      projector_(config_.projector, config_.encoder.embedding_width()),
      decoder_(config_.encoder),
      buffers_(projector_.make_buffers()) {
  Rng rng(seed);
  encoder_.init_params(params_, rng);
  projector_.init_params(params_, rng);
  if (config_.autoencoder) decoder_.init_params(params_, rng);
}

ModelOutput Model::forward(Tape& tape, const Tensor& batch, Mode mode, bool requires_grad) {
  return run(tape, batch, mode, requires_grad, buffers_);
}

ModelOutput Model::infer(Tape& tape, const Tensor& batch) const {
  auto buffers = buffers_;
  return run(tape, batch, Mode::infer, false, buffers);
}

Var Model::decode(Tape& tape, Var embedding, const BoundParams& p) const {
  if (!config_.autoencoder) throw UnsupportedError("decode requires autoencoder mode");
  return decoder_.decode(tape, embedding, p);
}

ModelOutput Model::run(Tape& tape, const Tensor& batch, Mode mode, bool requires_grad,
                       std::vector<BatchNormBuffers>& buffers) const {
  ModelOutput out;
  out.params = bind(tape, params_, requires_grad);
  Var x = tape.constant(batch);
  out.embedding = encoder_.encode(tape, x, out.params);
  out.latent = projector_.forward(tape, out.embedding, out.params, buffers, mode);
  if (config_.autoencoder) out.reconstruction = decoder_.decode(tape, out.embedding, out.params);
  return out;
}

}  // namespace skad
