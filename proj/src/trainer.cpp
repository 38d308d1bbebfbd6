#include "skad/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <numeric>
#include <ostream>
#include <thread>

#include "skad/errors.hpp"

namespace skad {

namespace {

constexpr std::size_t kChunk = 256;

// Runs fn(begin, end) over fixed chunks of [0, count). Chunk boundaries do not
// depend on `threads`, so neither do the results.
template <class Fn>
void for_each_chunk(std::size_t count, std::size_t threads, Fn fn) {
  const std::size_t chunks = (count + kChunk - 1) / kChunk;
  auto run = [&](std::size_t c) { fn(c * kChunk, std::min(count, (c + 1) * kChunk)); };
  threads = std::max<std::size_t>(1, std::min(threads, chunks));
  if (threads == 1) {
    for (std::size_t c = 0; c < chunks; ++c) run(c);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t c = w; c < chunks; c += threads) run(c);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<std::size_t> iota_range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return idx;
}

void require_center(const CenterState& center, Manifold manifold) {
  if (!center.initialized()) throw StateError("center is not initialized");
  if (center.manifold != manifold) {
    throw StateError("center lives on the " + std::string(to_string(center.manifold)) +
                     " manifold, the model is configured for " + std::string(to_string(manifold)));
  }
}

std::string strip_score_prefix(std::string_view name) {
  std::string s(name);
  if (s.rfind("s_", 0) == 0) s = s.substr(2);
  for (auto pos = s.find("s_"); pos != std::string::npos; pos = s.find("s_")) s.erase(pos, 2);
  return s;
}

}  // namespace

CenterStrategy parse_center_strategy(std::string_view name) {
  if (name == "static") return CenterStrategy::fixed;
  if (name == "dynamic") return CenterStrategy::dynamic;
  throw ConfigError("unknown center strategy '" + std::string(name) + "' (expected static | dynamic)");
}

std::string_view to_string(CenterStrategy strategy) {
  return strategy == CenterStrategy::fixed ? "static" : "dynamic";
}

ScoreKind parse_score_kind(std::string_view name) {
  const std::string s = strip_score_prefix(name);
  if (s == "hyp") return ScoreKind::hyp;
  if (s == "rec") return ScoreKind::rec;
  if (s == "rec+hyp" || s == "hyp+rec") return ScoreKind::rec_hyp;
  throw ConfigError("unknown score kind '" + std::string(name) + "' (expected hyp | rec | rec+hyp)");
}

std::string_view to_string(ScoreKind kind) {
  switch (kind) {
    case ScoreKind::hyp: return "hyp";
    case ScoreKind::rec: return "rec";
    case ScoreKind::rec_hyp: return "rec+hyp";
  }
  return "?";
}

UncoveredPolicy parse_uncovered_policy(std::string_view name) {
  if (name == "exclude") return UncoveredPolicy::exclude;
  if (name == "median") return UncoveredPolicy::median;
  throw ConfigError("unknown uncovered-frame policy '" + std::string(name) + "' (expected exclude | median)");
}

std::string_view to_string(UncoveredPolicy policy) {
  return policy == UncoveredPolicy::exclude ? "exclude" : "median";
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay alpha must be non-negative");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (stride < 1) throw ConfigError("stride must be at least 1");
  if (threads < 1) throw ConfigError("threads must be at least 1");
  if (!(rec_weight >= 0.0) || !(dir_weight >= 0.0)) throw ConfigError("loss weights must be non-negative");
  model.validate();
  if (score_kind != ScoreKind::hyp && !model.autoencoder) {
    throw ConfigError("score kind '" + std::string(to_string(score_kind)) + "' requires autoencoder mode");
  }
}

Tensor gather_rows(const Tensor& data, std::span<const std::size_t> indices) {
  if (data.rank() < 1) throw DimensionError("gather_rows on a scalar");
  Shape shape = data.shape();
  const std::size_t stride = data.dim(0) == 0 ? 0 : data.size() / data.dim(0);
  shape[0] = indices.size();
  Tensor out(shape);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= data.dim(0)) throw DimensionError("gather_rows: index out of range");
    std::copy_n(data.values().begin() + static_cast<std::ptrdiff_t>(indices[k] * stride), stride,
                out.values().begin() + static_cast<std::ptrdiff_t>(k * stride));
  }
  return out;
}

LossTerms objective(Tape& tape, Model& model, const Tensor& batch, const CenterState& center,
                    const TrainConfig& config, Mode mode) {
  require_center(center, config.manifold);
  LossTerms terms;
  ModelOutput out = model.forward(tape, batch, mode, true);
  terms.params = out.params;
  terms.points = to_manifold(tape, out.latent, config.manifold);
  Var total = mean(tape, distance_to_center(tape, terms.points, config.manifold, center.tensor()));
  if (config.manifold == Manifold::spherical) total = scale(tape, total, config.dir_weight);
  terms.distance = tape.value(total).item();

  if (model.config().autoencoder) {
    Var rec = scale(tape, mse(tape, out.reconstruction, tape.constant(batch)), config.rec_weight);
    terms.reconstruction = tape.value(rec).item();
    total = add(tape, total, rec);
  }
  if (config.weight_decay > 0.0) {
    Var decay;
    for (const auto& [name, p] : model.params()) {
      if (!p.decay) continue;
      Var sq = sum_squares(tape, out.params[name]);
      decay = decay.valid() ? add(tape, decay, sq) : sq;
    }
    if (decay.valid()) {
      decay = scale(tape, decay, config.weight_decay);
      terms.decay = tape.value(decay).item();
      total = add(tape, total, decay);
    }
  }
  terms.total = total;
  return terms;
}

Tensor latent_points(const Model& model, const Tensor& windows, Manifold manifold, std::size_t threads) {
  if (windows.rank() != 4) throw DimensionError("latent_points expects [N,T,V,2], got " + to_string(windows.shape()));
  const std::size_t count = windows.dim(0), n = model.projector().output_width();
  Tensor out({count, n});
  for_each_chunk(count, threads, [&](std::size_t begin, std::size_t end) {
    Tape tape;
    const auto idx = iota_range(begin, end);
    ModelOutput o = model.infer(tape, gather_rows(windows, idx));
    const Tensor& pts = tape.value(to_manifold(tape, o.latent, manifold));
    std::copy(pts.values().begin(), pts.values().end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(begin * n));
  });
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!std::isfinite(out[i])) throw NumericalError("non-finite latent point for window " + std::to_string(i / n));
  return out;
}

CenterState init_center(const Model& model, const Tensor& windows, Manifold manifold, std::size_t threads) {
  if (windows.rank() < 1 || windows.dim(0) == 0) throw EmptySetError("cannot initialize the center on an empty training set");
  return CenterState{manifold, centroid(latent_points(model, windows, manifold, threads), manifold).values()};
}

CenterState update_center(const CenterState& center, CenterStrategy strategy, const Model& model,
                          const Tensor& windows, std::size_t threads) {
  if (strategy == CenterStrategy::fixed) return center;
  return init_center(model, windows, center.manifold, threads);
}

std::vector<double> score_window_tensor(const Detector& detector, const Tensor& windows, ScoreKind kind,
                                        std::size_t threads) {
  const TrainConfig& cfg = detector.config;
  require_center(detector.center, cfg.manifold);
  if (windows.rank() != 4) throw DimensionError("scoring expects [N,T,V,2], got " + to_string(windows.shape()));
  const bool ae = detector.model.config().autoencoder;
  if (kind != ScoreKind::hyp && !ae) {
    throw UnsupportedError("score kind '" + std::string(to_string(kind)) + "' requires autoencoder mode");
  }
  const Tensor c = detector.center.tensor();
  std::vector<double> scores(windows.dim(0));
  for_each_chunk(windows.dim(0), threads, [&](std::size_t begin, std::size_t end) {
    Tape tape;
    const Tensor chunk = gather_rows(windows, iota_range(begin, end));
    ModelOutput o = detector.model.infer(tape, chunk);
    Tensor dist, rec;
    if (kind != ScoreKind::rec) {
      dist = tape.value(distance_to_center(tape, to_manifold(tape, o.latent, cfg.manifold), cfg.manifold, c));
    }
    if (kind != ScoreKind::hyp) rec = tape.value(row_mse(tape, o.reconstruction, tape.constant(chunk)));
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t k = i - begin;
      switch (kind) {
        case ScoreKind::hyp: scores[i] = dist[k]; break;
        case ScoreKind::rec: scores[i] = rec[k]; break;
        case ScoreKind::rec_hyp: scores[i] = rec[k] + dist[k]; break;
      }
    }
  });
  return scores;
}

TrainResult train(const Tensor& windows, const RobustStats& stats, const TrainConfig& config,
                  const TrainOptions& options) {
  config.validate();
  if (windows.rank() != 4 || windows.dim(0) == 0) throw EmptySetError("no training windows");
  if (windows.dim(1) != config.window() || windows.dim(2) != config.joints()) {
    throw DimensionError("training windows " + to_string(windows.shape()) + " do not match the configured T=" +
                         std::to_string(config.window()) + ", V=" + std::to_string(config.joints()));
  }
  const std::size_t count = windows.dim(0);
  Model model(config.model, config.seed);
  if (count < 2 && !model.batchnorm_buffers().empty()) {
    throw BatchSizeError("a single training window cannot drive batchnorm in train mode; use the linear or identity projector");
  }
  Rng shuffle_rng(config.seed ^ 0x5bd1e9955bd1e995ULL);
  Adam adam(AdamConfig{config.learning_rate});

  CenterState center;
  if (options.initial_center) {
    center = *options.initial_center;
    if (!LatentPoint::valid(config.manifold, center.coords) || center.manifold != config.manifold ||
        center.coords.size() != model.projector().output_width()) {
      throw StateError("initial center is not a valid point of the configured latent space");
    }
  } else {
    center = init_center(model, windows, config.manifold, config.threads);
  }

  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t n = model.projector().output_width();
  TrainResult result{Detector{config, model, center, stats, 0.0}, {}};

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    if (epoch > 1) {
      try {
        center = update_center(center, config.center, model, windows, config.threads);
      } catch (const NumericalError& e) {
        throw NumericalError("center update at the start of epoch " + std::to_string(epoch) + ": " + e.what());
      }
    }
    if (options.on_epoch_start) options.on_epoch_start(epoch, model, center);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    std::vector<std::pair<std::size_t, std::size_t>> batches;
    for (std::size_t b = 0; b < count; b += config.batch_size) batches.emplace_back(b, std::min(count, b + config.batch_size));
    if (batches.size() > 1 && batches.back().second - batches.back().first == 1) {
      batches[batches.size() - 2].second = count;
      batches.pop_back();
    }

    double loss_sum = 0.0, sq_norm_sum = 0.0;
    std::vector<double> coord_sum(n, 0.0);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto [begin, end] = batches[b];
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      Tape tape;
      LossTerms terms = objective(tape, model, gather_rows(windows, idx), center, config, Mode::train);
      const double loss = tape.value(terms.total).item();
      if (!std::isfinite(loss)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1) +
                             " of " + std::to_string(batches.size()));
      }
      loss_sum += loss * static_cast<double>(end - begin);
      const Tensor& pts = tape.value(terms.points);
      for (std::size_t i = 0; i < pts.size(); ++i) {
        coord_sum[i % n] += pts[i];
        sq_norm_sum += pts[i] * pts[i];
      }
      tape.backward(terms.total);
      model.params().zero_grad();
      accumulate_grads(tape, terms.params, model.params());
      adam.step(model.params());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / static_cast<double>(count);
    double mean_sq = 0.0;
    for (double s : coord_sum) mean_sq += (s / count) * (s / count);
    rec.embedding_variance = std::max(0.0, sq_norm_sum / count - mean_sq);
    rec.center = center.coords;
    rec.center_norm = norm(center.coords);
    result.history.push_back(std::move(rec));
  }
  // The dynamic center tracks the parameters it is used with.
  center = update_center(center, config.center, model, windows, config.threads);

  result.detector.model = std::move(model);
  result.detector.center = std::move(center);
  std::vector<double> scores = score_window_tensor(result.detector, windows, config.score_kind, config.threads);
  result.detector.train_median_score = quantile(std::move(scores), 0.5);
  return result;
}

namespace {

PreparedWindows finish(std::vector<PoseWindow> stage1, const RobustStats& stats) {
  PreparedWindows out;
  out.stats = stats;
  out.windows.reserve(stage1.size());
  for (const PoseWindow& w : stage1) out.windows.push_back(apply_robust_stats(w, stats));
  out.batch = stack_windows(out.windows);
  return out;
}

std::vector<PoseWindow> stage1_windows(std::span<const AgentTrajectory> trajectories, std::size_t window,
                                       std::size_t stride) {
  std::vector<PoseWindow> raw = window_slice(trajectories, window, stride);
  for (PoseWindow& w : raw) w = normalize_frames(w);
  return raw;
}

}  // namespace

PreparedWindows prepare_training_windows(std::span<const AgentTrajectory> trajectories, std::size_t window,
                                         std::size_t stride) {
  auto stage1 = stage1_windows(trajectories, window, stride);
  if (stage1.empty()) throw EmptySetError("training trajectories yield no windows of length " + std::to_string(window));
  const RobustStats stats = fit_robust_stats(stage1);
  return finish(std::move(stage1), stats);
}

PreparedWindows prepare_windows(std::span<const AgentTrajectory> trajectories, std::size_t window,
                                std::size_t stride, const RobustStats& stats) {
  return finish(stage1_windows(trajectories, window, stride), stats);
}

void write_loss_csv(std::ostream& out, std::span<const EpochRecord> history) {
  out << "epoch,mean_loss,embedding_variance,center_norm\n";
  char buf[128];
  for (const EpochRecord& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", r.epoch, r.mean_loss, r.embedding_variance,
                  r.center_norm);
    out << buf;
  }
}

void write_center_csv(std::ostream& out, std::span<const EpochRecord> history) {
  out << "epoch";
  const std::size_t n = history.empty() ? 0 : history.front().center.size();
  for (std::size_t j = 0; j < n; ++j) out << ",c" << j;
  out << '\n';
  char buf[64];
  for (const EpochRecord& r : history) {
    out << r.epoch;
    for (double v : r.center) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace skad
