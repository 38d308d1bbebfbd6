#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "skad/data.hpp"
#include "skad/manifold.hpp"
#include "skad/model.hpp"

namespace skad {

enum class CenterStrategy { fixed, dynamic };
CenterStrategy parse_center_strategy(std::string_view name);  // "static" | "dynamic"
std::string_view to_string(CenterStrategy strategy);

/// Window score in autoencoder mode: distance, reconstruction error, or their sum.
enum class ScoreKind { hyp, rec, rec_hyp };
ScoreKind parse_score_kind(std::string_view name);  // "hyp" | "rec" | "rec+hyp" (s_ prefixes accepted)
std::string_view to_string(ScoreKind kind);

/// How frames without any covering window are handled when scoring.
enum class UncoveredPolicy { exclude, median };
UncoveredPolicy parse_uncovered_policy(std::string_view name);
std::string_view to_string(UncoveredPolicy policy);

struct TrainConfig {
  std::size_t epochs = 80;
  double learning_rate = 1e-4;
  std::size_t batch_size = 256;
  double weight_decay = 1e-5;  // alpha
  Manifold manifold = Manifold::hyperbolic;
  CenterStrategy center = CenterStrategy::dynamic;
  ModelConfig model;
  double rec_weight = 1.0;  // gamma
  double dir_weight = 1.0;  // phi, spherical only
  ScoreKind score_kind = ScoreKind::hyp;
  std::uint64_t seed = 0;
  std::size_t stride = 1;  // training window stride; scoring always uses stride 1
  std::size_t threads = 1;
  UncoveredPolicy uncovered = UncoveredPolicy::exclude;

  void validate() const;
  std::size_t window() const { return model.encoder.frames; }
  std::size_t joints() const { return model.encoder.joints; }
};

/// Center of the training latent points, a valid point of `manifold` once set.
struct CenterState {
  Manifold manifold = Manifold::euclidean;
  std::vector<double> coords;

  bool initialized() const { return !coords.empty(); }
  Tensor tensor() const { return Tensor({coords.size()}, coords); }
  friend bool operator==(const CenterState&, const CenterState&) = default;
};

/// Everything needed to score new data.
struct Detector {
  TrainConfig config;
  Model model;
  CenterState center;
  RobustStats stats;
  double train_median_score = 0.0;
};

struct LossTerms {
  BoundParams params;
  Var total;
  double distance = 0.0;  // mean distance term (phi-weighted for spherical)
  double reconstruction = 0.0;  // gamma-weighted
  double decay = 0.0;  // alpha-weighted
  Var points;  // manifold points [N,n]
};

/// Per-batch objective:
///   euclidean  mean d_E(latent, c)
///   hyperbolic mean d_D(exp0(latent), c)
///   spherical  phi * mean(1 - x.c) on unit-normalized latents
/// plus gamma * MSE reconstruction in autoencoder mode and alpha * sum of squared
/// decay weights. The center enters as a constant.
LossTerms objective(Tape& tape, Model& model, const Tensor& batch, const CenterState& center,
                    const TrainConfig& config, Mode mode);

/// Rows of `data` [N,...] selected by `indices`.
Tensor gather_rows(const Tensor& data, std::span<const std::size_t> indices);

/// Manifold points of every window [N,T,V,2] in infer mode, in chunks of 256.
/// Chunks may run on several threads; results do not depend on the thread count.
Tensor latent_points(const Model& model, const Tensor& windows, Manifold manifold, std::size_t threads = 1);

CenterState init_center(const Model& model, const Tensor& windows, Manifold manifold, std::size_t threads = 1);
/// Static: unchanged. Dynamic: centroid of the current latent points.
CenterState update_center(const CenterState& center, CenterStrategy strategy, const Model& model,
                          const Tensor& windows, std::size_t threads = 1);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double embedding_variance = 0.0;  // total variance of the epoch's training latent points
  double center_norm = 0.0;
  std::vector<double> center;  // center used during the epoch
};

struct TrainOptions {
  /// Called at each epoch start after the center update.
  std::function<void(std::size_t epoch, const Model&, const CenterState&)> on_epoch_start;
  /// Replaces the initial centroid; useful for experiments with a fixed target.
  std::optional<CenterState> initial_center;
};

struct TrainResult {
  Detector detector;
  std::vector<EpochRecord> history;
};

/// Trains on normalized windows [N,T,V,2]. Throws NumericalError on a
/// non-finite batch loss, naming the epoch and batch.
TrainResult train(const Tensor& windows, const RobustStats& stats, const TrainConfig& config,
                  const TrainOptions& options = {});

/// Window-level scores of normalized windows [N,T,V,2] under `kind`.
std::vector<double> score_window_tensor(const Detector& detector, const Tensor& windows, ScoreKind kind,
                                        std::size_t threads = 1);

/// Slices, fits stage-2 statistics on, and normalizes training trajectories.
struct PreparedWindows {
  std::vector<PoseWindow> windows;  // fully normalized
  Tensor batch;                     // [N,T,V,2]
  RobustStats stats;
};
PreparedWindows prepare_training_windows(std::span<const AgentTrajectory> trajectories, std::size_t window,
                                         std::size_t stride);
/// Normalizes windows of new data with known statistics.
PreparedWindows prepare_windows(std::span<const AgentTrajectory> trajectories, std::size_t window,
                                std::size_t stride, const RobustStats& stats);

void write_loss_csv(std::ostream& out, std::span<const EpochRecord> history);
/// `epoch,c0,c1,...` per epoch.
void write_center_csv(std::ostream& out, std::span<const EpochRecord> history);

}  // namespace skad
