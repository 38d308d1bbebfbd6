#pragma once

#include <cstdint>
#include <span>

#include "skad/data.hpp"

namespace skad {

/// Desk-scale stand-in for real pose-tracking output.
///
/// Normal agents walk: every joint swings sinusoidally at a low gait frequency
/// around a template skeleton while the body root drifts across the frame.
/// In each test clip one agent turns anomalous for a contiguous segment of
/// round(anomaly_fraction · frames) frames, either with high-frequency joint
/// jitter or by freezing in a still posture tilted by `frozen_tilt_deg`
/// (90 = lying on the ground). Frames of that segment are labeled 1.
/// Training clips contain normal agents only.
struct SynthConfig {
  std::size_t train_clips = 20;
  std::size_t test_clips = 20;
  std::size_t frames_per_clip = 200;
  std::size_t agents_per_clip = 2;
  std::size_t joints = kDefaultJoints;
  double anomaly_fraction = 0.3;
  /// Displacement variance of jittered frames relative to the agent's normal motion.
  double jitter_factor = 25.0;
  double frozen_tilt_deg = 90.0;
  /// Probability that a normal agent has one short tracking gap.
  double gap_probability = 0.2;
  /// Pixel noise of the simulated pose estimator.
  double keypoint_noise = 0.3;

  void validate() const;
};

enum class AnomalyKind { jitter, frozen };

/// Where the generator placed an anomaly (ground truth beyond frame labels).
struct InjectedAnomaly {
  std::string clip_id;
  std::string agent_id;
  AnomalyKind kind;
  long first_frame;
  long last_frame;  // inclusive
};

struct SynthDataset {
  std::vector<AgentTrajectory> train;
  std::vector<FrameLabelTrack> train_labels;
  std::vector<AgentTrajectory> test;
  std::vector<FrameLabelTrack> test_labels;
  std::vector<InjectedAnomaly> anomalies;
};

SynthDataset synth_dataset(std::uint64_t seed, const SynthConfig& config);

/// Variance of frame-to-frame joint displacements (x and y pooled) over the
/// consecutive frames of `trajectory` with index in [first, last].
double displacement_variance(const AgentTrajectory& trajectory, long first, long last);

}  // namespace skad
