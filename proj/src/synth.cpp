#include "skad/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "skad/errors.hpp"

namespace skad {
namespace {

using Rng = std::mt19937_64;

struct Vec2 {
  double x, y;
};

// COCO-17 layout, hip center at the origin, y pointing down, height ~1.8.
constexpr std::array<Vec2, 17> kCocoTemplate{{
    {0.00, -0.85}, {0.03, -0.88}, {-0.03, -0.88}, {0.06, -0.86}, {-0.06, -0.86},
    {0.12, -0.68}, {-0.12, -0.68}, {0.16, -0.45}, {-0.16, -0.45}, {0.17, -0.22},
    {-0.17, -0.22}, {0.08, 0.00}, {-0.08, 0.00}, {0.09, 0.45}, {-0.09, 0.45},
    {0.09, 0.90}, {-0.09, 0.90},
}};
// Swing amplitude per COCO joint (wrists and ankles swing most).
constexpr std::array<double, 17> kCocoSwing{0.01, 0.01, 0.01, 0.01, 0.01, 0.02, 0.02, 0.07, 0.07,
                                            0.13, 0.13, 0.01, 0.01, 0.08, 0.08, 0.15, 0.15};

struct Skeleton {
  std::vector<Vec2> base;
  std::vector<double> swing;
  std::vector<double> side;  // +1 / -1: left and right limbs swing in antiphase
};

Skeleton make_skeleton(std::size_t joints) {
  Skeleton s;
  if (joints == kCocoTemplate.size()) {
    s.base.assign(kCocoTemplate.begin(), kCocoTemplate.end());
    s.swing.assign(kCocoSwing.begin(), kCocoSwing.end());
    for (std::size_t j = 0; j < joints; ++j) s.side.push_back(j == 0 || j % 2 == 1 ? 1.0 : -1.0);
    return s;
  }
  // Generic layout for small test graphs: joints spread on a vertical ellipse.
  for (std::size_t j = 0; j < joints; ++j) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(joints);
    s.base.push_back({0.25 * std::sin(a), -0.9 * std::cos(a)});
    s.swing.push_back(0.05 + 0.1 * static_cast<double>(j % 3) / 2.0);
    s.side.push_back(j % 2 ? 1.0 : -1.0);
  }
  return s;
}

struct Walker {
  double freq, phase, height, x0, y0, vx, sway_phase;
};

Walker sample_walker(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Walker w;
  w.freq = 0.03 + 0.03 * u(rng);
  w.phase = 2.0 * std::numbers::pi * u(rng);
  w.height = 80.0 + 80.0 * u(rng);
  w.x0 = 100.0 + 600.0 * u(rng);
  w.y0 = 200.0 + 250.0 * u(rng);
  w.vx = (u(rng) < 0.5 ? -1.0 : 1.0) * w.freq * w.height * (0.6 + 0.4 * u(rng));
  w.sway_phase = 2.0 * std::numbers::pi * u(rng);
  return w;
}

// Clean (noise-free) joint positions of a walker at frame t.
std::vector<double> walk_pose(const Skeleton& sk, const Walker& w, double t) {
  const double theta = 2.0 * std::numbers::pi * w.freq * t + w.phase;
  const double rx = w.x0 + w.vx * t + 3.0 * std::sin(2.0 * std::numbers::pi * t / 150.0 + w.sway_phase);
  const double ry = w.y0 + 0.01 * w.height * std::sin(2.0 * theta);
  std::vector<double> out(sk.base.size() * 2);
  for (std::size_t j = 0; j < sk.base.size(); ++j) {
    const double swing = sk.swing[j] * std::sin(theta + (sk.side[j] > 0 ? 0.0 : std::numbers::pi));
    const double lift = 0.3 * sk.swing[j] * std::cos(theta + (sk.side[j] > 0 ? 0.0 : std::numbers::pi));
    out[2 * j] = rx + w.height * (sk.base[j].x + swing);
    out[2 * j + 1] = ry + w.height * (sk.base[j].y - std::abs(lift));
  }
  return out;
}

// Still posture: template rotated by `tilt` about the hips, resting at the root.
std::vector<double> frozen_pose(const Skeleton& sk, const Walker& w, double t0, double tilt) {
  const auto start = walk_pose(sk, w, t0);
  double rx = 0.0;
  for (std::size_t j = 0; j < sk.base.size(); ++j) rx += start[2 * j] / static_cast<double>(sk.base.size());
  const double ry = w.y0 + 0.6 * w.height * std::sin(tilt);
  const double c = std::cos(tilt), s = std::sin(tilt);
  std::vector<double> out(sk.base.size() * 2);
  for (std::size_t j = 0; j < sk.base.size(); ++j) {
    const Vec2 b = sk.base[j];
    out[2 * j] = rx + w.height * (c * b.x - s * b.y);
    out[2 * j + 1] = ry + w.height * (s * b.x + c * b.y);
  }
  return out;
}

double pooled_displacement_variance(const std::vector<std::vector<double>>& poses) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 1; t < poses.size(); ++t)
    for (std::size_t k = 0; k < poses[t].size(); ++k) {
      const double d = poses[t][k] - poses[t - 1][k];
      sum += d;
      sq += d * d;
      ++n;
    }
  if (n < 2) return 0.0;
  const double m = sum / static_cast<double>(n);
  return (sq - static_cast<double>(n) * m * m) / static_cast<double>(n - 1);
}

struct AgentPlan {
  long first, last;
  bool anomalous = false;
  AnomalyKind kind = AnomalyKind::jitter;
  long seg_first = 0, seg_last = -1;
};

AgentTrajectory render_agent(Rng& rng, const SynthConfig& cfg, const Skeleton& sk,
                             const std::string& clip, std::size_t index, const AgentPlan& plan) {
  const Walker w = sample_walker(rng);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  std::vector<std::vector<double>> clean;
  for (long f = plan.first; f <= plan.last; ++f) clean.push_back(walk_pose(sk, w, static_cast<double>(f)));
  const double normal_var = pooled_displacement_variance(clean) + 2.0 * cfg.keypoint_noise * cfg.keypoint_noise;
  const double jitter_sigma = std::sqrt(std::max(0.0, (cfg.jitter_factor - 1.0) * normal_var / 2.0));
  const double tilt = cfg.frozen_tilt_deg * std::numbers::pi / 180.0;
  const auto still = plan.anomalous && plan.kind == AnomalyKind::frozen
                         ? frozen_pose(sk, w, static_cast<double>(plan.seg_first), tilt)
                         : std::vector<double>{};

  long gap_first = 1, gap_last = 0;
  if (!plan.anomalous && u(rng) < cfg.gap_probability && plan.last - plan.first > 40) {
    const long len = 3 + static_cast<long>(u(rng) * 6.0);
    gap_first = plan.first + 10 + static_cast<long>(u(rng) * static_cast<double>(plan.last - plan.first - 20 - len));
    gap_last = gap_first + len - 1;
  }

  AgentTrajectory traj{clip, std::to_string(index), {}};
  for (long f = plan.first; f <= plan.last; ++f) {
    const bool in_segment = plan.anomalous && f >= plan.seg_first && f <= plan.seg_last;
    std::vector<double> pose = clean[static_cast<std::size_t>(f - plan.first)];
    if (in_segment && plan.kind == AnomalyKind::frozen) pose = still;
    for (double& e : pose) {
      e += cfg.keypoint_noise * noise(rng);
      if (in_segment && plan.kind == AnomalyKind::jitter) e += jitter_sigma * noise(rng);
    }
    if (f >= gap_first && f <= gap_last) continue;
    traj.frames.push_back(PoseFrame{f, std::move(pose)});
  }
  return traj;
}

}  // namespace

void SynthConfig::validate() const {
  if (!(anomaly_fraction >= 0.0 && anomaly_fraction <= 1.0)) {
    throw ConfigError("anomaly_fraction must lie in [0, 1], got " + std::to_string(anomaly_fraction));
  }
  if (frames_per_clip < 2) throw ConfigError("frames_per_clip must be >= 2");
  if (agents_per_clip < 1) throw ConfigError("agents_per_clip must be >= 1");
  if (joints < 2) throw ConfigError("joints must be >= 2");
  if (jitter_factor < 1.0) throw ConfigError("jitter_factor must be >= 1");
  if (!(gap_probability >= 0.0 && gap_probability <= 1.0)) throw ConfigError("gap_probability must lie in [0, 1]");
  if (keypoint_noise < 0.0) throw ConfigError("keypoint_noise must be >= 0");
}

SynthDataset synth_dataset(std::uint64_t seed, const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Skeleton sk = make_skeleton(cfg.joints);
  const long frames = static_cast<long>(cfg.frames_per_clip);
  const long margin = std::min<long>(15, frames / 10);

  auto presence = [&](AgentPlan& p) {
    p.first = static_cast<long>(u(rng) * static_cast<double>(margin));
    p.last = frames - 1 - static_cast<long>(u(rng) * static_cast<double>(margin));
  };

  SynthDataset out;
  char name[32];
  for (std::size_t c = 0; c < cfg.train_clips; ++c) {
    std::snprintf(name, sizeof name, "train_%03zu", c);
    for (std::size_t a = 0; a < cfg.agents_per_clip; ++a) {
      AgentPlan plan;
      presence(plan);
      out.train.push_back(render_agent(rng, cfg, sk, name, a, plan));
    }
    out.train_labels.push_back({name, std::vector<int>(cfg.frames_per_clip, 0)});
  }

  const long seg_len = std::lround(cfg.anomaly_fraction * static_cast<double>(frames));
  for (std::size_t c = 0; c < cfg.test_clips; ++c) {
    std::snprintf(name, sizeof name, "test_%03zu", c);
    FrameLabelTrack labels{name, std::vector<int>(cfg.frames_per_clip, 0)};
    const auto culprit = static_cast<std::size_t>(u(rng) * static_cast<double>(cfg.agents_per_clip));
    const AnomalyKind kind = u(rng) < 0.5 ? AnomalyKind::jitter : AnomalyKind::frozen;
    const long seg_first = static_cast<long>(u(rng) * static_cast<double>(frames - seg_len + 1));
    for (std::size_t a = 0; a < cfg.agents_per_clip; ++a) {
      AgentPlan plan;
      presence(plan);
      if (a == culprit && seg_len > 0) {
        plan.first = 0;
        plan.last = frames - 1;
        plan.anomalous = true;
        plan.kind = kind;
        plan.seg_first = std::min(seg_first, frames - seg_len);
        plan.seg_last = plan.seg_first + seg_len - 1;
        for (long f = plan.seg_first; f <= plan.seg_last; ++f) labels.labels[static_cast<std::size_t>(f)] = 1;
        out.anomalies.push_back({name, std::to_string(a), kind, plan.seg_first, plan.seg_last});
      }
      out.test.push_back(render_agent(rng, cfg, sk, name, a, plan));
    }
    out.test_labels.push_back(std::move(labels));
  }
  return out;
}

double displacement_variance(const AgentTrajectory& trajectory, long first, long last) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  const auto& fr = trajectory.frames;
  for (std::size_t i = 1; i < fr.size(); ++i) {
    if (fr[i].frame != fr[i - 1].frame + 1) continue;
    if (fr[i - 1].frame < first || fr[i].frame > last) continue;
    for (std::size_t k = 0; k < fr[i].coords.size(); ++k) {
      const double d = fr[i].coords[k] - fr[i - 1].coords[k];
      sum += d;
      sq += d * d;
      ++n;
    }
  }
  if (n < 2) return 0.0;
  const double m = sum / static_cast<double>(n);
  return (sq - static_cast<double>(n) * m * m) / static_cast<double>(n - 1);
}

}  // namespace skad
