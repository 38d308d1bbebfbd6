#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "skad/tensor.hpp"

namespace skad {

inline constexpr std::size_t kDefaultJoints = 17;
inline constexpr std::size_t kDefaultWindow = 12;
inline constexpr std::size_t kCoords = 2;

struct PoseFrame {
  long frame = 0;
  std::vector<double> coords;  // x1,y1,...,xV,yV in pixels
};

/// One tracked person in one clip; frame indices strictly increasing.
struct AgentTrajectory {
  std::string clip_id;
  std::string agent_id;
  std::vector<PoseFrame> frames;

  std::size_t joints() const { return frames.empty() ? 0 : frames.front().coords.size() / kCoords; }
};

/// Per-frame ground truth of a clip: labels[f] is 1 if frame f is anomalous.
struct FrameLabelTrack {
  std::string clip_id;
  std::vector<int> labels;
};

struct Dataset {
  std::vector<AgentTrajectory> trajectories;
  std::vector<FrameLabelTrack> labels;
};

/// `clip<TAB>agent<TAB>frame<TAB>x1,y1,...` records; grouped by (clip, agent) and
/// sorted by frame. Throws ParseError / SchemaError with the offending line.
std::vector<AgentTrajectory> read_trajectories(std::istream& in, std::size_t joints = kDefaultJoints);
std::vector<AgentTrajectory> load_trajectories(const std::filesystem::path& path,
                                               std::size_t joints = kDefaultJoints);
/// `clip<TAB>frame<TAB>label` records; each clip must cover frames 0..F-1.
std::vector<FrameLabelTrack> read_labels(std::istream& in);
std::vector<FrameLabelTrack> load_labels(const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& trajectories,
                     const std::optional<std::filesystem::path>& labels,
                     std::size_t joints = kDefaultJoints);

void write_trajectories(std::ostream& out, std::span<const AgentTrajectory> trajectories);
void write_labels(std::ostream& out, std::span<const FrameLabelTrack> labels);
void save_trajectories(const std::filesystem::path& path, std::span<const AgentTrajectory> trajectories);
void save_labels(const std::filesystem::path& path, std::span<const FrameLabelTrack> labels);

/// T consecutive frames of one agent, values [T,V,2].
struct PoseWindow {
  std::string clip_id;
  std::string agent_id;
  long start_frame = 0;
  Tensor values;
  bool degenerate = false;  // some frame had a zero-width or zero-height box

  std::size_t frames() const { return values.dim(0); }
};

/// Windows over every maximal run of consecutive frame indices; a run of
/// length L >= T yields floor((L - T)/stride) + 1 windows. Gaps are never spanned.
std::vector<PoseWindow> window_slice(const AgentTrajectory& trajectory, std::size_t window,
                                     std::size_t stride);
std::vector<PoseWindow> window_slice(std::span<const AgentTrajectory> trajectories,
                                     std::size_t window, std::size_t stride);

/// Per-channel (x, y) median and interquartile range.
struct RobustStats {
  std::array<double, kCoords> median{0.0, 0.0};
  std::array<double, kCoords> iqr{1.0, 1.0};

  friend bool operator==(const RobustStats&, const RobustStats&) = default;
};

/// Stage 1: per frame, center on the joint bounding box and divide by its
/// width/height. A zero extent uses scale 1 and flags the window.
PoseWindow normalize_frames(const PoseWindow& window);
/// Median/IQR per channel over stage-1-normalized training windows.
RobustStats fit_robust_stats(std::span<const PoseWindow> stage1_windows);
/// Stage 2 only.
PoseWindow apply_robust_stats(const PoseWindow& stage1, const RobustStats& stats);
/// Both stages.
PoseWindow normalize_pose(const PoseWindow& raw, const RobustStats& stats);

/// Linear-interpolated quantile (q in [0,1]) of unsorted values.
double quantile(std::vector<double> values, double q);

std::string robust_stats_to_text(const RobustStats& stats);
RobustStats robust_stats_from_text(const std::string& text);
void save_robust_stats(const std::filesystem::path& path, const RobustStats& stats);
RobustStats load_robust_stats(const std::filesystem::path& path);

/// Stacks window values into a batch [N,T,V,2].
Tensor stack_windows(std::span<const PoseWindow> windows);
Tensor stack_windows(std::span<const PoseWindow> windows, std::span<const std::size_t> indices);

/// Number of frames of each clip: label length when present, else last frame + 1.
std::vector<std::pair<std::string, std::size_t>> clip_lengths(const Dataset& data);

}  // namespace skad
