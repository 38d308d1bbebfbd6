#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "skad/trainer.hpp"

namespace skad {

struct WindowScore {
  std::string clip_id;
  std::string agent_id;
  long start_frame = 0;
  double score = 0.0;
};

/// Distance (and, in autoencoder mode, reconstruction) scores of normalized windows.
std::vector<WindowScore> score_windows(const Detector& detector, std::span<const PoseWindow> windows,
                                       ScoreKind kind, std::size_t threads = 1);
/// Attaches precomputed values to the windows they came from.
std::vector<WindowScore> attach_scores(std::span<const PoseWindow> windows, std::span<const double> values);

/// Mean score of the agent's windows covering `frame`; nullopt if none does.
std::optional<double> agent_frame_score(std::span<const WindowScore> scores, const std::string& clip_id,
                                        const std::string& agent_id, long frame, std::size_t window);
/// Max over the agents covering `frame`; nullopt if none does.
std::optional<double> frame_score(std::span<const WindowScore> scores, const std::string& clip_id, long frame,
                                  std::size_t window);

/// Per-frame scores of one clip. scores[f] is meaningful where covered[f]
/// holds, or where it was filled in by the median policy (filled[f]).
struct AnomalyTimeline {
  std::string clip_id;
  std::vector<double> scores;
  std::vector<bool> covered;
  std::vector<bool> filled;

  bool defined(std::size_t f) const { return covered[f] || filled[f]; }
};

/// Builds one timeline per clip in `clip_lengths` (plus any clip only seen in
/// `scores`, sized to its last covered frame).
std::vector<AnomalyTimeline> build_timelines(std::span<const WindowScore> scores, std::size_t window,
                                             std::span<const std::pair<std::string, std::size_t>> clip_lengths,
                                             UncoveredPolicy policy = UncoveredPolicy::exclude,
                                             double fill_score = 0.0);

/// Rank-statistic ROC AUC; tied (positive, negative) pairs count one half.
/// Throws UndefinedAucError unless both classes occur.
double auc(std::span<const double> scores, std::span<const int> labels);

struct FrameScoreRow {
  std::string clip_id;
  long frame = 0;
  double score = 0.0;
  bool covered = true;
};

/// `clip_id,frame,score,covered`; one row per defined frame.
void write_scores(std::ostream& out, std::span<const AnomalyTimeline> timelines);
std::vector<FrameScoreRow> read_scores(std::istream& in);
std::vector<FrameScoreRow> to_rows(std::span<const AnomalyTimeline> timelines);

struct ClipAuc {
  std::string clip_id;
  std::size_t frames = 0;
  std::optional<double> auc;  // empty if the clip has a single class
};

struct EvalReport {
  double overall_auc = 0.0;
  std::size_t frames = 0;
  std::size_t positives = 0;
  std::vector<ClipAuc> clips;
};

/// Frame-level AUC over scored frames that have a label. Throws EmptySetError
/// if no clip is shared and UndefinedAucError if only one class remains.
EvalReport evaluate(std::span<const FrameScoreRow> rows, std::span<const FrameLabelTrack> labels);
std::string report_text(const EvalReport& report);
std::string report_json(const EvalReport& report);

/// log of the variance of frame-to-frame joint displacements of a window.
double log_displacement_variance(const PoseWindow& window);
/// Baseline: |log displacement variance - mean over training windows|.
std::vector<double> baseline_scores(std::span<const PoseWindow> train, std::span<const PoseWindow> test);

}  // namespace skad
