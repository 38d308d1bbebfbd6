#include "skad/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "json.hpp"

#include "skad/errors.hpp"

namespace skad {

std::vector<WindowScore> attach_scores(std::span<const PoseWindow> windows, std::span<const double> values) {
  if (windows.size() != values.size()) throw DimensionError("attach_scores: window and score counts differ");
  std::vector<WindowScore> out;
  out.reserve(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    out.push_back({windows[i].clip_id, windows[i].agent_id, windows[i].start_frame, values[i]});
  }
  return out;
}

std::vector<WindowScore> score_windows(const Detector& detector, std::span<const PoseWindow> windows,
                                       ScoreKind kind, std::size_t threads) {
  if (windows.empty()) return {};
  const std::vector<double> values = score_window_tensor(detector, stack_windows(windows), kind, threads);
  return attach_scores(windows, values);
}

std::optional<double> agent_frame_score(std::span<const WindowScore> scores, const std::string& clip_id,
                                        const std::string& agent_id, long frame, std::size_t window) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const WindowScore& s : scores) {
    if (s.clip_id != clip_id || s.agent_id != agent_id) continue;
    if (frame < s.start_frame || frame >= s.start_frame + static_cast<long>(window)) continue;
    sum += s.score;
    ++count;
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

std::optional<double> frame_score(std::span<const WindowScore> scores, const std::string& clip_id, long frame,
                                  std::size_t window) {
  std::optional<double> best;
  std::vector<std::string> seen;
  for (const WindowScore& s : scores) {
    if (s.clip_id != clip_id || std::find(seen.begin(), seen.end(), s.agent_id) != seen.end()) continue;
    seen.push_back(s.agent_id);
    if (auto a = agent_frame_score(scores, clip_id, s.agent_id, frame, window)) best = best ? std::max(*best, *a) : *a;
  }
  return best;
}

std::vector<AnomalyTimeline> build_timelines(std::span<const WindowScore> scores, std::size_t window,
                                             std::span<const std::pair<std::string, std::size_t>> clip_lengths,
                                             UncoveredPolicy policy, double fill_score) {
  struct Accum {
    std::vector<double> sum;
    std::vector<std::size_t> count;
  };
  std::map<std::string, std::size_t> lengths;
  std::vector<std::string> order;
  for (const auto& [clip, len] : clip_lengths) {
    if (lengths.emplace(clip, len).second) order.push_back(clip);
  }
  for (const WindowScore& s : scores) {
    if (s.start_frame < 0) throw DomainError("window starts at a negative frame");
    const std::size_t end = static_cast<std::size_t>(s.start_frame) + window;
    auto [it, inserted] = lengths.emplace(s.clip_id, end);
    if (inserted) order.push_back(s.clip_id);
  }
  // Clips absent from clip_lengths grow to their last covered frame.
  std::map<std::string, bool> sized;
  for (const auto& [clip, len] : clip_lengths) sized[clip] = true;
  for (const WindowScore& s : scores) {
    if (!sized.count(s.clip_id)) {
      auto& len = lengths[s.clip_id];
      len = std::max(len, static_cast<std::size_t>(s.start_frame) + window);
    }
  }

  std::map<std::pair<std::string, std::string>, Accum> agents;
  for (const WindowScore& s : scores) {
    if (!std::isfinite(s.score)) throw DomainError("non-finite window score in clip " + s.clip_id);
    const std::size_t len = lengths[s.clip_id];
    Accum& a = agents[{s.clip_id, s.agent_id}];
    if (a.sum.empty()) {
      a.sum.assign(len, 0.0);
      a.count.assign(len, 0);
    }
    const std::size_t first = static_cast<std::size_t>(s.start_frame);
    for (std::size_t f = first; f < std::min(len, first + window); ++f) {
      a.sum[f] += s.score;
      ++a.count[f];
    }
  }

  std::map<std::string, AnomalyTimeline> timelines;
  for (const std::string& clip : order) {
    AnomalyTimeline t;
    t.clip_id = clip;
    t.scores.assign(lengths[clip], 0.0);
    t.covered.assign(lengths[clip], false);
    t.filled.assign(lengths[clip], false);
    timelines.emplace(clip, std::move(t));
  }
  for (const auto& [key, a] : agents) {
    AnomalyTimeline& t = timelines.at(key.first);
    for (std::size_t f = 0; f < a.sum.size(); ++f) {
      if (a.count[f] == 0) continue;
      const double s = a.sum[f] / static_cast<double>(a.count[f]);
      t.scores[f] = t.covered[f] ? std::max(t.scores[f], s) : s;
      t.covered[f] = true;
    }
  }
  std::vector<AnomalyTimeline> out;
  for (const std::string& clip : order) {
    AnomalyTimeline& t = timelines.at(clip);
    if (policy == UncoveredPolicy::median) {
      for (std::size_t f = 0; f < t.scores.size(); ++f) {
        if (t.covered[f]) continue;
        t.scores[f] = fill_score;
        t.filled[f] = true;
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("auc: score and label counts differ");
  std::uint64_t npos = 0, nneg = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw DomainError("auc: labels must be 0 or 1");
    if (std::isnan(scores[i])) throw DomainError("auc: NaN score");
    (labels[i] ? npos : nneg) += 1;
  }
  if (npos == 0 || nneg == 0) {
    throw UndefinedAucError("undefined AUC: only " + std::string(npos ? "positive" : "negative") + " frames");
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the positives' rank sum with tied groups sharing their average rank.
  std::uint64_t rank2_sum = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    std::uint64_t pos_in_group = 0;
    for (std::size_t k = i; k <= j; ++k) pos_in_group += static_cast<std::uint64_t>(labels[idx[k]]);
    rank2_sum += pos_in_group * static_cast<std::uint64_t>((i + 1) + (j + 1));
    i = j + 1;
  }
  const std::uint64_t u2 = rank2_sum - npos * (npos + 1);
  return static_cast<double>(u2) / static_cast<double>(2 * npos * nneg);
}

std::vector<FrameScoreRow> to_rows(std::span<const AnomalyTimeline> timelines) {
  std::vector<FrameScoreRow> rows;
  for (const AnomalyTimeline& t : timelines) {
    for (std::size_t f = 0; f < t.scores.size(); ++f) {
      if (t.defined(f)) rows.push_back({t.clip_id, static_cast<long>(f), t.scores[f], static_cast<bool>(t.covered[f])});
    }
  }
  return rows;
}

void write_scores(std::ostream& out, std::span<const AnomalyTimeline> timelines) {
  out << "clip_id,frame,score,covered\n";
  char buf[64];
  for (const FrameScoreRow& r : to_rows(timelines)) {
    std::snprintf(buf, sizeof buf, ",%ld,%.17g,%d\n", r.frame, r.score, r.covered ? 1 : 0);
    out << r.clip_id << buf;
  }
}

std::vector<FrameScoreRow> read_scores(std::istream& in) {
  std::vector<FrameScoreRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1 && line.rfind("clip_id,", 0) == 0) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (fields.size() != 4) throw ParseError("score row needs 4 fields", lineno);
    FrameScoreRow r;
    r.clip_id = fields[0];
    try {
      std::size_t used = 0;
      r.frame = std::stol(fields[1], &used);
      if (used != fields[1].size()) throw std::invalid_argument("frame");
      r.score = std::stod(fields[2], &used);
      if (used != fields[2].size()) throw std::invalid_argument("score");
    } catch (const std::logic_error&) {
      throw ParseError("malformed score row '" + line + "'", lineno);
    }
    if (fields[3] != "0" && fields[3] != "1") throw ParseError("covered flag must be 0 or 1", lineno);
    r.covered = fields[3] == "1";
    rows.push_back(std::move(r));
  }
  return rows;
}

EvalReport evaluate(std::span<const FrameScoreRow> rows, std::span<const FrameLabelTrack> labels) {
  std::map<std::string, const FrameLabelTrack*> by_clip;
  for (const FrameLabelTrack& t : labels) by_clip[t.clip_id] = &t;
  std::map<std::string, std::pair<std::vector<double>, std::vector<int>>> per_clip;
  std::vector<std::string> order;
  for (const FrameScoreRow& r : rows) {
    auto it = by_clip.find(r.clip_id);
    if (it == by_clip.end() || r.frame < 0 || static_cast<std::size_t>(r.frame) >= it->second->labels.size()) continue;
    auto [pc, inserted] = per_clip.try_emplace(r.clip_id);
    if (inserted) order.push_back(r.clip_id);
    pc->second.first.push_back(r.score);
    pc->second.second.push_back(it->second->labels[static_cast<std::size_t>(r.frame)]);
  }
  if (per_clip.empty()) throw EmptySetError("scores and labels share no clip ids");
  EvalReport report;
  std::vector<double> all_scores;
  std::vector<int> all_labels;
  for (const std::string& clip : order) {
    const auto& [s, l] = per_clip.at(clip);
    ClipAuc c{clip, s.size(), std::nullopt};
    try {
      c.auc = auc(s, l);
    } catch (const UndefinedAucError&) {
    }
    report.clips.push_back(c);
    all_scores.insert(all_scores.end(), s.begin(), s.end());
    all_labels.insert(all_labels.end(), l.begin(), l.end());
  }
  report.frames = all_scores.size();
  report.positives = static_cast<std::size_t>(std::count(all_labels.begin(), all_labels.end(), 1));
  report.overall_auc = auc(all_scores, all_labels);
  return report;
}

std::string report_text(const EvalReport& report) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "overall_auc %.6f\nframes %zu\npositives %zu\n", report.overall_auc, report.frames,
                report.positives);
  out += buf;
  for (const ClipAuc& c : report.clips) {
    if (c.auc) {
      std::snprintf(buf, sizeof buf, " %zu %.6f\n", c.frames, *c.auc);
    } else {
      std::snprintf(buf, sizeof buf, " %zu undefined\n", c.frames);
    }
    out += "clip " + c.clip_id + buf;
  }
  return out;
}

std::string report_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["overall_auc"] = report.overall_auc;
  j["frames"] = report.frames;
  j["positives"] = report.positives;
  j["clips"] = nlohmann::ordered_json::array();
  for (const ClipAuc& c : report.clips) {
    nlohmann::ordered_json e;
    e["clip_id"] = c.clip_id;
    e["frames"] = c.frames;
    e["auc"] = c.auc ? nlohmann::ordered_json(*c.auc) : nlohmann::ordered_json(nullptr);
    j["clips"].push_back(e);
  }
  return j.dump(2) + "\n";
}

double log_displacement_variance(const PoseWindow& window) {
  const Tensor& v = window.values;
  if (v.rank() != 3 || v.dim(0) < 2) throw DimensionError("displacement variance needs a [T>=2,V,2] window");
  const std::size_t stride = v.dim(1) * v.dim(2);
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 1; t < v.dim(0); ++t) {
    for (std::size_t k = 0; k < stride; ++k) {
      const double d = v[t * stride + k] - v[(t - 1) * stride + k];
      sum += d;
      sq += d * d;
      ++n;
    }
  }
  const double mean = sum / static_cast<double>(n);
  return std::log(std::max(0.0, sq / static_cast<double>(n) - mean * mean) + 1e-12);
}

std::vector<double> baseline_scores(std::span<const PoseWindow> train, std::span<const PoseWindow> test) {
  if (train.empty()) throw EmptySetError("baseline needs training windows");
  double ref = 0.0;
  for (const PoseWindow& w : train) ref += log_displacement_variance(w);
  ref /= static_cast<double>(train.size());
  std::vector<double> out;
  out.reserve(test.size());
  for (const PoseWindow& w : test) out.push_back(std::abs(log_displacement_variance(w) - ref));
  return out;
}

}  // namespace skad
