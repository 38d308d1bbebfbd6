#include "skad/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "skad/errors.hpp"

namespace skad {
namespace {

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string_view trim_cr(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_number(std::string_view field, std::size_t line, const char* what) {
  T value{};
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ParseError(std::string("invalid ") + what + " '" + std::string(field) + "'", line);
  }
  return value;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::string format_coord(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string format_exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::vector<AgentTrajectory> read_trajectories(std::istream& in, std::size_t joints) {
  std::map<std::pair<std::string, std::string>, AgentTrajectory> grouped;
  std::map<std::pair<std::string, std::string>, std::size_t> first_line;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string_view text = trim_cr(raw);
    if (text.empty() || text.front() == '#') continue;
    const auto fields = split(text, '\t');
    if (fields.size() != 4) {
      throw ParseError("expected 4 tab-separated fields, got " + std::to_string(fields.size()), line);
    }
    if (fields[0].empty() || fields[1].empty()) throw ParseError("empty clip or agent id", line);
    PoseFrame frame;
    frame.frame = parse_number<long>(fields[2], line, "frame index");
    const auto coords = split(fields[3], ',');
    frame.coords.reserve(coords.size());
    for (auto c : coords) frame.coords.push_back(parse_number<double>(c, line, "coordinate"));
    if (coords.size() % kCoords != 0 || coords.size() / kCoords != joints) {
      throw SchemaError("record " + std::string(fields[0]) + "/" + std::string(fields[1]) + "/" +
                            std::string(fields[2]) + " has " + std::to_string(coords.size()) +
                            " coordinates, expected " + std::to_string(joints * kCoords) + " (" +
                            std::to_string(joints) + " joints)",
                        line);
    }
    const auto key = std::make_pair(std::string(fields[0]), std::string(fields[1]));
    auto& traj = grouped[key];
    if (traj.frames.empty()) {
      traj.clip_id = key.first;
      traj.agent_id = key.second;
      first_line[key] = line;
    }
    traj.frames.push_back(std::move(frame));
  }

  std::vector<AgentTrajectory> out;
  out.reserve(grouped.size());
  for (auto& [key, traj] : grouped) {
    std::stable_sort(traj.frames.begin(), traj.frames.end(),
                     [](const PoseFrame& a, const PoseFrame& b) { return a.frame < b.frame; });
    for (std::size_t i = 1; i < traj.frames.size(); ++i) {
      if (traj.frames[i].frame == traj.frames[i - 1].frame) {
        throw SchemaError("duplicate frame " + std::to_string(traj.frames[i].frame) + " for " +
                              key.first + "/" + key.second,
                          first_line[key]);
      }
    }
    out.push_back(std::move(traj));
  }
  return out;
}

std::vector<AgentTrajectory> load_trajectories(const std::filesystem::path& path, std::size_t joints) {
  auto in = open_input(path);
  return read_trajectories(in, joints);
}

std::vector<FrameLabelTrack> read_labels(std::istream& in) {
  std::map<std::string, std::map<long, int>> grouped;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string_view text = trim_cr(raw);
    if (text.empty() || text.front() == '#') continue;
    const auto fields = split(text, '\t');
    if (fields.size() != 3) {
      throw ParseError("expected 3 tab-separated fields, got " + std::to_string(fields.size()), line);
    }
    const long frame = parse_number<long>(fields[1], line, "frame index");
    const int label = parse_number<int>(fields[2], line, "label");
    if (label != 0 && label != 1) throw SchemaError("label must be 0 or 1", line);
    if (frame < 0) throw SchemaError("negative frame index", line);
    auto& clip = grouped[std::string(fields[0])];
    if (!clip.emplace(frame, label).second) throw SchemaError("duplicate label for frame", line);
  }
  std::vector<FrameLabelTrack> out;
  for (auto& [clip, frames] : grouped) {
    FrameLabelTrack track{clip, {}};
    for (const auto& [frame, label] : frames) {
      if (frame != static_cast<long>(track.labels.size())) {
        throw SchemaError("labels of clip " + clip + " are not contiguous from frame 0", line);
      }
      track.labels.push_back(label);
    }
    out.push_back(std::move(track));
  }
  return out;
}

std::vector<FrameLabelTrack> load_labels(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_labels(in);
}

Dataset load_dataset(const std::filesystem::path& trajectories,
                     const std::optional<std::filesystem::path>& labels, std::size_t joints) {
  Dataset data;
  data.trajectories = load_trajectories(trajectories, joints);
  if (labels) data.labels = load_labels(*labels);
  return data;
}

void write_trajectories(std::ostream& out, std::span<const AgentTrajectory> trajectories) {
  std::string line;
  for (const auto& traj : trajectories) {
    for (const auto& f : traj.frames) {
      line = traj.clip_id + '\t' + traj.agent_id + '\t' + std::to_string(f.frame) + '\t';
      for (std::size_t i = 0; i < f.coords.size(); ++i) {
        if (i) line += ',';
        line += format_coord(f.coords[i]);
      }
      line += '\n';
      out << line;
    }
  }
}

void write_labels(std::ostream& out, std::span<const FrameLabelTrack> labels) {
  for (const auto& track : labels)
    for (std::size_t f = 0; f < track.labels.size(); ++f)
      out << track.clip_id << '\t' << f << '\t' << track.labels[f] << '\n';
}

void save_trajectories(const std::filesystem::path& path, std::span<const AgentTrajectory> trajectories) {
  auto out = open_output(path);
  write_trajectories(out, trajectories);
  if (!out) throw IoError("write failed: " + path.string());
}

void save_labels(const std::filesystem::path& path, std::span<const FrameLabelTrack> labels) {
  auto out = open_output(path);
  write_labels(out, labels);
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<PoseWindow> window_slice(const AgentTrajectory& trajectory, std::size_t window,
                                     std::size_t stride) {
  if (window < 1 || stride < 1) throw ConfigError("window length and stride must be >= 1");
  std::vector<PoseWindow> out;
  const auto& frames = trajectory.frames;
  const std::size_t joints = trajectory.joints();
  std::size_t run_start = 0;
  while (run_start < frames.size()) {
    std::size_t run_end = run_start + 1;
    while (run_end < frames.size() && frames[run_end].frame == frames[run_end - 1].frame + 1) ++run_end;
    for (std::size_t s = run_start; s + window <= run_end; s += stride) {
      PoseWindow w;
      w.clip_id = trajectory.clip_id;
      w.agent_id = trajectory.agent_id;
      w.start_frame = frames[s].frame;
      w.values = Tensor({window, joints, kCoords});
      auto dst = w.values.data();
      for (std::size_t t = 0; t < window; ++t) {
        const auto& c = frames[s + t].coords;
        std::copy(c.begin(), c.end(), dst.begin() + static_cast<std::ptrdiff_t>(t * joints * kCoords));
      }
      out.push_back(std::move(w));
    }
    run_start = run_end;
  }
  return out;
}

std::vector<PoseWindow> window_slice(std::span<const AgentTrajectory> trajectories,
                                     std::size_t window, std::size_t stride) {
  std::vector<PoseWindow> out;
  for (const auto& traj : trajectories) {
    auto w = window_slice(traj, window, stride);
    std::move(w.begin(), w.end(), std::back_inserter(out));
  }
  return out;
}

PoseWindow normalize_frames(const PoseWindow& window) {
  PoseWindow out = window;
  const std::size_t frames = window.values.dim(0), joints = window.values.dim(1);
  auto v = out.values.data();
  for (std::size_t t = 0; t < frames; ++t) {
    double lo[kCoords] = {v[t * joints * kCoords], v[t * joints * kCoords + 1]};
    double hi[kCoords] = {lo[0], lo[1]};
    for (std::size_t j = 0; j < joints; ++j)
      for (std::size_t c = 0; c < kCoords; ++c) {
        const double e = v[(t * joints + j) * kCoords + c];
        lo[c] = std::min(lo[c], e);
        hi[c] = std::max(hi[c], e);
      }
    for (std::size_t c = 0; c < kCoords; ++c) {
      const double center = 0.5 * (lo[c] + hi[c]);
      double extent = hi[c] - lo[c];
      if (!(extent > 0.0)) {
        extent = 1.0;
        out.degenerate = true;
      }
      for (std::size_t j = 0; j < joints; ++j) {
        double& e = v[(t * joints + j) * kCoords + c];
        e = (e - center) / extent;
      }
    }
  }
  return out;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw EmptySetError("quantile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

RobustStats fit_robust_stats(std::span<const PoseWindow> stage1_windows) {
  if (stage1_windows.empty()) throw EmptySetError("robust statistics need at least one training window");
  RobustStats stats;
  for (std::size_t c = 0; c < kCoords; ++c) {
    std::vector<double> channel;
    for (const auto& w : stage1_windows) {
      const auto v = w.values.data();
      for (std::size_t i = c; i < v.size(); i += kCoords) channel.push_back(v[i]);
    }
    stats.median[c] = quantile(channel, 0.5);
    const double iqr = quantile(channel, 0.75) - quantile(channel, 0.25);
    stats.iqr[c] = iqr > 0.0 ? iqr : 1.0;
  }
  return stats;
}

PoseWindow apply_robust_stats(const PoseWindow& stage1, const RobustStats& stats) {
  PoseWindow out = stage1;
  auto v = out.values.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t c = i % kCoords;
    v[i] = (v[i] - stats.median[c]) / stats.iqr[c];
  }
  return out;
}

PoseWindow normalize_pose(const PoseWindow& raw, const RobustStats& stats) {
  return apply_robust_stats(normalize_frames(raw), stats);
}

std::string robust_stats_to_text(const RobustStats& stats) {
  std::string out;
  const char* names[kCoords] = {"x", "y"};
  for (std::size_t c = 0; c < kCoords; ++c) {
    out += std::string("median_") + names[c] + " = " + format_exact(stats.median[c]) + "\n";
    out += std::string("iqr_") + names[c] + " = " + format_exact(stats.iqr[c]) + "\n";
  }
  return out;
}

RobustStats robust_stats_from_text(const std::string& text) {
  RobustStats stats;
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0, seen = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto eq = raw.find('=');
    if (raw.empty() || raw[0] == '#') continue;
    if (eq == std::string::npos) throw ParseError("expected key = value", line);
    std::string key = raw.substr(0, eq);
    std::string val = raw.substr(eq + 1);
    key.erase(key.find_last_not_of(' ') + 1);
    val.erase(0, val.find_first_not_of(' '));
    const double v = parse_number<double>(trim_cr(val), line, key.c_str());
    if (key == "median_x") stats.median[0] = v;
    else if (key == "median_y") stats.median[1] = v;
    else if (key == "iqr_x") stats.iqr[0] = v;
    else if (key == "iqr_y") stats.iqr[1] = v;
    else throw ParseError("unknown key '" + key + "'", line);
    ++seen;
  }
  if (seen != 4) throw ParseError("normalization stats need 4 keys", line);
  return stats;
}

void save_robust_stats(const std::filesystem::path& path, const RobustStats& stats) {
  auto out = open_output(path);
  out << robust_stats_to_text(stats);
}

RobustStats load_robust_stats(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return robust_stats_from_text(ss.str());
}

Tensor stack_windows(std::span<const PoseWindow> windows) {
  std::vector<std::size_t> idx(windows.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return stack_windows(windows, idx);
}

Tensor stack_windows(std::span<const PoseWindow> windows, std::span<const std::size_t> indices) {
  if (indices.empty()) throw EmptySetError("cannot stack an empty window batch");
  const Shape& one = windows[indices.front()].values.shape();
  Shape shape{indices.size()};
  shape.insert(shape.end(), one.begin(), one.end());
  Tensor out(shape);
  const std::size_t per = shape_size(one);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& v = windows[indices[i]].values;
    if (v.shape() != one) throw DimensionError("stack_windows: inconsistent window shapes");
    std::copy(v.data().begin(), v.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

std::vector<std::pair<std::string, std::size_t>> clip_lengths(const Dataset& data) {
  std::map<std::string, std::size_t> len;
  for (const auto& traj : data.trajectories)
    if (!traj.frames.empty()) {
      auto& l = len[traj.clip_id];
      l = std::max(l, static_cast<std::size_t>(traj.frames.back().frame + 1));
    }
  for (const auto& track : data.labels) len[track.clip_id] = track.labels.size();
  return {len.begin(), len.end()};
}

}  // namespace skad
