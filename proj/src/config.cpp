#include "skad/config.hpp"

#include <cstdio>
#include <fstream>
#include <istream>
#include <sstream>

#include "skad/errors.hpp"

namespace skad {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    const unsigned long long n = std::stoull(v, &used);
    if (used == v.size()) return static_cast<std::size_t>(n);
  } catch (const std::logic_error&) {
  }
  throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::logic_error&) {
  }
  throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + v + "'");
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(to_size(key, trim(item)));
  if (out.empty()) throw ConfigError("'" + key + "' expects a comma-separated list");
  return out;
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

}  // namespace

KeyValues parse_key_values(std::istream& in) {
  KeyValues out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value', got '" + line + "'", lineno);
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("empty key", lineno);
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

KeyValues load_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  return parse_key_values(in);
}

void apply_key(TrainConfig& c, const std::string& key, const std::string& v) {
  EncoderConfig& enc = c.model.encoder;
  ProjectorConfig& proj = c.model.projector;
  if (key == "epochs") c.epochs = to_size(key, v);
  else if (key == "learning_rate" || key == "lr") c.learning_rate = to_double(key, v);
  else if (key == "batch_size") c.batch_size = to_size(key, v);
  else if (key == "weight_decay") c.weight_decay = to_double(key, v);
  else if (key == "manifold") c.manifold = parse_manifold(v);
  else if (key == "center") c.center = parse_center_strategy(v);
  else if (key == "encoder") enc.kind = parse_encoder_kind(v);
  else if (key == "pooling") enc.pooling = parse_pooling(v);
  else if (key == "activation") enc.activation = parse_activation(v);
  else if (key == "window") enc.frames = to_size(key, v);
  else if (key == "joints") enc.joints = to_size(key, v);
  else if (key == "channels") {
    enc.channels = to_sizes(key, v);
    enc.layer_count = enc.channels.size() - 1;
  }
  else if (key == "projector") proj.kind = parse_projector_kind(v);
  else if (key == "nonlinear_blocks") proj.nonlinear_blocks = to_size(key, v);
  else if (key == "latent_dim") proj.latent_dim = to_size(key, v);
  else if (key == "final_bias") proj.final_bias = to_bool(key, v);
  else if (key == "autoencoder") c.model.autoencoder = to_bool(key, v);
  else if (key == "rec_weight") c.rec_weight = to_double(key, v);
  else if (key == "dir_weight") c.dir_weight = to_double(key, v);
  else if (key == "score_kind") c.score_kind = parse_score_kind(v);
  else if (key == "seed") c.seed = to_size(key, v);
  else if (key == "stride") c.stride = to_size(key, v);
  else if (key == "threads") c.threads = to_size(key, v);
  else if (key == "uncovered") c.uncovered = parse_uncovered_policy(v);
  else throw ConfigError("unknown training config key '" + key + "'");
}

void apply_key(SynthConfig& c, const std::string& key, const std::string& v) {
  if (key == "train_clips") c.train_clips = to_size(key, v);
  else if (key == "test_clips") c.test_clips = to_size(key, v);
  else if (key == "frames_per_clip") c.frames_per_clip = to_size(key, v);
  else if (key == "agents_per_clip") c.agents_per_clip = to_size(key, v);
  else if (key == "joints") c.joints = to_size(key, v);
  else if (key == "anomaly_fraction") c.anomaly_fraction = to_double(key, v);
  else if (key == "jitter_factor") c.jitter_factor = to_double(key, v);
  else if (key == "frozen_tilt_deg") c.frozen_tilt_deg = to_double(key, v);
  else if (key == "gap_probability") c.gap_probability = to_double(key, v);
  else if (key == "keypoint_noise") c.keypoint_noise = to_double(key, v);
  else throw ConfigError("unknown synthetic config key '" + key + "'");
}

KeyValues to_key_values(const TrainConfig& c) {
  const EncoderConfig& enc = c.model.encoder;
  const ProjectorConfig& proj = c.model.projector;
  std::string channels;
  for (std::size_t i = 0; i < enc.channels.size(); ++i) channels += (i ? "," : "") + std::to_string(enc.channels[i]);
  return {
      {"epochs", std::to_string(c.epochs)},
      {"learning_rate", num(c.learning_rate)},
      {"batch_size", std::to_string(c.batch_size)},
      {"weight_decay", num(c.weight_decay)},
      {"manifold", std::string(to_string(c.manifold))},
      {"center", std::string(to_string(c.center))},
      {"encoder", std::string(to_string(enc.kind))},
      {"pooling", std::string(to_string(enc.pooling))},
      {"activation", std::string(to_string(enc.activation))},
      {"window", std::to_string(enc.frames)},
      {"joints", std::to_string(enc.joints)},
      {"channels", channels},
      {"projector", std::string(to_string(proj.kind))},
      {"nonlinear_blocks", std::to_string(proj.nonlinear_blocks)},
      {"latent_dim", std::to_string(proj.latent_dim)},
      {"final_bias", proj.final_bias ? "true" : "false"},
      {"autoencoder", c.model.autoencoder ? "true" : "false"},
      {"rec_weight", num(c.rec_weight)},
      {"dir_weight", num(c.dir_weight)},
      {"score_kind", std::string(to_string(c.score_kind))},
      {"seed", std::to_string(c.seed)},
      {"stride", std::to_string(c.stride)},
      {"threads", std::to_string(c.threads)},
      {"uncovered", std::string(to_string(c.uncovered))},
  };
}

KeyValues to_key_values(const SynthConfig& c) {
  return {
      {"train_clips", std::to_string(c.train_clips)},
      {"test_clips", std::to_string(c.test_clips)},
      {"frames_per_clip", std::to_string(c.frames_per_clip)},
      {"agents_per_clip", std::to_string(c.agents_per_clip)},
      {"joints", std::to_string(c.joints)},
      {"anomaly_fraction", num(c.anomaly_fraction)},
      {"jitter_factor", num(c.jitter_factor)},
      {"frozen_tilt_deg", num(c.frozen_tilt_deg)},
      {"gap_probability", num(c.gap_probability)},
      {"keypoint_noise", num(c.keypoint_noise)},
  };
}

std::string to_text(const TrainConfig& c) { return join(to_key_values(c)); }
std::string to_text(const SynthConfig& c) { return join(to_key_values(c)); }

}  // namespace skad
