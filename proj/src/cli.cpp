#include "skad/cli.hpp"

#include <openssl/evp.h>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "skad/checkpoint.hpp"
#include "skad/config.hpp"
#include "skad/errors.hpp"
#include "skad/scoring.hpp"
#include "skad/synth.hpp"

namespace skad {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string() + " for hashing");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char h[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(h, sizeof h, "%02x", digest[i]);
    hex += h;
  }
  return hex;
}

namespace {

struct Manifest {
  Json j;

  Manifest(const std::string& command, const std::vector<std::string>& args) {
    j["command"] = command;
    j["args"] = args;
  }
  void config(const KeyValues& kv) {
    Json c = Json::object();
    for (const auto& [k, v] : kv) c[k] = v;
    j["config"] = c;
  }
  void input(const fs::path& p) { j["inputs"][p.string()] = sha256_file(p); }
  void output(const fs::path& p) { j["outputs"][p.string()] = sha256_file(p); }
  void write(const fs::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << j.dump(2) << '\n';
  }
};

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
}

void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw IoError("no such file: " + p.string());
}

template <class Config>
Config load_config(Config config, const std::string& path, const std::vector<std::string>& sets) {
  if (!path.empty()) {
    require_file(path);
    try {
      config = apply_keys(config, load_key_values(path));
    } catch (const ParseError& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }
  for (const std::string& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    apply_key(config, s.substr(0, eq), s.substr(eq + 1));
  }
  return config;
}

struct SynthArgs {
  std::uint64_t seed = 0;
  std::string config, out;
  std::vector<std::string> sets;
  std::optional<double> anomaly_fraction, jitter_factor;
};

int cmd_synth(const SynthArgs& a, const std::vector<std::string>& args) {
  SynthConfig cfg = load_config(SynthConfig{}, a.config, a.sets);
  if (a.anomaly_fraction) cfg.anomaly_fraction = *a.anomaly_fraction;
  if (a.jitter_factor) cfg.jitter_factor = *a.jitter_factor;
  cfg.validate();
  const SynthDataset ds = synth_dataset(a.seed, cfg);
  const fs::path dir(a.out);
  make_dir(dir);
  Manifest m("synth", args);
  m.j["seed"] = a.seed;
  m.config(to_key_values(cfg));
  if (!a.config.empty()) m.input(a.config);
  save_trajectories(dir / "train.tsv", ds.train);
  save_labels(dir / "train_labels.tsv", ds.train_labels);
  save_trajectories(dir / "test.tsv", ds.test);
  save_labels(dir / "test_labels.tsv", ds.test_labels);
  Json anomalies = Json::array();
  for (const InjectedAnomaly& an : ds.anomalies) {
    anomalies.push_back({{"clip_id", an.clip_id},
                         {"agent_id", an.agent_id},
                         {"kind", an.kind == AnomalyKind::jitter ? "jitter" : "frozen"},
                         {"first_frame", an.first_frame},
                         {"last_frame", an.last_frame}});
  }
  m.j["anomalies"] = anomalies;
  for (const char* f : {"train.tsv", "train_labels.tsv", "test.tsv", "test_labels.tsv"}) m.output(dir / f);
  m.write(dir / "manifest.json");
  std::cout << "wrote " << ds.train.size() << " training and " << ds.test.size() << " test trajectories to "
            << dir.string() << '\n';
  return kExitOk;
}

struct TrainArgs {
  std::string data, config, out;
  std::vector<std::string> sets;
  std::optional<std::string> manifold, center, projector, encoder, score_kind, channels;
  bool ae = false;
  std::optional<std::size_t> epochs, window, stride, latent_dim, threads, batch_size, nonlinear_blocks;
  std::optional<double> lr, weight_decay, rec_weight, dir_weight;
  std::optional<std::uint64_t> seed;
};

TrainConfig resolve_train_config(const TrainArgs& a) {
  TrainConfig cfg = load_config(TrainConfig{}, a.config, a.sets);
  auto set = [&](const char* key, const auto& opt) {
    if (!opt) return;
    if constexpr (std::is_same_v<std::decay_t<decltype(*opt)>, std::string>) {
      apply_key(cfg, key, *opt);
    } else {
      std::ostringstream ss;
      ss.precision(17);
      ss << *opt;
      apply_key(cfg, key, ss.str());
    }
  };
  set("manifold", a.manifold);
  set("center", a.center);
  set("projector", a.projector);
  set("encoder", a.encoder);
  set("score_kind", a.score_kind);
  set("channels", a.channels);
  set("epochs", a.epochs);
  set("window", a.window);
  set("stride", a.stride);
  set("latent_dim", a.latent_dim);
  set("threads", a.threads);
  set("batch_size", a.batch_size);
  set("nonlinear_blocks", a.nonlinear_blocks);
  set("learning_rate", a.lr);
  set("weight_decay", a.weight_decay);
  set("rec_weight", a.rec_weight);
  set("dir_weight", a.dir_weight);
  set("seed", a.seed);
  if (a.ae) cfg.model.autoencoder = true;
  cfg.validate();
  return cfg;
}

int cmd_train(const TrainArgs& a, const std::vector<std::string>& args) {
  const TrainConfig cfg = resolve_train_config(a);
  require_file(a.data);
  const auto trajectories = load_trajectories(a.data, cfg.joints());
  const PreparedWindows prepared = prepare_training_windows(trajectories, cfg.window(), cfg.stride);
  TrainResult result = train(prepared.batch, prepared.stats, cfg);

  const fs::path dir(a.out);
  make_dir(dir);
  save_checkpoint(dir / "checkpoint.txt", result.detector);
  save_robust_stats(dir / "norm_stats.txt", result.detector.stats);
  {
    auto out = open_out(dir / "loss.csv");
    write_loss_csv(out, result.history);
  }
  {
    auto out = open_out(dir / "centers.csv");
    write_center_csv(out, result.history);
  }
  Manifest m("train", args);
  m.j["seed"] = cfg.seed;
  m.config(to_key_values(cfg));
  m.input(a.data);
  if (!a.config.empty()) m.input(a.config);
  m.j["training_windows"] = prepared.windows.size();
  for (const char* f : {"checkpoint.txt", "norm_stats.txt", "loss.csv", "centers.csv"}) m.output(dir / f);
  m.write(dir / "manifest.json");
  const EpochRecord& last = result.history.back();
  std::printf("trained %zu epochs on %zu windows: final mean loss %.6g, embedding variance %.6g\n", last.epoch,
              prepared.windows.size(), last.mean_loss, last.embedding_variance);
  return kExitOk;
}

struct ScoreArgs {
  std::string checkpoint, data, labels, out;
  std::optional<std::string> score_kind, uncovered;
  std::optional<std::size_t> threads;
};

int cmd_score(const ScoreArgs& a, const std::vector<std::string>& args) {
  require_file(a.checkpoint);
  require_file(a.data);
  const Detector det = load_checkpoint(a.checkpoint);
  const ScoreKind kind = a.score_kind ? parse_score_kind(*a.score_kind) : det.config.score_kind;
  const UncoveredPolicy policy = a.uncovered ? parse_uncovered_policy(*a.uncovered) : det.config.uncovered;
  const std::size_t threads = a.threads ? *a.threads : det.config.threads;
  if (threads < 1) throw ConfigError("threads must be at least 1");
  if (!a.labels.empty()) require_file(a.labels);
  const Dataset data = load_dataset(a.data, a.labels.empty() ? std::nullopt : std::optional<fs::path>(a.labels),
                                    det.config.joints());
  const PreparedWindows prepared = prepare_windows(data.trajectories, det.config.window(), 1, det.stats);
  const auto scores = score_windows(det, prepared.windows, kind, threads);
  const auto lengths = clip_lengths(data);
  const auto timelines = build_timelines(scores, det.config.window(), lengths, policy, det.train_median_score);
  {
    auto out = open_out(a.out);
    write_scores(out, timelines);
  }
  Manifest m("score", args);
  m.j["score_kind"] = std::string(to_string(kind));
  m.j["uncovered"] = std::string(to_string(policy));
  m.config(to_key_values(det.config));
  m.input(a.checkpoint);
  m.input(a.data);
  if (!a.labels.empty()) m.input(a.labels);
  m.output(a.out);
  m.write(a.out + ".manifest.json");
  std::size_t covered = 0;
  for (const auto& t : timelines)
    for (bool c : t.covered) covered += c;
  std::printf("scored %zu windows, %zu covered frames\n", scores.size(), covered);
  return kExitOk;
}

struct EvalArgs {
  std::string scores, labels, out;
};

int cmd_eval(const EvalArgs& a) {
  require_file(a.scores);
  require_file(a.labels);
  std::ifstream in(a.scores);
  const auto rows = read_scores(in);
  const auto labels = load_labels(a.labels);
  const EvalReport report = evaluate(rows, labels);
  std::cout << report_text(report);
  if (!a.out.empty()) {
    auto out = open_out(a.out);
    out << report_json(report);
  }
  return kExitOk;
}

struct BaselineArgs {
  std::string train, data, labels, out;
  std::size_t window = kDefaultWindow, joints = kDefaultJoints;
};

int cmd_baseline(const BaselineArgs& a, const std::vector<std::string>& args) {
  require_file(a.train);
  require_file(a.data);
  if (!a.labels.empty()) require_file(a.labels);
  auto stage1 = [&](const std::vector<AgentTrajectory>& trajs) {
    auto w = window_slice(trajs, a.window, 1);
    for (auto& x : w) x = normalize_frames(x);
    return w;
  };
  const auto train_w = stage1(load_trajectories(a.train, a.joints));
  const Dataset data = load_dataset(a.data, a.labels.empty() ? std::nullopt : std::optional<fs::path>(a.labels),
                                    a.joints);
  const auto test_w = stage1(data.trajectories);
  const auto values = baseline_scores(train_w, test_w);
  const auto timelines = build_timelines(attach_scores(test_w, values), a.window, clip_lengths(data));
  {
    auto out = open_out(a.out);
    write_scores(out, timelines);
  }
  Manifest m("baseline", args);
  m.input(a.train);
  m.input(a.data);
  m.output(a.out);
  m.write(a.out + ".manifest.json");
  std::printf("scored %zu windows with the displacement-variance baseline\n", test_w.size());
  return kExitOk;
}

}  // namespace

void keep_heap_resident() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<char*> argv;
  for (const auto& s : args) argv.push_back(const_cast<char*>(s.c_str()));
  argv.push_back(nullptr);
  return run_cli(static_cast<int>(args.size()), argv.data());
}

int run_cli(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Skeleton-trajectory anomaly detection with contraction objectives on Euclidean, spherical and hyperbolic latent spaces"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic train/test dataset");
  synth->add_option("--seed", sa.seed, "Random seed")->capture_default_str();
  synth->add_option("--config", sa.config, "Flat key = value config file");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--set", sa.sets, "Override a config key (key=value), repeatable");
  synth->add_option("--anomaly-fraction", sa.anomaly_fraction, "Fraction of each test clip that is anomalous");
  synth->add_option("--jitter-factor", sa.jitter_factor, "Displacement-variance ratio of jitter anomalies");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a detector on normal trajectories");
  tr->add_option("--data", ta.data, "Training trajectory file")->required();
  tr->add_option("--config", ta.config, "Flat key = value config file");
  tr->add_option("--out", ta.out, "Output directory")->required();
  tr->add_option("--set", ta.sets, "Override a config key (key=value), repeatable");
  tr->add_option("--manifold", ta.manifold, "euclidean | spherical | hyperbolic");
  tr->add_option("--center", ta.center, "static | dynamic");
  tr->add_option("--projector", ta.projector, "identity | linear | nonlinear");
  tr->add_option("--encoder", ta.encoder, "separable | plain");
  tr->add_flag("--ae", ta.ae, "Add the reconstruction decoder and loss");
  tr->add_option("--score-kind", ta.score_kind, "Default score kind stored in the checkpoint: hyp | rec | rec+hyp");
  tr->add_option("--epochs", ta.epochs, "Training epochs");
  tr->add_option("--lr", ta.lr, "Adam learning rate");
  tr->add_option("--batch-size", ta.batch_size, "Minibatch size");
  tr->add_option("--weight-decay", ta.weight_decay, "Weight decay alpha");
  tr->add_option("--rec-weight", ta.rec_weight, "Reconstruction loss weight gamma");
  tr->add_option("--dir-weight", ta.dir_weight, "Direction loss weight phi (spherical)");
  tr->add_option("--window", ta.window, "Window length T");
  tr->add_option("--stride", ta.stride, "Training window stride");
  tr->add_option("--latent-dim", ta.latent_dim, "Latent dimension n");
  tr->add_option("--channels", ta.channels, "Encoder widths, e.g. 2,32,16,8,8");
  tr->add_option("--nonlinear-blocks", ta.nonlinear_blocks, "Hidden blocks of the nonlinear projector");
  tr->add_option("--seed", ta.seed, "Seed for initialization and shuffling");
  tr->add_option("--threads", ta.threads, "Threads for center and inference passes");

  ScoreArgs sc;
  auto* score = app.add_subcommand("score", "Score trajectories with a trained detector");
  score->add_option("--checkpoint", sc.checkpoint, "Checkpoint file")->required();
  score->add_option("--data", sc.data, "Trajectory file")->required();
  score->add_option("--labels", sc.labels, "Label file (sets clip lengths)");
  score->add_option("--out", sc.out, "Score CSV")->required();
  score->add_option("--score-kind", sc.score_kind, "hyp | rec | rec+hyp");
  score->add_option("--uncovered", sc.uncovered, "exclude | median");
  score->add_option("--threads", sc.threads, "Inference threads");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Frame-level AUC of a score CSV");
  ev->add_option("--scores", ea.scores, "Score CSV")->required();
  ev->add_option("--labels", ea.labels, "Label file")->required();
  ev->add_option("--out", ea.out, "JSON report");

  BaselineArgs ba;
  auto* base = app.add_subcommand("baseline", "Score with the joint-displacement-variance baseline");
  base->add_option("--train", ba.train, "Training trajectory file")->required();
  base->add_option("--data", ba.data, "Trajectory file to score")->required();
  base->add_option("--labels", ba.labels, "Label file (sets clip lengths)");
  base->add_option("--out", ba.out, "Score CSV")->required();
  base->add_option("--window", ba.window, "Window length T")->capture_default_str();
  base->add_option("--joints", ba.joints, "Joints per pose")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(sa, args);
    if (*tr) return cmd_train(ta, args);
    if (*score) return cmd_score(sc, args);
    if (*ev) return cmd_eval(ea);
    if (*base) return cmd_baseline(ba, args);
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const UndefinedAucError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitUsage;
}

}  // namespace skad
