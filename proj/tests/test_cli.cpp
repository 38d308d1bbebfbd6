#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "doctest.h"
#include "json.hpp"
#include "skad/checkpoint.hpp"
#include "skad/cli.hpp"
#include "skad/data.hpp"
#include "skad/scoring.hpp"

namespace fs = std::filesystem;
using namespace skad;

namespace {

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / ("skad_cli_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Runs the tool with stdout/stderr captured.
struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "skad");
  std::ostringstream out, err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  const int code = run_cli(args);
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  return {code, out.str(), err.str()};
}

const std::vector<std::string> kTinyData{"--set", "train_clips=2",     "--set", "test_clips=3",
                                         "--set", "frames_per_clip=40", "--set", "joints=4"};
const std::vector<std::string> kTinyModel{"--window", "4", "--set", "joints=4", "--channels", "2,4,4,3,3",
                                          "--latent-dim", "3", "--batch-size", "32", "--stride", "2"};

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream(path) << text;
}

}  // namespace

TEST_CASE("synth writes reproducible data") {
  TempDir dir;
  REQUIRE(run(cat({"synth", "--seed", "4", "--out", dir / "a"}, kTinyData)).code == 0);
  REQUIRE(run(cat({"synth", "--seed", "4", "--out", dir / "b"}, kTinyData)).code == 0);
  for (const char* f : {"train.tsv", "train_labels.tsv", "test.tsv", "test_labels.tsv"})
    CHECK(slurp(dir / ("a/" + std::string(f))) == slurp(dir / ("b/" + std::string(f))));
  const auto train = load_labels(dir / "a/train_labels.tsv");
  for (const auto& l : train) CHECK(std::count(l.labels.begin(), l.labels.end(), 1) == 0);
  const auto test = load_labels(dir / "a/test_labels.tsv");
  double pos = 0, total = 0;
  for (const auto& l : test) {
    pos += static_cast<double>(std::count(l.labels.begin(), l.labels.end(), 1));
    total += static_cast<double>(l.labels.size());
  }
  CHECK(std::abs(pos / total - 0.3) <= 0.05);
  const auto manifest = nlohmann::json::parse(slurp(dir / "a/manifest.json"));
  CHECK(manifest["command"] == "synth");
  CHECK(manifest["outputs"].size() >= 4);
  const auto twin = nlohmann::json::parse(slurp(dir / "b/manifest.json"));
  std::vector<std::string> ha, hb;
  for (const auto& [k, v] : manifest["outputs"].items()) ha.push_back(v);
  for (const auto& [k, v] : twin["outputs"].items()) hb.push_back(v);
  CHECK(ha == hb);
  CHECK(run({"synth", "--out", dir / "c", "--anomaly-fraction", "1.5"}).code == 1);
}

TEST_CASE("train, score and eval") {
  TempDir dir;
  REQUIRE(run(cat({"synth", "--seed", "2", "--out", dir / "d"}, kTinyData)).code == 0);
  const auto trained = run(cat({"train", "--data", dir / "d/train.tsv", "--out", dir / "m", "--epochs", "2"}, kTinyModel));
  REQUIRE(trained.code == 0);
  const Detector det = load_checkpoint(dir / "m/checkpoint.txt");
  CHECK(det.config.epochs == 2);
  CHECK(det.config.model.encoder.frames == 4);
  CHECK(slurp(dir / "m/loss.csv").rfind("epoch,mean_loss", 0) == 0);

  const std::vector<std::string> score{"score", "--checkpoint", dir / "m/checkpoint.txt", "--data", dir / "d/test.tsv",
                                       "--labels", dir / "d/test_labels.tsv", "--out", dir / "s1.csv"};
  REQUIRE(run(score).code == 0);
  auto again = score;
  again.back() = dir / "s2.csv";
  REQUIRE(run(again).code == 0);
  const std::string csv = slurp(dir / "s1.csv");
  CHECK(csv == slurp(dir / "s2.csv"));
  CHECK(fs::exists(dir / "s1.csv.manifest.json"));
  std::istringstream in(csv);
  const auto rows = read_scores(in);
  CHECK(std::all_of(rows.begin(), rows.end(), [](const FrameScoreRow& r) { return r.covered; }));
  CHECK(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) == rows.size() + 1);

  const auto ev = run({"eval", "--scores", dir / "s1.csv", "--labels", dir / "d/test_labels.tsv", "--out", dir / "r.json"});
  REQUIRE(ev.code == 0);
  CHECK(ev.out.rfind("overall_auc ", 0) == 0);
  const double a = nlohmann::json::parse(slurp(dir / "r.json"))["overall_auc"];

  // negated scores flip the ROC curve
  std::ostringstream inverted;
  inverted << "clip_id,frame,score,covered\n";
  for (const auto& r : rows) inverted << r.clip_id << ',' << r.frame << ',' << -r.score << ",1\n";
  write_text(dir / "inv.csv", inverted.str());
  REQUIRE(run({"eval", "--scores", dir / "inv.csv", "--labels", dir / "d/test_labels.tsv", "--out", dir / "i.json"}).code == 0);
  const double b = nlohmann::json::parse(slurp(dir / "i.json"))["overall_auc"];
  CHECK(a + b == doctest::Approx(1.0).epsilon(1e-12));

  auto rec = score;
  rec.back() = dir / "s3.csv";
  rec.insert(rec.end(), {"--score-kind", "rec"});
  CHECK(run(rec).code == 1);
}

TEST_CASE("training flags reach the trainer") {
  TempDir dir;
  REQUIRE(run(cat({"synth", "--seed", "3", "--out", dir / "d"}, kTinyData)).code == 0);
  const auto common = cat({"train", "--data", dir / "d/train.tsv"}, kTinyModel);
  const auto base = cat(common, {"--epochs", "3"});
  REQUIRE(run(cat(base, {"--out", dir / "st", "--center", "static", "--lr", "0.01"})).code == 0);
  std::istringstream centers(slurp(dir / "st/centers.csv"));
  std::string header, line;
  std::getline(centers, header);
  std::vector<std::string> coords;
  while (std::getline(centers, line)) coords.push_back(line.substr(line.find(',')));
  REQUIRE(coords.size() == 3);
  CHECK(coords[0] == coords[1]);
  CHECK(coords[1] == coords[2]);

  REQUIRE(run(cat(base, {"--out", dir / "sp", "--manifold", "spherical", "--ae", "--rec-weight", "0.5"})).code == 0);
  const Detector sp = load_checkpoint(dir / "sp/checkpoint.txt");
  CHECK(sp.config.model.autoencoder);
  CHECK(sp.config.rec_weight == 0.5);
  CHECK(sp.config.manifold == Manifold::spherical);

  const auto conflict = run(cat(base, {"--out", dir / "x", "--projector", "identity", "--latent-dim", "5"}));
  CHECK(conflict.code == 1);
  CHECK(conflict.err.find("latent") != std::string::npos);

  write_text(dir / "cfg.txt", "epochs = 1\nmanifold = euclidean\n");
  REQUIRE(run(cat(common, {"--out", dir / "cf", "--config", dir / "cfg.txt", "--epochs", "2"})).code == 0);
  const Detector cf = load_checkpoint(dir / "cf/checkpoint.txt");
  CHECK(cf.config.epochs == 2);  // flags win over the file
  CHECK(cf.config.manifold == Manifold::euclidean);
  const auto manifest = nlohmann::json::parse(slurp(dir / "cf/manifest.json"));
  CHECK(manifest["config"]["epochs"] == "2");

  write_text(dir / "bad.txt", "epochz = 1\n");
  CHECK(run(cat(base, {"--out", dir / "b", "--config", dir / "bad.txt"})).code == 1);
}

TEST_CASE("exit codes") {
  TempDir dir;
  CHECK(run({}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({"train", "--help"}).code == 0);
  CHECK(run({"train", "--data", dir / "missing.tsv", "--out", dir / "m"}).code == 2);
  write_text(dir / "broken.tsv", "clip\tagent\tnot-a-frame\t1,2\n");
  CHECK(run({"train", "--data", dir / "broken.tsv", "--out", dir / "m"}).code == 2);

  REQUIRE(run(cat({"synth", "--seed", "5", "--out", dir / "d"}, kTinyData)).code == 0);
  const auto blowup = run(cat({"train", "--data", dir / "d/train.tsv", "--out", dir / "n", "--epochs", "3", "--lr", "1e300"},
                              kTinyModel));
  CHECK(blowup.code == 3);
  CHECK(blowup.err.find("epoch") != std::string::npos);

  write_text(dir / "hand.csv", "clip_id,frame,score,covered\nh,0,0.1,1\nh,1,0.4,1\nh,2,0.35,1\nh,3,0.8,1\n");
  write_text(dir / "hand_labels.tsv", "h\t0\t0\nh\t1\t0\nh\t2\t1\nh\t3\t1\n");
  const auto hand = run({"eval", "--scores", dir / "hand.csv", "--labels", dir / "hand_labels.tsv"});
  CHECK(hand.code == 0);
  CHECK(hand.out.rfind("overall_auc 0.750000\n", 0) == 0);
  write_text(dir / "other_labels.tsv", "q\t0\t0\nq\t1\t1\n");
  CHECK(run({"eval", "--scores", dir / "hand.csv", "--labels", dir / "other_labels.tsv"}).code == 1);
  write_text(dir / "neg_labels.tsv", "h\t0\t0\nh\t1\t0\nh\t2\t0\nh\t3\t0\n");
  const auto single = run({"eval", "--scores", dir / "hand.csv", "--labels", dir / "neg_labels.tsv"});
  CHECK(single.code == 1);
  CHECK(single.err.find("AUC") != std::string::npos);

  REQUIRE(run(cat({"train", "--data", dir / "d/train.tsv", "--out", dir / "m", "--epochs", "1"}, kTinyModel)).code == 0);
  std::string ckpt = slurp(dir / "m/checkpoint.txt");
  ckpt.replace(ckpt.find("v1"), 2, "v9");
  write_text(dir / "old.txt", ckpt);
  CHECK(run({"score", "--checkpoint", dir / "old.txt", "--data", dir / "d/test.tsv", "--out", dir / "o.csv"}).code == 1);
}
