#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"
#include "skad/errors.hpp"
#include "skad/scoring.hpp"
#include "support.hpp"

using namespace skad;
using skad::test::Gen;

namespace {

std::vector<WindowScore> windows_of(const std::string& agent, std::vector<std::pair<long, double>> starts) {
  std::vector<WindowScore> out;
  for (auto [s, v] : starts) out.push_back({"c", agent, s, v});
  return out;
}

Detector identity_detector(Manifold m, std::vector<double> center) {
  TrainConfig cfg;
  cfg.model.encoder.frames = 2;
  cfg.model.encoder.joints = 2;
  cfg.model.encoder.channels = {2, 2, 2, 2, 2};
  cfg.model.projector.kind = ProjectorKind::identity;
  cfg.model.projector.latent_dim = 2;
  cfg.model.encoder.activation = Activation::identity;
  cfg.manifold = m;
  Model model(cfg.model, 1);
  // identity adjacencies and weights
  for (auto& [name, p] : model.params()) {
    if (name.ends_with("A_s") || name.ends_with("A_t")) p.value = Tensor::identity_stack(2, 2);
    if (name.ends_with(".W")) p.value = Tensor::identity(2);
  }
  return Detector{cfg, std::move(model), CenterState{m, std::move(center)}, RobustStats{}, 0.0};
}

PoseWindow constant_window(double x, double y) {
  Tensor v({2, 2, 2});
  for (std::size_t i = 0; i < 8; i += 2) {
    v[i] = x;
    v[i + 1] = y;
  }
  return PoseWindow{"c", "a", 0, v, false};
}

}  // namespace

TEST_CASE("window scores follow the manifold distance") {
  // each layer doubles the input through the residual path, so embeddings are 16·(x, y)
  const Detector euc = identity_detector(Manifold::euclidean, {16.0, 32.0});
  const std::vector<PoseWindow> on_center{constant_window(1.0, 2.0), constant_window(1.0 + 3.0 / 16, 2.0 + 4.0 / 16)};
  const auto s = score_windows(euc, on_center, ScoreKind::hyp);
  CHECK(s[0].score == 0.0);
  CHECK(s[1].score == doctest::Approx(5.0).epsilon(1e-12));

  // tanh(r) = 0.5 at the origin center gives 2 artanh(0.5)
  const double r = std::atanh(0.5) / 16.0;
  const Detector hyp = identity_detector(Manifold::hyperbolic, {0.0, 0.0});
  const std::vector<PoseWindow> half{constant_window(r * 0.6, r * 0.8)};
  CHECK(score_windows(hyp, half, ScoreKind::hyp)[0].score == doctest::Approx(1.0986122886681098).epsilon(1e-12));

  const Detector sph = identity_detector(Manifold::spherical, {1.0, 0.0});
  const std::vector<PoseWindow> dir{constant_window(0.3, 0.4)};
  CHECK(score_windows(sph, dir, ScoreKind::hyp)[0].score == doctest::Approx(1.0 - 0.6).epsilon(1e-12));
  CHECK_THROWS_AS(score_windows(sph, dir, ScoreKind::rec), UnsupportedError);
}

TEST_CASE("agent frame score is the mean of covering windows") {
  const auto one = windows_of("a", {{0, 4.0}});
  CHECK(agent_frame_score(one, "c", "a", 3, 12) == 4.0);
  CHECK_FALSE(agent_frame_score(one, "c", "a", 12, 12).has_value());
  CHECK_FALSE(agent_frame_score(one, "c", "b", 3, 12).has_value());
  const auto three = windows_of("a", {{0, 1.0}, {1, 2.0}, {2, 3.0}});
  CHECK(agent_frame_score(three, "c", "a", 5, 12) == 2.0);
  // 14 frames, T=12: frame 12 lies in the windows starting at 1 and 2
  CHECK(agent_frame_score(three, "c", "a", 12, 12) == 2.5);
  CHECK(agent_frame_score(three, "c", "a", 0, 12) == 1.0);
}

TEST_CASE("frame score is the max over agents") {
  auto scores = windows_of("a", {{0, 0.2}});
  const auto b = windows_of("b", {{0, 0.9}});
  CHECK(frame_score(scores, "c", 1, 4) == 0.2);
  scores.insert(scores.end(), b.begin(), b.end());
  CHECK(frame_score(scores, "c", 1, 4) == 0.9);
  CHECK_FALSE(frame_score(scores, "c", 4, 4).has_value());
}

TEST_CASE("timelines match the brute-force cascade") {
  Gen g(31);
  for (int rep = 0; rep < 50; ++rep) {
    const auto clip = oracle::random_clip(g, "clip" + std::to_string(rep), 12);
    const std::vector<std::pair<std::string, std::size_t>> lengths{{clip.clip_id, clip.frames}};
    const auto tl = build_timelines(clip.windows, 12, lengths);
    REQUIRE(tl.size() == 1);
    REQUIRE(tl[0].scores.size() == clip.frames);
    for (std::size_t f = 0; f < clip.frames; ++f) {
      const auto expect = oracle::cascade_frame(clip.windows, clip.clip_id, static_cast<long>(f), 12);
      CHECK(tl[0].covered[f] == expect.has_value());
      CHECK_FALSE(tl[0].filled[f]);
      if (expect) CHECK(std::abs(tl[0].scores[f] - *expect) <= 1e-12);
    }
  }
}

TEST_CASE("frame score is monotone in any agent score") {
  Gen g(32);
  for (int rep = 0; rep < 30; ++rep) {
    auto clip = oracle::random_clip(g, "m", 4);
    if (clip.windows.empty()) continue;
    const std::vector<std::pair<std::string, std::size_t>> lengths{{"m", clip.frames}};
    const auto before = build_timelines(clip.windows, 4, lengths);
    clip.windows[skad::test::pick(g, 0, clip.windows.size() - 1)].score += skad::test::uniform(g, 0.0, 2.0);
    const auto after = build_timelines(clip.windows, 4, lengths);
    for (std::size_t f = 0; f < clip.frames; ++f)
      if (before[0].covered[f]) CHECK(after[0].scores[f] >= before[0].scores[f]);
  }
}

TEST_CASE("uncovered frames") {
  const auto scores = windows_of("a", {{2, 1.5}});
  const std::vector<std::pair<std::string, std::size_t>> lengths{{"c", 8}, {"empty", 3}};
  const auto ex = build_timelines(scores, 3, lengths);
  REQUIRE(ex.size() == 2);
  CHECK(ex[0].covered == std::vector<bool>{false, false, true, true, true, false, false, false});
  CHECK_FALSE(ex[1].defined(0));
  const auto med = build_timelines(scores, 3, lengths, UncoveredPolicy::median, 0.25);
  CHECK(med[0].defined(0));
  CHECK(med[0].scores[0] == 0.25);
  CHECK(med[0].scores[3] == 1.5);
  CHECK(med[1].filled[2]);
  std::ostringstream csv;
  write_scores(csv, ex);
  CHECK(csv.str() == "clip_id,frame,score,covered\nc,2,1.5,1\nc,3,1.5,1\nc,4,1.5,1\n");
  std::ostringstream filled;
  write_scores(filled, med);
  std::istringstream in(filled.str());
  const auto rows = read_scores(in);
  CHECK(rows.size() == 11);
  CHECK_FALSE(rows[0].covered);
  CHECK(rows[2].covered);
}

TEST_CASE("score csv round trip") {
  Gen g(33);
  const auto clip = oracle::random_clip(g, "r", 5);
  const std::vector<std::pair<std::string, std::size_t>> lengths{{"r", clip.frames}};
  const auto tl = build_timelines(clip.windows, 5, lengths);
  std::ostringstream out;
  write_scores(out, tl);
  std::istringstream in(out.str());
  const auto rows = read_scores(in);
  const auto direct = to_rows(tl);
  REQUIRE(rows.size() == direct.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].frame == direct[i].frame);
    CHECK(rows[i].score == direct[i].score);
  }
  std::istringstream bad("clip_id,frame,score,covered\nr,x,1,1\n");
  CHECK_THROWS_AS(read_scores(bad), ParseError);
}

TEST_CASE("auc hand cases") {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> l{0, 0, 1, 1};
  CHECK(auc(s, l) == 0.75);
  CHECK(auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, l) == 1.0);
  CHECK(auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, l) == 0.0);
  CHECK(auc(std::vector<double>{1, 1, 1, 1}, l) == 0.5);
  CHECK_THROWS_AS(auc(s, std::vector<int>{1, 1, 1, 1}), UndefinedAucError);
  CHECK_THROWS_AS(auc(s, std::vector<int>{0, 1}), DimensionError);
}

TEST_CASE("auc equals the pairwise oracle and ignores monotone transforms") {
  Gen g(34);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = skad::test::pick(g, 2, 50);
    std::vector<double> s(n);
    std::vector<int> l(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(skad::test::pick(g, 0, 8)) / 4.0;  // coarse grid forces ties
      l[i] = static_cast<int>(skad::test::pick(g, 0, 1));
    }
    l[0] = 0;
    l[1] = 1;
    const double a = auc(s, l);
    CHECK(a == oracle::pairwise_auc(s, l));
    std::vector<double> e(n), aff(n);
    for (std::size_t i = 0; i < n; ++i) {
      e[i] = std::exp(s[i]);
      aff[i] = 3.0 * s[i] - 7.0;
    }
    CHECK(auc(e, l) == a);
    CHECK(auc(aff, l) == a);
  }
}

TEST_CASE("evaluation report") {
  std::vector<FrameScoreRow> rows;
  for (long f = 0; f < 4; ++f) rows.push_back({"a", f, 0.1 * static_cast<double>(f), true});
  for (long f = 0; f < 3; ++f) rows.push_back({"b", f, 0.5, true});
  const std::vector<FrameLabelTrack> labels{{"a", {0, 0, 1, 1}}, {"b", {0, 0, 0}}, {"z", {1}}};
  const EvalReport r = evaluate(rows, labels);
  CHECK(r.frames == 7);
  CHECK(r.positives == 2);
  CHECK(r.overall_auc == oracle::pairwise_auc({0, 0.1, 0.2, 0.3, 0.5, 0.5, 0.5}, {0, 0, 1, 1, 0, 0, 0}));
  REQUIRE(r.clips.size() == 2);
  CHECK(r.clips[0].auc == 1.0);
  CHECK_FALSE(r.clips[1].auc.has_value());
  CHECK(report_text(r).rfind("overall_auc ", 0) == 0);
  CHECK(report_text(r).find("clip b 3 undefined") != std::string::npos);
  const auto j = nlohmann::json::parse(report_json(r));
  CHECK(j["frames"] == 7);
  CHECK(j["clips"][1]["auc"].is_null());
  const std::vector<FrameLabelTrack> other{{"q", {0, 1}}};
  CHECK_THROWS_AS(evaluate(rows, other), EmptySetError);
  const std::vector<FrameLabelTrack> negatives{{"b", {0, 0, 0}}};
  CHECK_THROWS_AS(evaluate(rows, negatives), UndefinedAucError);
}

TEST_CASE("displacement variance baseline") {
  Tensor still({3, 2, 2}, 1.0);
  Tensor moving({3, 2, 2});
  for (std::size_t i = 0; i < moving.size(); ++i) moving[i] = static_cast<double>(i * i % 7);
  const PoseWindow a{"c", "a", 0, still, false}, b{"c", "b", 0, moving, false};
  CHECK(std::isfinite(log_displacement_variance(a)));
  CHECK(log_displacement_variance(b) > log_displacement_variance(a));
  const std::vector<PoseWindow> train{b, b};
  const std::vector<PoseWindow> test{b, a};
  const auto s = baseline_scores(train, test);
  CHECK(s[0] == 0.0);
  CHECK(s[1] > 0.0);
}
