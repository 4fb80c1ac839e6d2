// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "model_harness.hpp"
#include "pcsot/evaluation.hpp"
#include "testutil.hpp"

using namespace pcsot;

namespace {

Sequence static_sequence(int frames, std::uint64_t seed) {
  CategorySpec spec = testutil::tiny_spec();
  spec.speed_min = 0.0;
  spec.speed_max = 0.0;
  Sequence s = generate_sequence(spec, frames, seed);
  s.name = "static";
  return s;
}

}  // namespace

TEST_CASE("success metric basics") {
  CHECK(success_metric({1, 1, 1}) == doctest::Approx(100.0));
  CHECK(success_metric({0.5}) == doctest::Approx(50.0));
  CHECK(success_metric({0, 0}) == doctest::Approx(0.0));
  CHECK_THROWS_AS(success_metric({}), EmptyInputError);
}

TEST_CASE("precision metric basics") {
  CHECK(precision_metric({0, 0, 0}) == doctest::Approx(100.0));
  CHECK(precision_metric({100.0}) == doctest::Approx(0.0));
  CHECK_THROWS_AS(precision_metric({}), EmptyInputError);
  // distance exactly half the range: expect close to half the area
  const double half = precision_metric({1.0});
  CHECK(half > 49.0);
  CHECK(half < 51.0);
}

TEST_CASE("metrics are permutation invariant and monotone") {
  Rng rng(3);
  std::vector<double> ious, dists;
  for (int i = 0; i < 20; ++i) {
    ious.push_back(rng.uniform());
    dists.push_back(rng.uniform(0, 3));
  }
  auto shuffled_i = ious;
  auto shuffled_d = dists;
  std::reverse(shuffled_i.begin(), shuffled_i.end());
  std::reverse(shuffled_d.begin(), shuffled_d.end());
  CHECK(success_metric(ious) == doctest::Approx(success_metric(shuffled_i)));
  CHECK(precision_metric(dists) == doctest::Approx(precision_metric(shuffled_d)));

  auto larger = ious;
  for (auto& v : larger) v = std::min(1.0, v + 0.1);
  CHECK(success_metric(larger) >= success_metric(ious));
  auto closer = dists;
  for (auto& v : closer) v = std::max(0.0, v - 0.2);
  CHECK(precision_metric(closer) >= precision_metric(dists));
}

TEST_CASE("oracle test double yields perfect scores") {
  Model model(ModelConfig::micro());
  Sequence seq = static_sequence(5, 7);
  std::vector<Sequence> ds{seq};
  EvalOptions opts;
  opts.track.test_double = TrackOptions::Double::kOracle;
  EvalReport report = evaluate(model, ds, opts);
  CHECK(report.mean_success == doctest::Approx(100.0));
  CHECK(report.mean_precision == doctest::Approx(100.0));
}

TEST_CASE("identity double on a static object yields perfect scores") {
  Model model(ModelConfig::micro());
  Sequence seq = static_sequence(6, 11);
  std::vector<Sequence> ds{seq};
  EvalOptions opts;
  opts.track.test_double = TrackOptions::Double::kIdentity;
  EvalReport report = evaluate(model, ds, opts);
  CHECK(report.mean_success == doctest::Approx(100.0));
}

TEST_CASE("static baseline is perfect on a static object and poor on a mover") {
  Sequence still = static_sequence(6, 13);
  auto preds = static_box_baseline(still.frames[0].gt,
                                   static_cast<int>(still.frames.size()) - 1);
  CHECK(score_sequence(preds, still).success == doctest::Approx(100.0));

  CategorySpec mover = testutil::tiny_spec();
  mover.speed_min = 0.8;
  mover.speed_max = 0.9;
  Sequence moving = generate_sequence(mover, 8, 17);
  auto static_preds = static_box_baseline(moving.frames[0].gt, 7);
  CHECK(score_sequence(static_preds, moving).success < 50.0);
}

TEST_CASE("constant-velocity baseline tracks a constant-velocity object exactly") {
  CategorySpec spec = testutil::tiny_spec();
  spec.speed_min = 0.5;
  spec.speed_max = 0.5;
  Sequence seq = generate_sequence(spec, 9, 23);
  auto preds = constant_velocity_baseline(seq.frames[0].gt, seq.frames[1].gt,
                                          static_cast<int>(seq.frames.size()) - 1);
  const auto score = score_sequence(preds, seq);
  CHECK(score.success > 99.999);

  // weaving motion defeats straight-line extrapolation
  CategorySpec weave = testutil::tiny_spec();
  weave.motion = MotionKind::kWeaving;
  weave.speed_min = 0.4;
  weave.speed_max = 0.5;
  Sequence wseq = generate_sequence(weave, 9, 29);
  auto wpreds = constant_velocity_baseline(wseq.frames[0].gt, wseq.frames[1].gt, 8);
  CHECK(score_sequence(wpreds, wseq).success < 99.0);
}

TEST_CASE("tracker reset restores first-frame behavior") {
  Model model(ModelConfig::micro());
  Sequence seq = static_sequence(4, 31);
  Tracker tracker(model);
  tracker.reset(seq.frames[0].cloud, seq.frames[0].gt);
  CHECK(tracker.state().frame_index == 1);
  CHECK(tracker.state().carried.empty());
  tracker.step(seq.frames[1].cloud);
  tracker.step(seq.frames[2].cloud);
  CHECK(tracker.state().frame_index == 3);
  CHECK_FALSE(tracker.state().carried.empty());
  tracker.reset(seq.frames[0].cloud, seq.frames[0].gt);
  CHECK(tracker.state().frame_index == 1);
  CHECK(tracker.state().carried.empty());
}

TEST_CASE("a T-frame sequence uses exactly T-1 carried propagations") {
  Model model(ModelConfig::micro());
  Sequence seq = static_sequence(5, 37);
  Tracker tracker(model);
  tracker.reset(seq.frames[0].cloud, seq.frames[0].gt);
  int carried_uses = 0;
  for (std::size_t t = 1; t < seq.frames.size(); ++t) {
    if (!tracker.state().carried.empty()) ++carried_uses;
    tracker.step(seq.frames[t].cloud);
  }
  // the first step had no carried token, the remaining T-2 did; the
  // output of the last step is carried but never consumed
  CHECK(carried_uses == static_cast<int>(seq.frames.size()) - 2);
}

TEST_CASE("tracked predictions stay finite and confidence in range") {
  Model model(ModelConfig::micro());
  Sequence seq = static_sequence(5, 41);
  std::vector<PointCloud> frames;
  for (const auto& f : seq.frames) frames.push_back(f.cloud);
  const auto preds = track_sequence(model, frames, seq.frames[0].gt);
  CHECK(preds.size() == 4);
  for (const auto& p : preds) {
    CHECK(std::isfinite(p.box.center.x));
    CHECK(p.confidence >= 0.0);
    CHECK(p.confidence <= 1.0);
    CHECK(p.box.yaw >= -M_PI);
    CHECK(p.box.yaw < M_PI);
  }
}

TEST_CASE("expert histogram rows sum to one") {
  ExpertUsageAccum accum;
  accum.set_category("a");
  accum.add(2, 1, 0.7);
  accum.add(2, 3, 0.3);
  accum.add(4, 0, 1.0);
  accum.set_category("b");
  accum.add(2, 2, 0.5);
  accum.add(2, 2, 0.5);
  const auto hist = accum.fractions();
  CHECK(hist.at("a").at(2)[1] == doctest::Approx(0.7));
  CHECK(hist.at("a").at(2)[3] == doctest::Approx(0.3));
  CHECK(hist.at("a").at(4)[0] == doctest::Approx(1.0));
  CHECK(hist.at("b").at(2)[2] == doctest::Approx(1.0));
  for (const auto& [cat, layers] : hist)
    for (const auto& [layer, row] : layers) {
      double sum = 0;
      for (double v : row) sum += v;
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("evaluation collects normalized expert activations per category") {
  Model model(ModelConfig::micro());
  std::vector<Sequence> ds;
  for (int i = 0; i < 2; ++i) {
    Sequence s = static_sequence(4, 50 + static_cast<std::uint64_t>(i));
    s.category = i == 0 ? "cat_a" : "cat_b";
    s.name = "seq_" + std::to_string(i);
    ds.push_back(std::move(s));
  }
  EvalReport report = evaluate(model, ds);
  REQUIRE(report.expert_activation.size() == 2);
  for (const auto& [cat, layers] : report.expert_activation) {
    CHECK(!layers.empty());
    for (const auto& [layer, row] : layers) {
      double sum = 0;
      for (double v : row) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("parallel evaluation matches single-threaded results") {
  Model model(ModelConfig::micro());
  std::vector<Sequence> ds;
  for (int i = 0; i < 4; ++i) {
    Sequence s = static_sequence(4, 60 + static_cast<std::uint64_t>(i));
    s.name = "seq_" + std::to_string(i);
    ds.push_back(std::move(s));
  }
  EvalOptions serial;
  EvalOptions parallel;
  parallel.jobs = 2;
  EvalReport a = evaluate(model, ds, serial);
  EvalReport b = evaluate(model, ds, parallel);
  CHECK(a.mean_success == b.mean_success);
  CHECK(a.mean_precision == b.mean_precision);
  CHECK(report_to_json(a) == report_to_json(b));
}

TEST_CASE("report json carries the documented structure") {
  Model model(ModelConfig::micro());
  std::vector<Sequence> ds{static_sequence(4, 70)};
  ds[0].category = "tiny";
  ds[0].name = "tiny_0";
  const std::string json_text = report_to_json(evaluate(model, ds));
  for (const char* key :
       {"\"mean\"", "\"success\"", "\"precision\"", "\"per_category\"",
        "\"per_sequence\"", "\"iou\"", "\"center_dist\"", "\"expert_activation\""})
    CHECK(json_text.find(key) != std::string::npos);
}

TEST_CASE("histogram csv has one row per (category, layer, expert)") {
  ExpertUsageAccum accum;
  accum.set_category("x");
  accum.add(2, 0, 0.25);
  accum.add(2, 1, 0.75);
  const std::string csv = histogram_to_csv(accum.fractions());
  CHECK(csv.find("category,layer,expert,fraction") == 0);
  CHECK(csv.find("x,2,0,0.25") != std::string::npos);
  CHECK(csv.find("x,2,1,0.75") != std::string::npos);
}
