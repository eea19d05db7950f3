#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "fixtures.hpp"
#include "grouplane/metrics.hpp"
#include "grouplane/rng.hpp"

using namespace grouplane;
using namespace fixtures;

namespace {

std::vector<Lane3D> random_scene(Rng& rng, int lanes) {
  std::vector<Lane3D> scene;
  for (int i = 0; i < lanes; ++i) {
    scene.push_back(straight_lane(rng.uniform(-8, 8), rng.uniform(3, 6),
                                  rng.uniform(40, 53), rng.uniform(-0.2, 0.2),
                                  1.0, static_cast<int>(rng.uniform_int(0, 3))));
  }
  return scene;
}

}  // namespace

TEST_CASE("identical lanes match with zero distances") {
  EvalConfig cfg;
  Lane3D lane = straight_lane(2.0, 5, 45);
  PairSamples ps = lane_pair_error(lane, lane, cfg);
  CHECK(ps.matched);
  CHECK(ps.total_samples == static_cast<int>(ps.dist.size()));
  for (double d : ps.dist) CHECK(d == 0.0);
  CHECK(ps.mean_distance == 0.0);
}

TEST_CASE("lateral offsets against the 1.5 m threshold") {
  EvalConfig cfg;
  Lane3D gt = straight_lane(0.0, 5, 45);
  PairSamples far_off = lane_pair_error(straight_lane(2.0, 5, 45), gt, cfg);
  CHECK(!far_off.matched);
  CHECK(far_off.dist.empty());

  PairSamples near_off = lane_pair_error(straight_lane(1.0, 5, 45), gt, cfg);
  CHECK(near_off.matched);
  CHECK(near_off.mean_distance == doctest::Approx(1.0).epsilon(1e-12));
  for (double e : near_off.lat_err) CHECK(e == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("horizontal ground truth is sampled along x") {
  EvalConfig cfg;
  Lane3D gt = horizontal_lane(20.0, -8, 8);
  Lane3D pred = horizontal_lane(20.5, -8, 8);
  PairSamples ps = lane_pair_error(pred, gt, cfg);
  CHECK(ps.matched);
  CHECK(ps.mean_distance == doctest::Approx(0.5).epsilon(1e-12));
  for (double y : ps.y) CHECK(y == doctest::Approx(20.0).epsilon(0.6));
}

TEST_CASE("gts as preds score a perfect report") {
  EvalConfig cfg;
  Rng rng(7);
  std::vector<std::vector<Lane3D>> scenes;
  for (int s = 0; s < 5; ++s) {
    scenes.push_back(random_scene(rng, 1 + s % 3));
  }
  EvalReport r = evaluate(scenes, scenes, cfg);
  CHECK(r.f1 == 1.0);
  CHECK(r.precision == 1.0);
  CHECK(r.recall == 1.0);
  CHECK(r.category_accuracy == 1.0);
  CHECK(r.x_err_near == 0.0);
  CHECK(r.x_err_far == 0.0);
  CHECK(r.z_err_near == 0.0);
  CHECK(r.z_err_far == 0.0);
  CHECK(r.cd_error == 0.0);
  CHECK(r.fp == 0);
  CHECK(r.fn == 0);
}

TEST_CASE("empty predictions: precision 0/0 -> 0, recall 0, F1 0") {
  EvalConfig cfg;
  Rng rng(11);
  std::vector<std::vector<Lane3D>> gts{random_scene(rng, 2)};
  std::vector<std::vector<Lane3D>> preds{{}};
  EvalReport r = evaluate(preds, gts, cfg);
  CHECK(r.precision == 0.0);
  CHECK(r.recall == 0.0);
  CHECK(r.f1 == 0.0);
  CHECK(r.fn == 2);
}

TEST_CASE("two gts, one perfect pred: F1 is exactly 2/3") {
  EvalConfig cfg;
  Lane3D a = straight_lane(-3.0, 5, 45);
  Lane3D b = straight_lane(3.0, 5, 45);
  std::vector<std::vector<Lane3D>> gts{{a, b}};
  std::vector<std::vector<Lane3D>> preds{{a}};
  EvalReport r = evaluate(preds, gts, cfg);
  CHECK(r.precision == 1.0);
  CHECK(r.recall == 0.5);
  CHECK(r.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(r.tp == 1);
  CHECK(r.fn == 1);
}

TEST_CASE("near/far buckets split x and z errors by sample y") {
  EvalConfig cfg;  // near [3,40], far (40,100]
  Lane3D gt = straight_lane(0.0, 5, 95);
  Lane3D pred;
  for (double y = 5.0; y <= 95.0 + 1e-9; y += 1.0) {
    const double dx = y <= 40.0 ? 0.2 : 0.6;
    pred.points.push_back({dx, y, 0.1});
  }
  EvalReport r = evaluate({{pred}}, {{gt}}, cfg);
  CHECK(r.tp == 1);
  CHECK(r.x_err_near == doctest::Approx(0.2).epsilon(1e-9));
  CHECK(r.x_err_far == doctest::Approx(0.6).epsilon(1e-9));
  CHECK(r.z_err_near == doctest::Approx(0.1).epsilon(1e-9));
  CHECK(r.z_err_far == doctest::Approx(0.1).epsilon(1e-9));
  CHECK(r.cd_error > 0.0);
}

TEST_CASE("category accuracy counts matched pairs only") {
  EvalConfig cfg;
  Lane3D gt_a = straight_lane(-3.0, 5, 45, 0.0, 1.0, 1);
  Lane3D gt_b = straight_lane(3.0, 5, 45, 0.0, 1.0, 2);
  Lane3D pred_a = gt_a;
  Lane3D pred_b = gt_b;
  pred_b.category = 0;  // wrong class
  EvalReport r = evaluate({{pred_a, pred_b}}, {{gt_a, gt_b}}, cfg);
  CHECK(r.tp == 2);
  CHECK(r.category_accuracy == 0.5);
}

TEST_CASE("adding a spurious prediction never raises precision") {
  EvalConfig cfg;
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    auto gts = std::vector<std::vector<Lane3D>>{random_scene(rng, 2)};
    auto preds = gts;
    EvalReport base = evaluate(preds, gts, cfg);
    preds[0].push_back(straight_lane(rng.uniform(-8, 8), 5, 45, 3.5));
    EvalReport spiked = evaluate(preds, gts, cfg);
    CHECK(spiked.precision <= base.precision);
    CHECK(spiked.recall >= base.recall - 1e-15);
  }
}

TEST_CASE("removing a matched prediction never raises recall") {
  EvalConfig cfg;
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    auto gts = std::vector<std::vector<Lane3D>>{random_scene(rng, 3)};
    auto preds = gts;
    EvalReport base = evaluate(preds, gts, cfg);
    preds[0].pop_back();
    EvalReport dropped = evaluate(preds, gts, cfg);
    CHECK(dropped.recall <= base.recall);
  }
}

TEST_CASE("report is invariant to scene order and lane order") {
  EvalConfig cfg;
  Rng rng(19);
  std::vector<std::vector<Lane3D>> gts;
  std::vector<std::vector<Lane3D>> preds;
  for (int s = 0; s < 4; ++s) {
    gts.push_back(random_scene(rng, 2 + s % 2));
    preds.push_back(gts.back());
    // degrade one prediction per scene
    preds.back()[0].points[0].x += 0.4;
    if (s % 2 == 0) preds.back().pop_back();
  }
  EvalReport base = evaluate(preds, gts, cfg);

  std::vector<std::vector<Lane3D>> gts_r(gts.rbegin(), gts.rend());
  std::vector<std::vector<Lane3D>> preds_r(preds.rbegin(), preds.rend());
  EvalReport scene_swapped = evaluate(preds_r, gts_r, cfg);
  CHECK(base == scene_swapped);

  for (auto& scene : preds) std::reverse(scene.begin(), scene.end());
  for (auto& scene : gts) std::reverse(scene.begin(), scene.end());
  EvalReport lane_swapped = evaluate(preds, gts, cfg);
  CHECK(base.f1 == lane_swapped.f1);
  CHECK(base.tp == lane_swapped.tp);
  CHECK(base.x_err_near == doctest::Approx(lane_swapped.x_err_near).epsilon(1e-12));
  CHECK(base.cd_error == doctest::Approx(lane_swapped.cd_error).epsilon(1e-12));
}

TEST_CASE("scene count mismatch and bad configs are rejected") {
  EvalConfig cfg;
  CHECK_THROWS(evaluate({{}}, {{}, {}}, cfg));
  EvalConfig bad = cfg;
  bad.match_fraction = 0.0;
  CHECK_THROWS(evaluate({{}}, {{}}, bad));
  bad = cfg;
  bad.near_max = 50;
  bad.far_min = 40;
  CHECK_THROWS(evaluate({{}}, {{}}, bad));
}
