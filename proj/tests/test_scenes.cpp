#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <set>

#include "grouplane/lane.hpp"
#include "grouplane/scene.hpp"

using namespace grouplane;
namespace fs = std::filesystem;

namespace {

SceneSpec desk_spec() {
  SceneSpec s;
  s.seed = 1234;
  return s;
}

BevGridSpec desk_grid() {
  BevGridSpec g;
  g.x_min = -10;
  g.x_max = 10;
  g.y_min = 3;
  g.y_max = 53;
  g.rows = 12;
  g.cols = 50;
  return g;
}

}  // namespace

TEST_CASE("scene generation is deterministic in (seed, index)") {
  const SceneSpec spec = desk_spec();
  const Scene a = gen_scene(spec, 17);
  const Scene b = gen_scene(spec, 17);
  CHECK(a.image == b.image);
  REQUIRE(a.lanes.size() == b.lanes.size());
  for (size_t i = 0; i < a.lanes.size(); ++i) {
    REQUIRE(a.lanes[i].points.size() == b.lanes[i].points.size());
    for (size_t k = 0; k < a.lanes[i].points.size(); ++k) {
      CHECK(a.lanes[i].points[k].x == b.lanes[i].points[k].x);
      CHECK(a.lanes[i].points[k].y == b.lanes[i].points[k].y);
      CHECK(a.lanes[i].points[k].z == b.lanes[i].points[k].z);
    }
  }
  const Scene c = gen_scene(spec, 18);
  CHECK(a.image != c.image);
}

TEST_CASE("horizontal probability zero yields no horizontal lanes") {
  SceneSpec spec = desk_spec();
  spec.horizontal_probability = 0.0;
  const BevGridSpec grid = desk_grid();
  for (int i = 0; i < 100; ++i) {
    const Scene scene = gen_scene(spec, i);
    for (const Lane3D& lane : scene.lanes) {
      CHECK(classify_orientation(lane, grid) == Orientation::Vertical);
    }
  }
}

TEST_CASE("crossroad-heavy specs produce horizontal lanes") {
  SceneSpec spec = desk_spec();
  spec.horizontal_probability = 0.5;
  const BevGridSpec grid = desk_grid();
  int horizontal = 0, total = 0;
  for (int i = 0; i < 50; ++i) {
    const Scene scene = gen_scene(spec, i);
    for (const Lane3D& lane : scene.lanes) {
      ++total;
      if (classify_orientation(lane, grid) == Orientation::Horizontal) ++horizontal;
    }
  }
  CHECK(horizontal > total / 5);
  CHECK(horizontal < total);
}

TEST_CASE("every generated lane encodes and round-trips within 1e-9 m") {
  SceneSpec spec = desk_spec();
  spec.horizontal_probability = 0.3;
  const BevGridSpec grid = desk_grid();
  for (int i = 0; i < 40; ++i) {
    const Scene scene = gen_scene(spec, i);
    CHECK(!scene.lanes.empty());
    for (const Lane3D& lane : scene.lanes) {
      const LaneTargets t = encode_lane(lane, grid, spec.categories);
      const SlotView slot = perfect_slot(t, grid, spec.categories);
      auto decoded = decode_slot(slot, grid, {0.5, 0.5});
      REQUIRE(decoded.has_value());

      const Lane3D clipped = clip_to_grid(lane, grid);
      const bool vertical = t.orientation == Orientation::Vertical;
      std::vector<double> lines;
      for (int h = 0; h < t.lines(); ++h) {
        if (t.vis[h]) {
          lines.push_back(vertical ? grid.row_center(h) : grid.col_center(h));
        }
      }
      const auto ref =
          resample_lane(clipped, lines, vertical ? LaneAxis::Y : LaneAxis::X);
      REQUIRE(decoded->points.size() == ref.size());
      for (size_t k = 0; k < ref.size(); ++k) {
        REQUIRE(ref[k].has_value());
        CHECK(std::fabs(decoded->points[k].x - ref[k]->x) <= 1e-9);
        CHECK(std::fabs(decoded->points[k].y - ref[k]->y) <= 1e-9);
        CHECK(std::fabs(decoded->points[k].z - ref[k]->z) <= 1e-9);
      }
    }
  }
}

TEST_CASE("render: empty scene is the plain ground image, and repeats exactly") {
  const SceneSpec spec = desk_spec();
  const CameraRig rig = spec.rig();
  const auto empty1 = render({}, rig, 64, 160);
  const auto empty2 = render({}, rig, 64, 160);
  CHECK(empty1 == empty2);
  // plain background: each pixel row is a single flat color
  for (int v = 0; v < 64; ++v) {
    const uint8_t* row = empty1.data() + 3 * (static_cast<size_t>(v) * 160);
    for (int u = 1; u < 160; ++u) {
      CHECK(row[3 * u] == row[0]);
      CHECK(row[3 * u + 1] == row[1]);
      CHECK(row[3 * u + 2] == row[2]);
    }
  }
}

TEST_CASE("a lane at x=0 renders along the image vertical centerline") {
  const SceneSpec spec = desk_spec();
  const CameraRig rig = spec.rig();
  Lane3D lane;
  lane.category = 0;  // solid white
  for (double y = 3.0; y <= 53.0; y += 1.0) lane.points.push_back({0.0, y, 0.0});
  const auto img = render({lane}, rig, 64, 160);
  int painted = 0;
  for (int v = 0; v < 64; ++v) {
    for (int u = 0; u < 160; ++u) {
      const uint8_t* px = img.data() + 3 * (static_cast<size_t>(v) * 160 + u);
      if (px[0] >= 235 && px[1] >= 235 && px[2] >= 235) {
        ++painted;
        CHECK(std::abs(u - 80) <= 2);  // 1 px projection + 1 px stroke radius
      }
    }
  }
  CHECK(painted > 10);
}

TEST_CASE("dataset write/read round trip and split rules") {
  SceneSpec spec = desk_spec();
  spec.horizontal_probability = 0.25;
  spec.val_modulus = 5;
  spec.val_residue = 4;
  const std::string dir = "test_dataset_tmp";
  fs::remove_all(dir);
  write_dataset(spec, 10, dir);

  const Dataset ds = Dataset::open(dir);
  CHECK(ds.count() == 10);
  CHECK(ds.spec() == spec);

  int ppm_files = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".ppm") ++ppm_files;
  }
  CHECK(ppm_files == ds.count());

  for (int i = 0; i < ds.count(); ++i) {
    const Scene loaded = ds.load(i);
    const Scene fresh = gen_scene(spec, i);
    CHECK(loaded.image == fresh.image);
    CHECK(loaded.rig == fresh.rig);
    REQUIRE(loaded.lanes.size() == fresh.lanes.size());
    for (size_t l = 0; l < loaded.lanes.size(); ++l) {
      CHECK(loaded.lanes[l].category == fresh.lanes[l].category);
      REQUIRE(loaded.lanes[l].points.size() == fresh.lanes[l].points.size());
      for (size_t k = 0; k < loaded.lanes[l].points.size(); ++k) {
        CHECK(loaded.lanes[l].points[k].x == fresh.lanes[l].points[k].x);
        CHECK(loaded.lanes[l].points[k].y == fresh.lanes[l].points[k].y);
        CHECK(loaded.lanes[l].points[k].z == fresh.lanes[l].points[k].z);
      }
    }
  }

  // split by modulus 5 residue 4: 8 train / 2 val, disjoint and exhaustive
  const auto train = ds.train_indices();
  const auto val = ds.val_indices();
  CHECK(train.size() == 8);
  CHECK(val.size() == 2);
  std::set<int> all(train.begin(), train.end());
  all.insert(val.begin(), val.end());
  CHECK(all.size() == 10);

  // missing scene file errors name the file
  fs::remove(fs::path(dir) / "scene_000003.json");
  try {
    ds.load(3);
    CHECK(false);
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("scene_000003.json") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("empty dataset has a valid manifest") {
  SceneSpec spec = desk_spec();
  const std::string dir = "test_dataset_empty_tmp";
  fs::remove_all(dir);
  write_dataset(spec, 0, dir);
  const Dataset ds = Dataset::open(dir);
  CHECK(ds.count() == 0);
  CHECK(ds.train_indices().empty());
  CHECK(ds.val_indices().empty());
  fs::remove_all(dir);
}

TEST_CASE("all-train split via modulus zero") {
  SceneSpec spec = desk_spec();
  spec.val_modulus = 0;
  spec.val_residue = 0;
  const std::string dir = "test_dataset_alltrain_tmp";
  fs::remove_all(dir);
  write_dataset(spec, 4, dir);
  const Dataset ds = Dataset::open(dir);
  CHECK(ds.train_indices().size() == 4);
  CHECK(ds.val_indices().empty());
  fs::remove_all(dir);
}
