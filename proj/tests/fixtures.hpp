#pragma once

// Shared test fixtures: hand-built head outputs and small scene/label
// helpers.

#include <vector>

#include "grouplane/lane.hpp"
#include "grouplane/network.hpp"

namespace fixtures {

using namespace grouplane;

// Assembles batch-1 head-group tensors from per-slot views.
inline HeadGroupOutputs make_outputs(const std::vector<SlotView>& slots) {
  HeadGroupOutputs out;
  out.orientation = slots.front().orientation;
  const int64_t n = static_cast<int64_t>(slots.size());
  const int64_t lines = slots.front().lines;
  const int64_t cells = slots.front().cells;
  const int64_t cats = static_cast<int64_t>(slots.front().category.size());
  std::vector<double> exist, vis, rows, cat, lat, z;
  for (const SlotView& s : slots) {
    exist.push_back(s.existence);
    vis.insert(vis.end(), s.visibility.begin(), s.visibility.end());
    rows.insert(rows.end(), s.row_scores.begin(), s.row_scores.end());
    cat.insert(cat.end(), s.category.begin(), s.category.end());
    lat.insert(lat.end(), s.offset_lat.begin(), s.offset_lat.end());
    z.insert(z.end(), s.offset_z.begin(), s.offset_z.end());
  }
  out.existence = Tensor::from_values({1, n}, exist);
  out.visibility = Tensor::from_values({1, n, lines, 1}, vis);
  out.row_scores = Tensor::from_values({1, n, lines, cells}, rows);
  out.category = Tensor::from_values({1, n, cats}, cat);
  out.offset_lat = Tensor::from_values({1, n, lines, 1}, lat);
  out.offset_z = Tensor::from_values({1, n, lines, 1}, z);
  return out;
}

// A background slot: low existence, uniform rows and categories.
inline SlotView background_slot(Orientation o, int lines, int cells, int cats) {
  SlotView s;
  s.orientation = o;
  s.lines = lines;
  s.cells = cells;
  s.existence = 0.05;
  s.visibility.assign(lines, 0.05);
  s.row_scores.assign(static_cast<size_t>(lines) * cells, 1.0 / cells);
  s.category.assign(cats, 1.0 / cats);
  s.offset_lat.assign(lines, 0.0);
  s.offset_z.assign(lines, 0.0);
  return s;
}

inline Lane3D straight_lane(double x, double y0, double y1, double z = 0.0,
                            double step = 1.0, int category = 0) {
  Lane3D lane;
  lane.category = category;
  for (double y = y0; y <= y1 + 1e-9; y += step) lane.points.push_back({x, y, z});
  return lane;
}

inline Lane3D horizontal_lane(double y, double x0, double x1, double z = 0.0,
                              double step = 0.5, int category = 0) {
  Lane3D lane;
  lane.category = category;
  for (double x = x0; x <= x1 + 1e-9; x += step) lane.points.push_back({x, y, z});
  return lane;
}

inline BevGridSpec desk_grid() {
  BevGridSpec g;
  g.x_min = -10;
  g.x_max = 10;
  g.y_min = 3;
  g.y_max = 53;
  g.rows = 12;
  g.cols = 50;
  return g;
}

}  // namespace fixtures
