#include "grouplane/lane.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace grouplane {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

bool same_point(const Vec3& a, const Vec3& b) {
  return a.x == b.x && a.y == b.y && a.z == b.z;
}

// Nearest cell center along one axis for a coordinate inside [min, max].
int nearest_cell(double coord, double lo, double cell, int count) {
  int idx = static_cast<int>(std::floor((coord - lo) / cell));
  if (idx < 0) idx = 0;
  if (idx >= count) idx = count - 1;
  return idx;
}

int centers_in_span(double lo, double hi, double first_center, double cell,
                    int count) {
  int n = 0;
  for (int i = 0; i < count; ++i) {
    const double c = first_center + i * cell;
    if (c >= lo && c <= hi) ++n;
  }
  return n;
}

}  // namespace

void Lane3D::validate() const {
  if (points.size() < 2) fail("lane: needs at least 2 points");
  for (const Vec3& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
      fail("lane: non-finite coordinate");
    }
  }
  for (size_t i = 1; i < points.size(); ++i) {
    if (same_point(points[i - 1], points[i])) {
      fail("lane: consecutive points must be distinct");
    }
  }
}

int LaneTargets::visible_count() const {
  int n = 0;
  for (uint8_t v : vis) n += v;
  return n;
}

std::vector<std::optional<Vec3>> resample_lane(
    const Lane3D& lane, const std::vector<double>& axis_values, LaneAxis axis) {
  lane.validate();
  for (size_t i = 1; i < axis_values.size(); ++i) {
    if (axis_values[i] <= axis_values[i - 1]) {
      fail("resample: axis values must be strictly increasing");
    }
  }
  std::vector<std::optional<Vec3>> out(axis_values.size());
  for (size_t k = 0; k < axis_values.size(); ++k) {
    const double t = axis_values[k];
    // first crossing along the polyline
    for (size_t i = 0; i + 1 < lane.points.size(); ++i) {
      const Vec3& a = lane.points[i];
      const Vec3& b = lane.points[i + 1];
      const double a0 = axis_coord(a, axis);
      const double a1 = axis_coord(b, axis);
      if (a0 == a1) {
        if (t == a0) {
          out[k] = a;
          break;
        }
        continue;
      }
      const double lo = std::min(a0, a1), hi = std::max(a0, a1);
      if (t < lo || t > hi) continue;
      const double s = (t - a0) / (a1 - a0);
      out[k] = Vec3{a.x + s * (b.x - a.x), a.y + s * (b.y - a.y),
                    a.z + s * (b.z - a.z)};
      break;
    }
  }
  return out;
}

bool is_single_valued(const Lane3D& lane, LaneAxis axis) {
  // Monotone along the axis. A lane constant along the axis spans a single
  // value, which still counts as single-valued.
  int direction = 0;  // +1 nondecreasing, -1 nonincreasing
  for (size_t i = 1; i < lane.points.size(); ++i) {
    const double d = axis_coord(lane.points[i], axis) -
                     axis_coord(lane.points[i - 1], axis);
    if (d == 0.0) continue;
    const int s = d > 0.0 ? 1 : -1;
    if (direction == 0) {
      direction = s;
    } else if (s != direction) {
      return false;
    }
  }
  return true;
}

Lane3D clip_to_grid(const Lane3D& lane, const BevGridSpec& grid) {
  lane.validate();
  grid.validate();
  std::vector<std::vector<Vec3>> pieces;
  std::vector<Vec3> current;
  auto flush = [&] {
    if (current.size() >= 2) pieces.push_back(current);
    current.clear();
  };
  for (size_t i = 0; i + 1 < lane.points.size(); ++i) {
    const Vec3& a = lane.points[i];
    const Vec3& b = lane.points[i + 1];
    // Liang-Barsky parametric clip of segment a + t(b-a) against the rect
    const double dx = b.x - a.x, dy = b.y - a.y;
    double t0 = 0.0, t1 = 1.0;
    bool reject = false;
    const double p[4] = {-dx, dx, -dy, dy};
    const double q[4] = {a.x - grid.x_min, grid.x_max - a.x, a.y - grid.y_min,
                         grid.y_max - a.y};
    for (int e = 0; e < 4; ++e) {
      if (p[e] == 0.0) {
        if (q[e] < 0.0) {
          reject = true;
          break;
        }
      } else {
        const double r = q[e] / p[e];
        if (p[e] < 0.0) {
          t0 = std::max(t0, r);
        } else {
          t1 = std::min(t1, r);
        }
      }
    }
    if (reject || t0 > t1) {
      flush();
      continue;
    }
    auto lerp = [&](double t) {
      return Vec3{a.x + t * dx, a.y + t * dy, a.z + t * (b.z - a.z)};
    };
    const Vec3 pa = t0 == 0.0 ? a : lerp(t0);
    const Vec3 pb = t1 == 1.0 ? b : lerp(t1);
    if (t0 > 0.0) flush();  // entering the rect starts a new piece
    if (current.empty() || !same_point(current.back(), pa)) current.push_back(pa);
    if (!same_point(current.back(), pb)) current.push_back(pb);
    if (t1 < 1.0) flush();  // leaving the rect ends the piece
  }
  flush();

  Lane3D out;
  out.category = lane.category;
  out.id = lane.id;
  if (pieces.empty()) return out;
  size_t best = 0;
  double best_len = -1.0;
  for (size_t i = 0; i < pieces.size(); ++i) {
    double len = 0.0;
    for (size_t j = 1; j < pieces[i].size(); ++j) {
      len += std::hypot(pieces[i][j].x - pieces[i][j - 1].x,
                        pieces[i][j].y - pieces[i][j - 1].y);
    }
    if (len > best_len) {
      best_len = len;
      best = i;
    }
  }
  out.points = std::move(pieces[best]);
  return out;
}

CrossedCounts crossed_counts(const Lane3D& lane, const BevGridSpec& grid) {
  const Lane3D clipped = clip_to_grid(lane, grid);
  CrossedCounts counts;
  if (clipped.points.size() < 2) return counts;
  double x_lo = clipped.points[0].x, x_hi = x_lo;
  double y_lo = clipped.points[0].y, y_hi = y_lo;
  for (const Vec3& p : clipped.points) {
    x_lo = std::min(x_lo, p.x);
    x_hi = std::max(x_hi, p.x);
    y_lo = std::min(y_lo, p.y);
    y_hi = std::max(y_hi, p.y);
  }
  counts.vertical = centers_in_span(y_lo, y_hi, grid.row_center(0),
                                    grid.cell_h(), grid.rows);
  counts.horizontal = centers_in_span(x_lo, x_hi, grid.col_center(0),
                                      grid.cell_w(), grid.cols);
  return counts;
}

Orientation classify_orientation(const Lane3D& lane, const BevGridSpec& grid) {
  const CrossedCounts c = crossed_counts(lane, grid);
  if (c.vertical == 0 && c.horizontal == 0) {
    fail("lane: crosses no grid lines, cannot be classified");
  }
  return c.vertical >= c.horizontal ? Orientation::Vertical
                                    : Orientation::Horizontal;
}

LaneTargets encode_lane_as(const Lane3D& lane, Orientation orientation,
                           const BevGridSpec& grid, int categories) {
  if (lane.category < 0 || lane.category >= categories) {
    fail("encode: category out of range");
  }
  const Lane3D clipped = clip_to_grid(lane, grid);
  const LaneAxis axis = classified_axis(orientation);
  const bool vertical = orientation == Orientation::Vertical;
  const int lines = vertical ? grid.rows : grid.cols;
  const int cells = vertical ? grid.cols : grid.rows;
  const double cell = vertical ? grid.cell_w() : grid.cell_h();
  const double lat_lo = vertical ? grid.x_min : grid.y_min;

  LaneTargets targets;
  targets.orientation = orientation;
  targets.category = lane.category;
  targets.vis.assign(lines, 0);
  targets.cell_index.assign(lines, -1);
  targets.offset_lat.assign(lines, 0.0);
  targets.offset_z.assign(lines, 0.0);
  if (clipped.points.size() < 2) return targets;

  if (!is_single_valued(clipped, axis)) {
    fail("encode: lane spans a grid line more than once in its classified axis");
  }
  std::vector<double> line_values(lines);
  for (int h = 0; h < lines; ++h) {
    line_values[h] = vertical ? grid.row_center(h) : grid.col_center(h);
  }
  const auto samples = resample_lane(clipped, line_values, axis);
  for (int h = 0; h < lines; ++h) {
    if (!samples[h]) continue;
    const double lat = lateral_coord(*samples[h], axis);
    const int idx = nearest_cell(lat, lat_lo, cell, cells);
    targets.vis[h] = 1;
    targets.cell_index[h] = idx;
    targets.offset_lat[h] = lat - (lat_lo + (idx + 0.5) * cell);
    targets.offset_z[h] = samples[h]->z;
  }
  return targets;
}

LaneTargets encode_lane(const Lane3D& lane, const BevGridSpec& grid,
                        int categories) {
  const Orientation orientation = classify_orientation(lane, grid);
  LaneTargets targets = encode_lane_as(lane, orientation, grid, categories);
  if (targets.visible_count() == 0) {
    fail("encode: lane crosses no line of its classified axis");
  }
  return targets;
}

std::optional<Lane3D> decode_slot(const SlotView& slot, const BevGridSpec& grid,
                                  const DecodeThresholds& thr) {
  if (slot.existence < thr.exist_thr) return std::nullopt;
  const bool vertical = slot.orientation == Orientation::Vertical;
  const int lines = vertical ? grid.rows : grid.cols;
  const int cells = vertical ? grid.cols : grid.rows;
  if (slot.lines != lines || slot.cells != cells) {
    fail("decode: slot extents disagree with the grid");
  }
  Lane3D lane;
  lane.points.reserve(lines);
  for (int h = 0; h < lines; ++h) {
    if (slot.visibility[h] < thr.vis_thr) continue;
    const double* row = slot.row_scores.data() + static_cast<size_t>(h) * cells;
    int best = 0;
    for (int c = 1; c < cells; ++c) {
      if (row[c] > row[best]) best = c;
    }
    const double lat = (vertical ? grid.col_center(best) : grid.row_center(best)) +
                       slot.offset_lat[h];
    const double line = vertical ? grid.row_center(h) : grid.col_center(h);
    const double z = slot.offset_z[h];
    lane.points.push_back(vertical ? Vec3{lat, line, z} : Vec3{line, lat, z});
  }
  if (lane.points.size() < 2) return std::nullopt;
  int best_cat = 0;
  for (size_t g = 1; g < slot.category.size(); ++g) {
    if (slot.category[g] > slot.category[best_cat]) {
      best_cat = static_cast<int>(g);
    }
  }
  lane.category = best_cat;
  return lane;
}

SlotView perfect_slot(const LaneTargets& targets, const BevGridSpec& grid,
                      int categories) {
  const bool vertical = targets.orientation == Orientation::Vertical;
  SlotView slot;
  slot.orientation = targets.orientation;
  slot.lines = targets.lines();
  slot.cells = vertical ? grid.cols : grid.rows;
  slot.existence = 1.0;
  slot.visibility.assign(targets.vis.begin(), targets.vis.end());
  slot.offset_lat = targets.offset_lat;
  slot.offset_z = targets.offset_z;
  slot.row_scores.assign(static_cast<size_t>(slot.lines) * slot.cells,
                         1.0 / slot.cells);
  for (int h = 0; h < slot.lines; ++h) {
    if (!targets.vis[h]) continue;
    double* row = slot.row_scores.data() + static_cast<size_t>(h) * slot.cells;
    std::fill(row, row + slot.cells, 0.0);
    row[targets.cell_index[h]] = 1.0;
  }
  slot.category.assign(categories, 0.0);
  slot.category[targets.category] = 1.0;
  return slot;
}

}  // namespace grouplane
