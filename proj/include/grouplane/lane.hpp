#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "grouplane/geometry.hpp"

namespace grouplane {

// 3D polyline in ego meters with a category. Serves as both ground truth and
// decoded prediction.
struct Lane3D {
  std::vector<Vec3> points;  // ordered, >= 2, consecutive points distinct
  int category = 0;
  int id = -1;

  void validate() const;
};

enum class Orientation { Vertical, Horizontal };

// Classified axis: Vertical lanes are sampled on the grid's y lines (one per
// row), Horizontal lanes on its x lines (one per column).
enum class LaneAxis { Y, X };

inline LaneAxis classified_axis(Orientation o) {
  return o == Orientation::Vertical ? LaneAxis::Y : LaneAxis::X;
}

inline double axis_coord(const Vec3& p, LaneAxis a) {
  return a == LaneAxis::Y ? p.y : p.x;
}
inline double lateral_coord(const Vec3& p, LaneAxis a) {
  return a == LaneAxis::Y ? p.x : p.y;
}

// One lane as row-wise classification supervision.
struct LaneTargets {
  Orientation orientation = Orientation::Vertical;
  int exist = 1;
  std::vector<uint8_t> vis;        // one entry per grid line
  std::vector<int> cell_index;     // nearest-center cell, -1 where invisible
  std::vector<double> offset_lat;  // meters from the chosen cell center
  std::vector<double> offset_z;    // absolute z at the sample
  int category = 0;

  int lines() const { return static_cast<int>(vis.size()); }
  int visible_count() const;
};

// Linear interpolation along the polyline at each axis value. Values outside
// the lane's span yield absent. axis_values must be strictly increasing.
std::vector<std::optional<Vec3>> resample_lane(
    const Lane3D& lane, const std::vector<double>& axis_values, LaneAxis axis);

// Monotone along the axis, i.e. no axis value is crossed twice. Lanes
// constant along the axis count as single-valued (their span is a point).
bool is_single_valued(const Lane3D& lane, LaneAxis axis);

// Keeps the longest polyline piece inside the grid's xy-rectangle. Returns a
// lane with fewer than 2 points when nothing is inside.
Lane3D clip_to_grid(const Lane3D& lane, const BevGridSpec& grid);

struct CrossedCounts {
  int vertical = 0;    // grid rows whose center y-line the lane's span covers
  int horizontal = 0;  // grid columns whose center x-line the span covers
};

// Counts are taken on the grid-clipped lane; a lane fully outside is (0,0).
CrossedCounts crossed_counts(const Lane3D& lane, const BevGridSpec& grid);

// Vertical iff vertical count >= horizontal count (ties are Vertical).
// Throws when the lane crosses zero lines on both axes.
Orientation classify_orientation(const Lane3D& lane, const BevGridSpec& grid);

// Encodes against the winning orientation. Throws on degenerate lanes.
LaneTargets encode_lane(const Lane3D& lane, const BevGridSpec& grid,
                        int categories);

// Encodes in a forced orientation. Used for matching costs, where a lane may
// legitimately cross zero lines of the losing orientation; the result then
// has all-zero visibility.
LaneTargets encode_lane_as(const Lane3D& lane, Orientation orientation,
                           const BevGridSpec& grid, int categories);

// Plain-number view of one prediction slot, as produced by the heads.
struct SlotView {
  Orientation orientation = Orientation::Vertical;
  int lines = 0;  // H of this orientation
  int cells = 0;  // W of this orientation
  double existence = 0.0;
  std::vector<double> visibility;  // lines
  std::vector<double> row_scores;  // lines x cells, rows sum to 1
  std::vector<double> category;    // G, sums to 1
  std::vector<double> offset_lat;  // lines
  std::vector<double> offset_z;    // lines
};

struct DecodeThresholds {
  double exist_thr = 0.5;
  double vis_thr = 0.5;
};

// Confidence gate, then per visible line: argmax cell center plus offset.
// Absent below the existence threshold or with fewer than 2 visible lines.
std::optional<Lane3D> decode_slot(const SlotView& slot, const BevGridSpec& grid,
                                  const DecodeThresholds& thr);

// Ideal outputs for a target: one-hot rows, exact offsets. Invisible lines
// get a uniform row distribution and zero offsets.
SlotView perfect_slot(const LaneTargets& targets, const BevGridSpec& grid,
                      int categories);

}  // namespace grouplane
