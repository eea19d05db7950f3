#include "grouplane/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "grouplane/matching.hpp"

namespace grouplane {

namespace {

constexpr double kForbidden = 1e9;

double span_lo(const Lane3D& lane, LaneAxis axis) {
  double lo = axis_coord(lane.points[0], axis);
  for (const Vec3& p : lane.points) lo = std::min(lo, axis_coord(p, axis));
  return lo;
}

double span_hi(const Lane3D& lane, LaneAxis axis) {
  double hi = axis_coord(lane.points[0], axis);
  for (const Vec3& p : lane.points) hi = std::max(hi, axis_coord(p, axis));
  return hi;
}

LaneAxis dominant_axis(const Lane3D& lane) {
  const double dy = span_hi(lane, LaneAxis::Y) - span_lo(lane, LaneAxis::Y);
  const double dx = span_hi(lane, LaneAxis::X) - span_lo(lane, LaneAxis::X);
  return dy >= dx ? LaneAxis::Y : LaneAxis::X;
}

double point_distance(const Vec3& a, const Vec3& b) {
  return std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) +
                   (a.z - b.z) * (a.z - b.z));
}

// one-directional mean nearest-point distance
double directed_chamfer(const Lane3D& from, const Lane3D& to) {
  double total = 0.0;
  for (const Vec3& p : from.points) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& q : to.points) best = std::min(best, point_distance(p, q));
    total += best;
  }
  return total / static_cast<double>(from.points.size());
}

}  // namespace

void EvalConfig::validate() const {
  if (point_distance_threshold <= 0.0 || match_fraction <= 0.0 ||
      match_fraction > 1.0 || sample_spacing <= 0.0) {
    throw std::runtime_error("eval config: thresholds must be positive");
  }
  if (!(near_min < near_max && near_max <= far_min && far_min < far_max)) {
    throw std::runtime_error("eval config: near/far ranges must be ordered");
  }
}

PairSamples lane_pair_error(const Lane3D& pred, const Lane3D& gt,
                            const EvalConfig& cfg) {
  pred.validate();
  gt.validate();
  const LaneAxis axis = dominant_axis(gt);
  const double lo = span_lo(gt, axis);
  const double hi = span_hi(gt, axis);
  std::vector<double> values;
  for (double v = lo; v <= hi + 1e-9; v += cfg.sample_spacing) values.push_back(v);
  if (values.size() < 2 && hi > lo) values.push_back(hi);

  const auto gt_points = resample_lane(gt, values, axis);
  const auto pred_points = resample_lane(pred, values, axis);

  PairSamples out;
  int covered = 0;
  double dist_sum = 0.0;
  for (size_t i = 0; i < values.size(); ++i) {
    if (!gt_points[i]) continue;
    ++out.total_samples;
    if (!pred_points[i]) continue;
    const Vec3& g = *gt_points[i];
    const Vec3& p = *pred_points[i];
    // distance in the plane orthogonal to the sampled axis
    const double lat = axis == LaneAxis::Y ? p.x - g.x : p.y - g.y;
    const double dz = p.z - g.z;
    const double d = std::sqrt(lat * lat + dz * dz);
    if (d > cfg.point_distance_threshold) continue;
    ++covered;
    dist_sum += d;
    out.y.push_back(g.y);
    out.dist.push_back(d);
    out.lat_err.push_back(std::fabs(lat));
    out.z_err.push_back(std::fabs(dz));
  }
  out.matched = out.total_samples > 0 &&
                covered >= cfg.match_fraction * out.total_samples;
  out.mean_distance = covered > 0 ? dist_sum / covered : 0.0;
  return out;
}

EvalReport evaluate(const std::vector<std::vector<Lane3D>>& preds,
                    const std::vector<std::vector<Lane3D>>& gts,
                    const EvalConfig& cfg) {
  cfg.validate();
  if (preds.size() != gts.size()) {
    throw std::runtime_error("evaluate: scene counts disagree");
  }
  EvalReport report;
  long long matched_correct = 0;
  double x_near_sum = 0.0, x_far_sum = 0.0, z_near_sum = 0.0, z_far_sum = 0.0;
  long long near_count = 0, far_count = 0;
  double cd_sum = 0.0;
  long long cd_pairs = 0;

  for (size_t scene = 0; scene < gts.size(); ++scene) {
    const auto& scene_gts = gts[scene];
    const auto& scene_preds = preds[scene];
    const int m = static_cast<int>(scene_gts.size());
    const int p = static_cast<int>(scene_preds.size());
    if (m == 0 && p == 0) continue;
    if (m == 0) {
      report.fp += p;
      continue;
    }
    if (p == 0) {
      report.fn += m;
      continue;
    }

    std::vector<std::vector<PairSamples>> pairs(m, std::vector<PairSamples>(p));
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < p; ++j) {
        pairs[i][j] = lane_pair_error(scene_preds[j], scene_gts[i], cfg);
      }
    }

    // Hungarian over (gt, pred) with forbidden cost for non-matching pairs;
    // rows must not exceed columns, so orient the smaller side as rows.
    const bool gt_rows = m <= p;
    const int rows = gt_rows ? m : p;
    const int cols = gt_rows ? p : m;
    CostMatrix cost(rows, cols);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const PairSamples& ps = gt_rows ? pairs[r][c] : pairs[c][r];
        cost.at(r, c) = ps.matched ? ps.mean_distance : kForbidden;
      }
    }
    const Assignment assign = hungarian(cost);

    std::vector<int> gt_to_pred(m, -1);
    for (int r = 0; r < rows; ++r) {
      const int c = assign.row_to_col[r];
      if (cost.at(r, c) >= kForbidden / 2) continue;
      if (gt_rows) {
        gt_to_pred[r] = c;
      } else {
        gt_to_pred[c] = r;
      }
    }

    long long scene_tp = 0;
    for (int i = 0; i < m; ++i) {
      const int j = gt_to_pred[i];
      if (j < 0) {
        ++report.fn;
        continue;
      }
      ++scene_tp;
      const PairSamples& ps = pairs[i][j];
      for (size_t k = 0; k < ps.y.size(); ++k) {
        if (ps.y[k] >= cfg.near_min && ps.y[k] <= cfg.near_max) {
          x_near_sum += ps.lat_err[k];
          z_near_sum += ps.z_err[k];
          ++near_count;
        } else if (ps.y[k] > cfg.far_min && ps.y[k] <= cfg.far_max) {
          x_far_sum += ps.lat_err[k];
          z_far_sum += ps.z_err[k];
          ++far_count;
        }
      }
      if (scene_preds[j].category == scene_gts[i].category) ++matched_correct;
      cd_sum += 0.5 * (directed_chamfer(scene_preds[j], scene_gts[i]) +
                       directed_chamfer(scene_gts[i], scene_preds[j]));
      ++cd_pairs;
    }
    report.tp += scene_tp;
    report.fp += p - scene_tp;
  }

  const long long pred_total = report.tp + report.fp;
  const long long gt_total = report.tp + report.fn;
  report.precision = pred_total > 0 ? static_cast<double>(report.tp) / pred_total : 0.0;
  report.recall = gt_total > 0 ? static_cast<double>(report.tp) / gt_total : 0.0;
  report.f1 = (report.precision + report.recall) > 0.0
                  ? 2.0 * report.precision * report.recall /
                        (report.precision + report.recall)
                  : 0.0;
  report.category_accuracy =
      report.tp > 0 ? static_cast<double>(matched_correct) / report.tp : 0.0;
  report.x_err_near = near_count > 0 ? x_near_sum / near_count : 0.0;
  report.z_err_near = near_count > 0 ? z_near_sum / near_count : 0.0;
  report.x_err_far = far_count > 0 ? x_far_sum / far_count : 0.0;
  report.z_err_far = far_count > 0 ? z_far_sum / far_count : 0.0;
  report.cd_error = cd_pairs > 0 ? cd_sum / cd_pairs : 0.0;
  return report;
}

}  // namespace grouplane
