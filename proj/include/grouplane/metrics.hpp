#pragma once

#include <vector>

#include "grouplane/lane.hpp"

namespace grouplane {

struct EvalConfig {
  double point_distance_threshold = 1.5;  // meters
  double match_fraction = 0.75;           // of gt samples covered
  double near_min = 3.0;                  // y ranges for the near/far buckets
  double near_max = 40.0;
  double far_min = 40.0;
  double far_max = 100.0;
  double sample_spacing = 1.0;  // meters along the gt's classified axis

  bool operator==(const EvalConfig&) const = default;
  void validate() const;
};

// Per-sample comparison of one (pred, gt) pair. The gt is sampled along its
// dominant axis (y for vertical-extent lanes, x otherwise); the prediction
// is interpolated at the same values. A pair matches when at least
// match_fraction of the gt samples are covered within the distance
// threshold.
struct PairSamples {
  bool matched = false;
  int total_samples = 0;        // gt samples compared
  std::vector<double> y;        // longitudinal position per covered sample
  std::vector<double> dist;     // point distance per covered sample
  std::vector<double> lat_err;  // lateral |error| per covered sample
  std::vector<double> z_err;    // |z error| per covered sample
  double mean_distance = 0.0;   // over covered samples; meaningless if none
};

PairSamples lane_pair_error(const Lane3D& pred, const Lane3D& gt,
                            const EvalConfig& cfg);

struct EvalReport {
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double category_accuracy = 0.0;  // over matched pairs
  double x_err_near = 0.0;
  double x_err_far = 0.0;
  double z_err_near = 0.0;
  double z_err_far = 0.0;
  double cd_error = 0.0;  // symmetric mean chamfer over matched pairs
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;

  bool operator==(const EvalReport&) const = default;
};

// Scene-aligned lists: preds[i] and gts[i] describe the same scene.
// Hungarian matching per scene on mean pairwise distance; pairs failing the
// coverage rule cannot match.
EvalReport evaluate(const std::vector<std::vector<Lane3D>>& preds,
                    const std::vector<std::vector<Lane3D>>& gts,
                    const EvalConfig& cfg);

}  // namespace grouplane
