#include "grouplane/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace grouplane {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

double clamp_prob(double p) { return std::max(p, kLogEps); }

// Jonker-Volgenant shortest augmenting path on a dense square matrix.
std::vector<int> jv_square(const std::vector<double>& a, int n) {
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = 0;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j) {
    if (p[j]) row_to_col[p[j] - 1] = j - 1;
  }
  return row_to_col;
}

// Optimal total for a rectangular problem (rows <= cols), padding with zero
// rows to square.
double solve_min_total(const CostMatrix& cost) {
  if (cost.rows == 0) return 0.0;
  const int n = cost.cols;
  std::vector<double> a(static_cast<size_t>(n) * n, 0.0);
  for (int r = 0; r < cost.rows; ++r) {
    std::copy(cost.data.begin() + static_cast<size_t>(r) * n,
              cost.data.begin() + static_cast<size_t>(r + 1) * n,
              a.begin() + static_cast<size_t>(r) * n);
  }
  const auto rtc = jv_square(a, n);
  double total = 0.0;
  for (int r = 0; r < cost.rows; ++r) total += cost.at(r, rtc[r]);
  return total;
}

}  // namespace

Assignment hungarian(const CostMatrix& cost) {
  if (cost.rows > cost.cols) fail("hungarian: more rows than columns");
  for (double v : cost.data) {
    if (!std::isfinite(v)) fail("hungarian: costs must be finite");
  }
  Assignment result;
  if (cost.rows == 0) return result;

  const double best = solve_min_total(cost);
  const double tol = 1e-9 * std::max(1.0, std::fabs(best));

  // Fix rows in order to the smallest column that still admits an optimal
  // completion; this pins the lexicographically smallest argmin.
  std::vector<int> remaining(cost.cols);
  std::iota(remaining.begin(), remaining.end(), 0);
  result.row_to_col.assign(cost.rows, -1);
  double fixed = 0.0;
  for (int r = 0; r < cost.rows; ++r) {
    bool placed = false;
    for (size_t k = 0; k < remaining.size() && !placed; ++k) {
      const int c = remaining[k];
      CostMatrix sub(cost.rows - r - 1, static_cast<int>(remaining.size()) - 1);
      for (int rr = 0; rr < sub.rows; ++rr) {
        int cc = 0;
        for (size_t kk = 0; kk < remaining.size(); ++kk) {
          if (kk == k) continue;
          sub.at(rr, cc++) = cost.at(r + 1 + rr, remaining[kk]);
        }
      }
      const double completion = solve_min_total(sub);
      if (fixed + cost.at(r, c) + completion <= best + tol) {
        result.row_to_col[r] = c;
        fixed += cost.at(r, c);
        remaining.erase(remaining.begin() + static_cast<long>(k));
        placed = true;
      }
    }
    if (!placed) fail("hungarian: no optimal completion found");
  }
  result.total = 0.0;
  for (int r = 0; r < cost.rows; ++r) result.total += cost.at(r, result.row_to_col[r]);
  return result;
}

double pair_cost(const SlotView& slot, const LaneTargets& targets,
                 const LossFlags& flags) {
  if (slot.orientation != targets.orientation) {
    fail("pair_cost: slot and target orientations disagree");
  }
  if (slot.lines != targets.lines()) {
    fail("pair_cost: line counts disagree");
  }
  double cost = -std::log(clamp_prob(slot.existence));

  double vis_bce = 0.0;
  for (int h = 0; h < slot.lines; ++h) {
    const double p = slot.visibility[h];
    if (targets.vis[h]) {
      vis_bce -= std::log(clamp_prob(p));
    } else if (!flags.visibility_positive_only) {
      vis_bce -= std::log(clamp_prob(1.0 - p));
    }
  }
  cost += vis_bce / slot.lines;

  for (int h = 0; h < slot.lines; ++h) {
    if (!targets.vis[h]) continue;
    const double p =
        slot.row_scores[static_cast<size_t>(h) * slot.cells + targets.cell_index[h]];
    cost -= std::log(clamp_prob(p));
  }

  cost -= std::log(clamp_prob(slot.category[targets.category]));

  for (int h = 0; h < slot.lines; ++h) {
    if (!targets.vis[h]) continue;
    cost += std::fabs(slot.offset_lat[h] - targets.offset_lat[h]) +
            std::fabs(slot.offset_z[h] - targets.offset_z[h]);
  }
  return cost;
}

namespace {

struct LabelInfo {
  int index = -1;
  CrossedCounts counts;
  LaneTargets vertical;
  LaneTargets horizontal;
  Orientation winner = Orientation::Vertical;
};

// Encodes labels in both orientations and picks winners; labels with no
// representation in any enabled orientation are dropped.
std::vector<LabelInfo> prepare_labels(const std::vector<Lane3D>& labels,
                                      const BevGridSpec& grid, int categories,
                                      bool horizontal_enabled,
                                      std::vector<int>* dropped) {
  std::vector<LabelInfo> active;
  for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
    LabelInfo info;
    info.index = i;
    info.counts = crossed_counts(labels[i], grid);
    const bool vertical_ok = info.counts.vertical > 0;
    const bool horizontal_ok = horizontal_enabled && info.counts.horizontal > 0;
    if (!vertical_ok && !horizontal_ok) {
      dropped->push_back(i);
      continue;
    }
    info.vertical = encode_lane_as(labels[i], Orientation::Vertical, grid, categories);
    if (horizontal_enabled) {
      info.horizontal =
          encode_lane_as(labels[i], Orientation::Horizontal, grid, categories);
    }
    if (horizontal_enabled) {
      info.winner = info.counts.vertical >= info.counts.horizontal
                        ? Orientation::Vertical
                        : Orientation::Horizontal;
    } else {
      info.winner = Orientation::Vertical;
    }
    active.push_back(std::move(info));
  }
  return active;
}

void collect_unmatched(const MatchResult& result, int slots, bool horizontal_enabled,
                       MatchResult* out) {
  std::vector<char> used_v(slots, 0), used_h(slots, 0);
  for (const MatchEntry& e : result.entries) {
    (e.orientation == Orientation::Vertical ? used_v : used_h)[e.slot] = 1;
  }
  for (int s = 0; s < slots; ++s) {
    if (!used_v[s]) out->unmatched_vertical.push_back(s);
  }
  if (horizontal_enabled) {
    for (int s = 0; s < slots; ++s) {
      if (!used_h[s]) out->unmatched_horizontal.push_back(s);
    }
  }
}

}  // namespace

MatchResult som_match(const ForwardResult& outputs, int64_t batch_index,
                      const std::vector<Lane3D>& labels, const BevGridSpec& grid,
                      int categories, const LossFlags& flags) {
  const bool has_h = outputs.horizontal.has_value();
  const int slots = static_cast<int>(outputs.vertical.existence.dim(1));
  MatchResult result;
  auto active = prepare_labels(labels, grid, categories, has_h,
                               &result.dropped_labels);
  const int m = static_cast<int>(active.size());
  if (m > slots) {
    fail("som_match: more labels than prediction slots");
  }
  if (m > 0) {
    CostMatrix cost_v(m, slots);
    for (int i = 0; i < m; ++i) {
      for (int s = 0; s < slots; ++s) {
        cost_v.at(i, s) = pair_cost(
            GroupLaneNet::slot_view(outputs.vertical, batch_index, s),
            active[i].vertical, flags);
      }
    }
    const Assignment assign_v = hungarian(cost_v);

    Assignment assign_h;
    if (has_h) {
      CostMatrix cost_h(m, slots);
      for (int i = 0; i < m; ++i) {
        for (int s = 0; s < slots; ++s) {
          cost_h.at(i, s) = pair_cost(
              GroupLaneNet::slot_view(*outputs.horizontal, batch_index, s),
              active[i].horizontal, flags);
        }
      }
      assign_h = hungarian(cost_h);
    }

    for (int i = 0; i < m; ++i) {
      MatchEntry entry;
      entry.label = active[i].index;
      entry.orientation = active[i].winner;
      entry.slot = active[i].winner == Orientation::Vertical
                       ? assign_v.row_to_col[i]
                       : assign_h.row_to_col[i];
      result.entries.push_back(entry);
    }
  }
  collect_unmatched(result, slots, has_h, &result);
  return result;
}

MatchResult index_match(const ForwardResult& outputs, int64_t batch_index,
                        const std::vector<Lane3D>& labels,
                        const BevGridSpec& grid, int categories) {
  (void)batch_index;
  const bool has_h = outputs.horizontal.has_value();
  const int slots = static_cast<int>(outputs.vertical.existence.dim(1));
  MatchResult result;
  auto active = prepare_labels(labels, grid, categories, has_h,
                               &result.dropped_labels);

  // lateral position at the nearest (lowest-index) visible line
  auto sort_key = [&](const LabelInfo& info) {
    const LaneTargets& t =
        info.winner == Orientation::Vertical ? info.vertical : info.horizontal;
    const bool vertical = info.winner == Orientation::Vertical;
    for (int h = 0; h < t.lines(); ++h) {
      if (!t.vis[h]) continue;
      const double center = vertical ? grid.col_center(t.cell_index[h])
                                     : grid.row_center(t.cell_index[h]);
      return center + t.offset_lat[h];
    }
    return 0.0;
  };

  for (Orientation o : {Orientation::Vertical, Orientation::Horizontal}) {
    if (o == Orientation::Horizontal && !has_h) break;
    std::vector<const LabelInfo*> group;
    for (const auto& info : active) {
      if (info.winner == o) group.push_back(&info);
    }
    std::sort(group.begin(), group.end(),
              [&](const LabelInfo* a, const LabelInfo* b) {
                const double ka = sort_key(*a), kb = sort_key(*b);
                if (ka != kb) return ka < kb;
                return a->index < b->index;
              });
    if (static_cast<int>(group.size()) > slots) {
      fail("index_match: more labels than prediction slots");
    }
    for (size_t k = 0; k < group.size(); ++k) {
      result.entries.push_back({group[k]->index, o, static_cast<int>(k)});
    }
  }
  std::sort(result.entries.begin(), result.entries.end(),
            [](const MatchEntry& a, const MatchEntry& b) { return a.label < b.label; });
  collect_unmatched(result, slots, has_h, &result);
  return result;
}

namespace {

// -sum(t*log(p) + (1-t)*log(1-p)) with clamped logs
Tensor bce_sum(const Tensor& p, const Tensor& t) {
  Tensor one_minus_p = add_scalar(neg(p), 1.0);
  Tensor one_minus_t = add_scalar(neg(t), 1.0);
  Tensor pos = mul(t, safe_log(p));
  Tensor negt = mul(one_minus_t, safe_log(one_minus_p));
  return neg(add(sum_all(pos), sum_all(negt)));
}

Tensor slot_slice(const Tensor& t, int64_t batch_index, int slot, Shape shape) {
  return reshape(slice(slice(t, 0, batch_index, 1), 1, slot, 1), std::move(shape));
}

}  // namespace

LossBreakdown total_loss(const ForwardResult& outputs,
                         const std::vector<std::vector<Lane3D>>& labels,
                         const BevGridSpec& grid, int categories,
                         MatcherKind matcher, const LossFlags& flags) {
  const int64_t batch = outputs.vertical.existence.dim(0);
  if (static_cast<int64_t>(labels.size()) != batch) {
    fail("total_loss: one label list per batch element");
  }
  const int slots = static_cast<int>(outputs.vertical.existence.dim(1));
  const bool has_h = outputs.horizontal.has_value();

  std::vector<MatchResult> matches(batch);
  int n_l = 0;
  for (int64_t b = 0; b < batch; ++b) {
    matches[b] = matcher == MatcherKind::Som
                     ? som_match(outputs, b, labels[b], grid, categories, flags)
                     : index_match(outputs, b, labels[b], grid, categories);
    n_l += static_cast<int>(matches[b].entries.size());
  }
  const double norm = 1.0 / std::max(n_l, 1);

  // existence: full BCE over every slot of every enabled head group
  std::vector<double> target_v(batch * slots, 0.0);
  std::vector<double> target_h(batch * slots, 0.0);
  for (int64_t b = 0; b < batch; ++b) {
    for (const MatchEntry& e : matches[b].entries) {
      (e.orientation == Orientation::Vertical ? target_v : target_h)[b * slots + e.slot] = 1.0;
    }
  }
  Tensor loss_e = bce_sum(outputs.vertical.existence,
                          Tensor::from_values({batch, slots}, target_v));
  if (has_h) {
    loss_e = add(loss_e, bce_sum(outputs.horizontal->existence,
                                 Tensor::from_values({batch, slots}, target_h)));
  }
  loss_e = scale(loss_e, norm);

  Tensor loss_v = Tensor::scalar(0.0);
  Tensor loss_r = Tensor::scalar(0.0);
  Tensor loss_c = Tensor::scalar(0.0);
  Tensor loss_o = Tensor::scalar(0.0);

  for (int64_t b = 0; b < batch; ++b) {
    for (const MatchEntry& e : matches[b].entries) {
      const HeadGroupOutputs& out = e.orientation == Orientation::Vertical
                                        ? outputs.vertical
                                        : *outputs.horizontal;
      const LaneTargets t =
          encode_lane_as(labels[b][e.label], e.orientation, grid, categories);
      const int64_t lines = out.visibility.dim(2);
      const int64_t cells = out.row_scores.dim(3);

      // visibility: per-line BCE, averaged over this orientation's lines
      Tensor vis_p = slot_slice(out.visibility, b, e.slot, {lines});
      std::vector<double> vis_t(lines);
      for (int64_t h = 0; h < lines; ++h) vis_t[h] = t.vis[h];
      Tensor vis_target = Tensor::from_values({lines}, vis_t);
      Tensor vis_term;
      if (flags.visibility_positive_only) {
        vis_term = neg(sum_all(mul(vis_target, safe_log(vis_p))));
      } else {
        vis_term = bce_sum(vis_p, vis_target);
      }
      loss_v = add(loss_v, scale(vis_term, 1.0 / static_cast<double>(lines)));

      // row index: cross-entropy of the true cell on visible lines only
      Tensor row_p = slot_slice(out.row_scores, b, e.slot, {lines * cells});
      std::vector<double> row_mask(lines * cells, 0.0);
      for (int64_t h = 0; h < lines; ++h) {
        if (t.vis[h]) row_mask[h * cells + t.cell_index[h]] = 1.0;
      }
      loss_r = add(loss_r, neg(sum_all(mul(
                               Tensor::from_values({lines * cells}, row_mask),
                               safe_log(row_p)))));

      // category
      Tensor cat_p = slot_slice(out.category, b, e.slot,
                                {static_cast<int64_t>(categories)});
      std::vector<double> onehot(categories, 0.0);
      onehot[t.category] = 1.0;
      loss_c = add(loss_c, neg(sum_all(mul(
                               Tensor::from_values({categories}, onehot),
                               safe_log(cat_p)))));

      // offsets: visibility-masked L1 on lateral and z
      Tensor lat_p = slot_slice(out.offset_lat, b, e.slot, {lines});
      Tensor z_p = slot_slice(out.offset_z, b, e.slot, {lines});
      Tensor lat_t = Tensor::from_values({lines}, t.offset_lat);
      Tensor z_t = Tensor::from_values({lines}, t.offset_z);
      Tensor l1 = add(sum_all(mul(vis_target, abs_value(sub(lat_p, lat_t)))),
                      sum_all(mul(vis_target, abs_value(sub(z_p, z_t)))));
      loss_o = add(loss_o, l1);
    }
  }
  LossBreakdown breakdown;
  breakdown.matched_labels = n_l;
  breakdown.existence = loss_e;
  breakdown.visibility = scale(loss_v, norm);
  breakdown.row_index = scale(loss_r, norm);
  breakdown.category = scale(loss_c, norm);
  breakdown.offsets = scale(loss_o, norm);
  breakdown.total =
      add(add(add(add(breakdown.existence, breakdown.visibility),
                  breakdown.row_index),
              breakdown.category),
          breakdown.offsets);
  return breakdown;
}

}  // namespace grouplane
