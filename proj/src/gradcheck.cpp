#include "grouplane/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "grouplane/lss.hpp"
#include "grouplane/matching.hpp"
#include "grouplane/network.hpp"
#include "grouplane/rng.hpp"
#include "grouplane/tensor.hpp"

namespace grouplane {

namespace {

constexpr double kTolerance = 1e-4;
constexpr double kStep = 1e-5;
constexpr double kDenomFloor = 1e-2;

Tensor rand_tensor(Rng& rng, Shape shape, double lo, double hi,
                   bool requires_grad = false) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_values(std::move(shape), std::move(v), requires_grad);
}

// uniform values kept a margin away from zero, for kinked ops
Tensor rand_tensor_off_zero(Rng& rng, Shape shape, double margin,
                            bool requires_grad) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) {
    do {
      x = rng.uniform(-2.0, 2.0);
    } while (std::fabs(x) < margin);
  }
  return Tensor::from_values(std::move(shape), std::move(v), requires_grad);
}

double fd_max_rel_err(std::vector<Tensor> leaves,
                      const std::function<Tensor()>& loss_fn,
                      int64_t max_probes, Rng& probe_rng, bool negate) {
  for (auto& leaf : leaves) leaf.zero_grad();
  Tensor loss = loss_fn();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& leaf : leaves) {
    analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
    leaf.zero_grad();
  }
  double worst = 0.0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    std::vector<int64_t> probes(leaf.numel());
    std::iota(probes.begin(), probes.end(), 0);
    if (static_cast<int64_t>(probes.size()) > max_probes) {
      probe_rng.shuffle(probes);
      probes.resize(max_probes);
    }
    for (int64_t idx : probes) {
      auto data = leaf.mutable_values();
      const double saved = data[idx];
      double f_plus, f_minus;
      {
        NoGradGuard no_grad;
        data[idx] = saved + kStep;
        f_plus = loss_fn().item();
        data[idx] = saved - kStep;
        f_minus = loss_fn().item();
        data[idx] = saved;
      }
      const double numeric = (f_plus - f_minus) / (2.0 * kStep);
      const double a = negate ? -analytic[li][idx] : analytic[li][idx];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), kDenomFloor});
      worst = std::max(worst, std::fabs(a - numeric) / denom);
    }
  }
  return worst;
}

struct Check {
  std::string op;
  // builds leaves + loss closure for one seed, returns max rel err
  std::function<double(uint64_t, bool)> run;
};

double check_conv(uint64_t seed, bool negate) {
  Rng rng(seed);
  Tensor x = rand_tensor(rng, {2, 4, 5, 6}, -2, 2, true);
  Tensor w = rand_tensor(rng, {4, 2, 3, 3}, -1, 1, true);
  Tensor b = rand_tensor(rng, {4}, -1, 1, true);
  Conv2dSpec spec;
  spec.groups = 2;
  spec.stride_h = spec.stride_w = 2;
  spec.pad_h = spec.pad_w = 1;
  Tensor mask = rand_tensor(rng, {2, 4, 3, 3}, -1, 1);
  Rng probe(seed ^ 0x9999);
  return fd_max_rel_err(
      {x, w, b},
      [&] { return sum_all(mul(conv2d_grouped(x, w, b, spec), mask)); }, 48,
      probe, negate);
}

double check_linear(uint64_t seed, bool negate) {
  Rng rng(seed);
  Tensor x = rand_tensor(rng, {3, 4}, -2, 2, true);
  Tensor w = rand_tensor(rng, {5, 4}, -1, 1, true);
  Tensor b = rand_tensor(rng, {5}, -1, 1, true);
  Tensor mask = rand_tensor(rng, {3, 5}, -1, 1);
  Rng probe(seed ^ 0x9999);
  return fd_max_rel_err(
      {x, w, b}, [&] { return sum_all(mul(linear(x, w, b), mask)); }, 48, probe,
      negate);
}

double check_softmax_log(uint64_t seed, bool negate) {
  Rng rng(seed);
  Tensor x = rand_tensor(rng, {4, 6}, -2, 2, true);
  Tensor mask = rand_tensor(rng, {4, 6}, -1, 1);
  Rng probe(seed ^ 0x9999);
  return fd_max_rel_err(
      {x}, [&] { return sum_all(mul(safe_log(softmax_lastdim(x)), mask)); }, 48,
      probe, negate);
}

double check_sigmoid(uint64_t seed, bool negate) {
  Rng rng(seed);
  Tensor x = rand_tensor(rng, {4, 6}, -2, 2, true);
  Tensor mask = rand_tensor(rng, {4, 6}, -1, 1);
  Rng probe(seed ^ 0x9999);
  return fd_max_rel_err({x}, [&] { return sum_all(mul(sigmoid(x), mask)); }, 48,
                        probe, negate);
}

double check_relu_abs(uint64_t seed, bool negate) {
  Rng rng(seed);
  Tensor x = rand_tensor_off_zero(rng, {4, 6}, 0.05, true);
  Tensor mask = rand_tensor(rng, {4, 6}, -1, 1);
  Rng probe(seed ^ 0x9999);
  const double a = fd_max_rel_err(
      {x}, [&] { return sum_all(mul(relu(x), mask)); }, 48, probe, negate);
  const double b = fd_max_rel_err(
      {x}, [&] { return sum_all(mul(abs_value(x), mask)); }, 48, probe, negate);
  return std::max(a, b);
}

double check_reductions(uint64_t seed, bool negate) {
  Rng rng(seed);
  // spread values so the max is unique per reduced fiber
  std::vector<double> vals(2 * 3 * 4);
  for (size_t i = 0; i < vals.size(); ++i) {
    vals[i] = rng.uniform(-2, 2) + 0.31 * static_cast<double>(i % 7);
  }
  Tensor x = Tensor::from_values({2, 3, 4}, vals, true);
  Tensor mask_max = rand_tensor(rng, {2, 4}, -1, 1);
  Tensor mask_sum = rand_tensor(rng, {2, 3}, -1, 1);
  Rng probe(seed ^ 0x9999);
  const double a = fd_max_rel_err(
      {x}, [&] { return sum_all(mul(reduce_max(x, 1), mask_max)); }, 24, probe,
      negate);
  const double b = fd_max_rel_err(
      {x}, [&] { return sum_all(mul(reduce_sum(x, 2), mask_sum)); }, 24, probe,
      negate);
  return std::max(a, b);
}

double check_shape_ops(uint64_t seed, bool negate) {
  Rng rng(seed);
  Tensor x = rand_tensor(rng, {2, 4, 3}, -2, 2, true);
  Tensor mask_t = rand_tensor(rng, {2, 3, 4}, -1, 1);
  Tensor mask_s = rand_tensor(rng, {2, 2, 3}, -1, 1);
  Rng probe(seed ^ 0x9999);
  const double a = fd_max_rel_err(
      {x}, [&] { return sum_all(mul(transpose_last2(x), mask_t)); }, 24, probe,
      negate);
  const double b = fd_max_rel_err(
      {x}, [&] { return sum_all(mul(slice(x, 1, 1, 2), mask_s)); }, 24, probe,
      negate);
  Tensor y = rand_tensor(rng, {2, 2, 3}, -2, 2, true);
  Tensor mask_c = rand_tensor(rng, {2, 6, 3}, -1, 1);
  const double c = fd_max_rel_err(
      {x, y}, [&] { return sum_all(mul(concat({x, y}, 1), mask_c)); }, 24, probe,
      negate);
  return std::max({a, b, c});
}

double check_lift_splat(uint64_t seed, bool negate) {
  Rng rng(seed);
  const CameraRig rig = make_forward_rig(1.5, 10.0, 70.0, 70.0, 64, 160);
  DepthBins bins{1.0, 60.0, 5};
  BevGridSpec grid{-10.0, 10.0, 3.0, 53.0, 12, 50};
  auto table =
      std::make_shared<const FrustumTable>(build_frustum(rig, bins, 2, 3, grid));
  Tensor context = rand_tensor(rng, {1, 3, 2, 3}, -1, 1, true);
  Tensor depth = rand_tensor(rng, {1, 5, 2, 3}, 0.0, 1.0, true);
  Tensor mask = rand_tensor(rng, {1, 3, 12, 50}, -1, 1);
  Rng probe(seed ^ 0x9999);
  return fd_max_rel_err(
      {context, depth},
      [&] { return sum_all(mul(lift_splat(context, depth, {table}), mask)); },
      48, probe, negate);
}

double check_gather(uint64_t seed, bool negate) {
  Rng rng(seed);
  Tensor features = rand_tensor(rng, {2, 6, 3, 5}, -1, 1, true);
  Tensor scores = rand_tensor(rng, {2, 2, 3, 5}, 0.0, 1.0, true);
  Tensor mask = rand_tensor(rng, {2, 6, 3, 1}, -1, 1);
  Rng probe(seed ^ 0x9999);
  return fd_max_rel_err(
      {features, scores},
      [&] { return sum_all(mul(foreground_gather(features, scores), mask)); },
      48, probe, negate);
}

// the five losses, differentiated through leaf head outputs
double check_losses(uint64_t seed, bool negate) {
  Rng rng(seed);
  const BevGridSpec grid{-10.0, 10.0, 3.0, 53.0, 6, 8};
  const int n = 2, cats = 3;
  const int lines = grid.rows, cells = grid.cols;

  Tensor existence = rand_tensor(rng, {1, n}, 0.1, 0.9, true);
  Tensor visibility = rand_tensor(rng, {1, n, lines, 1}, 0.1, 0.9, true);
  Tensor rows = rand_tensor(rng, {1, n, lines, cells}, 0.05, 0.95, true);
  Tensor category = rand_tensor(rng, {1, n, cats}, 0.1, 0.9, true);
  Tensor off_lat = rand_tensor(rng, {1, n, lines, 1}, -1.5, 1.5, true);
  Tensor off_z = rand_tensor(rng, {1, n, lines, 1}, -1.5, 1.5, true);

  std::vector<std::vector<Lane3D>> labels(1);
  Lane3D lane;
  lane.category = 1;
  for (double y = 3.0; y <= 53.0; y += 2.0) {
    lane.points.push_back({0.3 * std::sin(0.1 * y) - 2.0, y, 0.1 * std::cos(0.2 * y)});
  }
  labels[0].push_back(lane);

  auto loss_fn = [&] {
    ForwardResult r;
    r.vertical.orientation = Orientation::Vertical;
    r.vertical.existence = existence;
    r.vertical.visibility = visibility;
    r.vertical.row_scores = rows;
    r.vertical.category = category;
    r.vertical.offset_lat = off_lat;
    r.vertical.offset_z = off_z;
    return total_loss(r, labels, grid, cats, MatcherKind::Som).total;
  };
  Rng probe(seed ^ 0x9999);
  return fd_max_rel_err(
      {existence, visibility, rows, category, off_lat, off_z}, loss_fn, 24,
      probe, negate);
}

double check_end_to_end(uint64_t seed, bool negate) {
  NetworkConfig cfg;
  cfg.groups_per_head = 2;
  cfg.channels_per_group = 2;
  cfg.categories = 2;
  cfg.depth_bins = 3;
  cfg.image_height = 32;
  cfg.image_width = 32;
  cfg.grid = BevGridSpec{-10.0, 10.0, 3.0, 53.0, 4, 6};
  GroupLaneNet net(cfg, seed);
  const CameraRig rig = make_forward_rig(1.5, 10.0, 35.0, 35.0, 32, 32);
  Rng rng(seed ^ 0x1111);
  Tensor images = rand_tensor(rng, {1, 3, 32, 32}, -1, 1, true);

  std::vector<std::vector<Lane3D>> labels(1);
  Lane3D vertical;
  vertical.category = 1;
  for (double y = 3.0; y <= 53.0; y += 1.0) vertical.points.push_back({-2.0, y, 0.05});
  labels[0].push_back(vertical);
  Lane3D horizontal;
  horizontal.category = 0;
  for (double x = -9.0; x <= 9.0; x += 0.5) horizontal.points.push_back({x, 20.0, 0.0});
  labels[0].push_back(horizontal);

  auto loss_fn = [&] {
    ForwardResult r = net.forward(images, {rig});
    return total_loss(r, labels, cfg.grid, cfg.categories, MatcherKind::Som)
        .total;
  };
  net.forward(images, {rig});  // materialize parameters
  std::vector<Tensor> leaves{images,
                             net.params().all().at("backbone.2.weight"),
                             net.params().all().at("depth.1.weight"),
                             net.params().all().at("context.bias"),
                             net.params().all().at("bev.1.conv2.weight"),
                             net.params().all().at("head.v.row.1.weight"),
                             net.params().all().at("head.v.cat.mlp.weight"),
                             net.params().all().at("head.h.off_z.1.bias")};
  Rng probe(seed ^ 0x9999);
  return fd_max_rel_err(leaves, loss_fn, 8, probe, negate);
}

}  // namespace

GradCheckReport run_gradcheck(uint64_t seed, int seeds, bool negative_control) {
  const std::vector<Check> checks = {
      {"conv2d_grouped", check_conv},
      {"linear", check_linear},
      {"softmax_log", check_softmax_log},
      {"sigmoid", check_sigmoid},
      {"relu_abs", check_relu_abs},
      {"reduce_max_sum", check_reductions},
      {"shape_ops", check_shape_ops},
      {"lift_splat", check_lift_splat},
      {"foreground_gather", check_gather},
      {"losses_total", check_losses},
      {"end_to_end_micro", check_end_to_end},
  };
  GradCheckReport report;
  for (const Check& check : checks) {
    GradCheckEntry entry;
    entry.op = check.op;
    // the negative control negates the first op's gradient and must fail
    const bool negate = negative_control && &check == &checks.front();
    for (int s = 0; s < seeds; ++s) {
      entry.max_rel_err = std::max(
          entry.max_rel_err, check.run(Rng::mix(seed, 1000 + s), negate));
    }
    entry.pass = entry.max_rel_err <= kTolerance;
    report.all_pass = report.all_pass && entry.pass;
    report.entries.push_back(entry);
  }
  return report;
}

}  // namespace grouplane
