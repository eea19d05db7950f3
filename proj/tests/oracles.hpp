#pragma once

// Test-only reference implementations, kept independent of the library code
// paths they validate.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "grouplane/rng.hpp"
#include "grouplane/tensor.hpp"

namespace oracle {

// Dense block-diagonal convolution via a plain 6-deep loop nest.
inline std::vector<double> conv2d_loops(const std::vector<double>& x, int64_t B,
                                        int64_t Cin, int64_t H, int64_t W,
                                        const std::vector<double>& w, int64_t Cout,
                                        int64_t kh, int64_t kw, int64_t groups,
                                        const std::vector<double>& bias,
                                        int stride_h, int stride_w, int pad_h,
                                        int pad_w) {
  const int64_t cin_g = Cin / groups;
  const int64_t cout_g = Cout / groups;
  const int64_t Ho = (H + 2 * pad_h - kh) / stride_h + 1;
  const int64_t Wo = (W + 2 * pad_w - kw) / stride_w + 1;
  std::vector<double> y(B * Cout * Ho * Wo, 0.0);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t co = 0; co < Cout; ++co) {
      const int64_t g = co / cout_g;
      for (int64_t oi = 0; oi < Ho; ++oi)
        for (int64_t oj = 0; oj < Wo; ++oj) {
          double acc = bias.empty() ? 0.0 : bias[co];
          for (int64_t ci = 0; ci < cin_g; ++ci)
            for (int64_t ki = 0; ki < kh; ++ki)
              for (int64_t kj = 0; kj < kw; ++kj) {
                const int64_t ii = oi * stride_h + ki - pad_h;
                const int64_t jj = oj * stride_w + kj - pad_w;
                if (ii < 0 || ii >= H || jj < 0 || jj >= W) continue;
                const int64_t cin_idx = g * cin_g + ci;
                acc += x[((b * Cin + cin_idx) * H + ii) * W + jj] *
                       w[((co * cin_g + ci) * kh + ki) * kw + kj];
              }
          y[((b * Cout + co) * Ho + oi) * Wo + oj] = acc;
        }
    }
  return y;
}

// Max over one axis by explicit iteration.
inline std::vector<double> reduce_max_loops(const std::vector<double>& x,
                                            const std::vector<int64_t>& shape,
                                            int axis) {
  int64_t outer = 1, inner = 1;
  const int64_t extent = shape[axis];
  for (int i = 0; i < axis; ++i) outer *= shape[i];
  for (int i = axis + 1; i < static_cast<int>(shape.size()); ++i) inner *= shape[i];
  std::vector<double> out(outer * inner, -std::numeric_limits<double>::infinity());
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t e = 0; e < extent; ++e)
      for (int64_t i = 0; i < inner; ++i) {
        out[o * inner + i] =
            std::max(out[o * inner + i], x[(o * extent + e) * inner + i]);
      }
  return out;
}

inline std::vector<double> linear_loops(const std::vector<double>& x, int64_t rows,
                                        int64_t k, const std::vector<double>& w,
                                        int64_t m, const std::vector<double>& b) {
  std::vector<double> y(rows * m, 0.0);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < m; ++j) {
      double acc = b.empty() ? 0.0 : b[j];
      for (int64_t p = 0; p < k; ++p) acc += x[r * k + p] * w[j * k + p];
      y[r * m + j] = acc;
    }
  return y;
}

// Central finite differences against analytic gradients.
//
// loss_fn must rebuild the graph from the leaves' current values. Relative
// error uses max(|analytic|, |numeric|, floor) in the denominator so that
// near-zero gradients are compared absolutely at floor * tol.
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string where;
};

inline GradCheckResult gradcheck(
    std::vector<grouplane::Tensor> leaves,
    const std::function<grouplane::Tensor()>& loss_fn, double h = 1e-5,
    double denom_floor = 1e-2, int64_t max_probes_per_leaf = 64,
    uint64_t probe_seed = 7) {
  using grouplane::Tensor;
  GradCheckResult result;
  for (auto& leaf : leaves) leaf.zero_grad();
  Tensor loss = loss_fn();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& leaf : leaves) {
    analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
    leaf.zero_grad();
  }
  grouplane::Rng rng(probe_seed);
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    std::vector<int64_t> probes(leaf.numel());
    std::iota(probes.begin(), probes.end(), 0);
    if (static_cast<int64_t>(probes.size()) > max_probes_per_leaf) {
      rng.shuffle(probes);
      probes.resize(max_probes_per_leaf);
      std::sort(probes.begin(), probes.end());
    }
    for (int64_t idx : probes) {
      auto data = leaf.mutable_values();
      const double saved = data[idx];
      double f_plus, f_minus;
      {
        grouplane::NoGradGuard ng;
        data[idx] = saved + h;
        f_plus = loss_fn().item();
        data[idx] = saved - h;
        f_minus = loss_fn().item();
        data[idx] = saved;
      }
      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double a = analytic[li][idx];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), denom_floor});
      const double rel = std::fabs(a - numeric) / denom;
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.where = "leaf " + std::to_string(li) + " elem " + std::to_string(idx);
      }
    }
  }
  return result;
}

// Uniform values with a margin away from `kinks` (for relu/abs/max inputs).
inline std::vector<double> random_values_away_from(grouplane::Rng& rng, int64_t n,
                                                   double lo, double hi,
                                                   const std::vector<double>& kinks,
                                                   double margin) {
  std::vector<double> v(n);
  for (int64_t i = 0; i < n; ++i) {
    double x;
    bool ok;
    do {
      x = rng.uniform(lo, hi);
      ok = true;
      for (double k : kinks) {
        if (std::fabs(x - k) < margin) {
          ok = false;
          break;
        }
      }
    } while (!ok);
    v[i] = x;
  }
  return v;
}

}  // namespace oracle
