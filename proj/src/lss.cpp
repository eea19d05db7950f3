#include "grouplane/lss.hpp"

#include <stdexcept>

namespace grouplane {

FrustumTable build_frustum(const CameraRig& rig, const DepthBins& bins,
                           int feat_h, int feat_w, const BevGridSpec& grid) {
  rig.validate();
  bins.validate();
  grid.validate();
  FrustumTable table;
  table.rig = rig;
  table.bins = bins;
  table.grid = grid;
  table.feat_h = feat_h;
  table.feat_w = feat_w;
  table.cell.resize(static_cast<size_t>(feat_h) * feat_w * bins.count, -1);
  const double su = static_cast<double>(rig.image_width) / feat_w;
  const double sv = static_cast<double>(rig.image_height) / feat_h;
  size_t idx = 0;
  for (int h = 0; h < feat_h; ++h) {
    const double v = (h + 0.5) * sv;
    for (int w = 0; w < feat_w; ++w) {
      const double u = (w + 0.5) * su;
      for (int d = 0; d < bins.count; ++d, ++idx) {
        const Vec3 p = unproject_pixel(u, v, bins.center(d), rig);
        const int r = grid.row_of(p.y);
        const int c = grid.col_of(p.x);
        if (r >= 0 && c >= 0) {
          table.cell[idx] = static_cast<int32_t>(r * grid.cols + c);
          ++table.valid_count;
        }
      }
    }
  }
  return table;
}

std::shared_ptr<const FrustumTable> FrustumCache::get(const CameraRig& rig,
                                                      const DepthBins& bins,
                                                      int feat_h, int feat_w,
                                                      const BevGridSpec& grid) {
  for (const auto& t : tables_) {
    if (t->rig == rig && t->bins == bins && t->feat_h == feat_h &&
        t->feat_w == feat_w && t->grid == grid) {
      return t;
    }
  }
  auto table = std::make_shared<FrustumTable>(
      build_frustum(rig, bins, feat_h, feat_w, grid));
  tables_.push_back(table);
  return table;
}

Tensor lift_splat(const Tensor& context, const Tensor& depth_probs,
                  const std::vector<std::shared_ptr<const FrustumTable>>& tables) {
  if (context.rank() != 4 || depth_probs.rank() != 4) {
    throw std::runtime_error("lift_splat: inputs must be rank 4");
  }
  const int64_t batch = context.dim(0);
  const int64_t channels = context.dim(1);
  const int64_t hs = context.dim(2);
  const int64_t ws = context.dim(3);
  const int64_t bins = depth_probs.dim(1);
  if (depth_probs.dim(0) != batch || depth_probs.dim(2) != hs ||
      depth_probs.dim(3) != ws) {
    throw std::runtime_error("lift_splat: context/depth shapes disagree");
  }
  if (static_cast<int64_t>(tables.size()) != batch) {
    throw std::runtime_error("lift_splat: one frustum table per batch element");
  }
  const BevGridSpec& grid = tables[0]->grid;
  for (const auto& t : tables) {
    if (!t || t->feat_h != hs || t->feat_w != ws || t->bins.count != bins ||
        !(t->grid == grid)) {
      throw std::runtime_error("lift_splat: frustum table mismatch");
    }
  }
  const int64_t pixels = hs * ws;
  const int64_t cells = static_cast<int64_t>(grid.rows) * grid.cols;
  std::vector<double> out(batch * channels * cells, 0.0);
  const double* ctx = context.values().data();
  const double* dp = depth_probs.values().data();
#pragma omp parallel for schedule(static)
  for (int64_t b = 0; b < batch; ++b) {
    const int32_t* cell = tables[b]->cell.data();
    double* ob = out.data() + b * channels * cells;
    const double* ctxb = ctx + b * channels * pixels;
    const double* dpb = dp + b * bins * pixels;
    for (int64_t p = 0; p < pixels; ++p) {
      for (int64_t d = 0; d < bins; ++d) {
        const int32_t cl = cell[p * bins + d];
        if (cl < 0) continue;
        const double w = dpb[d * pixels + p];
        for (int64_t c = 0; c < channels; ++c) {
          ob[c * cells + cl] += w * ctxb[c * pixels + p];
        }
      }
    }
  }
  auto ctx_node = context.node();
  auto dp_node = depth_probs.node();
  return make_op(
      "lift_splat", {context, depth_probs},
      {batch, channels, grid.rows, grid.cols}, std::move(out),
      [ctx_node, dp_node, tables, batch, channels, bins, pixels,
       cells](TensorNode& self) {
        ctx_node->ensure_grad();
        dp_node->ensure_grad();
#pragma omp parallel for schedule(static)
        for (int64_t b = 0; b < batch; ++b) {
          const int32_t* cell = tables[b]->cell.data();
          const double* g = self.grad.data() + b * channels * cells;
          const double* ctxb = ctx_node->values.data() + b * channels * pixels;
          const double* dpb = dp_node->values.data() + b * bins * pixels;
          double* dctx = ctx_node->grad.data() + b * channels * pixels;
          double* ddp = dp_node->grad.data() + b * bins * pixels;
          for (int64_t p = 0; p < pixels; ++p) {
            for (int64_t d = 0; d < bins; ++d) {
              const int32_t cl = cell[p * bins + d];
              if (cl < 0) continue;
              const double w = dpb[d * pixels + p];
              double acc = 0.0;
              for (int64_t c = 0; c < channels; ++c) {
                const double gv = g[c * cells + cl];
                dctx[c * pixels + p] += w * gv;
                acc += ctxb[c * pixels + p] * gv;
              }
              ddp[d * pixels + p] += acc;
            }
          }
        }
      });
}

}  // namespace grouplane
