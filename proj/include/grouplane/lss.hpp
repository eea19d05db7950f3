#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "grouplane/geometry.hpp"
#include "grouplane/tensor.hpp"

namespace grouplane {

// Precomputed (pixel, depth bin) -> BEV cell map for one rig. The geometry
// is static per rig, so the table is built once and shared read-only.
struct FrustumTable {
  CameraRig rig;
  DepthBins bins;
  BevGridSpec grid;
  int feat_h = 0;
  int feat_w = 0;
  std::vector<int32_t> cell;  // feat_h*feat_w*bins.count entries, -1 = outside
  int64_t valid_count = 0;

  int32_t cell_at(int h, int w, int d) const {
    return cell[(static_cast<int64_t>(h) * feat_w + w) * bins.count + d];
  }
};

FrustumTable build_frustum(const CameraRig& rig, const DepthBins& bins,
                           int feat_h, int feat_w, const BevGridSpec& grid);

// Rebuilds only when (rig, bins, grid, feature size) changes.
class FrustumCache {
 public:
  std::shared_ptr<const FrustumTable> get(const CameraRig& rig,
                                          const DepthBins& bins, int feat_h,
                                          int feat_w, const BevGridSpec& grid);

 private:
  std::vector<std::shared_ptr<const FrustumTable>> tables_;
};

// Sum-splat of per-pixel context weighted by the depth distribution into the
// BEV grid. context: [B,C,Hs,Ws], depth_probs: [B,D,Hs,Ws] -> [B,C,rows,cols].
// Points mapping outside the grid are dropped. Differentiable in both inputs.
Tensor lift_splat(const Tensor& context, const Tensor& depth_probs,
                  const std::vector<std::shared_ptr<const FrustumTable>>& tables);

}  // namespace grouplane
