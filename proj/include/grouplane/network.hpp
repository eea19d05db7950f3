#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "grouplane/geometry.hpp"
#include "grouplane/lane.hpp"
#include "grouplane/lss.hpp"
#include "grouplane/tensor.hpp"

namespace grouplane {

struct NetworkConfig {
  int groups_per_head = 4;     // N lane candidates per head group
  int channels_per_group = 8;  // C_g
  int categories = 4;          // G
  int depth_bins = 16;
  double depth_min = 1.0;
  double depth_max = 60.0;
  int image_height = 64;
  int image_width = 160;
  BevGridSpec grid{-10.0, 10.0, 3.0, 53.0, 12, 50};
  bool horizontal_group = true;
  bool group_conv = true;
  bool category_guidance = true;

  bool operator==(const NetworkConfig&) const = default;

  int bev_channels() const { return 2 * groups_per_head * channels_per_group; }
  int feature_h() const { return image_height / 16; }
  int feature_w() const { return image_width / 16; }
  DepthBins bins() const { return {depth_min, depth_max, depth_bins}; }
  void validate() const;
};

// Named parameter registry. std::map keeps checkpoint order lexicographic.
class ParamStore {
 public:
  explicit ParamStore(uint64_t seed = 0) : seed_(seed) {}

  // Creates the parameter on first use with uniform values in
  // [-init_bound, init_bound], seeded by (store seed, name).
  Tensor get(const std::string& name, const Shape& shape, double init_bound);

  const std::map<std::string, Tensor>& all() const { return params_; }
  void zero_grads();
  void load_values(const std::map<std::string, Tensor>& values);

 private:
  uint64_t seed_;
  std::map<std::string, Tensor> params_;
};

struct HeadGroupOutputs {
  Orientation orientation = Orientation::Vertical;
  Tensor existence;   // [B, N], sigmoid
  Tensor visibility;  // [B, N, H, 1], sigmoid
  Tensor row_scores;  // [B, N, H, W], softmax over W
  Tensor category;    // [B, N, G], softmax over G
  Tensor offset_lat;  // [B, N, H, 1], meters
  Tensor offset_z;    // [B, N, H, 1], meters
};

struct StageTimings {
  double backbone_s = 0.0;
  double depth_s = 0.0;
  double lss_s = 0.0;
  double bev_encoder_s = 0.0;
  double heads_s = 0.0;
};

struct ForwardResult {
  HeadGroupOutputs vertical;
  std::optional<HeadGroupOutputs> horizontal;
  StageTimings timings;
};

// Soft foreground gather: for features [B, N*K, H, W] and row scores
// [B, N, H, W] (rows summing to 1), the output [B, N*K, H, 1] is the
// score-weighted expectation of each feature row.
Tensor foreground_gather(const Tensor& features, const Tensor& row_scores);

class GroupLaneNet {
 public:
  GroupLaneNet(NetworkConfig config, uint64_t seed);

  const NetworkConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // images: [B, 3, H_i, W_i] in [-1, 1]; one rig per batch element.
  ForwardResult forward(const Tensor& images, const std::vector<CameraRig>& rigs);

  // stages, exposed for tests
  Tensor backbone_neck(const Tensor& images);
  Tensor depth_head(const Tensor& feature);
  Tensor context_head(const Tensor& feature);
  Tensor bev_encoder(const Tensor& bev_raw);
  std::pair<Tensor, Tensor> split_groups(const Tensor& bev);
  HeadGroupOutputs head_group_forward(const Tensor& half, Orientation orientation);

  // Plain-number view of one candidate slot for decode and matching.
  static SlotView slot_view(const HeadGroupOutputs& outputs, int64_t batch_index,
                            int slot);

 private:
  Tensor conv(const std::string& name, const Tensor& x, int cout, int kernel,
              int stride, int groups, bool bias = true);
  Tensor head_stack(const std::string& name, const Tensor& x, int out_per_group);

  NetworkConfig config_;
  ParamStore params_;
  FrustumCache frustum_cache_;
};

}  // namespace grouplane
