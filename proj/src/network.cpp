#include "grouplane/network.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include "grouplane/rng.hpp"

namespace grouplane {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace

void NetworkConfig::validate() const {
  if (groups_per_head <= 0 || channels_per_group <= 0 || categories <= 0) {
    fail("config: group/channel/category counts must be positive");
  }
  if (image_height % 16 != 0 || image_width % 16 != 0) {
    fail("config: image extents must be divisible by 16");
  }
  if (depth_bins < 2 || !(0 < depth_min && depth_min < depth_max)) {
    fail("config: invalid depth bins");
  }
  grid.validate();
}

Tensor ParamStore::get(const std::string& name, const Shape& shape,
                       double init_bound) {
  auto it = params_.find(name);
  if (it != params_.end()) {
    if (it->second.shape() != shape) {
      fail("params: shape mismatch for " + name + ": have " +
           shape_str(it->second.shape()) + ", want " + shape_str(shape));
    }
    return it->second;
  }
  Rng rng(Rng::mix(seed_, Rng::hash_str(name)));
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = rng.uniform(-init_bound, init_bound);
  Tensor t = Tensor::from_values(shape, std::move(values), true);
  params_.emplace(name, t);
  return t;
}

void ParamStore::zero_grads() {
  for (auto& [name, t] : params_) t.zero_grad();
}

void ParamStore::load_values(const std::map<std::string, Tensor>& values) {
  for (auto& [name, t] : params_) {
    auto it = values.find(name);
    if (it == values.end()) fail("params: checkpoint is missing " + name);
    if (it->second.shape() != t.shape()) {
      fail("params: checkpoint shape mismatch for " + name + ": have " +
           shape_str(it->second.shape()) + ", want " + shape_str(t.shape()));
    }
    auto dst = t.mutable_values();
    const auto src = it->second.values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  for (const auto& [name, unused] : values) {
    if (!params_.count(name)) fail("params: checkpoint has unknown entry " + name);
  }
}

GroupLaneNet::GroupLaneNet(NetworkConfig config, uint64_t seed)
    : config_(std::move(config)), params_(seed) {
  config_.validate();
}

Tensor GroupLaneNet::conv(const std::string& name, const Tensor& x, int cout,
                          int kernel, int stride, int groups, bool bias) {
  const int cin = static_cast<int>(x.dim(1));
  if (cin % groups != 0 || cout % groups != 0) {
    fail("conv " + name + ": groups must divide channels");
  }
  const int cin_g = cin / groups;
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin_g) * kernel * kernel);
  Tensor w = params_.get(name + ".weight", {cout, cin_g, kernel, kernel}, bound);
  Tensor b = bias ? params_.get(name + ".bias", {cout}, bound) : Tensor();
  Conv2dSpec spec;
  spec.groups = groups;
  spec.stride_h = spec.stride_w = stride;
  spec.pad_h = spec.pad_w = (kernel - 1) / 2;
  return conv2d_grouped(x, w, b, spec);
}

Tensor GroupLaneNet::backbone_neck(const Tensor& images) {
  if (images.rank() != 4 || images.dim(1) != 3) {
    fail("backbone: images must be [B,3,H,W]");
  }
  if (images.dim(2) % 16 != 0 || images.dim(3) % 16 != 0) {
    fail("backbone: image extents must be divisible by 16");
  }
  // 4 strided 3x3 stages down to 1/16 resolution
  Tensor x = relu(conv("backbone.0", images, 16, 3, 2, 1));
  x = relu(conv("backbone.1", x, 32, 3, 2, 1));
  x = relu(conv("backbone.2", x, 64, 3, 2, 1));
  x = relu(conv("backbone.3", x, 64, 3, 2, 1));
  return x;
}

Tensor GroupLaneNet::depth_head(const Tensor& feature) {
  Tensor x = relu(conv("depth.0", feature, 64, 3, 1, 1));
  x = conv("depth.1", x, config_.depth_bins, 1, 1, 1);
  return softmax(x, 1);  // per-pixel distribution over depth bins
}

Tensor GroupLaneNet::context_head(const Tensor& feature) {
  return conv("context", feature, config_.bev_channels(), 1, 1, 1);
}

Tensor GroupLaneNet::bev_encoder(const Tensor& bev_raw) {
  Tensor x = bev_raw;
  const int c = config_.bev_channels();
  for (int block = 0; block < 4; ++block) {
    const std::string base = "bev." + std::to_string(block);
    Tensor y = relu(conv(base + ".conv1", x, c, 3, 1, 1));
    y = conv(base + ".conv2", y, c, 3, 1, 1);
    x = relu(add(x, y));
  }
  return x;
}

std::pair<Tensor, Tensor> GroupLaneNet::split_groups(const Tensor& bev) {
  const int64_t c = bev.dim(1);
  if (c % 2 != 0) fail("split_groups: channel count must be even");
  return {slice(bev, 1, 0, c / 2), slice(bev, 1, c / 2, c / 2)};
}

Tensor GroupLaneNet::head_stack(const std::string& name, const Tensor& x,
                                int out_per_group) {
  const int n = config_.groups_per_head;
  const int cg = config_.channels_per_group;
  const int groups = config_.group_conv ? n : 1;
  Tensor h = relu(conv(name + ".0", x, n * cg, 1, 1, groups));
  return conv(name + ".1", h, n * out_per_group, 1, 1, groups);
}

Tensor foreground_gather(const Tensor& features, const Tensor& row_scores) {
  if (features.rank() != 4 || row_scores.rank() != 4) {
    fail("foreground_gather: inputs must be rank 4");
  }
  const int64_t batch = features.dim(0);
  const int64_t nk = features.dim(1);
  const int64_t rows = features.dim(2);
  const int64_t cols = features.dim(3);
  const int64_t n = row_scores.dim(1);
  if (row_scores.dim(0) != batch || row_scores.dim(2) != rows ||
      row_scores.dim(3) != cols || nk % n != 0) {
    fail("foreground_gather: feature/score shapes disagree");
  }
  const int64_t k = nk / n;
  std::vector<double> out(batch * nk * rows, 0.0);
  const double* f = features.values().data();
  const double* s = row_scores.values().data();
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t c = 0; c < nk; ++c) {
      const int64_t slot = c / k;
      for (int64_t h = 0; h < rows; ++h) {
        const double* frow = f + ((b * nk + c) * rows + h) * cols;
        const double* srow = s + ((b * n + slot) * rows + h) * cols;
        double acc = 0.0;
        for (int64_t w = 0; w < cols; ++w) acc += frow[w] * srow[w];
        out[(b * nk + c) * rows + h] = acc;
      }
    }
  }
  auto fn = features.node();
  auto sn = row_scores.node();
  return make_op(
      "foreground_gather", {features, row_scores}, {batch, nk, rows, 1},
      std::move(out), [fn, sn, batch, nk, rows, cols, n, k](TensorNode& self) {
        fn->ensure_grad();
        sn->ensure_grad();
        for (int64_t b = 0; b < batch; ++b) {
          for (int64_t c = 0; c < nk; ++c) {
            const int64_t slot = c / k;
            for (int64_t h = 0; h < rows; ++h) {
              const double g = self.grad[(b * nk + c) * rows + h];
              if (g == 0.0) continue;
              const int64_t fbase = ((b * nk + c) * rows + h) * cols;
              const int64_t sbase = ((b * n + slot) * rows + h) * cols;
              for (int64_t w = 0; w < cols; ++w) {
                fn->grad[fbase + w] += g * sn->values[sbase + w];
                sn->grad[sbase + w] += g * fn->values[fbase + w];
              }
            }
          }
        }
      });
}

HeadGroupOutputs GroupLaneNet::head_group_forward(const Tensor& half,
                                                  Orientation orientation) {
  const int n = config_.groups_per_head;
  const int g_count = config_.categories;
  if (half.dim(1) != n * config_.channels_per_group) {
    fail("head_group_forward: input channels disagree with N*C_g");
  }
  const std::string base =
      orientation == Orientation::Vertical ? "head.v" : "head.h";
  // the horizontal group re-uses the vertical code path on the transposed
  // feature, with its own parameters
  Tensor x = orientation == Orientation::Vertical ? half : transpose_last2(half);

  HeadGroupOutputs out;
  out.orientation = orientation;

  Tensor exist_map = head_stack(base + ".exist", x, 1);  // [B,N,H,W]
  out.existence = sigmoid(reduce_max(reduce_max(exist_map, 3), 2));

  Tensor vis_map = head_stack(base + ".vis", x, 1);
  out.visibility = sigmoid(reduce_max(vis_map, 3, /*keepdim=*/true));

  Tensor row_map = head_stack(base + ".row", x, 1);
  out.row_scores = softmax_lastdim(row_map);

  if (config_.category_guidance) {
    Tensor cat_map = head_stack(base + ".cat", x, g_count);  // [B,N*G,H,W]
    Tensor gathered = foreground_gather(cat_map, out.row_scores);  // [B,N*G,H,1]
    const int64_t batch = gathered.dim(0);
    const int64_t rows = gathered.dim(2);
    Tensor flat = reshape(gathered, {batch, static_cast<int64_t>(n) * g_count, rows});
    // MLP over the line dimension, shared across channels
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    Tensor w = params_.get(base + ".cat.mlp.weight", {1, rows}, bound);
    Tensor b = params_.get(base + ".cat.mlp.bias", {1}, bound);
    Tensor logits = reshape(linear(flat, w, b), {batch, n, g_count});
    out.category = softmax_lastdim(logits);
  } else {
    Tensor cat_map = head_stack(base + ".cat", x, g_count);
    Tensor pooled = reduce_max(reduce_max(cat_map, 3), 2);  // [B, N*G]
    out.category =
        softmax_lastdim(reshape(pooled, {pooled.dim(0), n, g_count}));
  }

  Tensor lat_map = head_stack(base + ".off_lat", x, 1);
  out.offset_lat = foreground_gather(lat_map, out.row_scores);
  Tensor z_map = head_stack(base + ".off_z", x, 1);
  out.offset_z = foreground_gather(z_map, out.row_scores);
  return out;
}

ForwardResult GroupLaneNet::forward(const Tensor& images,
                                    const std::vector<CameraRig>& rigs) {
  if (images.dim(0) != static_cast<int64_t>(rigs.size())) {
    fail("forward: one rig per batch element");
  }
  ForwardResult result;
  auto t0 = std::chrono::steady_clock::now();
  Tensor feature = backbone_neck(images);
  result.timings.backbone_s = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  Tensor depth = depth_head(feature);
  Tensor context = context_head(feature);
  result.timings.depth_s = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  std::vector<std::shared_ptr<const FrustumTable>> tables;
  tables.reserve(rigs.size());
  for (const CameraRig& rig : rigs) {
    tables.push_back(frustum_cache_.get(rig, config_.bins(), config_.feature_h(),
                                        config_.feature_w(), config_.grid));
  }
  Tensor bev_raw = lift_splat(context, depth, tables);
  result.timings.lss_s = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  Tensor bev = bev_encoder(bev_raw);
  result.timings.bev_encoder_s = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  auto [vertical_half, horizontal_half] = split_groups(bev);
  result.vertical = head_group_forward(vertical_half, Orientation::Vertical);
  if (config_.horizontal_group) {
    result.horizontal =
        head_group_forward(horizontal_half, Orientation::Horizontal);
  }
  result.timings.heads_s = seconds_since(t0);
  return result;
}

SlotView GroupLaneNet::slot_view(const HeadGroupOutputs& outputs,
                                 int64_t batch_index, int slot) {
  SlotView view;
  view.orientation = outputs.orientation;
  const int64_t n = outputs.row_scores.dim(1);
  const int64_t lines = outputs.row_scores.dim(2);
  const int64_t cells = outputs.row_scores.dim(3);
  const int64_t g_count = outputs.category.dim(2);
  view.lines = static_cast<int>(lines);
  view.cells = static_cast<int>(cells);
  view.existence = outputs.existence.values()[batch_index * n + slot];
  const auto copy_rows = [&](const Tensor& t, std::vector<double>& dst,
                             int64_t width) {
    dst.resize(lines * width);
    const double* src =
        t.values().data() + ((batch_index * n + slot) * lines) * width;
    std::copy(src, src + lines * width, dst.begin());
  };
  copy_rows(outputs.visibility, view.visibility, 1);
  copy_rows(outputs.row_scores, view.row_scores, cells);
  copy_rows(outputs.offset_lat, view.offset_lat, 1);
  copy_rows(outputs.offset_z, view.offset_z, 1);
  view.category.resize(g_count);
  const double* cat =
      outputs.category.values().data() + (batch_index * n + slot) * g_count;
  std::copy(cat, cat + g_count, view.category.begin());
  return view;
}

}  // namespace grouplane
