#pragma once

#include <string>

#include "grouplane/matching.hpp"
#include "grouplane/metrics.hpp"
#include "grouplane/network.hpp"

namespace grouplane {

struct OptimizerConfig {
  std::string kind = "adamw";
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;

  bool operator==(const OptimizerConfig&) const = default;
};

struct RunConfig {
  uint64_t seed = 0;
  int epochs = 10;
  int batch_size = 4;
  std::string matcher = "som";  // "som" | "index"
  double exist_threshold = 0.5;
  double vis_threshold = 0.5;
  std::string precision = "f64";  // "f64" | "f32" storage policy
  OptimizerConfig optimizer;
  NetworkConfig network;
  EvalConfig eval;
  LossFlags loss;

  bool operator==(const RunConfig&) const = default;

  void validate() const;
  MatcherKind matcher_kind() const;
  DecodeThresholds thresholds() const {
    return {exist_threshold, vis_threshold};
  }
};

// Desk-scale defaults: 64x160 images, 12x50 grid, N=4, C_g=8, G=4, D=16,
// batch 4, 10 epochs.
RunConfig desk_config();

// The full-scale settings as a named profile: N=16, C_g=16, 24x100 grid.
RunConfig paper_profile();

// Strict parsing: unknown keys anywhere in the document are rejected;
// missing keys fall back to the defaults.
RunConfig parse_run_config(const std::string& text);
std::string serialize_run_config(const RunConfig& config);
RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& config, const std::string& path);

}  // namespace grouplane
