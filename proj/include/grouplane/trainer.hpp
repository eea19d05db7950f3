#pragma once

#include <map>
#include <string>
#include <vector>

#include "grouplane/config.hpp"
#include "grouplane/metrics.hpp"
#include "grouplane/network.hpp"
#include "grouplane/scene.hpp"

namespace grouplane {

class AdamW {
 public:
  explicit AdamW(const OptimizerConfig& config) : config_(config) {}

  // Decoupled weight decay; bias-corrected moments. Parameters without a
  // gradient this step still decay.
  void step(ParamStore& params);

  long long step_count() const { return step_count_; }

  std::map<std::string, std::vector<double>> state_arrays() const;
  void load_state(const std::map<std::string, std::vector<double>>& arrays,
                  long long step_count);

 private:
  OptimizerConfig config_;
  long long step_count_ = 0;
  std::map<std::string, std::vector<double>> m_;
  std::map<std::string, std::vector<double>> v_;
};

// [B,3,H,W] in [-1,1] from the scenes' 8-bit images.
Tensor scenes_to_tensor(const std::vector<Scene>& scenes);

struct PredictedLane {
  Lane3D lane;
  double confidence = 0.0;
  Orientation orientation = Orientation::Vertical;
};

using ScenePredictions = std::vector<PredictedLane>;

struct InferTimings {
  double load_s = 0.0;  // dataset read + batch assembly
  StageTimings stages;
  double decode_s = 0.0;
  double total_s = 0.0;
  int scenes = 0;
};

std::vector<ScenePredictions> predict_scenes(GroupLaneNet& net,
                                             const Dataset& dataset,
                                             const std::vector<int>& indices,
                                             const DecodeThresholds& thresholds,
                                             int batch_size,
                                             InferTimings* timings = nullptr);

void save_predictions(const std::string& path, const std::vector<int>& indices,
                      const std::vector<ScenePredictions>& predictions);

struct PredictionsFile {
  std::vector<int> indices;
  std::vector<ScenePredictions> predictions;
};

PredictionsFile load_predictions(const std::string& path);

EvalReport evaluate_predictions(const std::vector<ScenePredictions>& predictions,
                                const Dataset& dataset,
                                const std::vector<int>& indices,
                                const EvalConfig& config);

std::string report_to_json(const EvalReport& report);
void save_report(const EvalReport& report, const std::string& path);

// Owns one training run and its artifacts: config echo, append-only metrics
// log, wall-clock sidecar, checkpoint, full-precision resume state, final
// predictions and report.
class Trainer {
 public:
  // eval_every thins the per-epoch evaluation for very long overfit runs;
  // the final epoch is always evaluated.
  Trainer(RunConfig config, Dataset dataset, std::string out_dir,
          bool val_on_train = false, int eval_every = 1);

  // resume=true continues from <out>/resume.state at the recorded epoch.
  void run(bool resume = false);

  GroupLaneNet& net() { return net_; }

 private:
  struct EpochStats;

  EpochStats train_epoch(int epoch);
  EvalReport evaluate_epoch(std::vector<ScenePredictions>* predictions_out);
  void write_metrics_line(int epoch, const EpochStats& stats,
                          const EvalReport* report);
  void save_resume_state(int next_epoch);
  bool load_resume_state(int* next_epoch);

  RunConfig config_;
  Dataset dataset_;
  std::string out_dir_;
  bool val_on_train_;
  int eval_every_ = 1;
  GroupLaneNet net_;
  AdamW optimizer_;
  std::vector<int> train_indices_;
  std::vector<int> val_indices_;
};

}  // namespace grouplane
