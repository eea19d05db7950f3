#include "grouplane/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "grouplane/checkpoint.hpp"
#include "grouplane/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace grouplane {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

double now_minus(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace

void AdamW::step(ParamStore& params) {
  ++step_count_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));
  for (auto& [name, param] : params.all()) {
    Tensor handle = param;  // shared node; leaves stay mutable
    auto values = handle.mutable_values();
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m.assign(values.size(), 0.0);
      v.assign(values.size(), 0.0);
    }
    const bool has_grad = param.has_grad();
    const std::span<const double> grad =
        has_grad ? param.grad() : std::span<const double>{};
    for (size_t i = 0; i < values.size(); ++i) {
      const double g = has_grad ? grad[i] : 0.0;
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      values[i] -= config_.lr * (m_hat / (std::sqrt(v_hat) + 1e-8) +
                                 config_.weight_decay * values[i]);
    }
  }
}

std::map<std::string, std::vector<double>> AdamW::state_arrays() const {
  std::map<std::string, std::vector<double>> out;
  for (const auto& [name, m] : m_) out.emplace("adam.m/" + name, m);
  for (const auto& [name, v] : v_) out.emplace("adam.v/" + name, v);
  return out;
}

void AdamW::load_state(const std::map<std::string, std::vector<double>>& arrays,
                       long long step_count) {
  step_count_ = step_count;
  m_.clear();
  v_.clear();
  for (const auto& [key, data] : arrays) {
    if (key.rfind("adam.m/", 0) == 0) m_[key.substr(7)] = data;
    if (key.rfind("adam.v/", 0) == 0) v_[key.substr(7)] = data;
  }
}

Tensor scenes_to_tensor(const std::vector<Scene>& scenes) {
  if (scenes.empty()) fail("batch: no scenes");
  const int h = scenes[0].rig.image_height;
  const int w = scenes[0].rig.image_width;
  const int64_t plane = static_cast<int64_t>(h) * w;
  std::vector<double> data(static_cast<int64_t>(scenes.size()) * 3 * plane);
  for (size_t s = 0; s < scenes.size(); ++s) {
    const auto& img = scenes[s].image;
    if (static_cast<int64_t>(img.size()) != plane * 3) {
      fail("batch: image extents disagree across the batch");
    }
    // HWC bytes to CHW floats in [-1, 1]
    for (int64_t p = 0; p < plane; ++p) {
      for (int c = 0; c < 3; ++c) {
        data[(static_cast<int64_t>(s) * 3 + c) * plane + p] =
            (img[p * 3 + c] / 255.0 - 0.5) * 2.0;
      }
    }
  }
  return Tensor::from_values(
      {static_cast<int64_t>(scenes.size()), 3, h, w}, std::move(data));
}

std::vector<ScenePredictions> predict_scenes(GroupLaneNet& net,
                                             const Dataset& dataset,
                                             const std::vector<int>& indices,
                                             const DecodeThresholds& thresholds,
                                             int batch_size,
                                             InferTimings* timings) {
  NoGradGuard no_grad;
  const BevGridSpec& grid = net.config().grid;
  std::vector<ScenePredictions> out;
  out.reserve(indices.size());
  const auto t_all = std::chrono::steady_clock::now();
  for (size_t start = 0; start < indices.size();
       start += static_cast<size_t>(batch_size)) {
    const auto t_load = std::chrono::steady_clock::now();
    std::vector<Scene> scenes;
    for (size_t i = start;
         i < std::min(indices.size(), start + static_cast<size_t>(batch_size));
         ++i) {
      scenes.push_back(dataset.load(indices[i]));
    }
    std::vector<CameraRig> rigs;
    for (const Scene& s : scenes) rigs.push_back(s.rig);
    Tensor images = scenes_to_tensor(scenes);
    if (timings) timings->load_s += now_minus(t_load);
    ForwardResult result = net.forward(images, rigs);
    if (timings) {
      timings->stages.backbone_s += result.timings.backbone_s;
      timings->stages.depth_s += result.timings.depth_s;
      timings->stages.lss_s += result.timings.lss_s;
      timings->stages.bev_encoder_s += result.timings.bev_encoder_s;
      timings->stages.heads_s += result.timings.heads_s;
    }
    const auto t_decode = std::chrono::steady_clock::now();
    const int n = net.config().groups_per_head;
    for (size_t b = 0; b < scenes.size(); ++b) {
      ScenePredictions preds;
      for (int slot = 0; slot < n; ++slot) {
        SlotView view = GroupLaneNet::slot_view(result.vertical,
                                                static_cast<int64_t>(b), slot);
        if (auto lane = decode_slot(view, grid, thresholds)) {
          preds.push_back({*lane, view.existence, Orientation::Vertical});
        }
      }
      if (result.horizontal) {
        for (int slot = 0; slot < n; ++slot) {
          SlotView view = GroupLaneNet::slot_view(*result.horizontal,
                                                  static_cast<int64_t>(b), slot);
          if (auto lane = decode_slot(view, grid, thresholds)) {
            preds.push_back({*lane, view.existence, Orientation::Horizontal});
          }
        }
      }
      out.push_back(std::move(preds));
    }
    if (timings) timings->decode_s += now_minus(t_decode);
  }
  if (timings) {
    timings->total_s += now_minus(t_all);
    timings->scenes += static_cast<int>(indices.size());
  }
  return out;
}

void save_predictions(const std::string& path, const std::vector<int>& indices,
                      const std::vector<ScenePredictions>& predictions) {
  if (indices.size() != predictions.size()) {
    fail("predictions: index/prediction count mismatch");
  }
  json scenes = json::array();
  for (size_t i = 0; i < indices.size(); ++i) {
    json lanes = json::array();
    for (const PredictedLane& p : predictions[i]) {
      json pts = json::array();
      for (const Vec3& v : p.lane.points) pts.push_back({v.x, v.y, v.z});
      lanes.push_back({{"category", p.lane.category},
                       {"confidence", p.confidence},
                       {"orientation", p.orientation == Orientation::Vertical
                                           ? "vertical"
                                           : "horizontal"},
                       {"points", std::move(pts)}});
    }
    scenes.push_back({{"index", indices[i]}, {"lanes", std::move(lanes)}});
  }
  json root{{"version", 1}, {"scenes", std::move(scenes)}};
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail("predictions: cannot write " + path);
  os << root.dump(2) << "\n";
}

PredictionsFile load_predictions(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail("predictions: cannot open " + path);
  json root = json::parse(is);
  if (root.at("version").get<int>() != 1) {
    fail("predictions: unsupported version in " + path);
  }
  PredictionsFile out;
  for (const json& scene : root.at("scenes")) {
    out.indices.push_back(scene.at("index").get<int>());
    ScenePredictions preds;
    for (const json& lj : scene.at("lanes")) {
      PredictedLane p;
      p.lane.category = lj.at("category").get<int>();
      p.confidence = lj.at("confidence").get<double>();
      p.orientation = lj.at("orientation").get<std::string>() == "vertical"
                          ? Orientation::Vertical
                          : Orientation::Horizontal;
      for (const json& pt : lj.at("points")) {
        p.lane.points.push_back({pt.at(0).get<double>(), pt.at(1).get<double>(),
                                 pt.at(2).get<double>()});
      }
      preds.push_back(std::move(p));
    }
    out.predictions.push_back(std::move(preds));
  }
  return out;
}

EvalReport evaluate_predictions(const std::vector<ScenePredictions>& predictions,
                                const Dataset& dataset,
                                const std::vector<int>& indices,
                                const EvalConfig& config) {
  if (predictions.size() != indices.size()) {
    fail("evaluate: prediction/index count mismatch");
  }
  std::vector<std::vector<Lane3D>> preds, gts;
  for (size_t i = 0; i < indices.size(); ++i) {
    std::vector<Lane3D> lanes;
    for (const PredictedLane& p : predictions[i]) lanes.push_back(p.lane);
    preds.push_back(std::move(lanes));
    gts.push_back(dataset.load(indices[i]).lanes);
  }
  return evaluate(preds, gts, config);
}

std::string report_to_json(const EvalReport& r) {
  json j{{"f1", r.f1},
         {"precision", r.precision},
         {"recall", r.recall},
         {"category_accuracy", r.category_accuracy},
         {"x_err_near", r.x_err_near},
         {"x_err_far", r.x_err_far},
         {"z_err_near", r.z_err_near},
         {"z_err_far", r.z_err_far},
         {"cd_error", r.cd_error},
         {"tp", r.tp},
         {"fp", r.fp},
         {"fn", r.fn}};
  return j.dump(2) + "\n";
}

void save_report(const EvalReport& report, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail("report: cannot write " + path);
  os << report_to_json(report);
}

struct Trainer::EpochStats {
  double mean_total = 0.0;
  double mean_existence = 0.0;
  double mean_visibility = 0.0;
  double mean_row_index = 0.0;
  double mean_category = 0.0;
  double mean_offsets = 0.0;
  double first_step_loss = 0.0;
  int steps = 0;
  double wall_s = 0.0;
};

Trainer::Trainer(RunConfig config, Dataset dataset, std::string out_dir,
                 bool val_on_train, int eval_every)
    : config_(std::move(config)),
      dataset_(std::move(dataset)),
      out_dir_(std::move(out_dir)),
      val_on_train_(val_on_train),
      eval_every_(std::max(eval_every, 1)),
      net_(config_.network, config_.seed),
      optimizer_(config_.optimizer) {
  config_.validate();
  set_default_dtype(config_.precision == "f32" ? Dtype::F32 : Dtype::F64);
  train_indices_ = dataset_.train_indices();
  val_indices_ = val_on_train_ ? train_indices_ : dataset_.val_indices();
  if (train_indices_.empty()) fail("train: dataset has no training scenes");
  fs::create_directories(out_dir_);
}

Trainer::EpochStats Trainer::train_epoch(int epoch) {
  EpochStats stats;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<int> order = train_indices_;
  // every stochastic stream is keyed by (seed, epoch) so that resuming at an
  // epoch boundary is exact
  Rng rng(Rng::mix(Rng::mix(config_.seed, 0x7261696eULL), epoch));
  rng.shuffle(order);

  for (size_t start = 0; start < order.size();
       start += static_cast<size_t>(config_.batch_size)) {
    std::vector<Scene> scenes;
    for (size_t i = start;
         i < std::min(order.size(), start + static_cast<size_t>(config_.batch_size));
         ++i) {
      scenes.push_back(dataset_.load(order[i]));
    }
    std::vector<CameraRig> rigs;
    std::vector<std::vector<Lane3D>> labels;
    for (const Scene& s : scenes) {
      rigs.push_back(s.rig);
      labels.push_back(s.lanes);
    }
    ForwardResult result = net_.forward(scenes_to_tensor(scenes), rigs);
    LossBreakdown loss =
        total_loss(result, labels, config_.network.grid,
                   config_.network.categories, config_.matcher_kind(),
                   config_.loss);
    loss.total.backward();
    optimizer_.step(net_.params());
    net_.params().zero_grads();

    const double total = loss.total.item();
    if (stats.steps == 0) stats.first_step_loss = total;
    stats.mean_total += total;
    stats.mean_existence += loss.existence.item();
    stats.mean_visibility += loss.visibility.item();
    stats.mean_row_index += loss.row_index.item();
    stats.mean_category += loss.category.item();
    stats.mean_offsets += loss.offsets.item();
    ++stats.steps;
  }
  if (stats.steps > 0) {
    stats.mean_total /= stats.steps;
    stats.mean_existence /= stats.steps;
    stats.mean_visibility /= stats.steps;
    stats.mean_row_index /= stats.steps;
    stats.mean_category /= stats.steps;
    stats.mean_offsets /= stats.steps;
  }
  stats.wall_s = now_minus(t0);
  return stats;
}

EvalReport Trainer::evaluate_epoch(std::vector<ScenePredictions>* predictions_out) {
  std::vector<ScenePredictions> preds =
      predict_scenes(net_, dataset_, val_indices_, config_.thresholds(),
                     config_.batch_size);
  EvalReport report =
      evaluate_predictions(preds, dataset_, val_indices_, config_.eval);
  if (predictions_out) *predictions_out = std::move(preds);
  return report;
}

void Trainer::write_metrics_line(int epoch, const EpochStats& stats,
                                 const EvalReport* report) {
  json j{{"epoch", epoch},
         {"steps", stats.steps},
         {"total_steps", optimizer_.step_count()},
         {"first_step_loss", stats.first_step_loss},
         {"train_loss", stats.mean_total},
         {"loss_existence", stats.mean_existence},
         {"loss_visibility", stats.mean_visibility},
         {"loss_row_index", stats.mean_row_index},
         {"loss_category", stats.mean_category},
         {"loss_offsets", stats.mean_offsets},
         {"evaluated", report != nullptr}};
  if (report) {
    j["val_f1"] = report->f1;
    j["val_precision"] = report->precision;
    j["val_recall"] = report->recall;
    j["val_category_accuracy"] = report->category_accuracy;
    j["val_x_err_near"] = report->x_err_near;
    j["val_x_err_far"] = report->x_err_far;
  }
  std::ofstream os(fs::path(out_dir_) / "metrics.jsonl", std::ios::app);
  if (!os) fail("train: cannot append metrics log");
  os << j.dump() << "\n";
}

void Trainer::save_resume_state(int next_epoch) {
  std::map<std::string, std::vector<double>> arrays = optimizer_.state_arrays();
  for (const auto& [name, t] : net_.params().all()) {
    arrays.emplace("param/" + name,
                   std::vector<double>(t.values().begin(), t.values().end()));
  }
  arrays.emplace("meta", std::vector<double>{
                             static_cast<double>(next_epoch),
                             static_cast<double>(optimizer_.step_count())});
  save_state_arrays((fs::path(out_dir_) / "resume.state").string(), arrays);
}

bool Trainer::load_resume_state(int* next_epoch) {
  const std::string path = (fs::path(out_dir_) / "resume.state").string();
  if (!fs::exists(path)) return false;
  const auto arrays = load_state_arrays(path);
  const auto meta = arrays.at("meta");
  *next_epoch = static_cast<int>(meta.at(0));
  // parameters exist only after a first forward; run one scene through
  {
    NoGradGuard no_grad;
    const Scene scene = dataset_.load(train_indices_[0]);
    net_.forward(scenes_to_tensor({scene}), {scene.rig});
  }
  for (auto& [name, t] : net_.params().all()) {
    const auto it = arrays.find("param/" + name);
    if (it == arrays.end()) fail("resume: state is missing parameter " + name);
    if (it->second.size() != static_cast<size_t>(t.numel())) {
      fail("resume: parameter extent mismatch for " + name);
    }
    Tensor handle = t;
    auto dst = handle.mutable_values();
    std::copy(it->second.begin(), it->second.end(), dst.begin());
  }
  optimizer_.load_state(arrays, static_cast<long long>(meta.at(1)));
  return true;
}

void Trainer::run(bool resume) {
  save_run_config(config_, (fs::path(out_dir_) / "config.json").string());
  int start_epoch = 0;
  if (resume) {
    if (!load_resume_state(&start_epoch)) {
      fail("resume: no resume.state in " + out_dir_);
    }
  } else {
    // fresh run: truncate the logs
    std::ofstream(fs::path(out_dir_) / "metrics.jsonl", std::ios::trunc);
    std::ofstream(fs::path(out_dir_) / "timing.jsonl", std::ios::trunc);
  }

  std::vector<ScenePredictions> final_preds;
  EvalReport final_report;
  for (int epoch = start_epoch; epoch < config_.epochs; ++epoch) {
    const EpochStats stats = train_epoch(epoch);
    const bool evaluate_now =
        (epoch + 1) % eval_every_ == 0 || epoch + 1 == config_.epochs;
    const auto t_eval = std::chrono::steady_clock::now();
    if (evaluate_now) {
      std::vector<ScenePredictions> preds;
      const EvalReport report = evaluate_epoch(&preds);
      write_metrics_line(epoch, stats, &report);
      save_checkpoint((fs::path(out_dir_) / "model.ckpt").string(),
                      net_.params().all());
      save_resume_state(epoch + 1);
      final_preds = std::move(preds);
      final_report = report;
    } else {
      write_metrics_line(epoch, stats, nullptr);
    }
    {
      // wall-clock sidecar; deliberately outside the deterministic log
      json j{{"epoch", epoch},
             {"train_s", stats.wall_s},
             {"eval_s", now_minus(t_eval)}};
      std::ofstream os(fs::path(out_dir_) / "timing.jsonl", std::ios::app);
      os << j.dump() << "\n";
    }
  }
  if (config_.epochs == 0) {
    final_report = evaluate_epoch(&final_preds);
    save_checkpoint((fs::path(out_dir_) / "model.ckpt").string(),
                    net_.params().all());
    save_resume_state(0);
  }
  save_predictions((fs::path(out_dir_) / "predictions.json").string(),
                   val_indices_, final_preds);
  save_report(final_report, (fs::path(out_dir_) / "report.json").string());
}

}  // namespace grouplane
