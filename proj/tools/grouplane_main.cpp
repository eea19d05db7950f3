#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "grouplane/checkpoint.hpp"
#include "grouplane/config.hpp"
#include "grouplane/gradcheck.hpp"
#include "grouplane/scene.hpp"
#include "grouplane/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace grouplane;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

int cmd_gen(const std::string& spec_path, int count, const std::string& out,
            uint64_t seed, bool seed_set, double horizontal_prob,
            bool horizontal_set, int val_modulus, bool modulus_set,
            int val_residue, bool residue_set) {
  SceneSpec spec;
  if (!spec_path.empty()) spec = parse_scene_spec(read_file(spec_path));
  if (seed_set) spec.seed = seed;
  if (horizontal_set) spec.horizontal_probability = horizontal_prob;
  if (modulus_set) spec.val_modulus = val_modulus;
  if (residue_set) spec.val_residue = val_residue;
  write_dataset(spec, count, out);

  const Dataset ds = Dataset::open(out);
  json summary{{"dir", out},
               {"count", ds.count()},
               {"train", ds.train_indices().size()},
               {"val", ds.val_indices().size()},
               {"seed", spec.seed},
               {"horizontal_probability", spec.horizontal_probability}};
  std::cout << summary.dump(2) << "\n";
  return 0;
}

RunConfig resolve_config(const std::string& config_path,
                         const std::string& profile) {
  RunConfig config;
  if (!config_path.empty()) {
    config = load_run_config(config_path);
  } else if (profile == "paper") {
    config = paper_profile();
  } else {
    config = desk_config();
  }
  return config;
}

int cmd_train(const std::string& data, const std::string& out,
              const std::string& config_path, const std::string& profile,
              const CLI::App& cmd, uint64_t seed, int epochs, int batch_size,
              const std::string& matcher, bool no_horizontal, bool no_group_conv,
              bool no_guidance, bool val_on_train, bool resume, int eval_every) {
  RunConfig config = resolve_config(config_path, profile);
  if (cmd.count("--seed")) config.seed = seed;
  if (cmd.count("--epochs")) config.epochs = epochs;
  if (cmd.count("--batch-size")) config.batch_size = batch_size;
  if (cmd.count("--matcher")) config.matcher = matcher;
  if (no_horizontal) config.network.horizontal_group = false;
  if (no_group_conv) config.network.group_conv = false;
  if (no_guidance) config.network.category_guidance = false;
  config.validate();

  Dataset dataset = Dataset::open(data);
  Trainer trainer(config, std::move(dataset), out, val_on_train, eval_every);
  trainer.run(resume);

  std::ifstream metrics(fs::path(out) / "metrics.jsonl");
  std::string line, last;
  while (std::getline(metrics, line)) {
    if (!line.empty()) last = line;
  }
  if (!last.empty()) std::cout << last << "\n";
  return 0;
}

int cmd_eval(const std::string& preds_path, const std::string& data,
             const std::string& out, const std::string& config_path) {
  EvalConfig eval_config;
  if (!config_path.empty()) eval_config = load_run_config(config_path).eval;
  const PredictionsFile preds = load_predictions(preds_path);
  const Dataset dataset = Dataset::open(data);
  const EvalReport report =
      evaluate_predictions(preds.predictions, dataset, preds.indices, eval_config);
  save_report(report, out);
  std::cout << report_to_json(report);
  return 0;
}

int cmd_infer(const std::string& checkpoint, const std::string& config_path,
              const std::string& data, const std::string& out,
              const std::string& timing_out, double exist_thr, bool thr_set) {
  std::string resolved_config = config_path;
  if (resolved_config.empty()) {
    resolved_config = (fs::path(checkpoint).parent_path() / "config.json").string();
  }
  RunConfig config = load_run_config(resolved_config);
  if (thr_set) config.exist_threshold = exist_thr;

  Dataset dataset = Dataset::open(data);
  if (dataset.count() == 0) throw std::runtime_error("infer: dataset is empty");
  GroupLaneNet net(config.network, config.seed);
  {
    // materialize parameters, then overwrite them from the checkpoint
    NoGradGuard no_grad;
    const Scene scene = dataset.load(0);
    net.forward(scenes_to_tensor({scene}), {scene.rig});
  }
  net.params().load_values(load_checkpoint(checkpoint));

  std::vector<int> indices(dataset.count());
  for (int i = 0; i < dataset.count(); ++i) indices[i] = i;
  InferTimings timings;
  const auto preds = predict_scenes(net, dataset, indices, config.thresholds(),
                                    config.batch_size, &timings);
  save_predictions(out, indices, preds);

  json timing_json{{"scenes", timings.scenes},
                   {"total_s", timings.total_s},
                   {"load_s", timings.load_s},
                   {"backbone_s", timings.stages.backbone_s},
                   {"depth_s", timings.stages.depth_s},
                   {"lss_s", timings.stages.lss_s},
                   {"bev_encoder_s", timings.stages.bev_encoder_s},
                   {"heads_s", timings.stages.heads_s},
                   {"decode_s", timings.decode_s}};
  if (timing_out.empty()) {
    std::cout << timing_json.dump(2) << "\n";
  } else {
    std::ofstream os(timing_out, std::ios::trunc);
    os << timing_json.dump(2) << "\n";
  }
  return 0;
}

int cmd_gradcheck(uint64_t seed, int seeds, bool negative_control) {
  const GradCheckReport report = run_gradcheck(seed, seeds, negative_control);
  for (const GradCheckEntry& entry : report.entries) {
    std::cout << (entry.pass ? "[PASS] " : "[FAIL] ") << entry.op
              << "  max_rel_err=" << entry.max_rel_err << "\n";
  }
  std::cout << (report.all_pass ? "gradcheck: all ops within 1e-4"
                                : "gradcheck: TOLERANCE EXCEEDED")
            << "\n";
  return report.all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GroupLane: BEV row-wise 3D lane detection on synthetic scenes"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic scene dataset");
  std::string gen_spec, gen_out;
  int gen_count = 8;
  uint64_t gen_seed = 0;
  double gen_hprob = 0.0;
  int gen_modulus = 2, gen_residue = 1;
  gen->add_option("--spec", gen_spec, "scene spec JSON file");
  gen->add_option("--count", gen_count, "number of scenes");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--horizontal-prob", gen_hprob, "per-lane crossroad chance");
  gen->add_option("--val-modulus", gen_modulus, "val split modulus (0 = all train)");
  gen->add_option("--val-residue", gen_residue, "val split residue");

  // train
  auto* train = app.add_subcommand("train", "train a model");
  std::string train_data, train_out, train_config, train_profile = "desk";
  std::string train_matcher = "som";
  uint64_t train_seed = 0;
  int train_epochs = 10, train_batch = 4;
  bool no_horizontal = false, no_group_conv = false, no_guidance = false;
  bool val_on_train = false, resume = false;
  int eval_every = 1;
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "run directory")->required();
  train->add_option("--config", train_config, "run config JSON file");
  train->add_option("--profile", train_profile, "desk | paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  train->add_option("--seed", train_seed, "training seed");
  train->add_option("--epochs", train_epochs, "epoch count");
  train->add_option("--batch-size", train_batch, "batch size");
  train->add_option("--matcher", train_matcher, "som | index")
      ->check(CLI::IsMember({"som", "index"}));
  train->add_flag("--no-horizontal-group", no_horizontal,
                  "disable the horizontal head group");
  train->add_flag("--no-group-conv", no_group_conv,
                  "dense head convolutions (ablation)");
  train->add_flag("--no-category-guidance", no_guidance,
                  "max-pool category head (ablation)");
  train->add_flag("--val-on-train", val_on_train,
                  "evaluate on the training split");
  train->add_flag("--resume", resume, "continue from <out>/resume.state");
  train->add_option("--eval-every", eval_every,
                    "evaluate every k epochs (final epoch always)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a predictions file");
  std::string eval_preds, eval_data, eval_out, eval_config_path;
  eval_cmd->add_option("--preds", eval_preds, "predictions JSON")->required();
  eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
  eval_cmd->add_option("--out", eval_out, "report JSON path")->required();
  eval_cmd->add_option("--config", eval_config_path,
                       "run config (for eval protocol parameters)");

  // infer
  auto* infer = app.add_subcommand("infer", "run inference on a dataset");
  std::string infer_ckpt, infer_config, infer_data, infer_out, infer_timing;
  double infer_thr = 0.5;
  infer->add_option("--checkpoint", infer_ckpt, "checkpoint file")->required();
  infer->add_option("--config", infer_config,
                    "run config JSON (default: sibling config.json)");
  infer->add_option("--data", infer_data, "dataset directory")->required();
  infer->add_option("--out", infer_out, "predictions JSON path")->required();
  infer->add_option("--timing-out", infer_timing, "stage timing JSON path");
  infer->add_option("--exist-thr", infer_thr, "existence threshold override");

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "finite-difference sweep");
  uint64_t grad_seed = 0;
  int grad_seeds = 20;
  bool negative_control = false;
  grad->add_option("--seed", grad_seed, "base seed");
  grad->add_option("--seeds", grad_seeds, "seeds per op");
  grad->add_flag("--negative-control", negative_control,
                 "corrupt one gradient; the run must then fail");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      return cmd_gen(gen_spec, gen_count, gen_out, gen_seed,
                     gen->count("--seed") > 0, gen_hprob,
                     gen->count("--horizontal-prob") > 0, gen_modulus,
                     gen->count("--val-modulus") > 0, gen_residue,
                     gen->count("--val-residue") > 0);
    }
    if (train->parsed()) {
      return cmd_train(train_data, train_out, train_config, train_profile,
                       *train, train_seed, train_epochs, train_batch,
                       train_matcher, no_horizontal, no_group_conv, no_guidance,
                       val_on_train, resume, eval_every);
    }
    if (eval_cmd->parsed()) {
      return cmd_eval(eval_preds, eval_data, eval_out, eval_config_path);
    }
    if (infer->parsed()) {
      return cmd_infer(infer_ckpt, infer_config, infer_data, infer_out,
                       infer_timing, infer_thr, infer->count("--exist-thr") > 0);
    }
    if (grad->parsed()) {
      return cmd_gradcheck(grad_seed, grad_seeds, negative_control);
    }
  } catch (const std::exception& e) {
    json err{{"error", {{"message", e.what()}}}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
