#include "grouplane/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

using nlohmann::json;

namespace grouplane {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

void check_keys(const json& j, const std::string& where,
                const std::set<std::string>& known) {
  for (const auto& [key, unused] : j.items()) {
    if (!known.count(key)) {
      fail("config: unknown key \"" + key + "\" in " + where);
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T* out) {
  if (j.contains(key)) *out = j.at(key).get<T>();
}

}  // namespace

void RunConfig::validate() const {
  if (epochs < 0 || batch_size <= 0) fail("config: bad epochs/batch size");
  if (matcher != "som" && matcher != "index") {
    fail("config: matcher must be \"som\" or \"index\"");
  }
  if (precision != "f64" && precision != "f32") {
    fail("config: precision must be \"f64\" or \"f32\"");
  }
  if (optimizer.kind != "adamw") fail("config: only the adamw optimizer exists");
  if (optimizer.lr <= 0.0) fail("config: learning rate must be positive");
  network.validate();
  eval.validate();
}

MatcherKind RunConfig::matcher_kind() const {
  return matcher == "som" ? MatcherKind::Som : MatcherKind::Index;
}

RunConfig desk_config() { return RunConfig{}; }

RunConfig paper_profile() {
  RunConfig c;
  c.network.groups_per_head = 16;
  c.network.channels_per_group = 16;
  c.network.categories = 14;
  c.network.depth_bins = 32;
  c.network.depth_max = 104.0;
  c.network.image_height = 128;
  c.network.image_width = 320;
  c.network.grid = BevGridSpec{-10.0, 10.0, 3.0, 103.0, 24, 100};
  c.batch_size = 16;
  return c;
}

std::string serialize_run_config(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["matcher"] = c.matcher;
  j["exist_threshold"] = c.exist_threshold;
  j["vis_threshold"] = c.vis_threshold;
  j["precision"] = c.precision;
  j["optimizer"] = {{"kind", c.optimizer.kind},
                    {"lr", c.optimizer.lr},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"weight_decay", c.optimizer.weight_decay}};
  j["network"] = {{"groups_per_head", c.network.groups_per_head},
                  {"channels_per_group", c.network.channels_per_group},
                  {"categories", c.network.categories},
                  {"depth_bins", c.network.depth_bins},
                  {"depth_min", c.network.depth_min},
                  {"depth_max", c.network.depth_max},
                  {"image_height", c.network.image_height},
                  {"image_width", c.network.image_width},
                  {"horizontal_group", c.network.horizontal_group},
                  {"group_conv", c.network.group_conv},
                  {"category_guidance", c.network.category_guidance},
                  {"bev",
                   {{"x_min", c.network.grid.x_min},
                    {"x_max", c.network.grid.x_max},
                    {"y_min", c.network.grid.y_min},
                    {"y_max", c.network.grid.y_max},
                    {"rows", c.network.grid.rows},
                    {"cols", c.network.grid.cols}}}};
  j["eval"] = {{"distance_threshold", c.eval.point_distance_threshold},
               {"match_fraction", c.eval.match_fraction},
               {"near_min", c.eval.near_min},
               {"near_max", c.eval.near_max},
               {"far_min", c.eval.far_min},
               {"far_max", c.eval.far_max},
               {"sample_spacing", c.eval.sample_spacing}};
  j["loss"] = {{"visibility_positive_only", c.loss.visibility_positive_only}};
  return j.dump(2) + "\n";
}

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(std::string("config: not valid JSON: ") + e.what());
  }
  check_keys(j, "the top level",
             {"seed", "epochs", "batch_size", "matcher", "exist_threshold",
              "vis_threshold", "precision", "optimizer", "network", "eval",
              "loss"});
  RunConfig c;
  read(j, "seed", &c.seed);
  read(j, "epochs", &c.epochs);
  read(j, "batch_size", &c.batch_size);
  read(j, "matcher", &c.matcher);
  read(j, "exist_threshold", &c.exist_threshold);
  read(j, "vis_threshold", &c.vis_threshold);
  read(j, "precision", &c.precision);
  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    check_keys(o, "optimizer", {"kind", "lr", "beta1", "beta2", "weight_decay"});
    read(o, "kind", &c.optimizer.kind);
    read(o, "lr", &c.optimizer.lr);
    read(o, "beta1", &c.optimizer.beta1);
    read(o, "beta2", &c.optimizer.beta2);
    read(o, "weight_decay", &c.optimizer.weight_decay);
  }
  if (j.contains("network")) {
    const json& n = j.at("network");
    check_keys(n, "network",
               {"groups_per_head", "channels_per_group", "categories",
                "depth_bins", "depth_min", "depth_max", "image_height",
                "image_width", "horizontal_group", "group_conv",
                "category_guidance", "bev"});
    read(n, "groups_per_head", &c.network.groups_per_head);
    read(n, "channels_per_group", &c.network.channels_per_group);
    read(n, "categories", &c.network.categories);
    read(n, "depth_bins", &c.network.depth_bins);
    read(n, "depth_min", &c.network.depth_min);
    read(n, "depth_max", &c.network.depth_max);
    read(n, "image_height", &c.network.image_height);
    read(n, "image_width", &c.network.image_width);
    read(n, "horizontal_group", &c.network.horizontal_group);
    read(n, "group_conv", &c.network.group_conv);
    read(n, "category_guidance", &c.network.category_guidance);
    if (n.contains("bev")) {
      const json& b = n.at("bev");
      check_keys(b, "network.bev",
                 {"x_min", "x_max", "y_min", "y_max", "rows", "cols"});
      read(b, "x_min", &c.network.grid.x_min);
      read(b, "x_max", &c.network.grid.x_max);
      read(b, "y_min", &c.network.grid.y_min);
      read(b, "y_max", &c.network.grid.y_max);
      read(b, "rows", &c.network.grid.rows);
      read(b, "cols", &c.network.grid.cols);
    }
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, "eval",
               {"distance_threshold", "match_fraction", "near_min", "near_max",
                "far_min", "far_max", "sample_spacing"});
    read(e, "distance_threshold", &c.eval.point_distance_threshold);
    read(e, "match_fraction", &c.eval.match_fraction);
    read(e, "near_min", &c.eval.near_min);
    read(e, "near_max", &c.eval.near_max);
    read(e, "far_min", &c.eval.far_min);
    read(e, "far_max", &c.eval.far_max);
    read(e, "sample_spacing", &c.eval.sample_spacing);
  }
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    check_keys(l, "loss", {"visibility_positive_only"});
    read(l, "visibility_positive_only", &c.loss.visibility_positive_only);
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(is)),
                   std::istreambuf_iterator<char>());
  return parse_run_config(text);
}

void save_run_config(const RunConfig& config, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail("config: cannot write " + path);
  os << serialize_run_config(config);
}

}  // namespace grouplane
