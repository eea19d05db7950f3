#include "grouplane/scene.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "grouplane/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace grouplane {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

struct Rgb {
  uint8_t r, g, b;
};

// evenly spaced hues so any category count stays distinguishable
Rgb category_color(int category, int categories) {
  const double h = 6.0 * category / std::max(categories, 1);
  const int sector = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double v = 235, p = 55, q = v - (v - p) * f, t = p + (v - p) * f;
  double r = v, g = v, b = v;
  switch (sector) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
  if (category == 0) r = g = b = 240;  // the base class renders white
  return {static_cast<uint8_t>(r), static_cast<uint8_t>(g),
          static_cast<uint8_t>(b)};
}

void dash_pattern(int category, double* on_m, double* off_m) {
  if (category == 0) {
    *on_m = 1.0;
    *off_m = 0.0;  // solid
  } else {
    *on_m = 0.8 + 0.8 * category;
    *off_m = 0.4 + 0.4 * category;
  }
}

void paint(std::vector<uint8_t>& img, int height, int width, int u, int v,
           Rgb c) {
  if (u < 0 || u >= width || v < 0 || v >= height) return;
  uint8_t* px = img.data() + 3 * (static_cast<size_t>(v) * width + u);
  px[0] = c.r;
  px[1] = c.g;
  px[2] = c.b;
}

void stroke(std::vector<uint8_t>& img, int height, int width, double u0,
            double v0, double u1, double v1, Rgb c) {
  const double steps = std::max(std::fabs(u1 - u0), std::fabs(v1 - v0));
  const int n = std::max(1, static_cast<int>(std::ceil(steps)));
  for (int i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) / n;
    const int u = static_cast<int>(std::lround(u0 + t * (u1 - u0)));
    const int v = static_cast<int>(std::lround(v0 + t * (v1 - v0)));
    for (int dv = -1; dv <= 1; ++dv) {
      for (int du = -1; du <= 1; ++du) paint(img, height, width, u + du, v + dv, c);
    }
  }
}

json rig_to_json(const CameraRig& rig) {
  json j;
  j["intrinsics"] = rig.intrinsics;
  j["extrinsics"] = rig.extrinsics;
  j["image_height"] = rig.image_height;
  j["image_width"] = rig.image_width;
  return j;
}

CameraRig rig_from_json(const json& j) {
  CameraRig rig;
  const auto k = j.at("intrinsics").get<std::vector<double>>();
  const auto e = j.at("extrinsics").get<std::vector<double>>();
  if (k.size() != 9 || e.size() != 16) fail("scene json: malformed rig matrices");
  std::copy(k.begin(), k.end(), rig.intrinsics.begin());
  std::copy(e.begin(), e.end(), rig.extrinsics.begin());
  rig.image_height = j.at("image_height").get<int>();
  rig.image_width = j.at("image_width").get<int>();
  rig.validate();
  return rig;
}

json spec_to_json(const SceneSpec& s) {
  json j;
  j["seed"] = s.seed;
  j["lane_count_min"] = s.lane_count_min;
  j["lane_count_max"] = s.lane_count_max;
  j["lateral_spacing"] = s.lateral_spacing;
  j["horizontal_probability"] = s.horizontal_probability;
  j["categories"] = s.categories;
  j["elevation_amplitude"] = s.elevation_amplitude;
  j["image_height"] = s.image_height;
  j["image_width"] = s.image_width;
  j["camera_height"] = s.camera_height;
  j["camera_pitch_deg"] = s.camera_pitch_deg;
  j["focal"] = s.focal;
  j["x_min"] = s.x_min;
  j["x_max"] = s.x_max;
  j["y_min"] = s.y_min;
  j["y_max"] = s.y_max;
  j["val_modulus"] = s.val_modulus;
  j["val_residue"] = s.val_residue;
  return j;
}

template <typename T>
void read_key(const json& j, const char* key, T* out) {
  if (j.contains(key)) *out = j.at(key).get<T>();
}

SceneSpec spec_from_json(const json& j) {
  static const std::set<std::string> known = {
      "seed",          "lane_count_min", "lane_count_max",
      "lateral_spacing", "horizontal_probability", "categories",
      "elevation_amplitude", "image_height", "image_width",
      "camera_height", "camera_pitch_deg", "focal",
      "x_min",         "x_max",          "y_min",
      "y_max",         "val_modulus",    "val_residue"};
  for (const auto& [key, unused] : j.items()) {
    if (!known.count(key)) fail("scene spec: unknown key \"" + key + "\"");
  }
  SceneSpec s;
  read_key(j, "seed", &s.seed);
  read_key(j, "lane_count_min", &s.lane_count_min);
  read_key(j, "lane_count_max", &s.lane_count_max);
  read_key(j, "lateral_spacing", &s.lateral_spacing);
  read_key(j, "horizontal_probability", &s.horizontal_probability);
  read_key(j, "categories", &s.categories);
  read_key(j, "elevation_amplitude", &s.elevation_amplitude);
  read_key(j, "image_height", &s.image_height);
  read_key(j, "image_width", &s.image_width);
  read_key(j, "camera_height", &s.camera_height);
  read_key(j, "camera_pitch_deg", &s.camera_pitch_deg);
  read_key(j, "focal", &s.focal);
  read_key(j, "x_min", &s.x_min);
  read_key(j, "x_max", &s.x_max);
  read_key(j, "y_min", &s.y_min);
  read_key(j, "y_max", &s.y_max);
  read_key(j, "val_modulus", &s.val_modulus);
  read_key(j, "val_residue", &s.val_residue);
  s.validate();
  return s;
}

std::string scene_stem(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%06d", index);
  return buf;
}

}  // namespace

void SceneSpec::validate() const {
  if (lane_count_min < 0 || lane_count_max < lane_count_min) {
    fail("scene spec: invalid lane count range");
  }
  if (horizontal_probability < 0.0 || horizontal_probability > 1.0) {
    fail("scene spec: horizontal probability out of [0,1]");
  }
  if (categories < 1) fail("scene spec: needs at least one category");
  if (image_height <= 0 || image_width <= 0) fail("scene spec: bad image size");
  if (!(x_min < x_max && y_min < y_max)) fail("scene spec: empty lane region");
  if (val_modulus < 0) fail("scene spec: negative split modulus");
  if (val_modulus > 0 && (val_residue < 0 || val_residue >= val_modulus)) {
    fail("scene spec: split residue outside modulus");
  }
}

CameraRig SceneSpec::rig() const {
  return make_forward_rig(camera_height, camera_pitch_deg, focal, focal,
                          image_height, image_width);
}

Scene gen_scene(const SceneSpec& spec, int index) {
  spec.validate();
  Rng rng(Rng::mix(spec.seed, static_cast<uint64_t>(index)));
  Scene scene;
  scene.rig = spec.rig();

  const int count =
      static_cast<int>(rng.uniform_int(spec.lane_count_min, spec.lane_count_max));

  // distinct lattice slots keep vertical lanes from overlapping
  const int max_slot =
      static_cast<int>(std::floor((spec.x_max - 1.0) / spec.lateral_spacing));
  std::vector<int> slots;
  for (int s = -max_slot; s <= max_slot; ++s) slots.push_back(s);
  rng.shuffle(slots);
  size_t next_slot = 0;

  std::vector<double> used_horizontal_y;
  for (int i = 0; i < count; ++i) {
    Lane3D lane;
    lane.id = i;
    lane.category = static_cast<int>(rng.uniform_int(0, spec.categories - 1));
    const bool horizontal = rng.uniform() < spec.horizontal_probability;
    const double wavelength = rng.uniform(25.0, 60.0);
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    const double amp = spec.elevation_amplitude * rng.uniform(0.5, 1.0);

    if (horizontal) {
      // crossroad lane: full lateral span at a fixed longitudinal position
      double y0 = 0.0;
      bool separated = false;
      for (int attempt = 0; attempt < 16 && !separated; ++attempt) {
        y0 = rng.uniform(spec.y_min + 4.0, spec.y_max - 4.0);
        separated = true;
        for (double used : used_horizontal_y) {
          if (std::fabs(used - y0) < 6.0) separated = false;
        }
      }
      if (!separated) continue;
      used_horizontal_y.push_back(y0);
      const double slope = rng.uniform(-0.02, 0.02);
      for (double x = spec.x_min + 0.25; x <= spec.x_max - 0.25 + 1e-9; x += 1.0) {
        const double z = amp * std::sin(2.0 * M_PI * x / wavelength + phase);
        lane.points.push_back({x, y0 + slope * x, z});
      }
    } else {
      if (next_slot >= slots.size()) continue;
      const double x0 = slots[next_slot++] * spec.lateral_spacing +
                        rng.uniform(-0.8, 0.8);
      const int family = static_cast<int>(rng.uniform_int(0, 2));
      const double span = spec.y_max - spec.y_min;
      // curvature capped so the lateral drift stays below the lattice step
      const double quad = rng.uniform(-2.4, 2.4) / (span * span);
      const double cubic = rng.uniform(-2.4, 2.4) / (span * span * span);
      for (double y = spec.y_min; y <= spec.y_max + 1e-9; y += 1.0) {
        const double t = y - spec.y_min;
        double x = x0;
        if (family == 1) x += quad * t * t;
        if (family == 2) x += cubic * t * t * t;
        x = std::clamp(x, spec.x_min + 0.25, spec.x_max - 0.25);
        const double z = amp * std::sin(2.0 * M_PI * y / wavelength + phase);
        lane.points.push_back({x, y, z});
      }
    }
    if (lane.points.size() < 2) continue;

    // scene invariant: partially visible in the image
    bool visible = false;
    for (const Vec3& p : lane.points) {
      if (project_ego_to_image(p, scene.rig)) {
        visible = true;
        break;
      }
    }
    if (!visible) continue;
    scene.lanes.push_back(std::move(lane));
  }
  scene.image = render(scene.lanes, scene.rig, spec.image_height, spec.image_width);
  return scene;
}

std::vector<uint8_t> render(const std::vector<Lane3D>& lanes,
                            const CameraRig& rig, int height, int width) {
  std::vector<uint8_t> img(static_cast<size_t>(height) * width * 3);

  // horizon from a distant ground point straight ahead
  double horizon_v = 0.0;
  if (auto far = project_unclipped({0.0, 1e6, 0.0}, rig)) horizon_v = far->v;
  for (int v = 0; v < height; ++v) {
    uint8_t r, g, b;
    if (v < horizon_v) {
      r = 168;
      g = 186;
      b = 205;  // sky
    } else {
      // ground ramp encodes the view depression, brighter near the camera
      const double t = (v - horizon_v) / std::max(1.0, height - horizon_v);
      const double base = 58.0 + 96.0 * t;
      r = static_cast<uint8_t>(base);
      g = static_cast<uint8_t>(base + 8.0 * t);
      b = static_cast<uint8_t>(base * 0.92);
    }
    for (int u = 0; u < width; ++u) {
      uint8_t* px = img.data() + 3 * (static_cast<size_t>(v) * width + u);
      px[0] = r;
      px[1] = g;
      px[2] = b;
    }
  }

  for (const Lane3D& lane : lanes) {
    const Rgb color = category_color(lane.category, 8);
    double on_m, off_m;
    dash_pattern(lane.category, &on_m, &off_m);
    const double period = on_m + off_m;
    double arclen = 0.0;
    for (size_t i = 0; i + 1 < lane.points.size(); ++i) {
      const Vec3& a = lane.points[i];
      const Vec3& b = lane.points[i + 1];
      const double seg_len =
          std::sqrt((b.x - a.x) * (b.x - a.x) + (b.y - a.y) * (b.y - a.y) +
                    (b.z - a.z) * (b.z - a.z));
      // subdivide for dashing and projective bend
      const int pieces = 4;
      for (int k = 0; k < pieces; ++k) {
        const double t0 = static_cast<double>(k) / pieces;
        const double t1 = static_cast<double>(k + 1) / pieces;
        const double mid_len = arclen + seg_len * 0.5 * (t0 + t1);
        if (off_m > 0.0 && std::fmod(mid_len, period) >= on_m) continue;
        const Vec3 p0{a.x + t0 * (b.x - a.x), a.y + t0 * (b.y - a.y),
                      a.z + t0 * (b.z - a.z)};
        const Vec3 p1{a.x + t1 * (b.x - a.x), a.y + t1 * (b.y - a.y),
                      a.z + t1 * (b.z - a.z)};
        const auto q0 = project_unclipped(p0, rig);
        const auto q1 = project_unclipped(p1, rig);
        if (!q0 || !q1) continue;
        stroke(img, height, width, q0->u, q0->v, q1->u, q1->v, color);
      }
      arclen += seg_len;
    }
  }
  return img;
}

SceneSpec parse_scene_spec(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(std::string("scene spec: not valid JSON: ") + e.what());
  }
  return spec_from_json(j);
}

std::string serialize_scene_spec(const SceneSpec& spec) {
  return spec_to_json(spec).dump(2) + "\n";
}

void write_ppm(const std::string& path, const std::vector<uint8_t>& rgb,
               int height, int width) {
  if (static_cast<size_t>(height) * width * 3 != rgb.size()) {
    fail("ppm: buffer does not match extents");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail("ppm: cannot open " + path + " for write");
  os << "P6\n" << width << " " << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(rgb.data()),
           static_cast<std::streamsize>(rgb.size()));
  if (!os) fail("ppm: write failed for " + path);
}

std::vector<uint8_t> read_ppm(const std::string& path, int* height, int* width) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("ppm: cannot open " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) {
    fail("ppm: unsupported header in " + path);
  }
  is.get();  // single whitespace after maxval
  std::vector<uint8_t> rgb(static_cast<size_t>(w) * h * 3);
  is.read(reinterpret_cast<char*>(rgb.data()),
          static_cast<std::streamsize>(rgb.size()));
  if (!is) fail("ppm: truncated pixel data in " + path);
  *height = h;
  *width = w;
  return rgb;
}

void write_dataset(const SceneSpec& spec, int count, const std::string& dir) {
  spec.validate();
  if (count < 0) fail("dataset: negative scene count");
  fs::create_directories(dir);
  json manifest;
  manifest["version"] = 1;
  manifest["count"] = count;
  manifest["spec"] = spec_to_json(spec);
  {
    std::ofstream os(fs::path(dir) / "manifest.json", std::ios::trunc);
    if (!os) fail("dataset: cannot write manifest in " + dir);
    os << manifest.dump(2) << "\n";
  }
  for (int i = 0; i < count; ++i) {
    const Scene scene = gen_scene(spec, i);
    const std::string stem = scene_stem(i);
    write_ppm((fs::path(dir) / (stem + ".ppm")).string(), scene.image,
              spec.image_height, spec.image_width);
    json j;
    j["rig"] = rig_to_json(scene.rig);
    j["lanes"] = json::array();
    for (const Lane3D& lane : scene.lanes) {
      json lj;
      lj["category"] = lane.category;
      lj["id"] = lane.id;
      json pts = json::array();
      for (const Vec3& p : lane.points) pts.push_back({p.x, p.y, p.z});
      lj["points"] = std::move(pts);
      j["lanes"].push_back(std::move(lj));
    }
    std::ofstream os(fs::path(dir) / (stem + ".json"), std::ios::trunc);
    if (!os) fail("dataset: cannot write scene json in " + dir);
    os << j.dump() << "\n";
  }
}

Dataset Dataset::open(const std::string& dir) {
  const fs::path manifest_path = fs::path(dir) / "manifest.json";
  std::ifstream is(manifest_path);
  if (!is) fail("dataset: missing manifest " + manifest_path.string());
  json manifest = json::parse(is, nullptr, /*allow_exceptions=*/true);
  if (manifest.at("version").get<int>() != 1) {
    fail("dataset: unsupported manifest version in " + manifest_path.string());
  }
  Dataset ds;
  ds.spec_ = spec_from_json(manifest.at("spec"));
  ds.count_ = manifest.at("count").get<int>();
  ds.dir_ = dir;
  return ds;
}

Scene Dataset::load(int index) const {
  if (index < 0 || index >= count_) fail("dataset: scene index out of range");
  const std::string stem = scene_stem(index);
  const std::string ppm_path = (fs::path(dir_) / (stem + ".ppm")).string();
  const std::string json_path = (fs::path(dir_) / (stem + ".json")).string();
  Scene scene;
  int h = 0, w = 0;
  scene.image = read_ppm(ppm_path, &h, &w);
  std::ifstream is(json_path);
  if (!is) fail("dataset: missing scene file " + json_path);
  json j = json::parse(is);
  scene.rig = rig_from_json(j.at("rig"));
  if (h != scene.rig.image_height || w != scene.rig.image_width) {
    fail("dataset: image extents disagree with rig in " + ppm_path);
  }
  for (const json& lj : j.at("lanes")) {
    Lane3D lane;
    lane.category = lj.at("category").get<int>();
    lane.id = lj.at("id").get<int>();
    for (const json& pt : lj.at("points")) {
      lane.points.push_back({pt.at(0).get<double>(), pt.at(1).get<double>(),
                             pt.at(2).get<double>()});
    }
    lane.validate();
    scene.lanes.push_back(std::move(lane));
  }
  return scene;
}

std::vector<int> Dataset::train_indices() const {
  std::vector<int> out;
  for (int i = 0; i < count_; ++i) {
    if (spec_.val_modulus == 0 || i % spec_.val_modulus != spec_.val_residue) {
      out.push_back(i);
    }
  }
  return out;
}

std::vector<int> Dataset::val_indices() const {
  std::vector<int> out;
  for (int i = 0; i < count_; ++i) {
    if (spec_.val_modulus != 0 && i % spec_.val_modulus == spec_.val_residue) {
      out.push_back(i);
    }
  }
  return out;
}

}  // namespace grouplane
