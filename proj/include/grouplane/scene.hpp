#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "grouplane/geometry.hpp"
#include "grouplane/lane.hpp"

namespace grouplane {

// Deterministic desk-scale scene generator: (seed, index) fully determines
// every byte of the output.
struct SceneSpec {
  uint64_t seed = 0;
  int lane_count_min = 2;
  int lane_count_max = 4;
  double lateral_spacing = 3.5;         // lattice step between vertical lanes
  double horizontal_probability = 0.0;  // per-lane chance of a crossroad lane
  int categories = 4;
  double elevation_amplitude = 0.2;  // sinusoidal z, meters
  int image_height = 64;
  int image_width = 160;
  double camera_height = 1.5;
  double camera_pitch_deg = 10.0;
  double focal = 70.0;
  // lanes are laid out inside this extent; it matches the BEV grid
  double x_min = -10.0, x_max = 10.0;
  double y_min = 3.0, y_max = 53.0;
  // validation split: index % val_modulus == val_residue; 0 = all train
  int val_modulus = 2;
  int val_residue = 1;

  bool operator==(const SceneSpec&) const = default;
  void validate() const;
  CameraRig rig() const;
};

struct Scene {
  std::vector<uint8_t> image;  // H x W x 3, row-major RGB
  CameraRig rig;
  std::vector<Lane3D> lanes;
};

Scene gen_scene(const SceneSpec& spec, int index);

// Strict JSON round trip for the spec; unknown keys are rejected, missing
// keys fall back to the defaults.
SceneSpec parse_scene_spec(const std::string& text);
std::string serialize_scene_spec(const SceneSpec& spec);

// Ground-plane shading plus category-colored, category-dashed 3 px strokes.
std::vector<uint8_t> render(const std::vector<Lane3D>& lanes,
                            const CameraRig& rig, int height, int width);

// On-disk layout: manifest.json, scene_%06d.ppm (binary P6),
// scene_%06d.json (rig matrices row-major, lanes as point arrays).
void write_dataset(const SceneSpec& spec, int count, const std::string& dir);

class Dataset {
 public:
  static Dataset open(const std::string& dir);

  const SceneSpec& spec() const { return spec_; }
  int count() const { return count_; }
  const std::string& dir() const { return dir_; }

  Scene load(int index) const;
  std::vector<int> train_indices() const;
  std::vector<int> val_indices() const;

 private:
  SceneSpec spec_;
  int count_ = 0;
  std::string dir_;
};

// PPM helpers (binary P6, maxval 255)
void write_ppm(const std::string& path, const std::vector<uint8_t>& rgb,
               int height, int width);
std::vector<uint8_t> read_ppm(const std::string& path, int* height, int* width);

}  // namespace grouplane
