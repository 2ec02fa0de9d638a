#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "seg4d/types.hpp"

namespace seg4d::ingest {

enum class Shape { kBox, kCylinder, kPlane };

/// One scene primitive. `size` is the box extent, (2r, 2r, h) for cylinders,
/// and (x, y, ignored) for ground planes. Velocity is meters per scan.
struct SyntheticObject {
  Shape shape = Shape::kBox;
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Ones();
  Vec3 velocity = Vec3::Zero();
  std::uint16_t semantic = 10;
  std::uint16_t instance = 1;
  int points = 100;
};

struct SceneSpec {
  std::vector<SyntheticObject> objects;
  int scans = 4;
  double noise = 0.0;  // sensor noise sigma, meters
  Vec3 ego_velocity = Vec3::Zero();
  double ego_yaw_rate = 0.0;  // radians per scan
  std::optional<std::uint64_t> seed;
};

/// YAML scene description; see README for the schema.
SceneSpec parse_scene_spec(std::string_view text);
SceneSpec load_scene_spec(const std::filesystem::path& path);
std::string format_scene_spec(const SceneSpec& spec);

/// Deterministic labeled sequence for (spec, seed). Each object's
/// object-frame sample is drawn once, so static geometry is identical in the
/// world frame across scans and moving objects translate rigidly.
Sequence generate_synthetic(const SceneSpec& spec, std::uint64_t seed);

/// Options for random desk-scale scenes used by tests and benchmarks.
struct RandomSceneOptions {
  int min_objects = 5;
  int max_objects = 15;
  int scans = 4;
  int points_per_object = 120;
  int ground_points = 800;
  double extent = 30.0;      // half-width of the scene square, meters
  double moving_fraction = 0.0;
  Vec3 ego_velocity = Vec3(0.5, 0.0, 0.0);
  double noise = 0.0;
};

/// Well-separated boxes/cylinders on a ground plane. Objects never overlap.
SceneSpec random_scene(std::uint64_t seed, const RandomSceneOptions& options = {});

}  // namespace seg4d::ingest
