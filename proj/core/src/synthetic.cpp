#include "seg4d/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <Eigen/Geometry>
#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include "seg4d/errors.hpp"
#include "seg4d/ingest.hpp"
#include "seg4d/rng.hpp"

namespace seg4d::ingest {

namespace {

Vec3 read_vec3(const YAML::Node& node, const char* key, const Vec3& fallback) {
  const YAML::Node v = node[key];
  if (!v) return fallback;
  if (!v.IsSequence() || v.size() != 3) throw ConfigError(fmt::format("'{}' must be a 3-element list", key));
  return Vec3(v[0].as<double>(), v[1].as<double>(), v[2].as<double>());
}

Shape parse_shape(const std::string& name) {
  if (name == "box") return Shape::kBox;
  if (name == "cylinder") return Shape::kCylinder;
  if (name == "plane") return Shape::kPlane;
  throw ConfigError("unknown shape '" + name + "' (expected box, cylinder or plane)");
}

const char* shape_name(Shape s) {
  switch (s) {
    case Shape::kBox:
      return "box";
    case Shape::kCylinder:
      return "cylinder";
    case Shape::kPlane:
      return "plane";
  }
  return "box";
}

Vec3 sample_shape(const SyntheticObject& obj, Rng& rng) {
  switch (obj.shape) {
    case Shape::kBox:
      return Vec3(uniform(rng, -0.5, 0.5) * obj.size.x(), uniform(rng, -0.5, 0.5) * obj.size.y(),
                  uniform(rng, -0.5, 0.5) * obj.size.z());
    case Shape::kCylinder: {
      const double radius = 0.5 * obj.size.x();
      const double r = radius * std::sqrt(uniform01(rng));
      const double theta = 2.0 * std::numbers::pi * uniform01(rng);
      return Vec3(r * std::cos(theta), r * std::sin(theta), uniform(rng, -0.5, 0.5) * obj.size.z());
    }
    case Shape::kPlane:
      return Vec3(uniform(rng, -0.5, 0.5) * obj.size.x(), uniform(rng, -0.5, 0.5) * obj.size.y(), 0.0);
  }
  return Vec3::Zero();
}

void validate(const SceneSpec& spec) {
  if (spec.objects.empty()) throw ConfigError("synthetic scene needs at least one object");
  if (spec.scans <= 0) throw ConfigError("synthetic scene needs at least one scan");
  if (!(spec.noise >= 0.0)) throw ConfigError("noise sigma must be non-negative");
  const auto& classes = semantic_kitti_classes();
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    const auto& obj = spec.objects[i];
    if (obj.points <= 0) throw ConfigError(fmt::format("object {} needs a positive point count", i));
    if ((obj.size.array() < 0.0).any()) throw ConfigError(fmt::format("object {} has a negative size", i));
    const auto it = classes.find(obj.semantic);
    if (it != classes.end() && it->second.ignored) {
      throw ConfigError(fmt::format("object {} uses ignored class {}", i, obj.semantic));
    }
    const bool thing = it != classes.end() && it->second.thing;
    if (!thing && obj.instance != 0) {
      throw ConfigError(fmt::format("object {} is stuff (class {}) and must use instance 0", i, obj.semantic));
    }
  }
}

}  // namespace

SceneSpec parse_scene_spec(std::string_view text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("scene spec: ") + e.what());
  }
  SceneSpec spec;
  try {
    if (root["seed"]) spec.seed = root["seed"].as<std::uint64_t>();
    spec.scans = root["scans"].as<int>(spec.scans);
    spec.noise = root["noise"].as<double>(spec.noise);
    if (const YAML::Node ego = root["ego"]) {
      spec.ego_velocity = read_vec3(ego, "velocity", spec.ego_velocity);
      spec.ego_yaw_rate = ego["yaw_rate"].as<double>(spec.ego_yaw_rate);
    }
    const int default_points = root["points_per_object"].as<int>(100);
    for (const auto& node : root["objects"]) {
      SyntheticObject obj;
      obj.shape = parse_shape(node["shape"].as<std::string>("box"));
      obj.center = read_vec3(node, "center", obj.center);
      obj.size = read_vec3(node, "size", obj.size);
      obj.velocity = read_vec3(node, "velocity", obj.velocity);
      obj.semantic = node["class"].as<std::uint16_t>(obj.semantic);
      obj.instance = node["instance"].as<std::uint16_t>(obj.instance);
      obj.points = node["points"].as<int>(default_points);
      spec.objects.push_back(obj);
    }
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("scene spec: ") + e.what());
  }
  return spec;
}

SceneSpec load_scene_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scene spec " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_scene_spec(buffer.str());
}

std::string format_scene_spec(const SceneSpec& spec) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  if (spec.seed) out << YAML::Key << "seed" << YAML::Value << *spec.seed;
  out << YAML::Key << "scans" << YAML::Value << spec.scans;
  out << YAML::Key << "noise" << YAML::Value << spec.noise;
  auto vec = [&](const Vec3& v) {
    out << YAML::Flow << YAML::BeginSeq << v.x() << v.y() << v.z() << YAML::EndSeq;
  };
  out << YAML::Key << "ego" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "velocity" << YAML::Value;
  vec(spec.ego_velocity);
  out << YAML::Key << "yaw_rate" << YAML::Value << spec.ego_yaw_rate << YAML::EndMap;
  out << YAML::Key << "objects" << YAML::Value << YAML::BeginSeq;
  for (const auto& obj : spec.objects) {
    out << YAML::BeginMap;
    out << YAML::Key << "shape" << YAML::Value << shape_name(obj.shape);
    out << YAML::Key << "center" << YAML::Value;
    vec(obj.center);
    out << YAML::Key << "size" << YAML::Value;
    vec(obj.size);
    out << YAML::Key << "velocity" << YAML::Value;
    vec(obj.velocity);
    out << YAML::Key << "class" << YAML::Value << obj.semantic;
    out << YAML::Key << "instance" << YAML::Value << obj.instance;
    out << YAML::Key << "points" << YAML::Value << obj.points;
    out << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

Sequence generate_synthetic(const SceneSpec& spec, std::uint64_t seed) {
  validate(spec);

  std::vector<std::vector<Vec3>> samples(spec.objects.size());
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    Rng rng(derive_seed(seed, {0x5a3e, i}));
    samples[i].resize(static_cast<std::size_t>(spec.objects[i].points));
    for (auto& s : samples[i]) s = sample_shape(spec.objects[i], rng);
  }

  Sequence seq;
  seq.class_map = semantic_kitti_classes();
  for (int k = 0; k < spec.scans; ++k) {
    Scan scan;
    scan.scan_index = k;
    scan.pose.rotation = Eigen::AngleAxisd(spec.ego_yaw_rate * k, Vec3::UnitZ()).toRotationMatrix();
    scan.pose.translation = spec.ego_velocity * static_cast<double>(k);
    const Mat3 world_to_sensor = scan.pose.rotation.transpose();

    Rng noise_rng(derive_seed(seed, {0x4e01, static_cast<std::uint64_t>(k)}));
    std::vector<PointLabel> labels;
    for (std::size_t i = 0; i < spec.objects.size(); ++i) {
      const auto& obj = spec.objects[i];
      const Vec3 offset = obj.center + obj.velocity * static_cast<double>(k);
      for (const Vec3& s : samples[i]) {
        Point p;
        p.position = world_to_sensor * (offset + s - scan.pose.translation);
        if (spec.noise > 0.0) {
          p.position += spec.noise * Vec3(standard_normal(noise_rng), standard_normal(noise_rng),
                                          standard_normal(noise_rng));
        }
        p.intensity = 0.5;
        p.scan_index = k;
        scan.points.push_back(p);
        labels.push_back(PointLabel{obj.semantic, obj.instance});
      }
    }
    scan.labels = std::move(labels);
    seq.scans.push_back(std::move(scan));
  }
  return seq;
}

SceneSpec random_scene(std::uint64_t seed, const RandomSceneOptions& options) {
  Rng rng(derive_seed(seed, {0x7a11}));
  SceneSpec spec;
  spec.scans = options.scans;
  spec.noise = options.noise;
  spec.ego_velocity = options.ego_velocity;
  spec.seed = seed;

  constexpr double kGroundZ = -1.5;
  SyntheticObject ground;
  ground.shape = Shape::kPlane;
  ground.center = Vec3(0.0, 0.0, kGroundZ);
  ground.size = Vec3(2.0 * options.extent, 2.0 * options.extent, 0.0);
  ground.semantic = 40;
  ground.instance = 0;
  ground.points = options.ground_points;
  spec.objects.push_back(ground);

  const int span = options.max_objects - options.min_objects + 1;
  const int count = options.min_objects + static_cast<int>(draw_index(rng, static_cast<std::uint64_t>(span)));

  // Non-overlapping placement on a coarse grid of 5 m cells.
  constexpr double kCell = 5.0;
  const int cells_per_side = std::max(1, static_cast<int>(2.0 * options.extent / kCell));
  std::vector<int> cells(static_cast<std::size_t>(cells_per_side * cells_per_side));
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
  for (std::size_t i = cells.size(); i > 1; --i) std::swap(cells[i - 1], cells[draw_index(rng, i)]);

  static constexpr std::uint16_t kThings[] = {10, 11, 18, 30, 31};
  static constexpr std::uint16_t kStuff[] = {50, 70, 80};
  std::uint16_t next_instance = 1;
  std::size_t stuff_used = 0;
  // The ground already counts as one object.
  for (int n = 1; n < count && static_cast<std::size_t>(n - 1) < cells.size(); ++n) {
    const int cell = cells[static_cast<std::size_t>(n - 1)];
    const double cx = -options.extent + (cell % cells_per_side + 0.5) * kCell;
    const double cy = -options.extent + (cell / cells_per_side + 0.5) * kCell;

    SyntheticObject obj;
    const bool stuff = stuff_used < std::size(kStuff) && draw_index(rng, 4) == 0;
    if (stuff) {
      obj.semantic = kStuff[stuff_used++];
      obj.instance = 0;
    } else {
      obj.semantic = kThings[draw_index(rng, std::size(kThings))];
      obj.instance = next_instance++;
    }
    obj.shape = draw_index(rng, 2) == 0 ? Shape::kBox : Shape::kCylinder;
    const double w = uniform(rng, 0.6, 3.0);
    const double h = uniform(rng, 0.8, 2.5);
    obj.size = obj.shape == Shape::kBox ? Vec3(w, uniform(rng, 0.6, 3.0), h) : Vec3(w, w, h);
    obj.center = Vec3(cx, cy, kGroundZ + 0.5 * h + 0.25);
    obj.points = options.points_per_object;
    if (!stuff && uniform01(rng) < options.moving_fraction) {
      const double heading = 2.0 * std::numbers::pi * uniform01(rng);
      obj.velocity = 0.5 * Vec3(std::cos(heading), std::sin(heading), 0.0);
    }
    spec.objects.push_back(obj);
  }
  return spec;
}

}  // namespace seg4d::ingest
