#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace seg4d {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Object identifier inside a segmentation. 0 is background / unlabeled.
using ObjectId = std::uint32_t;
inline constexpr ObjectId kBackground = 0;

struct Point {
  Vec3 position = Vec3::Zero();  // meters
  double intensity = 0.0;
  int scan_index = 0;
};

struct PointLabel {
  std::uint16_t semantic = 0;
  std::uint16_t instance = 0;

  friend bool operator==(const PointLabel&, const PointLabel&) = default;
};

/// Rigid transform taking sensor-frame points into a world frame: p' = R p + t.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Pose inverse() const;
  Pose compose(const Pose& rhs) const;  // this ∘ rhs

  /// Rotation orthonormal and right-handed within `tol`.
  bool is_valid(double tol = 1e-6) const;
};

struct Scan {
  std::vector<Point> points;
  std::optional<std::vector<PointLabel>> labels;
  Pose pose;
  int scan_index = 0;

  bool labeled() const { return labels.has_value(); }
};

struct ClassInfo {
  std::string name;
  bool thing = false;
  bool ignored = false;  // unlabeled/outlier classes never form objects
};

using ClassMap = std::map<std::uint16_t, ClassInfo>;

struct Sequence {
  std::vector<Scan> scans;  // strictly increasing scan_index
  ClassMap class_map;

  bool labeled() const;
};

}  // namespace seg4d
