#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "seg4d/types.hpp"

namespace seg4d::spatial {

/// Squared Euclidean distance with a fixed evaluation order, so brute-force
/// oracles and the tree agree to the last bit.
inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x() - b.x();
  const double dy = a.y() - b.y();
  const double dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

struct Neighbor {
  std::uint32_t index = std::numeric_limits<std::uint32_t>::max();
  double squared_distance = std::numeric_limits<double>::infinity();

  bool valid() const { return index != std::numeric_limits<std::uint32_t>::max(); }
};

/// Static 3-D k-d tree over a copy of the input points. Indices returned refer
/// to positions in the input span. Queries are exact; equal distances resolve
/// to the lowest index.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::span<const Vec3> points);

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }

  Neighbor nearest(const Vec3& query) const;

  /// All indices within `radius` (inclusive), ascending.
  std::vector<std::uint32_t> radius(const Vec3& query, double radius) const;

 private:
  struct Node {
    std::uint32_t begin = 0;
    std::uint32_t end = 0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    int axis = -1;  // -1 for leaves
    double split = 0.0;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end);
  void nearest_impl(std::int32_t node, const Vec3& q, Neighbor& best) const;
  void radius_impl(std::int32_t node, const Vec3& q, double r2, std::vector<std::uint32_t>& out) const;

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  std::int32_t root_ = -1;
};

}  // namespace seg4d::spatial
