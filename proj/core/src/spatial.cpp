#include "seg4d/spatial.hpp"

#include <algorithm>
#include <numeric>

namespace seg4d::spatial {

namespace {
constexpr std::uint32_t kLeafSize = 16;
}

KdTree::KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / kLeafSize + 1);
    root_ = build(0, static_cast<std::uint32_t>(points_.size()));
  }
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = points_[order_[begin]];
  Vec3 hi = lo;
  for (std::uint32_t i = begin + 1; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] == lo[axis]) return id;  // all coincident: keep as a leaf

  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) { return points_[a][axis] < points_[b][axis]; });
  const double split = points_[order_[mid]][axis];

  const std::int32_t left = build(begin, mid);
  const std::int32_t right = build(mid, end);
  Node& node = nodes_[id];
  node.axis = axis;
  node.split = split;
  node.left = left;
  node.right = right;
  return id;
}

Neighbor KdTree::nearest(const Vec3& query) const {
  Neighbor best;
  if (root_ >= 0) nearest_impl(root_, query, best);
  return best;
}

void KdTree::nearest_impl(std::int32_t node_id, const Vec3& q, Neighbor& best) const {
  const Node& node = nodes_[node_id];
  if (node.axis < 0) {
    for (std::uint32_t i = node.begin; i < node.end; ++i) {
      const std::uint32_t idx = order_[i];
      const double d2 = squared_distance(points_[idx], q);
      if (d2 < best.squared_distance || (d2 == best.squared_distance && idx < best.index)) {
        best.index = idx;
        best.squared_distance = d2;
      }
    }
    return;
  }
  const double diff = q[node.axis] - node.split;
  const std::int32_t near = diff <= 0.0 ? node.left : node.right;
  const std::int32_t far = diff <= 0.0 ? node.right : node.left;
  nearest_impl(near, q, best);
  // Points on the far side are at least |diff| away along this axis. Equality
  // still has to be visited so a lower index can win the tie.
  if (diff * diff <= best.squared_distance) nearest_impl(far, q, best);
}

std::vector<std::uint32_t> KdTree::radius(const Vec3& query, double r) const {
  std::vector<std::uint32_t> out;
  if (root_ >= 0) radius_impl(root_, query, r * r, out);
  std::sort(out.begin(), out.end());
  return out;
}

void KdTree::radius_impl(std::int32_t node_id, const Vec3& q, double r2, std::vector<std::uint32_t>& out) const {
  const Node& node = nodes_[node_id];
  if (node.axis < 0) {
    for (std::uint32_t i = node.begin; i < node.end; ++i) {
      const std::uint32_t idx = order_[i];
      if (squared_distance(points_[idx], q) <= r2) out.push_back(idx);
    }
    return;
  }
  const double diff = q[node.axis] - node.split;
  const std::int32_t near = diff <= 0.0 ? node.left : node.right;
  const std::int32_t far = diff <= 0.0 ? node.right : node.left;
  radius_impl(near, q, r2, out);
  if (diff * diff <= r2) radius_impl(far, q, r2, out);
}

}  // namespace seg4d::spatial
