#pragma once
// Brute-force reference implementations used by the unit and acceptance tests.
// They follow the textbook definitions directly and share no code with the
// library beyond the plain data types.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "seg4d/types.hpp"

namespace seg4d::oracle {

inline double dist2(const Vec3& a, const Vec3& b) {
  const double dx = a.x() - b.x();
  const double dy = a.y() - b.y();
  const double dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

/// argmax over members of min over non-members of the squared distance.
inline std::uint32_t boundary_click(std::span<const std::uint32_t> members, std::span<const Vec3> positions) {
  std::set<std::uint32_t> in(members.begin(), members.end());
  std::uint32_t best = 0;
  double best_d = -1.0;
  for (const auto m : members) {
    double d = std::numeric_limits<double>::infinity();
    for (std::uint32_t q = 0; q < positions.size(); ++q) {
      if (!in.contains(q)) d = std::min(d, dist2(positions[m], positions[q]));
    }
    if (d > best_d || (d == best_d && m < best)) {
      best_d = d;
      best = m;
    }
  }
  return best;
}

/// Member closest to the member mean, lowest index on ties.
inline std::uint32_t centroid_click(std::span<const std::uint32_t> members, std::span<const Vec3> positions) {
  Vec3 mean = Vec3::Zero();
  for (const auto m : members) mean += positions[m];
  mean /= static_cast<double>(members.size());
  std::uint32_t best = members.front();
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto m : members) {
    const double d = dist2(positions[m], mean);
    if (d < best_d || (d == best_d && m < best)) {
      best_d = d;
      best = m;
    }
  }
  return best;
}

/// Index of the nearest point, lowest index on ties.
inline std::size_t nearest(std::span<const Vec3> points, const Vec3& q) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double d = dist2(points[i], q);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

/// DBSCAN as originally stated: points are visited in index order, a point
/// with at least min_pts points (itself included) within eps seeds a cluster
/// that grows through density-reachable points. -1 marks noise.
inline std::vector<int> dbscan(std::span<const Vec3> pts, double eps, int min_pts) {
  const std::size_t n = pts.size();
  auto region = [&](std::size_t p) {
    std::vector<std::size_t> out;
    for (std::size_t q = 0; q < n; ++q) {
      if (dist2(pts[p], pts[q]) <= eps * eps) out.push_back(q);
    }
    return out;
  };
  constexpr int kUnclassified = -2;
  std::vector<int> label(n, kUnclassified);
  int cluster = 0;
  for (std::size_t p = 0; p < n; ++p) {
    if (label[p] != kUnclassified) continue;
    auto seeds = region(p);
    if (static_cast<int>(seeds.size()) < min_pts) {
      label[p] = -1;
      continue;
    }
    for (const auto s : seeds) label[s] = cluster;
    std::vector<std::size_t> queue;
    for (const auto s : seeds) {
      if (s != p) queue.push_back(s);
    }
    for (std::size_t i = 0; i < queue.size(); ++i) {
      const auto result = region(queue[i]);
      if (static_cast<int>(result.size()) < min_pts) continue;
      for (const auto r : result) {
        if (label[r] == kUnclassified || label[r] == -1) {
          if (label[r] == kUnclassified) queue.push_back(r);
          label[r] = cluster;
        }
      }
    }
    ++cluster;
  }
  return label;
}

/// True when two labelings agree up to a renaming of clusters (noise fixed).
inline bool same_partition(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) return false;
  std::map<int, int> ab, ba;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if ((a[i] < 0) != (b[i] < 0)) return false;
    if (a[i] < 0) continue;
    auto [it1, new1] = ab.emplace(a[i], b[i]);
    auto [it2, new2] = ba.emplace(b[i], a[i]);
    if (it1->second != b[i] || it2->second != a[i]) return false;
  }
  return true;
}

/// Maximum-cardinality one-to-one matching among pairs scoring above
/// `threshold` (ties: larger score sum), by exhaustive search.
inline std::vector<std::pair<ObjectId, ObjectId>> exhaustive_matching(
    const std::vector<ObjectId>& left, const std::vector<ObjectId>& right,
    const std::function<double(ObjectId, ObjectId)>& score, double threshold) {
  std::vector<std::pair<ObjectId, ObjectId>> best, current;
  double best_sum = -1.0;
  std::vector<bool> used(right.size(), false);
  std::function<void(std::size_t, double)> rec = [&](std::size_t i, double sum) {
    if (i == left.size()) {
      if (current.size() > best.size() || (current.size() == best.size() && sum > best_sum)) {
        best = current;
        best_sum = sum;
      }
      return;
    }
    rec(i + 1, sum);
    for (std::size_t j = 0; j < right.size(); ++j) {
      if (used[j]) continue;
      const double s = score(left[i], right[j]);
      if (!(s > threshold)) continue;
      used[j] = true;
      current.emplace_back(left[i], right[j]);
      rec(i + 1, sum + s);
      current.pop_back();
      used[j] = false;
    }
  };
  rec(0, 0.0);
  std::sort(best.begin(), best.end());
  return best;
}

struct Panoptic {
  double pq = 0.0, sq = 0.0, rq = 0.0;
};

/// Panoptic quality from explicit point sets. Points of ignored or unknown
/// ground-truth classes are void; void points are dropped from predicted
/// segments, and unmatched predictions that are mostly void are not false
/// positives. Stuff segments are whole classes. Matching is exhaustive.
inline Panoptic panoptic(const std::vector<PointLabel>& pred, const std::vector<PointLabel>& gt,
                         const ClassMap& classes) {
  auto is_void = [&](std::uint16_t c) {
    const auto it = classes.find(c);
    return it == classes.end() || it->second.ignored;
  };
  auto seg_of = [&](const PointLabel& l) {
    const bool thing = classes.contains(l.semantic) && classes.at(l.semantic).thing;
    return std::pair<std::uint16_t, std::uint16_t>{l.semantic, thing ? l.instance : 0};
  };
  using Seg = std::pair<std::uint16_t, std::uint16_t>;
  std::map<Seg, std::set<std::size_t>> gsegs, psegs_all;
  std::set<std::size_t> void_points;
  for (std::size_t p = 0; p < gt.size(); ++p) {
    if (is_void(gt[p].semantic)) {
      void_points.insert(p);
    } else {
      gsegs[seg_of(gt[p])].insert(p);
    }
    if (!is_void(pred[p].semantic)) psegs_all[seg_of(pred[p])].insert(p);
  }
  std::set<std::uint16_t> class_ids;
  for (const auto& [s, pts] : gsegs) class_ids.insert(s.first);
  for (const auto& [s, pts] : psegs_all) class_ids.insert(s.first);

  double pq = 0.0, sq = 0.0, rq = 0.0;
  int n = 0;
  for (const auto c : class_ids) {
    std::vector<Seg> gs, ps;
    for (const auto& [s, pts] : gsegs) {
      if (s.first == c) gs.push_back(s);
    }
    for (const auto& [s, pts] : psegs_all) {
      if (s.first == c) ps.push_back(s);
    }
    auto iou = [&](const Seg& a, const Seg& b) {
      std::set<std::size_t> pa;
      for (const auto p : psegs_all.at(a)) {
        if (!void_points.contains(p)) pa.insert(p);
      }
      const auto& gb = gsegs.at(b);
      std::size_t inter = 0;
      for (const auto p : pa) inter += gb.contains(p);
      const std::size_t uni = pa.size() + gb.size() - inter;
      return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
    };
    // Exhaustive best matching over IoU > 0.5.
    std::vector<ObjectId> li(ps.size()), ri(gs.size());
    for (std::size_t i = 0; i < ps.size(); ++i) li[i] = static_cast<ObjectId>(i);
    for (std::size_t i = 0; i < gs.size(); ++i) ri[i] = static_cast<ObjectId>(i);
    const auto match =
        exhaustive_matching(li, ri, [&](ObjectId a, ObjectId b) { return iou(ps[a], gs[b]); }, 0.5);
    double sum = 0.0;
    std::set<std::size_t> matched_p;
    for (const auto& [a, b] : match) {
      sum += iou(ps[a], gs[b]);
      matched_p.insert(a);
    }
    const int tp = static_cast<int>(match.size());
    const int fn = static_cast<int>(gs.size()) - tp;
    int fp = 0;
    for (std::size_t a = 0; a < ps.size(); ++a) {
      if (matched_p.contains(a)) continue;
      std::size_t v = 0;
      for (const auto p : psegs_all.at(ps[a])) v += void_points.contains(p);
      if (static_cast<double>(v) / static_cast<double>(psegs_all.at(ps[a]).size()) > 0.5) continue;
      ++fp;
    }
    const double denom = tp + 0.5 * fp + 0.5 * fn;
    if (denom == 0.0) continue;
    pq += sum / denom;
    sq += tp > 0 ? sum / tp : 0.0;
    rq += tp / denom;
    ++n;
  }
  if (n == 0) return {};
  return {pq / n, sq / n, rq / n};
}

}  // namespace seg4d::oracle
