#include "seg4d/clicksim.hpp"

#include <algorithm>
#include <deque>
#include <numeric>

#include <fmt/format.h>

#include "seg4d/errors.hpp"
#include "seg4d/spatial.hpp"

namespace seg4d::clicksim {

void ClickPolicy::validate() const {
  const bool uses_dbscan = initial_click == ClickStrategy::kDbscan || refinement_click == ClickStrategy::kDbscan;
  if (uses_dbscan && !(dbscan.eps > 0.0)) throw ConfigError("dbscan eps must be positive");
  if (uses_dbscan && dbscan.min_pts < 1) throw ConfigError("dbscan min_pts must be at least 1");
}

RegionSelection parse_region_selection(std::string_view name) {
  if (name == "si") return RegionSelection::kScaleInvariant;
  if (name == "max_size") return RegionSelection::kMaxSize;
  throw ConfigError(fmt::format("unknown region selection '{}' (expected si or max_size)", name));
}

ClickStrategy parse_click_strategy(std::string_view name) {
  if (name == "bd") return ClickStrategy::kBd;
  if (name == "random") return ClickStrategy::kRandom;
  if (name == "centroid") return ClickStrategy::kCentroid;
  if (name == "dbscan") return ClickStrategy::kDbscan;
  throw ConfigError(fmt::format("unknown click strategy '{}' (expected bd, random, centroid or dbscan)", name));
}

std::string to_string(RegionSelection mode) { return mode == RegionSelection::kScaleInvariant ? "si" : "max_size"; }

std::string to_string(ClickStrategy strategy) {
  switch (strategy) {
    case ClickStrategy::kBd:
      return "bd";
    case ClickStrategy::kRandom:
      return "random";
    case ClickStrategy::kCentroid:
      return "centroid";
    case ClickStrategy::kDbscan:
      return "dbscan";
  }
  return "random";
}

Click make_click(const ClickSpace& space, std::uint32_t point, const ClickMeta& meta) {
  Click c;
  c.position = space.positions[point];
  c.scan_index = space.scans.empty() ? 0 : space.scans[point];
  c.object_id = meta.object_id;
  c.order = meta.order;
  c.iteration = meta.iteration;
  return c;
}

std::vector<ErrorRegion> error_regions(std::span<const ObjectId> gt, std::span<const ObjectId> pred) {
  if (gt.size() != pred.size()) {
    throw InputError(fmt::format("ground truth has {} elements, prediction {}", gt.size(), pred.size()));
  }
  std::map<std::pair<ObjectId, ObjectId>, std::vector<std::uint32_t>> buckets;
  for (std::uint32_t p = 0; p < gt.size(); ++p) {
    if (gt[p] != pred[p]) buckets[{gt[p], pred[p]}].push_back(p);
  }
  std::vector<ErrorRegion> out;
  out.reserve(buckets.size());
  for (auto& [key, members] : buckets) out.push_back(ErrorRegion{key.first, key.second, std::move(members)});
  return out;
}

double si_score(std::size_t region_size, std::size_t gt_size, double iou) {
  if (gt_size == 0) throw PreconditionError("scale-invariant score needs a non-empty ground-truth object");
  const double fraction = static_cast<double>(region_size) / static_cast<double>(gt_size);
  return fraction / std::max(iou, kIouEpsilon);
}

double si_score(const ErrorRegion& region, std::size_t gt_size, double iou) {
  return si_score(region.size(), gt_size, iou);
}

ObjectStats object_stats(std::span<const ObjectId> gt, std::span<const ObjectId> pred) {
  if (gt.size() != pred.size()) throw InputError("ground truth and prediction differ in length");
  std::map<ObjectId, std::size_t> intersection;
  std::map<ObjectId, std::size_t> predicted;
  ObjectStats stats;
  for (std::size_t p = 0; p < gt.size(); ++p) {
    if (gt[p] == kBackground) continue;
    ++stats.gt_size[gt[p]];
    ++predicted[pred[p]];
    if (gt[p] == pred[p]) ++intersection[gt[p]];
  }
  for (const auto& [id, size] : stats.gt_size) {
    const std::size_t inter = intersection.contains(id) ? intersection[id] : 0;
    const std::size_t pred_size = predicted.contains(id) ? predicted[id] : 0;
    const std::size_t uni = size + pred_size - inter;
    stats.iou[id] = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  }
  return stats;
}

std::vector<std::size_t> rank_regions(std::span<const ErrorRegion> regions, const ObjectStats& stats,
                                      RegionSelection mode, const std::set<ObjectId>* eligible) {
  std::vector<std::size_t> idx;
  std::vector<double> score(regions.size(), 0.0);
  for (std::size_t r = 0; r < regions.size(); ++r) {
    const auto& region = regions[r];
    if (region.gt_id == kBackground || region.members.empty()) continue;
    if (eligible && !eligible->contains(region.gt_id)) continue;
    if (mode == RegionSelection::kScaleInvariant) {
      const auto size_it = stats.gt_size.find(region.gt_id);
      const auto iou_it = stats.iou.find(region.gt_id);
      if (size_it == stats.gt_size.end() || iou_it == stats.iou.end()) continue;
      score[r] = si_score(region, size_it->second, iou_it->second);
    } else {
      score[r] = static_cast<double>(region.size());
    }
    idx.push_back(r);
  }
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (score[a] != score[b]) return score[a] > score[b];
    if (regions[a].gt_id != regions[b].gt_id) return regions[a].gt_id < regions[b].gt_id;
    return regions[a].pred_id < regions[b].pred_id;
  });
  return idx;
}

std::optional<ErrorRegion> select_region(std::span<const ErrorRegion> regions, std::span<const ObjectId> gt,
                                         std::span<const ObjectId> pred, RegionSelection mode) {
  if (regions.empty()) return std::nullopt;
  const auto ranked = rank_regions(regions, object_stats(gt, pred), mode);
  if (ranked.empty()) return std::nullopt;
  return regions[ranked.front()];
}

BdPick pick_bd(std::span<const std::uint32_t> members, std::span<const Vec3> positions) {
  if (members.empty()) throw PreconditionError("boundary click needs a non-empty region");
  std::vector<char> in_region(positions.size(), 0);
  for (const auto m : members) in_region[m] = 1;
  std::vector<Vec3> complement;
  complement.reserve(positions.size() - members.size());
  for (std::size_t p = 0; p < positions.size(); ++p) {
    if (!in_region[p]) complement.push_back(positions[p]);
  }
  if (complement.empty()) return {pick_centroid(members, positions), true};

  const spatial::KdTree tree(complement);
  BdPick best{members.front(), false};
  double best_d2 = -1.0;
  for (const auto m : members) {
    const double d2 = tree.nearest(positions[m]).squared_distance;
    if (d2 > best_d2 || (d2 == best_d2 && m < best.point)) {
      best_d2 = d2;
      best.point = m;
    }
  }
  return best;
}

std::uint32_t pick_centroid(std::span<const std::uint32_t> members, std::span<const Vec3> positions) {
  if (members.empty()) throw PreconditionError("centroid click needs a non-empty member set");
  Vec3 mean = Vec3::Zero();
  for (const auto m : members) mean += positions[m];
  mean /= static_cast<double>(members.size());
  std::uint32_t best = members.front();
  double best_d2 = std::numeric_limits<double>::infinity();
  for (const auto m : members) {
    const double d2 = spatial::squared_distance(positions[m], mean);
    if (d2 < best_d2 || (d2 == best_d2 && m < best)) {
      best_d2 = d2;
      best = m;
    }
  }
  return best;
}

std::uint32_t pick_random(std::span<const std::uint32_t> members, Rng& rng) {
  if (members.empty()) throw PreconditionError("random click needs a non-empty member set");
  return members[draw_index(rng, members.size())];
}

std::vector<int> dbscan(std::span<const Vec3> points, double eps, int min_pts) {
  constexpr int kUndefined = -2;
  constexpr int kNoise = -1;
  const spatial::KdTree tree(points);
  std::vector<int> label(points.size(), kUndefined);
  int cluster = 0;
  for (std::uint32_t p = 0; p < points.size(); ++p) {
    if (label[p] != kUndefined) continue;
    const auto neighbors = tree.radius(points[p], eps);
    if (static_cast<int>(neighbors.size()) < min_pts) {
      label[p] = kNoise;
      continue;
    }
    // The seed's whole neighbourhood joins, border points of earlier
    // clusters included (as in the original formulation).
    std::deque<std::uint32_t> frontier;
    for (const auto q : neighbors) {
      label[q] = cluster;
      if (q != p) frontier.push_back(q);
    }
    while (!frontier.empty()) {
      const std::uint32_t q = frontier.front();
      frontier.pop_front();
      const auto q_neighbors = tree.radius(points[q], eps);
      if (static_cast<int>(q_neighbors.size()) < min_pts) continue;
      for (const auto r : q_neighbors) {
        if (label[r] == kUndefined) frontier.push_back(r);
        if (label[r] == kUndefined || label[r] == kNoise) label[r] = cluster;
      }
    }
    ++cluster;
  }
  return label;
}

std::uint32_t pick_dbscan(std::span<const std::uint32_t> members, std::span<const Vec3> positions,
                          const DbscanParams& params) {
  if (members.empty()) throw PreconditionError("dbscan click needs a non-empty region");
  std::vector<Vec3> local(members.size());
  for (std::size_t i = 0; i < members.size(); ++i) local[i] = positions[members[i]];
  const auto labels = dbscan(local, params.eps, params.min_pts);

  const int clusters = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  if (clusters <= 0) return pick_centroid(members, positions);

  std::vector<std::vector<std::uint32_t>> groups(static_cast<std::size_t>(clusters));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 0) groups[static_cast<std::size_t>(labels[i])].push_back(members[i]);
  }
  std::size_t best = 0;
  auto min_index = [](const std::vector<std::uint32_t>& g) { return *std::min_element(g.begin(), g.end()); };
  for (std::size_t c = 1; c < groups.size(); ++c) {
    if (groups[c].size() > groups[best].size() ||
        (groups[c].size() == groups[best].size() && min_index(groups[c]) < min_index(groups[best]))) {
      best = c;
    }
  }
  std::sort(groups[best].begin(), groups[best].end());
  return pick_centroid(groups[best], positions);
}

std::uint32_t pick(ClickStrategy strategy, std::span<const std::uint32_t> members, std::span<const Vec3> positions,
                   Rng& rng, const DbscanParams& params) {
  switch (strategy) {
    case ClickStrategy::kBd:
      return pick_bd(members, positions).point;
    case ClickStrategy::kRandom:
      return pick_random(members, rng);
    case ClickStrategy::kCentroid:
      return pick_centroid(members, positions);
    case ClickStrategy::kDbscan:
      return pick_dbscan(members, positions, params);
  }
  return pick_random(members, rng);
}

Click click_bd(const ErrorRegion& region, const ClickSpace& space, const ClickMeta& meta, bool* fallback) {
  const BdPick result = pick_bd(region.members, space.positions);
  if (fallback) *fallback = result.fallback;
  return make_click(space, result.point, meta);
}

Click click_centroid(std::span<const std::uint32_t> members, const ClickSpace& space, const ClickMeta& meta) {
  return make_click(space, pick_centroid(members, space.positions), meta);
}

Click click_random(std::span<const std::uint32_t> members, const ClickSpace& space, Rng& rng, const ClickMeta& meta) {
  return make_click(space, pick_random(members, rng), meta);
}

Click click_dbscan(const ErrorRegion& region, const ClickSpace& space, const DbscanParams& params,
                   const ClickMeta& meta) {
  return make_click(space, pick_dbscan(region.members, space.positions, params), meta);
}

std::optional<Click> next_click(std::span<const ObjectId> gt, std::span<const ObjectId> pred,
                                const ClickSpace& space, const ClickPolicy& policy, Rng& rng,
                                SimulationState& state) {
  for (auto it = state.pending_initial.begin(); it != state.pending_initial.end();) {
    const ObjectId id = *it;
    if (!state.eligible.contains(id)) {
      ++it;
      continue;
    }
    it = state.pending_initial.erase(it);
    std::vector<std::uint32_t> members;
    for (std::uint32_t p = 0; p < gt.size(); ++p) {
      if (gt[p] == id) members.push_back(p);
    }
    if (members.empty()) continue;
    const std::uint32_t point = pick(policy.initial_click, members, space.positions, rng, policy.dbscan);
    const int order = state.next_order++;
    return make_click(space, point, ClickMeta{id, order, order});
  }

  const auto regions = error_regions(gt, pred);
  const auto ranked = rank_regions(regions, object_stats(gt, pred), policy.region_selection, &state.eligible);
  if (ranked.empty()) return std::nullopt;
  const ErrorRegion& region = regions[ranked.front()];
  const std::uint32_t point = pick(policy.refinement_click, region.members, space.positions, rng, policy.dbscan);
  const int order = state.next_order++;
  return make_click(space, point, ClickMeta{region.gt_id, order, order});
}

std::vector<Click> training_sample(std::span<const ObjectId> gt, std::span<const ObjectId> pred,
                                   const ClickSpace& space, const ClickPolicy& policy, int iteration,
                                   int max_regions, Rng& rng, int first_order) {
  if (max_regions < 1) throw PreconditionError("training sampler needs max_regions >= 1");
  std::vector<Click> clicks;
  int order = first_order;
  if (iteration == 0) {
    std::map<ObjectId, std::vector<std::uint32_t>> objects;
    for (std::uint32_t p = 0; p < gt.size(); ++p) {
      if (gt[p] != kBackground) objects[gt[p]].push_back(p);
    }
    for (const auto& [id, members] : objects) {
      clicks.push_back(click_centroid(members, space, ClickMeta{id, order++, 0}));
    }
    return clicks;
  }
  const auto regions = error_regions(gt, pred);
  const auto ranked = rank_regions(regions, object_stats(gt, pred), policy.region_selection);
  const std::size_t take = std::min(ranked.size(), static_cast<std::size_t>(max_regions));
  for (std::size_t r = 0; r < take; ++r) {
    const ErrorRegion& region = regions[ranked[r]];
    const std::uint32_t point = pick(policy.refinement_click, region.members, space.positions, rng, policy.dbscan);
    clicks.push_back(make_click(space, point, ClickMeta{region.gt_id, order++, iteration}));
  }
  return clicks;
}

}  // namespace seg4d::clicksim
