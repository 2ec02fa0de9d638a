#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seg4d/rng.hpp"
#include "seg4d/types.hpp"

namespace seg4d::clicksim {

/// A user interaction. `position` is in the window frame.
struct Click {
  Vec3 position = Vec3::Zero();
  int scan_index = 0;
  ObjectId object_id = 1;
  int order = 1;  // global ordinal, strictly increasing within a session
  int iteration = 1;

  friend bool operator==(const Click&, const Click&) = default;
};

/// Points whose ground truth is `gt_id` but are currently predicted `pred_id`.
struct ErrorRegion {
  ObjectId gt_id = 0;
  ObjectId pred_id = 0;
  std::vector<std::uint32_t> members;  // ascending point indices

  std::size_t size() const { return members.size(); }
};

enum class RegionSelection { kMaxSize, kScaleInvariant };
enum class ClickStrategy { kBd, kRandom, kCentroid, kDbscan };

struct DbscanParams {
  double eps = 0.5;  // meters
  int min_pts = 5;
};

struct ClickPolicy {
  RegionSelection region_selection = RegionSelection::kScaleInvariant;
  ClickStrategy initial_click = ClickStrategy::kCentroid;
  ClickStrategy refinement_click = ClickStrategy::kRandom;
  DbscanParams dbscan;

  void validate() const;
};

/// Names used in configuration files: "si", "max_size", "bd", "random",
/// "centroid", "dbscan".
RegionSelection parse_region_selection(std::string_view name);
ClickStrategy parse_click_strategy(std::string_view name);
std::string to_string(RegionSelection mode);
std::string to_string(ClickStrategy strategy);

/// Where clicks are computed and placed: per-point positions (raw points or
/// the representative of each point's voxel) and the scan of each point.
struct ClickSpace {
  std::span<const Vec3> positions;
  std::span<const int> scans;

  std::size_t size() const { return positions.size(); }
};

struct ClickMeta {
  ObjectId object_id = 1;
  int order = 1;
  int iteration = 1;
};

Click make_click(const ClickSpace& space, std::uint32_t point, const ClickMeta& meta);

// ---------------------------------------------------------------------------
// Error regions and region ranking

/// One region per ordered (gt, pred) pair with gt != pred, sorted by
/// (gt_id, pred_id). Throws InputError on length mismatch.
std::vector<ErrorRegion> error_regions(std::span<const ObjectId> gt, std::span<const ObjectId> pred);

inline constexpr double kIouEpsilon = 1e-9;

/// Scale-invariant urgency (|E| / |GT_i|) / IoU_i, with IoU clamped to 1e-9.
double si_score(std::size_t region_size, std::size_t gt_size, double iou);
double si_score(const ErrorRegion& region, std::size_t gt_size, double iou);

/// Per-object ground-truth size and IoU. Points labeled 0 in the ground truth
/// are ignored: they never count towards any object's union.
struct ObjectStats {
  std::map<ObjectId, std::size_t> gt_size;
  std::map<ObjectId, double> iou;
};
ObjectStats object_stats(std::span<const ObjectId> gt, std::span<const ObjectId> pred);

/// Region indices best-first under `mode`. Regions of ground-truth id 0 and
/// regions whose gt id is not in `eligible` (when given) are left out.
std::vector<std::size_t> rank_regions(std::span<const ErrorRegion> regions, const ObjectStats& stats,
                                      RegionSelection mode, const std::set<ObjectId>* eligible = nullptr);

/// Best region, or nullopt once nothing is left to fix.
std::optional<ErrorRegion> select_region(std::span<const ErrorRegion> regions, std::span<const ObjectId> gt,
                                         std::span<const ObjectId> pred, RegionSelection mode);

// ---------------------------------------------------------------------------
// Intra-region click placement. Members are point indices into the space.

struct BdPick {
  std::uint32_t point = 0;
  bool fallback = false;  // complement was empty; centroid used instead
};

/// The member maximizing the squared distance to the nearest non-member.
BdPick pick_bd(std::span<const std::uint32_t> members, std::span<const Vec3> positions);
std::uint32_t pick_centroid(std::span<const std::uint32_t> members, std::span<const Vec3> positions);
std::uint32_t pick_random(std::span<const std::uint32_t> members, Rng& rng);
std::uint32_t pick_dbscan(std::span<const std::uint32_t> members, std::span<const Vec3> positions,
                          const DbscanParams& params);

/// Density clustering over `points`. Labels are -1 for noise, else cluster ids
/// numbered in discovery order (points visited in index order). A border
/// point within eps of a later cluster's seed moves to that cluster.
std::vector<int> dbscan(std::span<const Vec3> points, double eps, int min_pts);

Click click_bd(const ErrorRegion& region, const ClickSpace& space, const ClickMeta& meta, bool* fallback = nullptr);
Click click_centroid(std::span<const std::uint32_t> members, const ClickSpace& space, const ClickMeta& meta);
Click click_random(std::span<const std::uint32_t> members, const ClickSpace& space, Rng& rng, const ClickMeta& meta);
Click click_dbscan(const ErrorRegion& region, const ClickSpace& space, const DbscanParams& params,
                   const ClickMeta& meta);

std::uint32_t pick(ClickStrategy strategy, std::span<const std::uint32_t> members, std::span<const Vec3> positions,
                   Rng& rng, const DbscanParams& params);

// ---------------------------------------------------------------------------
// Simulated user

/// Bookkeeping for one simulated session.
struct SimulationState {
  std::vector<ObjectId> pending_initial;  // objects still owed an initial click
  std::set<ObjectId> eligible;            // objects allowed to receive clicks
  int next_order = 1;
};

/// Next simulated click: an initial click for the lowest pending eligible
/// object (placed on its ground-truth mask with policy.initial_click), then
/// refinement clicks in the best-ranked eligible error region. Returns nullopt
/// once no eligible error region remains.
std::optional<Click> next_click(std::span<const ObjectId> gt, std::span<const ObjectId> pred,
                                const ClickSpace& space, const ClickPolicy& policy, Rng& rng,
                                SimulationState& state);

/// Iterative-training sampler. Iteration 0 places one centroid click on every
/// ground-truth object; later iterations place one refinement click in each of
/// the top `max_regions` ranked error regions. Orders start at `first_order`
/// and follow region rank.
std::vector<Click> training_sample(std::span<const ObjectId> gt, std::span<const ObjectId> pred,
                                   const ClickSpace& space, const ClickPolicy& policy, int iteration,
                                   int max_regions, Rng& rng, int first_order = 1);

}  // namespace seg4d::clicksim
