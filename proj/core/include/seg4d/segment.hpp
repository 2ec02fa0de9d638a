#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "seg4d/clicksim.hpp"
#include "seg4d/spacetime.hpp"
#include "seg4d/types.hpp"

namespace seg4d::segment {

using clicksim::Click;

/// Per-click, per-voxel responses. Row c belongs to click_objects[c].
struct ResponseMap {
  Eigen::MatrixXd responses;  // K x N
  std::vector<ObjectId> click_objects;

  Eigen::Index clicks() const { return responses.rows(); }
  Eigen::Index voxels() const { return responses.cols(); }
};

/// Per-object scores. Rows follow id_list, which is ascending.
struct Heatmap {
  Eigen::MatrixXd scores;  // ID x N
  std::vector<ObjectId> id_list;
};

enum class Domain { kVoxel, kPoint };

struct Segmentation {
  std::vector<ObjectId> assignment;
  Domain domain = Domain::kVoxel;

  std::size_t size() const { return assignment.size(); }
  friend bool operator==(const Segmentation&, const Segmentation&) = default;
};

/// Per-voxel maximum over the responses of clicks sharing an object id.
Heatmap fuse_clicks(const ResponseMap& r);

/// Per-voxel argmax over ids; ties resolve to the lowest id. A voxel whose
/// scores are all -inf (out of every click's reach) is left as background.
Segmentation predict_mask(const Heatmap& h);

struct BaselineOptions {
  double cutoff = 0.0;  // meters; responses beyond it become -inf. <= 0 disables.
};

/// R[c][v] = -|center(v) - position(c)|.
ResponseMap baseline_respond(const spacetime::VoxelGrid& grid, std::span<const Click> clicks,
                             const BaselineOptions& options = {});

/// Fuse, argmax and fill unreached voxels. Without `previous` an unreached
/// voxel takes the id of its nearest click; with it, the voxel keeps its
/// previous id (session mode).
Segmentation resolve(const spacetime::VoxelGrid& grid, std::span<const Click> clicks, const ResponseMap& r,
                     const Segmentation* previous = nullptr);

Segmentation baseline_segment(const spacetime::VoxelGrid& grid, std::span<const Click> clicks,
                              const BaselineOptions& options = {}, const Segmentation* previous = nullptr);

/// Every ground-truth object with at least one click gets its ground-truth
/// mask; everything else is background.
Segmentation oracle_segment(std::span<const ObjectId> gt, std::span<const Click> clicks);

Segmentation null_segment(std::size_t size, Domain domain = Domain::kVoxel);

/// Broadcast a voxel segmentation to the points of the grid (point
/// segmentations pass through).
Segmentation to_points(const Segmentation& seg, const spacetime::VoxelGrid& grid);

// ---------------------------------------------------------------------------
// Segmenter contract

struct SegmentContext {
  const spacetime::VoxelGrid* grid = nullptr;
  std::span<const ObjectId> gt;  // per point; may be empty
  int window_start = 0;
  int window_length = 1;
};

class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual std::string name() const = 0;

  /// `previous` is set only in session mode.
  virtual Segmentation segment(const SegmentContext& ctx, std::span<const Click> clicks,
                               const Segmentation* previous = nullptr) = 0;
};

/// Same result as baseline_segment. One-shot requests that extend the
/// previous request's clicks on the same grid are folded in incrementally.
class BaselineSegmenter : public Segmenter {
 public:
  explicit BaselineSegmenter(BaselineOptions options = {}) : options_(options) {}
  std::string name() const override { return "baseline"; }
  Segmentation segment(const SegmentContext& ctx, std::span<const Click> clicks,
                       const Segmentation* previous = nullptr) override;

 private:
  struct Cache {
    const spacetime::VoxelGrid* grid = nullptr;
    std::size_t cells = 0;
    double voxel_size = 0.0;
    std::vector<Click> clicks;
    std::vector<double> score;       // best fused response per voxel
    std::vector<ObjectId> best;      // its id
    std::vector<double> nearest_d2;  // fallback for voxels out of reach
    std::vector<ObjectId> nearest;
  };

  bool cache_matches(const spacetime::VoxelGrid& grid, std::span<const Click> clicks) const;

  BaselineOptions options_;
  Cache cache_;
};

class OracleSegmenter : public Segmenter {
 public:
  std::string name() const override { return "oracle"; }
  Segmentation segment(const SegmentContext& ctx, std::span<const Click> clicks,
                       const Segmentation* previous = nullptr) override;
};

class NullSegmenter : public Segmenter {
 public:
  std::string name() const override { return "null"; }
  Segmentation segment(const SegmentContext& ctx, std::span<const Click> clicks,
                       const Segmentation* previous = nullptr) override;
};

}  // namespace seg4d::segment
