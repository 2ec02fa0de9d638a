#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "seg4d/types.hpp"

namespace seg4d::spacetime {

/// Several consecutive scans expressed in one frame and concatenated.
///
/// The frame is anchored at the first scan of the window: every scan is mapped
/// through the relative pose anchor^-1 * pose_i. Translating all poses by the
/// same offset therefore leaves the cloud unchanged, while coordinate
/// magnitudes stay small regardless of how far the ego vehicle has travelled.
struct SpacetimeCloud {
  std::vector<Point> points;  // window frame; scan_index preserved
  int window_start = 0;
  int window_length = 0;
  Pose anchor;  // pose of the first scan; window frame -> sequence world frame

  /// scan_offsets[k] is the index of the first point of scan window_start + k;
  /// the final entry equals points.size().
  std::vector<std::uint32_t> scan_offsets;

  std::size_t size() const { return points.size(); }

  struct Origin {
    int scan_index;
    std::uint32_t local_index;
  };
  Origin origin(std::uint32_t point) const;
  std::uint32_t index_of(int scan_index, std::uint32_t local_index) const;

  /// Half-open point range [first, last) for one scan of the window.
  std::pair<std::uint32_t, std::uint32_t> scan_range(int scan_index) const;

  std::vector<Vec3> positions() const;
};

using VoxelKey = std::array<std::int64_t, 3>;

struct VoxelCell {
  VoxelKey key{};
  std::vector<std::uint32_t> members;  // ascending point indices
  std::vector<int> scans;              // ascending, unique
  Vec3 center = Vec3::Zero();          // arithmetic mean of member positions
};

/// Sparse voxelization of a cloud. Cells are sorted by key (lexicographic),
/// which fixes the voxel order used by every downstream tie-break.
struct VoxelGrid {
  double voxel_size = 0.1;
  std::vector<VoxelCell> cells;
  std::vector<std::uint32_t> point_to_cell;

  std::size_t voxel_count() const { return cells.size(); }
  std::vector<Vec3> centers() const;
};

/// One temporal window [start, start + length). Consecutive windows share
/// exactly one scan; overlap_scan is that scan index, or -1 for the last window
/// (and for single-scan windows).
struct Window {
  int start = 0;
  int length = 0;
  int overlap_scan = -1;

  int end() const { return start + length; }  // exclusive
  int last() const { return start + length - 1; }
  bool contains(int scan) const { return scan >= start && scan < end(); }

  friend bool operator==(const Window&, const Window&) = default;
};

VoxelKey voxel_key(const Vec3& p, double voxel_size);

/// R p + t for every point of the scan.
std::vector<Point> to_global(const Scan& scan);

/// Superimposes consecutive scans into one cloud anchored at the first scan.
SpacetimeCloud superimpose(std::span<const Scan> scans);

VoxelGrid voxelize(const SpacetimeCloud& cloud, double voxel_size);
VoxelGrid voxelize(std::span<const Point> points, double voxel_size);

/// Windows of length tau starting at multiples of tau - 1; the tail window is
/// kept even when shorter than tau. tau = 1 yields disjoint single-scan windows.
std::vector<Window> windows(int scan_count, int tau);
std::vector<Window> windows(const Sequence& sequence, int tau);

}  // namespace seg4d::spacetime
