#include "seg4d/spacetime.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include <fmt/format.h>

#include "seg4d/errors.hpp"

namespace seg4d::spacetime {

namespace {

struct KeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k[0]) * 0x9E3779B185EBCA87ull;
    h ^= static_cast<std::uint64_t>(k[1]) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k[2]) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

}  // namespace

SpacetimeCloud::Origin SpacetimeCloud::origin(std::uint32_t point) const {
  const auto it = std::upper_bound(scan_offsets.begin(), scan_offsets.end(), point);
  const auto k = static_cast<int>(it - scan_offsets.begin()) - 1;
  return {window_start + k, point - scan_offsets[static_cast<std::size_t>(k)]};
}

std::uint32_t SpacetimeCloud::index_of(int scan_index, std::uint32_t local_index) const {
  const auto [first, last] = scan_range(scan_index);
  if (local_index >= last - first) throw InputError("local point index outside its scan");
  return first + local_index;
}

std::pair<std::uint32_t, std::uint32_t> SpacetimeCloud::scan_range(int scan_index) const {
  const int k = scan_index - window_start;
  if (k < 0 || k >= window_length) throw InputError(fmt::format("scan {} is not part of this window", scan_index));
  return {scan_offsets[static_cast<std::size_t>(k)], scan_offsets[static_cast<std::size_t>(k) + 1]};
}

std::vector<Vec3> SpacetimeCloud::positions() const {
  std::vector<Vec3> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) out[i] = points[i].position;
  return out;
}

std::vector<Vec3> VoxelGrid::centers() const {
  std::vector<Vec3> out(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) out[i] = cells[i].center;
  return out;
}

VoxelKey voxel_key(const Vec3& p, double voxel_size) {
  return {static_cast<std::int64_t>(std::floor(p.x() / voxel_size)),
          static_cast<std::int64_t>(std::floor(p.y() / voxel_size)),
          static_cast<std::int64_t>(std::floor(p.z() / voxel_size))};
}

std::vector<Point> to_global(const Scan& scan) {
  if (!scan.pose.is_valid()) throw PreconditionError(fmt::format("scan {} has a non-rigid pose", scan.scan_index));
  std::vector<Point> out(scan.points);
  for (auto& p : out) p.position = scan.pose.apply(p.position);
  return out;
}

SpacetimeCloud superimpose(std::span<const Scan> scans) {
  if (scans.empty()) throw InputError("superimpose needs at least one scan");
  for (std::size_t i = 1; i < scans.size(); ++i) {
    if (scans[i].scan_index != scans[i - 1].scan_index + 1) {
      throw InputError(fmt::format("scan indices {} and {} are not consecutive", scans[i - 1].scan_index,
                                   scans[i].scan_index));
    }
  }

  SpacetimeCloud cloud;
  cloud.window_start = scans.front().scan_index;
  cloud.window_length = static_cast<int>(scans.size());
  cloud.anchor = scans.front().pose;
  const Mat3 anchor_rt = cloud.anchor.rotation.transpose();

  std::size_t total = 0;
  for (const auto& scan : scans) total += scan.points.size();
  cloud.points.reserve(total);
  cloud.scan_offsets.reserve(scans.size() + 1);

  for (const auto& scan : scans) {
    if (!scan.pose.is_valid()) throw PreconditionError(fmt::format("scan {} has a non-rigid pose", scan.scan_index));
    // Relative pose anchor^-1 * pose, with the translation difference taken
    // first so a common offset on all poses cancels exactly.
    const Mat3 rotation = anchor_rt * scan.pose.rotation;
    const Vec3 translation = anchor_rt * (scan.pose.translation - cloud.anchor.translation);
    cloud.scan_offsets.push_back(static_cast<std::uint32_t>(cloud.points.size()));
    for (const auto& p : scan.points) {
      Point q = p;
      q.position = rotation * p.position + translation;
      q.scan_index = scan.scan_index;
      cloud.points.push_back(q);
    }
  }
  cloud.scan_offsets.push_back(static_cast<std::uint32_t>(cloud.points.size()));
  return cloud;
}

VoxelGrid voxelize(const SpacetimeCloud& cloud, double voxel_size) { return voxelize(cloud.points, voxel_size); }

VoxelGrid voxelize(std::span<const Point> points, double voxel_size) {
  if (!(voxel_size > 0.0) || !std::isfinite(voxel_size)) throw ConfigError("voxel size must be positive");

  VoxelGrid grid;
  grid.voxel_size = voxel_size;
  std::unordered_map<VoxelKey, std::uint32_t, KeyHash> lookup;
  lookup.reserve(points.size());
  std::vector<std::uint32_t> provisional(points.size());
  for (std::uint32_t i = 0; i < points.size(); ++i) {
    const VoxelKey key = voxel_key(points[i].position, voxel_size);
    auto [it, inserted] = lookup.try_emplace(key, static_cast<std::uint32_t>(grid.cells.size()));
    if (inserted) grid.cells.push_back(VoxelCell{key, {}, {}, Vec3::Zero()});
    grid.cells[it->second].members.push_back(i);
    provisional[i] = it->second;
  }

  std::vector<std::uint32_t> order(grid.cells.size());
  for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return grid.cells[a].key < grid.cells[b].key; });
  std::vector<std::uint32_t> rank(order.size());
  std::vector<VoxelCell> sorted;
  sorted.reserve(order.size());
  for (std::uint32_t r = 0; r < order.size(); ++r) {
    rank[order[r]] = r;
    sorted.push_back(std::move(grid.cells[order[r]]));
  }
  grid.cells = std::move(sorted);

  grid.point_to_cell.resize(points.size());
  for (std::uint32_t i = 0; i < points.size(); ++i) grid.point_to_cell[i] = rank[provisional[i]];

  for (auto& cell : grid.cells) {
    Vec3 sum = Vec3::Zero();
    Vec3 lo = points[cell.members.front()].position;
    Vec3 hi = lo;
    for (const auto m : cell.members) {
      const Vec3& p = points[m].position;
      sum += p;
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
      cell.scans.push_back(points[m].scan_index);
    }
    // The mean can round just past the members' extent; clamping keeps the
    // representative inside its own cell.
    cell.center = (sum / static_cast<double>(cell.members.size())).cwiseMax(lo).cwiseMin(hi);
    std::sort(cell.scans.begin(), cell.scans.end());
    cell.scans.erase(std::unique(cell.scans.begin(), cell.scans.end()), cell.scans.end());
  }
  return grid;
}

std::vector<Window> windows(int scan_count, int tau) {
  if (tau < 1) throw ConfigError("window length must be at least 1");
  std::vector<Window> out;
  if (tau == 1) {
    if (scan_count < 1) throw InputError("sequence has no scans");
    for (int s = 0; s < scan_count; ++s) out.push_back(Window{s, 1, -1});
    return out;
  }
  if (scan_count < 2) throw InputError("overlapping windows need a sequence of at least 2 scans");
  if (scan_count < tau) throw InputError(fmt::format("sequence of {} scans is shorter than tau = {}", scan_count, tau));
  for (int start = 0; start + 1 < scan_count; start += tau - 1) {
    const int length = std::min(tau, scan_count - start);
    out.push_back(Window{start, length, -1});
  }
  for (std::size_t i = 0; i + 1 < out.size(); ++i) out[i].overlap_scan = out[i].last();
  return out;
}

std::vector<Window> windows(const Sequence& sequence, int tau) {
  for (std::size_t i = 1; i < sequence.scans.size(); ++i) {
    if (sequence.scans[i].scan_index != sequence.scans[i - 1].scan_index + 1) {
      throw InputError("sequence scan indices are not consecutive");
    }
  }
  auto out = windows(static_cast<int>(sequence.scans.size()), tau);
  if (!sequence.scans.empty()) {
    const int base = sequence.scans.front().scan_index;
    for (auto& w : out) {
      w.start += base;
      if (w.overlap_scan >= 0) w.overlap_scan += base;
    }
  }
  return out;
}

}  // namespace seg4d::spacetime
