#include "seg4d/segment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <fmt/format.h>

#include "seg4d/errors.hpp"
#include "seg4d/spatial.hpp"

namespace seg4d::segment {

namespace {

constexpr double kUnreached = -std::numeric_limits<double>::infinity();

}  // namespace

Heatmap fuse_clicks(const ResponseMap& r) {
  if (r.clicks() == 0) throw PreconditionError("click fusion needs at least one click");
  if (static_cast<std::size_t>(r.clicks()) != r.click_objects.size()) {
    throw InputError("response rows and click objects differ in count");
  }
  Heatmap h;
  h.id_list = r.click_objects;
  std::sort(h.id_list.begin(), h.id_list.end());
  h.id_list.erase(std::unique(h.id_list.begin(), h.id_list.end()), h.id_list.end());
  h.scores = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(h.id_list.size()), r.voxels(), kUnreached);
  for (Eigen::Index c = 0; c < r.clicks(); ++c) {
    const auto row = std::lower_bound(h.id_list.begin(), h.id_list.end(), r.click_objects[c]) - h.id_list.begin();
    for (Eigen::Index v = 0; v < r.voxels(); ++v) {
      h.scores(row, v) = std::max(h.scores(row, v), r.responses(c, v));
    }
  }
  return h;
}

Segmentation predict_mask(const Heatmap& h) {
  if (h.id_list.empty()) throw PreconditionError("mask prediction needs at least one id");
  Segmentation seg;
  seg.domain = Domain::kVoxel;
  seg.assignment.assign(static_cast<std::size_t>(h.scores.cols()), kBackground);
  for (Eigen::Index v = 0; v < h.scores.cols(); ++v) {
    double best = kUnreached;
    ObjectId id = kBackground;
    for (Eigen::Index i = 0; i < h.scores.rows(); ++i) {
      if (h.scores(i, v) > best) {
        best = h.scores(i, v);
        id = h.id_list[static_cast<std::size_t>(i)];
      }
    }
    seg.assignment[static_cast<std::size_t>(v)] = id;
  }
  return seg;
}

ResponseMap baseline_respond(const spacetime::VoxelGrid& grid, std::span<const Click> clicks,
                             const BaselineOptions& options) {
  ResponseMap r;
  const auto n = static_cast<Eigen::Index>(grid.cells.size());
  r.responses.resize(static_cast<Eigen::Index>(clicks.size()), n);
  const bool cut = options.cutoff > 0.0;
  for (std::size_t c = 0; c < clicks.size(); ++c) {
    r.click_objects.push_back(clicks[c].object_id);
    for (Eigen::Index v = 0; v < n; ++v) {
      const double d = std::sqrt(spatial::squared_distance(grid.cells[static_cast<std::size_t>(v)].center,
                                                           clicks[c].position));
      r.responses(static_cast<Eigen::Index>(c), v) = cut && d > options.cutoff ? kUnreached : -d;
    }
  }
  return r;
}

Segmentation resolve(const spacetime::VoxelGrid& grid, std::span<const Click> clicks, const ResponseMap& r,
                     const Segmentation* previous) {
  if (previous && previous->size() != grid.cells.size()) {
    throw InputError("previous segmentation does not match the voxel grid");
  }
  if (clicks.empty()) return previous ? *previous : null_segment(grid.cells.size());

  const Heatmap h = fuse_clicks(r);
  Segmentation seg = predict_mask(h);
  for (Eigen::Index v = 0; v < h.scores.cols(); ++v) {
    if (h.scores.col(v).maxCoeff() != kUnreached) continue;
    const auto idx = static_cast<std::size_t>(v);
    if (previous) {
      seg.assignment[idx] = previous->assignment[idx];
      continue;
    }
    double best = std::numeric_limits<double>::infinity();
    ObjectId id = kBackground;
    for (const auto& click : clicks) {
      const double d2 = spatial::squared_distance(grid.cells[idx].center, click.position);
      if (d2 < best || (d2 == best && click.object_id < id)) {
        best = d2;
        id = click.object_id;
      }
    }
    seg.assignment[idx] = id;
  }
  return seg;
}

Segmentation baseline_segment(const spacetime::VoxelGrid& grid, std::span<const Click> clicks,
                              const BaselineOptions& options, const Segmentation* previous) {
  return resolve(grid, clicks, baseline_respond(grid, clicks, options), previous);
}

Segmentation oracle_segment(std::span<const ObjectId> gt, std::span<const Click> clicks) {
  std::set<ObjectId> clicked;
  for (const auto& c : clicks) clicked.insert(c.object_id);
  Segmentation seg;
  seg.domain = Domain::kPoint;
  seg.assignment.resize(gt.size(), kBackground);
  for (std::size_t p = 0; p < gt.size(); ++p) {
    if (gt[p] != kBackground && clicked.contains(gt[p])) seg.assignment[p] = gt[p];
  }
  return seg;
}

Segmentation null_segment(std::size_t size, Domain domain) {
  return Segmentation{std::vector<ObjectId>(size, kBackground), domain};
}

Segmentation to_points(const Segmentation& seg, const spacetime::VoxelGrid& grid) {
  if (seg.domain == Domain::kPoint) {
    if (seg.size() != grid.point_to_cell.size()) throw InputError("point segmentation does not match the cloud");
    return seg;
  }
  if (seg.size() != grid.cells.size()) {
    throw InputError(fmt::format("segmentation has {} voxels, grid {}", seg.size(), grid.cells.size()));
  }
  Segmentation out;
  out.domain = Domain::kPoint;
  out.assignment.resize(grid.point_to_cell.size());
  for (std::size_t p = 0; p < grid.point_to_cell.size(); ++p) out.assignment[p] = seg.assignment[grid.point_to_cell[p]];
  return out;
}

bool BaselineSegmenter::cache_matches(const spacetime::VoxelGrid& grid, std::span<const Click> clicks) const {
  if (cache_.grid != &grid || cache_.cells != grid.cells.size() || cache_.voxel_size != grid.voxel_size) return false;
  if (cache_.clicks.size() > clicks.size()) return false;
  return std::equal(cache_.clicks.begin(), cache_.clicks.end(), clicks.begin());
}

Segmentation BaselineSegmenter::segment(const SegmentContext& ctx, std::span<const Click> clicks,
                                        const Segmentation* previous) {
  if (!ctx.grid) throw PreconditionError("baseline segmenter needs a voxel grid");
  const auto& grid = *ctx.grid;
  if (previous || clicks.empty()) return baseline_segment(grid, clicks, options_, previous);

  // Folding clicks one at a time keeps, per voxel, the highest response and
  // the lowest id reaching it: exactly fuse_clicks followed by predict_mask.
  if (!cache_matches(grid, clicks)) {
    cache_ = Cache{};
    cache_.grid = &grid;
    cache_.cells = grid.cells.size();
    cache_.voxel_size = grid.voxel_size;
    cache_.score.assign(grid.cells.size(), kUnreached);
    cache_.best.assign(grid.cells.size(), kBackground);
    cache_.nearest_d2.assign(grid.cells.size(), std::numeric_limits<double>::infinity());
    cache_.nearest.assign(grid.cells.size(), kBackground);
  }
  const bool cut = options_.cutoff > 0.0;
  for (std::size_t c = cache_.clicks.size(); c < clicks.size(); ++c) {
    const Click& click = clicks[c];
    for (std::size_t v = 0; v < grid.cells.size(); ++v) {
      const double d2 = spatial::squared_distance(grid.cells[v].center, click.position);
      const double d = std::sqrt(d2);
      const double s = cut && d > options_.cutoff ? kUnreached : -d;
      if (s > cache_.score[v] || (s == cache_.score[v] && s != kUnreached && click.object_id < cache_.best[v])) {
        cache_.score[v] = s;
        cache_.best[v] = click.object_id;
      }
      if (d2 < cache_.nearest_d2[v] || (d2 == cache_.nearest_d2[v] && click.object_id < cache_.nearest[v])) {
        cache_.nearest_d2[v] = d2;
        cache_.nearest[v] = click.object_id;
      }
    }
    cache_.clicks.push_back(click);
  }
  Segmentation seg;
  seg.domain = Domain::kVoxel;
  seg.assignment.resize(grid.cells.size());
  for (std::size_t v = 0; v < grid.cells.size(); ++v) {
    seg.assignment[v] = cache_.score[v] == kUnreached ? cache_.nearest[v] : cache_.best[v];
  }
  return seg;
}

Segmentation OracleSegmenter::segment(const SegmentContext& ctx, std::span<const Click> clicks,
                                      const Segmentation*) {
  if (ctx.gt.empty() && ctx.grid && !ctx.grid->point_to_cell.empty()) {
    throw PreconditionError("oracle segmenter needs ground truth");
  }
  return oracle_segment(ctx.gt, clicks);
}

Segmentation NullSegmenter::segment(const SegmentContext& ctx, std::span<const Click>, const Segmentation*) {
  if (ctx.grid) return null_segment(ctx.grid->cells.size(), Domain::kVoxel);
  return null_segment(ctx.gt.size(), Domain::kPoint);
}

}  // namespace seg4d::segment
