#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "seg4d/errors.hpp"
#include "seg4d/spacetime.hpp"
#include "seg4d/spatial.hpp"
#include "support/oracles.hpp"
#include "support/test_util.hpp"

using namespace seg4d;
using spacetime::Window;

namespace {

Pose yaw(double radians, Vec3 t = Vec3::Zero()) {
  Pose p;
  p.rotation << std::cos(radians), -std::sin(radians), 0, std::sin(radians), std::cos(radians), 0, 0, 0, 1;
  p.translation = t;
  return p;
}

Scan scan_of(std::vector<Vec3> pts, int index, Pose pose = {}) {
  Scan s;
  s.scan_index = index;
  s.pose = pose;
  for (const auto& p : pts) s.points.push_back({p, 0.0, index});
  return s;
}

}  // namespace

TEST(ToGlobal, IdentityAndRotation) {
  const Scan a = scan_of({Vec3(1, 2, 3)}, 0);
  EXPECT_EQ(spacetime::to_global(a)[0].position, Vec3(1, 2, 3));
  const Scan b = scan_of({Vec3(1, 0, 0)}, 0, yaw(std::numbers::pi / 2));
  EXPECT_NEAR((spacetime::to_global(b)[0].position - Vec3(0, 1, 0)).norm(), 0.0, 1e-9);
}

TEST(ToGlobal, InverseRecoversInput) {
  Rng rng(3);
  const Pose pose = yaw(0.7, Vec3(4, -2, 1));
  const auto pts = test::random_points(rng, 50);
  const Scan s = scan_of(pts, 0, pose);
  const auto g = spacetime::to_global(s);
  const Pose inv = pose.inverse();
  for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_NEAR((inv.apply(g[i].position) - pts[i]).norm(), 0.0, 1e-9);
}

TEST(ToGlobal, RejectsBadPose) {
  Pose bad;
  bad.rotation(0, 0) = 3.0;
  EXPECT_THROW(spacetime::to_global(scan_of({Vec3::Zero()}, 0, bad)), PreconditionError);
}

TEST(Superimpose, SingleScanIsItsOwnFrame) {
  const Scan s = scan_of({Vec3(1, 0, 0), Vec3(0, 2, 0)}, 5, yaw(0.3, Vec3(10, 0, 0)));
  const auto cloud = spacetime::superimpose(std::span<const Scan>(&s, 1));
  ASSERT_EQ(cloud.size(), 2u);
  // Anchored at the first scan, so the points keep their sensor coordinates;
  // cloud.anchor maps them to the world frame.
  EXPECT_NEAR((cloud.anchor.apply(cloud.points[0].position) - spacetime::to_global(s)[0].position).norm(), 0.0,
              1e-9);
}

TEST(Superimpose, CountsAndOrigins) {
  Rng rng(1);
  std::vector<Scan> scans;
  for (int k = 0; k < 4; ++k) scans.push_back(scan_of(test::random_points(rng, 100), 10 + k, yaw(0.1 * k)));
  const auto cloud = spacetime::superimpose(scans);
  ASSERT_EQ(cloud.size(), 400u);
  std::set<std::pair<int, std::uint32_t>> seen;
  for (std::uint32_t i = 0; i < cloud.size(); ++i) {
    const auto o = cloud.origin(i);
    EXPECT_EQ(cloud.index_of(o.scan_index, o.local_index), i);
    EXPECT_EQ(cloud.points[i].scan_index, o.scan_index);
    seen.insert({o.scan_index, o.local_index});
  }
  EXPECT_EQ(seen.size(), 400u);
  EXPECT_EQ(cloud.scan_range(12), (std::pair<std::uint32_t, std::uint32_t>{200, 300}));
}

TEST(Superimpose, GapIsInputError) {
  std::vector<Scan> scans{scan_of({Vec3::Zero()}, 0), scan_of({Vec3::Zero()}, 2)};
  EXPECT_THROW(spacetime::superimpose(scans), InputError);
}

TEST(Superimpose, TranslationInvariant) {
  Rng rng(2);
  std::vector<Scan> a, b;
  for (int k = 0; k < 3; ++k) {
    const auto pts = test::random_points(rng, 20);
    a.push_back(scan_of(pts, k, yaw(0.2 * k, Vec3(k, 0, 0))));
    b.push_back(scan_of(pts, k, yaw(0.2 * k, Vec3(k + 1000.0, -500.0, 3.0))));
  }
  const auto ca = spacetime::superimpose(a);
  const auto cb = spacetime::superimpose(b);
  for (std::size_t i = 0; i < ca.size(); ++i) {
    EXPECT_NEAR((ca.points[i].position - cb.points[i].position).norm(), 0.0, 1e-9);
  }
}

TEST(Superimpose, StaticObjectCentroidStable) {
  ingest::SceneSpec spec;
  ingest::SyntheticObject cube;
  cube.center = Vec3(5, 1, 0.5);
  spec.objects = {cube};
  spec.scans = 4;
  spec.ego_velocity = Vec3(1.5, 0.2, 0);
  spec.ego_yaw_rate = 0.05;
  const Sequence seq = ingest::generate_synthetic(spec, 8);
  const auto cloud = spacetime::superimpose(seq.scans);
  std::vector<Vec3> centroids;
  for (int k = 0; k < 4; ++k) {
    const auto [first, last] = cloud.scan_range(k);
    Vec3 c = Vec3::Zero();
    for (auto i = first; i < last; ++i) c += cloud.points[i].position;
    centroids.push_back(c / static_cast<double>(last - first));
  }
  for (int k = 1; k < 4; ++k) EXPECT_NEAR((centroids[k] - centroids[0]).norm(), 0.0, 1e-9);
}

TEST(Voxelize, FloorBucketing) {
  const std::vector<Point> same{{Vec3(0.01, 0, 0), 0, 0}, {Vec3(0.09, 0, 0), 0, 0}};
  const auto g1 = spacetime::voxelize(same, 0.1);
  ASSERT_EQ(g1.cells.size(), 1u);
  EXPECT_EQ(g1.cells[0].key, (spacetime::VoxelKey{0, 0, 0}));
  const std::vector<Point> split{{Vec3(0.09, 0, 0), 0, 0}, {Vec3(0.11, 0, 0), 0, 0}};
  EXPECT_EQ(spacetime::voxelize(split, 0.1).cells.size(), 2u);
  EXPECT_EQ(spacetime::voxel_key(Vec3(-0.01, 0, 0), 0.1), (spacetime::VoxelKey{-1, 0, 0}));
}

TEST(Voxelize, NonPositiveSizeIsConfigError) {
  const std::vector<Point> pts{{Vec3::Zero(), 0, 0}};
  EXPECT_THROW(spacetime::voxelize(pts, 0.0), ConfigError);
  EXPECT_THROW(spacetime::voxelize(pts, -1.0), ConfigError);
}

TEST(Voxelize, MatchesRebucketing) {
  Rng rng(4);
  std::vector<Point> pts;
  for (const auto& p : test::random_points(rng, 1000, 0.0, 0.999)) pts.push_back({p, 0, static_cast<int>(pts.size() % 3)});
  const auto grid = spacetime::voxelize(pts, 0.1);
  EXPECT_LE(grid.cells.size(), 1000u);
  std::map<spacetime::VoxelKey, std::vector<std::uint32_t>> buckets;
  for (std::uint32_t i = 0; i < pts.size(); ++i) {
    const auto& p = pts[i].position;
    buckets[{static_cast<std::int64_t>(std::floor(p.x() / 0.1)), static_cast<std::int64_t>(std::floor(p.y() / 0.1)),
             static_cast<std::int64_t>(std::floor(p.z() / 0.1))}]
        .push_back(i);
  }
  ASSERT_EQ(grid.cells.size(), buckets.size());
  std::size_t c = 0;
  for (const auto& [key, members] : buckets) {
    const auto& cell = grid.cells[c];
    EXPECT_EQ(cell.key, key);
    EXPECT_EQ(cell.members, members);
    std::set<int> scans;
    Vec3 mean = Vec3::Zero();
    for (const auto m : members) {
      scans.insert(pts[m].scan_index);
      mean += pts[m].position;
      EXPECT_EQ(grid.point_to_cell[m], c);
    }
    EXPECT_EQ(cell.scans, std::vector<int>(scans.begin(), scans.end()));
    EXPECT_NEAR((cell.center - mean / static_cast<double>(members.size())).norm(), 0.0, 1e-12);
    ++c;
  }
}

TEST(Voxelize, IdempotentOnCenters) {
  Rng rng(5);
  std::vector<Point> pts;
  for (const auto& p : test::random_points(rng, 500, -2.0, 2.0)) pts.push_back({p, 0, 0});
  const auto grid = spacetime::voxelize(pts, 0.25);
  for (const auto& cell : grid.cells) EXPECT_EQ(spacetime::voxel_key(cell.center, 0.25), cell.key);
}

TEST(Windows, Examples) {
  EXPECT_EQ(spacetime::windows(7, 4), (std::vector<Window>{{0, 4, 3}, {3, 4, -1}}));
  EXPECT_EQ(spacetime::windows(4, 4), (std::vector<Window>{{0, 4, -1}}));
  EXPECT_EQ(spacetime::windows(6, 4), (std::vector<Window>{{0, 4, 3}, {3, 3, -1}}));
}

TEST(Windows, CoverageAndOverlap) {
  for (int n = 2; n <= 20; ++n) {
    for (int tau = 2; tau <= 6; ++tau) {
      if (n < tau) {
        EXPECT_THROW(spacetime::windows(n, tau), InputError);
        continue;
      }
      const auto ws = spacetime::windows(n, tau);
      std::vector<int> count(static_cast<std::size_t>(n), 0);
      for (const auto& w : ws) {
        EXPECT_GE(w.length, 2);
        EXPECT_LE(w.length, tau);
        for (int s = w.start; s < w.end(); ++s) ++count[static_cast<std::size_t>(s)];
      }
      for (std::size_t i = 0; i + 1 < ws.size(); ++i) {
        EXPECT_EQ(ws[i].overlap_scan, ws[i].last());
        EXPECT_EQ(ws[i + 1].start, ws[i].last());
        EXPECT_EQ(count[static_cast<std::size_t>(ws[i].last())], 2);
      }
      EXPECT_EQ(ws.back().end(), n);
      for (int s = 0; s < n; ++s) EXPECT_GE(count[static_cast<std::size_t>(s)], 1);
    }
  }
}

TEST(Windows, TooShortIsInputError) { EXPECT_THROW(spacetime::windows(1, 4), InputError); }

TEST(KdTree, MatchesBruteForce) {
  Rng rng(6);
  const auto pts = test::random_points(rng, 400);
  const spatial::KdTree tree(pts);
  for (const auto& q : test::random_points(rng, 200, -6.0, 6.0)) {
    const auto n = tree.nearest(q);
    EXPECT_EQ(n.index, oracle::nearest(pts, q));
    std::vector<std::uint32_t> expect;
    for (std::uint32_t i = 0; i < pts.size(); ++i) {
      if (oracle::dist2(pts[i], q) <= 1.5 * 1.5) expect.push_back(i);
    }
    EXPECT_EQ(tree.radius(q, 1.5), expect);
  }
}

TEST(KdTree, DuplicatePointsResolveToLowestIndex) {
  const std::vector<Vec3> pts(10, Vec3(1, 1, 1));
  EXPECT_EQ(spatial::KdTree(pts).nearest(Vec3(1, 1, 1)).index, 0u);
}
