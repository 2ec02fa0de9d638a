#include <gtest/gtest.h>

#include <cstring>

#include "seg4d/errors.hpp"
#include "seg4d/ingest.hpp"
#include "seg4d/spacetime.hpp"
#include "seg4d/synthetic.hpp"
#include "support/oracles.hpp"
#include "support/test_util.hpp"

using namespace seg4d;
using seg4d::test::TempDir;

namespace {

std::string float_record(float x, float y, float z, float i) {
  std::string out(16, '\0');
  const float v[4] = {x, y, z, i};
  std::memcpy(out.data(), v, 16);
  return out;
}

}  // namespace

TEST(ReadScan, DecodesTwoRecords) {
  TempDir dir;
  test::write_file(dir / "a.bin", float_record(1, 2, 3, 0.5f) + float_record(4, 5, 6, 0.1f));
  const Scan s = ingest::read_scan(dir / "a.bin", 3);
  ASSERT_EQ(s.points.size(), 2u);
  EXPECT_EQ(s.points[0].position, Vec3(1, 2, 3));
  EXPECT_EQ(s.points[1].position, Vec3(4, 5, 6));
  EXPECT_DOUBLE_EQ(s.points[0].intensity, 0.5f);
  EXPECT_EQ(s.points[1].scan_index, 3);
}

TEST(ReadScan, EmptyFile) {
  TempDir dir;
  test::write_file(dir / "e.bin", "");
  EXPECT_TRUE(ingest::read_scan(dir / "e.bin", 0).points.empty());
}

TEST(ReadScan, TruncatedRecordReportsOffset) {
  TempDir dir;
  test::write_file(dir / "t.bin", float_record(1, 2, 3, 0) + float_record(4, 5, 6, 0) + "x");
  try {
    ingest::read_scan(dir / "t.bin", 0);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset, 32u);
  }
}

TEST(ReadScan, NonFiniteCoordinateIsDataError) {
  TempDir dir;
  test::write_file(dir / "n.bin", float_record(1, std::numeric_limits<float>::quiet_NaN(), 3, 0));
  EXPECT_THROW(ingest::read_scan(dir / "n.bin", 0), DataError);
}

TEST(ReadScan, WriteRoundTrip) {
  TempDir dir;
  std::vector<Point> pts{{Vec3(0.5, -1.25, 3.0), 0.25, 0}, {Vec3(7, 8, 9), 1.0, 0}};
  ingest::write_scan(dir / "r.bin", pts);
  const auto back = ingest::read_scan(dir / "r.bin", 0);
  ASSERT_EQ(back.points.size(), 2u);
  EXPECT_EQ(back.points[0].position, pts[0].position);
  EXPECT_EQ(back.points[1].intensity, 1.0);
}

TEST(DecodeLabel, Examples) {
  EXPECT_EQ(ingest::decode_label(0x00000000u), (PointLabel{0, 0}));
  EXPECT_EQ(ingest::decode_label(0x0001000Au), (PointLabel{10, 1}));
  EXPECT_EQ(ingest::decode_label(0xFFFF0000u), (PointLabel{0, 65535}));
  for (const std::uint32_t raw : {0u, 0x0001000Au, 0xFFFF0000u, 0x12345678u}) {
    EXPECT_EQ(ingest::encode_label(ingest::decode_label(raw)), raw);
  }
}

TEST(Labels, FileRoundTrip) {
  TempDir dir;
  const std::vector<PointLabel> labels{{10, 1}, {40, 0}, {0, 65535}};
  ingest::write_labels(dir / "l.label", labels);
  EXPECT_EQ(ingest::read_labels(dir / "l.label"), labels);
  test::write_file(dir / "bad.label", "abc");
  EXPECT_THROW(ingest::read_labels(dir / "bad.label"), FormatError);
}

TEST(Poses, IdentityLine) {
  const auto poses = ingest::parse_poses("1 0 0 0 0 1 0 0 0 0 1 0\n", Pose::identity());
  ASSERT_EQ(poses.size(), 1u);
  EXPECT_TRUE(poses[0].rotation.isIdentity(0.0));
  EXPECT_EQ(poses[0].translation, Vec3::Zero());
}

TEST(Poses, PureTranslation) {
  const auto poses = ingest::parse_poses("1 0 0 5 0 1 0 0 0 0 1 0\n", Pose::identity());
  ASSERT_EQ(poses.size(), 1u);
  EXPECT_EQ(poses[0].translation, Vec3(5, 0, 0));
}

TEST(Poses, ArityErrorNamesLine) {
  try {
    ingest::parse_poses("1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n", Pose::identity());
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line, 2u);
  }
}

TEST(Poses, NonOrthonormalRejected) {
  EXPECT_THROW(ingest::parse_poses("2 0 0 0 0 1 0 0 0 0 1 0\n", Pose::identity()), DataError);
}

TEST(Poses, CalibrationConjugates) {
  // Tr swaps x and y; a translation of 5 along camera x is 5 along lidar y.
  const Pose tr = ingest::parse_calibration("Tr: 0 1 0 0 1 0 0 0 0 0 1 0\n");
  const auto poses = ingest::parse_poses("1 0 0 5 0 1 0 0 0 0 1 0\n", tr);
  EXPECT_NEAR((poses[0].translation - Vec3(0, 5, 0)).norm(), 0.0, 1e-12);
}

TEST(Synthetic, StaticCubeIdenticalAcrossScans) {
  ingest::SceneSpec spec;
  ingest::SyntheticObject cube;
  cube.size = Vec3(1, 1, 1);
  cube.center = Vec3(3, 0, 0.5);
  cube.points = 100;
  spec.objects = {cube};
  spec.scans = 4;
  const Sequence seq = ingest::generate_synthetic(spec, 11);
  ASSERT_EQ(seq.scans.size(), 4u);
  std::vector<std::vector<Vec3>> world(4);
  for (int k = 0; k < 4; ++k) {
    for (const auto& p : spacetime::to_global(seq.scans[k])) world[k].push_back(p.position);
    ASSERT_EQ(world[k].size(), 100u);
  }
  for (int k = 1; k < 4; ++k) {
    for (std::size_t i = 0; i < 100; ++i) EXPECT_NEAR((world[k][i] - world[0][i]).norm(), 0.0, 1e-9);
  }
}

TEST(Synthetic, MovingCubeDisplacement) {
  ingest::SceneSpec spec;
  ingest::SyntheticObject cube;
  cube.velocity = Vec3(1, 0, 0);
  spec.objects = {cube};
  spec.scans = 4;
  spec.ego_velocity = Vec3(0.3, 0.1, 0);
  const Sequence seq = ingest::generate_synthetic(spec, 5);
  auto centroid = [&](int k) {
    Vec3 c = Vec3::Zero();
    const auto pts = spacetime::to_global(seq.scans[k]);
    for (const auto& p : pts) c += p.position;
    return Vec3(c / static_cast<double>(pts.size()));
  };
  for (int k = 1; k < 4; ++k) EXPECT_NEAR((centroid(k) - centroid(0) - Vec3(k, 0, 0)).norm(), 0.0, 1e-9);
}

TEST(Synthetic, Deterministic) {
  const auto spec = ingest::random_scene(3, test::small_scene());
  const Sequence a = ingest::generate_synthetic(spec, 9);
  const Sequence b = ingest::generate_synthetic(spec, 9);
  ASSERT_EQ(a.scans.size(), b.scans.size());
  for (std::size_t k = 0; k < a.scans.size(); ++k) {
    ASSERT_EQ(a.scans[k].points.size(), b.scans[k].points.size());
    for (std::size_t i = 0; i < a.scans[k].points.size(); ++i) {
      EXPECT_EQ(a.scans[k].points[i].position, b.scans[k].points[i].position);
    }
    EXPECT_EQ(*a.scans[k].labels, *b.scans[k].labels);
  }
}

TEST(Synthetic, RejectsEmptySpecs) {
  ingest::SceneSpec none;
  EXPECT_THROW(ingest::generate_synthetic(none, 1), ConfigError);
  ingest::SceneSpec zero_scans;
  zero_scans.objects.emplace_back();
  zero_scans.scans = 0;
  EXPECT_THROW(ingest::generate_synthetic(zero_scans, 1), ConfigError);
}

TEST(Synthetic, SpecTextRoundTrip) {
  const auto spec = ingest::random_scene(21, test::small_scene());
  const auto again = ingest::parse_scene_spec(ingest::format_scene_spec(spec));
  ASSERT_EQ(again.objects.size(), spec.objects.size());
  EXPECT_EQ(again.scans, spec.scans);
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    EXPECT_EQ(again.objects[i].center, spec.objects[i].center);
    EXPECT_EQ(again.objects[i].semantic, spec.objects[i].semantic);
  }
}

TEST(Sequence, WriteReadRoundTrip) {
  TempDir dir;
  const Sequence seq = test::make_scene(4, test::small_scene(3));
  ingest::write_sequence(dir.path(), seq);
  const Sequence back = ingest::read_sequence(dir.path());
  ASSERT_EQ(back.scans.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    ASSERT_EQ(back.scans[k].points.size(), seq.scans[k].points.size());
    EXPECT_EQ(*back.scans[k].labels, *seq.scans[k].labels);
    EXPECT_NEAR((back.scans[k].pose.translation - seq.scans[k].pose.translation).norm(), 0.0, 1e-6);
  }
  const Sequence slice = ingest::read_sequence(dir.path(), 1, 2);
  ASSERT_EQ(slice.scans.size(), 2u);
  EXPECT_EQ(slice.scans[0].scan_index, 1);
}

TEST(Propagate, CoincidentAndNearest) {
  std::vector<Point> labeled{{Vec3(0, 0, 0), 0, 0}, {Vec3(10, 0, 0), 0, 0}};
  std::vector<PointLabel> labels{{10, 1}, {20, 2}};
  std::vector<Point> target{{Vec3(1, 0, 0), 0, 0}, {Vec3(10, 0, 0), 0, 0}};
  const auto out = ingest::propagate_labels_1nn(labeled, labels, target);
  EXPECT_EQ(out[0], labels[0]);
  EXPECT_EQ(out[1], labels[1]);
  EXPECT_THROW(ingest::propagate_labels_1nn({}, {}, target), PreconditionError);
}

TEST(Propagate, MatchesBruteForce) {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = test::random_points(rng, 50);
    const auto b = test::random_points(rng, 50);
    std::vector<Point> labeled, target;
    std::vector<PointLabel> labels;
    for (std::size_t i = 0; i < a.size(); ++i) {
      labeled.push_back({a[i], 0, 0});
      labels.push_back({static_cast<std::uint16_t>(i), static_cast<std::uint16_t>(i * 7)});
    }
    for (const auto& p : b) target.push_back({p, 0, 0});
    const auto out = ingest::propagate_labels_1nn(labeled, labels, target);
    for (std::size_t i = 0; i < b.size(); ++i) EXPECT_EQ(out[i], labels[oracle::nearest(a, b[i])]);
  }
}
