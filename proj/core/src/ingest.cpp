#include "seg4d/ingest.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "seg4d/errors.hpp"
#include "seg4d/spatial.hpp"

namespace seg4d::ingest {

namespace fs = std::filesystem;

namespace {

constexpr std::uint32_t byteswap32(std::uint32_t v) {
  return ((v & 0x000000FFu) << 24) | ((v & 0x0000FF00u) << 8) | ((v & 0x00FF0000u) >> 8) | ((v & 0xFF000000u) >> 24);
}

std::uint32_t load_le32(const std::byte* p) {
  std::uint32_t v;
  std::memcpy(&v, p, sizeof v);
  if constexpr (std::endian::native == std::endian::big) v = byteswap32(v);
  return v;
}

void store_le32(std::byte* p, std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) v = byteswap32(v);
  std::memcpy(p, &v, sizeof v);
}

float load_le_float(const std::byte* p) { return std::bit_cast<float>(load_le32(p)); }

std::vector<std::byte> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::byte> bytes(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
    throw DataError("short read on " + path.string());
  }
  return bytes;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, std::span<const std::byte> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

/// Splits on whitespace and parses every token as a double.
bool parse_reals(std::string_view line, std::vector<double>& out) {
  out.clear();
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i >= line.size()) break;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    double value = 0.0;
    const char* first = line.data() + i;
    const char* last = line.data() + j;
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) return false;
    out.push_back(value);
    i = j;
  }
  return true;
}

Pose pose_from_row_major(std::span<const double> v) {
  Pose pose;
  pose.rotation << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
  pose.translation << v[3], v[7], v[11];
  return pose;
}

/// Projects a nearly-orthonormal rotation back onto SO(3).
Mat3 reorthonormalize(const Mat3& r) {
  Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 out = svd.matrixU() * svd.matrixV().transpose();
  if (out.determinant() < 0.0) {
    Mat3 u = svd.matrixU();
    u.col(2) *= -1.0;
    out = u * svd.matrixV().transpose();
  }
  return out;
}

constexpr double kOrthoTolerance = 1e-4;

}  // namespace

std::vector<Point> decode_points(std::span<const std::byte> bytes, int scan_index) {
  if (bytes.size() % kPointRecordBytes != 0) {
    const std::uint64_t offset = bytes.size() - bytes.size() % kPointRecordBytes;
    throw FormatError("truncated point record", offset);
  }
  const std::size_t n = bytes.size() / kPointRecordBytes;
  std::vector<Point> points(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::byte* rec = bytes.data() + i * kPointRecordBytes;
    Point& p = points[i];
    p.position = Vec3(load_le_float(rec), load_le_float(rec + 4), load_le_float(rec + 8));
    p.intensity = load_le_float(rec + 12);
    p.scan_index = scan_index;
    if (!p.position.allFinite()) {
      throw DataError(fmt::format("non-finite coordinate in point {} (byte offset {})", i, i * kPointRecordBytes));
    }
  }
  return points;
}

std::vector<std::byte> encode_points(std::span<const Point> points) {
  std::vector<std::byte> bytes(points.size() * kPointRecordBytes);
  for (std::size_t i = 0; i < points.size(); ++i) {
    std::byte* rec = bytes.data() + i * kPointRecordBytes;
    const Point& p = points[i];
    store_le32(rec, std::bit_cast<std::uint32_t>(static_cast<float>(p.position.x())));
    store_le32(rec + 4, std::bit_cast<std::uint32_t>(static_cast<float>(p.position.y())));
    store_le32(rec + 8, std::bit_cast<std::uint32_t>(static_cast<float>(p.position.z())));
    store_le32(rec + 12, std::bit_cast<std::uint32_t>(static_cast<float>(p.intensity)));
  }
  return bytes;
}

Scan read_scan(const fs::path& path, int scan_index) {
  if (!fs::exists(path)) throw DataError("scan file not found: " + path.string());
  Scan scan;
  scan.scan_index = scan_index;
  scan.points = decode_points(read_file(path), scan_index);
  return scan;
}

void write_scan(const fs::path& path, std::span<const Point> points) { write_file(path, encode_points(points)); }

std::vector<PointLabel> read_labels(const fs::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() % 4 != 0) throw FormatError("truncated label record in " + path.string(), bytes.size() - bytes.size() % 4);
  std::vector<PointLabel> labels(bytes.size() / 4);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = decode_label(load_le32(bytes.data() + 4 * i));
  return labels;
}

void write_labels(const fs::path& path, std::span<const PointLabel> labels) {
  std::vector<std::byte> bytes(labels.size() * 4);
  for (std::size_t i = 0; i < labels.size(); ++i) store_le32(bytes.data() + 4 * i, encode_label(labels[i]));
  write_file(path, bytes);
}

Pose parse_calibration(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.rfind("Tr:", 0) != 0) continue;
    if (!parse_reals(std::string_view(line).substr(3), values) || values.size() != 12) {
      throw ParseError("calibration Tr: expects 12 reals", line_no);
    }
    return pose_from_row_major(values);
  }
  return Pose::identity();
}

std::vector<Pose> parse_poses(std::string_view text, const Pose& calibration) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  std::vector<double> values;
  std::vector<Pose> poses;
  const Pose calib_inv = calibration.inverse();
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (!parse_reals(line, values)) throw ParseError("pose line holds a non-numeric token", line_no);
    if (values.size() != 12) {
      throw ParseError(fmt::format("pose line holds {} numbers, expected 12", values.size()), line_no);
    }
    Pose pose = calib_inv.compose(pose_from_row_major(values)).compose(calibration);
    if (!pose.translation.allFinite() || !pose.rotation.allFinite()) {
      throw DataError(fmt::format("non-finite pose at line {}", line_no));
    }
    const double drift = (pose.rotation.transpose() * pose.rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (drift > kOrthoTolerance || pose.rotation.determinant() <= 0.0) {
      throw DataError(fmt::format("pose at line {} is not a rotation (orthonormality drift {:.3g})", line_no, drift));
    }
    if (drift > 1e-12) pose.rotation = reorthonormalize(pose.rotation);
    poses.push_back(pose);
  }
  return poses;
}

std::vector<Pose> read_poses(const fs::path& poses_path, const fs::path& calib_path) {
  const Pose calibration = fs::exists(calib_path) ? parse_calibration(read_text(calib_path)) : Pose::identity();
  return parse_poses(read_text(poses_path), calibration);
}

const ClassMap& semantic_kitti_classes() {
  static const ClassMap map = [] {
    ClassMap m;
    auto add = [&](std::uint16_t id, const char* name, bool thing, bool ignored = false) {
      m[id] = ClassInfo{name, thing, ignored};
    };
    add(0, "unlabeled", false, true);
    add(1, "outlier", false, true);
    add(10, "car", true);
    add(11, "bicycle", true);
    add(13, "bus", true);
    add(15, "motorcycle", true);
    add(16, "on-rails", true);
    add(18, "truck", true);
    add(20, "other-vehicle", true);
    add(30, "person", true);
    add(31, "bicyclist", true);
    add(32, "motorcyclist", true);
    add(40, "road", false);
    add(44, "parking", false);
    add(48, "sidewalk", false);
    add(49, "other-ground", false);
    add(50, "building", false);
    add(51, "fence", false);
    add(52, "other-structure", false);
    add(60, "lane-marking", false);
    add(70, "vegetation", false);
    add(71, "trunk", false);
    add(72, "terrain", false);
    add(80, "pole", false);
    add(81, "traffic-sign", false);
    add(99, "other-object", false);
    add(252, "moving-car", true);
    add(253, "moving-bicyclist", true);
    add(254, "moving-person", true);
    add(255, "moving-motorcyclist", true);
    add(256, "moving-on-rails", true);
    add(257, "moving-bus", true);
    add(258, "moving-truck", true);
    add(259, "moving-other-vehicle", true);
    return m;
  }();
  return map;
}

std::string scan_file_stem(int scan_index) { return fmt::format("{:06d}", scan_index); }

Sequence read_sequence(const fs::path& dir, int first, int count) {
  const fs::path velodyne = dir / "velodyne";
  if (!fs::is_directory(velodyne)) throw DataError("missing velodyne directory under " + dir.string());

  std::vector<std::pair<int, fs::path>> files;
  for (const auto& entry : fs::directory_iterator(velodyne)) {
    if (entry.path().extension() != ".bin") continue;
    const std::string stem = entry.path().stem().string();
    int index = 0;
    auto [ptr, ec] = std::from_chars(stem.data(), stem.data() + stem.size(), index);
    if (ec != std::errc() || ptr != stem.data() + stem.size()) continue;
    files.emplace_back(index, entry.path());
  }
  std::sort(files.begin(), files.end());
  if (first < 0 || first > static_cast<int>(files.size())) throw InputError("scan range starts outside the sequence");
  const int available = static_cast<int>(files.size()) - first;
  const int take = count < 0 ? available : std::min(count, available);

  std::vector<Pose> poses;
  if (fs::exists(dir / "poses.txt")) poses = read_poses(dir / "poses.txt", dir / "calib.txt");

  Sequence seq;
  seq.class_map = semantic_kitti_classes();
  for (int k = first; k < first + take; ++k) {
    const auto& [index, path] = files[static_cast<std::size_t>(k)];
    Scan scan = read_scan(path, index);
    const fs::path label_path = dir / "labels" / (scan_file_stem(index) + ".label");
    if (fs::exists(label_path)) {
      auto labels = read_labels(label_path);
      if (labels.size() != scan.points.size()) {
        throw FormatError(fmt::format("label count {} does not match point count {} in {}", labels.size(),
                                      scan.points.size(), label_path.string()),
                          labels.size() * 4);
      }
      scan.labels = std::move(labels);
    }
    if (!poses.empty()) {
      if (index >= static_cast<int>(poses.size())) {
        throw DataError(fmt::format("no pose for scan {} ({} poses)", index, poses.size()));
      }
      scan.pose = poses[static_cast<std::size_t>(index)];
    }
    seq.scans.push_back(std::move(scan));
  }
  return seq;
}

void write_sequence(const fs::path& dir, const Sequence& sequence) {
  fs::create_directories(dir / "velodyne");
  const bool labeled = sequence.labeled();
  if (labeled) fs::create_directories(dir / "labels");

  std::string poses;
  int next_index = 0;
  for (const auto& scan : sequence.scans) {
    // poses.txt is indexed by scan number; pad any leading gap with identity.
    for (; next_index < scan.scan_index; ++next_index) poses += "1 0 0 0 0 1 0 0 0 0 1 0\n";
    const Mat3& r = scan.pose.rotation;
    const Vec3& t = scan.pose.translation;
    poses += fmt::format("{} {} {} {} {} {} {} {} {} {} {} {}\n", r(0, 0), r(0, 1), r(0, 2), t.x(), r(1, 0), r(1, 1),
                         r(1, 2), t.y(), r(2, 0), r(2, 1), r(2, 2), t.z());
    next_index = scan.scan_index + 1;

    const std::string stem = scan_file_stem(scan.scan_index);
    write_scan(dir / "velodyne" / (stem + ".bin"), scan.points);
    if (labeled) write_labels(dir / "labels" / (stem + ".label"), *scan.labels);
  }
  std::ofstream(dir / "poses.txt", std::ios::trunc) << poses;
  std::ofstream(dir / "calib.txt", std::ios::trunc) << "Tr: 1 0 0 0 0 1 0 0 0 0 1 0\n";
}

std::vector<PointLabel> propagate_labels_1nn(std::span<const Point> labeled, std::span<const PointLabel> labels,
                                             std::span<const Point> target) {
  if (labeled.empty()) throw PreconditionError("label propagation needs at least one labeled point");
  if (labels.size() != labeled.size()) throw InputError("labeled points and labels differ in length");

  std::vector<Vec3> source(labeled.size());
  for (std::size_t i = 0; i < labeled.size(); ++i) source[i] = labeled[i].position;
  const spatial::KdTree tree(source);

  std::vector<PointLabel> out(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) out[i] = labels[tree.nearest(target[i].position).index];
  return out;
}

}  // namespace seg4d::ingest
