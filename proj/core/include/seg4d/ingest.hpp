#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "seg4d/types.hpp"

namespace seg4d::ingest {

/// Bytes per point record in a velodyne `.bin` file: x, y, z, intensity as
/// little-endian float32.
inline constexpr std::size_t kPointRecordBytes = 16;

/// Decodes a raw point buffer. Throws FormatError if the buffer length is not
/// a multiple of the record size, DataError on non-finite coordinates.
std::vector<Point> decode_points(std::span<const std::byte> bytes, int scan_index);
std::vector<std::byte> encode_points(std::span<const Point> points);

Scan read_scan(const std::filesystem::path& path, int scan_index);
void write_scan(const std::filesystem::path& path, std::span<const Point> points);

/// Semantic class in the low 16 bits, instance in the high 16 bits.
constexpr PointLabel decode_label(std::uint32_t raw) {
  return PointLabel{static_cast<std::uint16_t>(raw & 0xFFFFu), static_cast<std::uint16_t>(raw >> 16)};
}
constexpr std::uint32_t encode_label(PointLabel label) {
  return (static_cast<std::uint32_t>(label.instance) << 16) | label.semantic;
}

std::vector<PointLabel> read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, std::span<const PointLabel> labels);

/// Parses a KITTI calibration document and returns the `Tr:` transform
/// (sensor to reference camera). Missing `Tr:` yields identity.
Pose parse_calibration(std::string_view text);

/// Parses a poses document (12 reals per line, row-major 3x4) and expresses
/// every pose in the LiDAR frame: Tr^-1 * P * Tr. Rotations drifting from
/// orthonormal by at most 1e-4 are re-orthonormalized; larger drift throws.
std::vector<Pose> parse_poses(std::string_view text, const Pose& calibration);

std::vector<Pose> read_poses(const std::filesystem::path& poses_path, const std::filesystem::path& calib_path);

/// SemanticKITTI raw label ids with things/stuff flags; 0 and 1 are ignored.
const ClassMap& semantic_kitti_classes();

/// Loads `<dir>/velodyne/*.bin`, `<dir>/labels/*.label` (when present),
/// `<dir>/poses.txt` and `<dir>/calib.txt`. `first`/`count` select a scan
/// range; count < 0 means to the end.
Sequence read_sequence(const std::filesystem::path& dir, int first = 0, int count = -1);

/// Writes a sequence in the same layout read_sequence consumes.
void write_sequence(const std::filesystem::path& dir, const Sequence& sequence);

std::string scan_file_stem(int scan_index);

/// Nearest labeled neighbour transfer. Ties resolve to the lowest labeled index.
std::vector<PointLabel> propagate_labels_1nn(std::span<const Point> labeled, std::span<const PointLabel> labels,
                                             std::span<const Point> target);

}  // namespace seg4d::ingest
