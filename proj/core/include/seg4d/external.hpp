#pragma once

#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <sys/types.h>

#include <nlohmann/json.hpp>

#include "seg4d/segment.hpp"

namespace seg4d::segment {

inline constexpr int kProtocolVersion = 1;

struct ExternalOptions {
  std::string command;  // run through /bin/sh -c
  double timeout_seconds = 30.0;
};

/// What an external segmenter sent back: dense responses or direct labels.
struct ExternalReply {
  std::optional<ResponseMap> responses;
  std::optional<Segmentation> labels;
};

nlohmann::json encode_request(const spacetime::VoxelGrid& grid, std::span<const Click> clicks, int window_start,
                              int window_length);

/// Validates one response line against the request shape. Non-finite values
/// raise DataError; anything else malformed raises SegmenterError.
ExternalReply decode_response(std::string_view line, std::span<const Click> clicks, std::size_t voxels);

/// Segmenter living in a child process, spoken to with newline-delimited JSON
/// over its standard streams. One request in flight at a time.
class ExternalSegmenter : public Segmenter {
 public:
  explicit ExternalSegmenter(ExternalOptions options);
  ~ExternalSegmenter() override;
  ExternalSegmenter(const ExternalSegmenter&) = delete;
  ExternalSegmenter& operator=(const ExternalSegmenter&) = delete;

  std::string name() const override { return "external"; }
  Segmentation segment(const SegmentContext& ctx, std::span<const Click> clicks,
                       const Segmentation* previous = nullptr) override;

  ExternalReply respond(const SegmentContext& ctx, std::span<const Click> clicks);

 private:
  void send_line(const std::string& line);
  std::string read_line();
  void shutdown();

  ExternalOptions options_;
  std::mutex mutex_;
  int fd_ = -1;
  pid_t pid_ = -1;
  std::string buffer_;
};

}  // namespace seg4d::segment
