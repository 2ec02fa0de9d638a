#include "seg4d/external.hpp"

#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "seg4d/errors.hpp"

namespace seg4d::segment {

namespace {

using nlohmann::json;

std::string excerpt(std::string_view text) {
  constexpr std::size_t kMax = 80;
  if (text.size() <= kMax) return std::string(text);
  return std::string(text.substr(0, kMax)) + "...";
}

bool mentions_non_finite(std::string_view line) {
  return line.find("NaN") != std::string_view::npos || line.find("nan") != std::string_view::npos ||
         line.find("Infinity") != std::string_view::npos;
}

double finite_number(const json& v) {
  if (v.is_null()) throw DataError("segmenter response contains a non-finite value");
  if (!v.is_number()) throw SegmenterError("segmenter response holds a non-numeric entry");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw DataError("segmenter response contains a non-finite value");
  return x;
}

}  // namespace

json encode_request(const spacetime::VoxelGrid& grid, std::span<const Click> clicks, int window_start,
                    int window_length) {
  json voxels = json::array();
  for (const auto& cell : grid.cells) {
    voxels.push_back({{"key", {cell.key[0], cell.key[1], cell.key[2]}},
                      {"center", {cell.center.x(), cell.center.y(), cell.center.z()}},
                      {"scans", cell.scans}});
  }
  json cl = json::array();
  for (const auto& c : clicks) {
    cl.push_back({{"pos", {c.position.x(), c.position.y(), c.position.z()}},
                  {"scan", c.scan_index},
                  {"order", c.order},
                  {"object", c.object_id},
                  {"iteration", c.iteration}});
  }
  return {{"type", "segment_request"},
          {"window", {{"start", window_start}, {"length", window_length}}},
          {"voxels", std::move(voxels)},
          {"clicks", std::move(cl)}};
}

ExternalReply decode_response(std::string_view line, std::span<const Click> clicks, std::size_t voxels) {
  json msg;
  try {
    msg = json::parse(line);
  } catch (const json::parse_error&) {
    if (mentions_non_finite(line)) throw DataError("segmenter response contains a non-finite value");
    throw SegmenterError("segmenter sent malformed JSON: " + excerpt(line));
  }
  const std::string type = msg.value("type", "");
  if (type == "error") throw SegmenterError("segmenter reported: " + msg.value("message", std::string("(no message)")));
  if (type != "segment_response") throw SegmenterError("unexpected message type '" + type + "'");
  const std::string kind = msg.value("kind", "");
  const json& data = msg.contains("data") ? msg["data"] : json();

  ExternalReply reply;
  if (kind == "responses") {
    if (!data.is_array() || data.size() != clicks.size()) {
      throw SegmenterError(fmt::format("expected {} response rows", clicks.size()));
    }
    ResponseMap r;
    r.responses.resize(static_cast<Eigen::Index>(clicks.size()), static_cast<Eigen::Index>(voxels));
    for (std::size_t c = 0; c < clicks.size(); ++c) {
      const json& row = data[c];
      if (!row.is_array() || row.size() != voxels) {
        throw SegmenterError(fmt::format("response row {} must hold {} values", c, voxels));
      }
      for (std::size_t v = 0; v < voxels; ++v) {
        r.responses(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(v)) = finite_number(row[v]);
      }
      r.click_objects.push_back(clicks[c].object_id);
    }
    reply.responses = std::move(r);
  } else if (kind == "labels") {
    if (!data.is_array() || data.size() != voxels) throw SegmenterError(fmt::format("expected {} labels", voxels));
    std::set<ObjectId> allowed{kBackground};
    for (const auto& c : clicks) allowed.insert(c.object_id);
    Segmentation seg;
    seg.domain = Domain::kVoxel;
    seg.assignment.reserve(voxels);
    for (const auto& v : data) {
      if (!v.is_number_unsigned()) throw SegmenterError("labels must be non-negative integers");
      const auto id = v.get<std::uint64_t>();
      if (!allowed.contains(static_cast<ObjectId>(id)) || id > 0xFFFFFFFFull) {
        throw SegmenterError(fmt::format("label {} is neither background nor a clicked object", id));
      }
      seg.assignment.push_back(static_cast<ObjectId>(id));
    }
    reply.labels = std::move(seg);
  } else {
    throw SegmenterError("segment_response kind must be 'responses' or 'labels'");
  }
  return reply;
}

ExternalSegmenter::ExternalSegmenter(ExternalOptions options) : options_(std::move(options)) {
  if (options_.command.empty()) throw ConfigError("external segmenter needs a command");
  if (!(options_.timeout_seconds > 0.0)) throw ConfigError("external segmenter timeout must be positive");

  int fds[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, fds) != 0) {
    throw SegmenterError(std::string("socketpair: ") + std::strerror(errno));
  }
  const pid_t pid = ::fork();
  if (pid < 0) {
    ::close(fds[0]);
    ::close(fds[1]);
    throw SegmenterError(std::string("fork: ") + std::strerror(errno));
  }
  if (pid == 0) {
    ::dup2(fds[1], STDIN_FILENO);
    ::dup2(fds[1], STDOUT_FILENO);
    ::execl("/bin/sh", "sh", "-c", options_.command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(fds[1]);
  fd_ = fds[0];
  pid_ = pid;

  try {
    send_line(json{{"type", "hello"}, {"version", kProtocolVersion}}.dump());
    const std::string line = read_line();
    json msg;
    try {
      msg = json::parse(line);
    } catch (const json::parse_error&) {
      throw HandshakeError("segmenter greeting is not JSON: " + excerpt(line));
    }
    if (msg.value("type", "") != "hello") throw HandshakeError("segmenter did not answer hello: " + excerpt(line));
    const json version = msg.contains("version") ? msg["version"] : json();
    if (!version.is_number_integer() || version.get<int>() != kProtocolVersion) {
      throw HandshakeError(fmt::format("segmenter speaks protocol version {}, expected {}", version.dump(),
                                       kProtocolVersion));
    }
  } catch (...) {
    shutdown();
    throw;
  }
}

ExternalSegmenter::~ExternalSegmenter() { shutdown(); }

void ExternalSegmenter::shutdown() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
  if (pid_ > 0) {
    int status = 0;
    for (int i = 0; i < 50; ++i) {
      if (::waitpid(pid_, &status, WNOHANG) != 0) {
        pid_ = -1;
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, &status, 0);
    pid_ = -1;
  }
}

void ExternalSegmenter::send_line(const std::string& line) {
  if (fd_ < 0) throw SegmenterError("external segmenter is not running");
  std::string data = line + "\n";
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw SegmenterError(fmt::format("writing to segmenter failed after {} of {} bytes: {}", sent, data.size(),
                                       std::strerror(errno)));
    }
    sent += static_cast<std::size_t>(n);
  }
}

std::string ExternalSegmenter::read_line() {
  using clock = std::chrono::steady_clock;
  const auto deadline = clock::now() + std::chrono::duration<double>(options_.timeout_seconds);
  for (;;) {
    const auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - clock::now()).count();
    if (remaining <= 0) {
      const std::size_t partial = buffer_.size();
      shutdown();
      throw SegmenterError(fmt::format("segmenter timed out after {} s ({} bytes of partial response)",
                                       options_.timeout_seconds, partial));
    }
    pollfd pfd{fd_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(remaining, 1 << 30)));
    if (ready < 0) {
      if (errno == EINTR) continue;
      throw SegmenterError(std::string("poll: ") + std::strerror(errno));
    }
    if (ready == 0) continue;
    char chunk[65536];
    const ssize_t n = ::read(fd_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw SegmenterError(std::string("reading from segmenter failed: ") + std::strerror(errno));
    }
    if (n == 0) {
      const std::string partial = buffer_;
      buffer_.clear();
      shutdown();
      if (partial.empty()) throw SegmenterError("segmenter closed the stream before responding");
      throw SegmenterError(fmt::format("segmenter closed the stream mid-response after {} bytes: '{}'",
                                       partial.size(), excerpt(partial)));
    }
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

ExternalReply ExternalSegmenter::respond(const SegmentContext& ctx, std::span<const Click> clicks) {
  if (!ctx.grid) throw PreconditionError("external segmenter needs a voxel grid");
  std::lock_guard lock(mutex_);
  send_line(encode_request(*ctx.grid, clicks, ctx.window_start, ctx.window_length).dump());
  return decode_response(read_line(), clicks, ctx.grid->cells.size());
}

Segmentation ExternalSegmenter::segment(const SegmentContext& ctx, std::span<const Click> clicks,
                                        const Segmentation* previous) {
  if (!ctx.grid) throw PreconditionError("external segmenter needs a voxel grid");
  if (clicks.empty()) return previous ? *previous : null_segment(ctx.grid->cells.size());
  ExternalReply reply = respond(ctx, clicks);
  if (reply.labels) return std::move(*reply.labels);
  return resolve(*ctx.grid, clicks, *reply.responses, previous);
}

}  // namespace seg4d::segment
