#pragma once

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seg4d/config.hpp"
#include "seg4d/eval.hpp"
#include "seg4d/spatial.hpp"

namespace seg4d::server {

using clicksim::Click;

/// Window to annotate: a configured scene by index, or a dataset directory.
struct SessionSpec {
  int scene = 0;
  std::string root;  // overrides `scene` when set
  int start = 0;     // scan index; for `root`, the first scan to read
  int length = 4;
};

/// Result of one mutation. `changed` lists (voxel, new id) pairs.
struct Delta {
  std::vector<std::pair<std::uint32_t, ObjectId>> changed;
  std::optional<std::vector<double>> ious;  // per window object, when ground truth exists
  int clicks = 0;
};

struct ClickRequest {
  Vec3 position = Vec3::Zero();
  ObjectId object = 1;
  bool new_object = false;
};

struct ClickOutcome {
  bool accepted = false;
  std::string reason;  // "no target" when rejected
  Click click;
  Delta delta;
};

struct ExportResult {
  std::filesystem::path dir;
  std::filesystem::path trace;
  int scans = 0;
};

/// Binary cloud frame: "S4DC", u32 version, then length-prefixed blocks
/// (u32 byte count each): JSON header, f32 xyz, u32 scan, u32 voxel, u32 id,
/// u8 rgb. All integers little-endian.
inline constexpr std::uint32_t kCloudFrameVersion = 1;

class Session {
 public:
  Session(std::string id, std::string scene_name, eval::WindowData window, bool has_gt,
          std::unique_ptr<segment::Segmenter> segmenter, const harness::RunConfig& cfg);

  const std::string& id() const { return id_; }
  std::size_t points() const { return window_.cloud.size(); }
  std::size_t voxels() const { return window_.grid.cells.size(); }
  const spacetime::Window& window() const { return window_.window; }
  bool has_gt() const { return has_gt_; }

  ClickOutcome click(const ClickRequest& request);
  /// nullopt when the history is empty.
  std::optional<Delta> undo();
  ExportResult export_to(const std::filesystem::path& dir);

  std::vector<Click> history() const;
  std::vector<ObjectId> voxel_ids() const;
  std::vector<ObjectId> point_ids() const;
  std::optional<std::vector<double>> ious() const;

  /// Per-point ids recomputed from the click history alone.
  std::vector<ObjectId> recompute_points(std::span<const Click> clicks);

  std::vector<std::uint8_t> cloud_frame(int budget) const;

 private:
  struct State {
    std::vector<Click> clicks;
    std::vector<ObjectId> points;
    std::vector<ObjectId> voxels;
    std::vector<std::vector<double>> ious;  // after 0..clicks.size() clicks; empty without ground truth
  };

  State evaluate(std::vector<Click> clicks);
  std::shared_ptr<const State> current() const;
  Delta publish(std::shared_ptr<const State> next);

  // Mutations are served in arrival order.
  class Queue {
   public:
    class Turn {
     public:
      explicit Turn(Queue& q);
      ~Turn();
      Turn(const Turn&) = delete;
      Turn& operator=(const Turn&) = delete;

     private:
      Queue& q_;
    };

   private:
    std::mutex mutex_;
    std::condition_variable cv_;
    std::uint64_t next_ = 0;
    std::uint64_t serving_ = 0;
  };

  std::string id_;
  std::string scene_name_;
  ClassMap classes_;
  eval::WindowData window_;
  bool has_gt_ = false;
  std::unique_ptr<segment::Segmenter> segmenter_;
  std::vector<eval::EvalObject> objects_;
  spatial::KdTree voxel_tree_;
  double snap_radius_;
  eval::EvalConfig eval_cfg_;
  std::string segmenter_kind_;

  Queue queue_;
  mutable std::mutex state_mutex_;
  std::shared_ptr<const State> state_;
};

class SessionManager {
 public:
  explicit SessionManager(harness::RunConfig cfg);

  std::string create(const SessionSpec& spec);
  std::shared_ptr<Session> get(const std::string& id) const;
  bool close(const std::string& id);
  std::size_t size() const;

  /// One protocol message in, one reply out. Failures become
  /// {"type": "error", "msg": ...}.
  nlohmann::json handle(const nlohmann::json& request);

  std::vector<std::uint8_t> cloud_frame(const std::string& id) const;

  const harness::RunConfig& config() const { return cfg_; }

 private:
  const std::vector<eval::Scene>& scenes();

  harness::RunConfig cfg_;
  std::mutex scenes_mutex_;
  std::optional<std::vector<eval::Scene>> scenes_;
  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t counter_ = 0;
};

}  // namespace seg4d::server
