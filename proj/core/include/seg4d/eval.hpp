#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "seg4d/clicksim.hpp"
#include "seg4d/segment.hpp"
#include "seg4d/spacetime.hpp"
#include "seg4d/types.hpp"

namespace seg4d::eval {

using clicksim::Click;

enum class Mode { kSingle, kMulti, kFourD };
enum class PositionBackend { kVoxel, kPoint };

Mode parse_mode(std::string_view name);
std::string to_string(Mode mode);
PositionBackend parse_position_backend(std::string_view name);
std::string to_string(PositionBackend backend);

struct EvalConfig {
  int budget = 10;
  std::vector<double> thresholds{0.80, 0.85, 0.90};
  std::vector<int> ks{1, 2, 3, 4, 5, 10};
  Mode mode = Mode::kMulti;
  int tau = 4;
  double voxel_size = 0.1;
  PositionBackend position_backend = PositionBackend::kVoxel;
  clicksim::ClickPolicy policy;
  std::uint64_t seed = 0;

  void validate() const;
};

/// |a ∩ b| / |a ∪ b| over sorted index sets; two empty sets give 1.
double iou(std::span<const std::uint32_t> pred_members, std::span<const std::uint32_t> gt_members);

// ---------------------------------------------------------------------------
// Object universe of one window

/// Things are identified by (class, instance), stuff by class alone, across
/// all scans of a window.
struct Tracklet {
  ObjectId id = 0;
  std::uint16_t semantic = 0;
  std::uint16_t instance = 0;
  bool thing = false;
  std::vector<int> scans;  // scans the tracklet has points in, ascending
};

struct WindowData {
  int scene = 0;
  spacetime::Window window;
  spacetime::SpacetimeCloud cloud;
  spacetime::VoxelGrid grid;
  std::vector<ObjectId> gt;          // tracklet id per point; 0 for ignored points
  std::vector<Tracklet> tracklets;   // tracklets[i].id == i + 1
  std::vector<Vec3> click_positions; // per point, after the position backend
  std::vector<int> scans;            // per point
  const ClassMap* classes = nullptr;

  clicksim::ClickSpace space() const { return {click_positions, scans}; }
  const Tracklet& tracklet(ObjectId id) const { return tracklets.at(id - 1); }
};

WindowData build_window(const Sequence& sequence, const spacetime::Window& window, double voxel_size,
                        PositionBackend backend, int scene = 0);

/// One evaluated object: a tracklet restricted to one scan.
struct EvalObject {
  int scan = 0;
  ObjectId id = 0;       // id in the episode's ground-truth space
  ObjectId tracklet = 0; // tracklet id within the window
  std::uint16_t semantic = 0;
  std::uint16_t instance = 0;
};

/// Every (scan, tracklet) pair of the window, scan-major.
std::vector<EvalObject> window_objects(const WindowData& window);

/// IoU of every object on the points of its scan. Ground-truth points with
/// id 0 are ignored. `pred` is per point.
std::vector<double> measure(const WindowData& window, std::span<const ObjectId> gt, std::span<const ObjectId> pred,
                            std::span<const EvalObject> objects);

/// Maps each clicked id to the tracklet owning most non-ignored points of the
/// voxel nearest its first click (ties to the lower tracklet id; 0 if none).
std::map<ObjectId, ObjectId> first_click_mapping(const WindowData& window, std::span<const Click> clicks);

std::vector<ObjectId> apply_mapping(std::span<const ObjectId> pred, const std::map<ObjectId, ObjectId>& mapping);

// ---------------------------------------------------------------------------
// 4D click accounting

/// One step in the life of a tracklet: whether it received the click of this
/// step, and its IoU in every scan afterwards.
struct TrackletStep {
  int time = 0;
  bool clicked = false;
  std::vector<std::pair<int, double>> ious;  // (scan, IoU)
};

/// Per-scan NoC under the tracklet click counter with reset: the counter grows
/// on each click; when a scan first reaches q it records the counter (capped
/// at B) and the counter restarts from 0. Scans reaching q at the same step
/// are finalized in ascending scan order. Scans never reaching q record B.
std::map<int, int> noc_accounting_4d(std::span<const TrackletStep> steps, int budget, double q);

// ---------------------------------------------------------------------------
// Panoptic quality

struct PanopticLabel {
  std::uint16_t semantic = 0;
  std::uint32_t instance = 0;
};

struct PanopticCounts {
  std::map<std::uint16_t, double> iou_sum;
  std::map<std::uint16_t, int> tp, fp, fn;

  void merge(const PanopticCounts& other);
};

struct PanopticScores {
  double pq = 0.0;
  double sq = 0.0;
  double rq = 0.0;
  std::map<std::uint16_t, std::array<double, 3>> per_class;  // pq, sq, rq
};

/// Segments match when they share a class and their IoU exceeds 0.5. Points
/// whose ground-truth class is ignored are void: they are removed from
/// predicted segments, and predictions mostly made of void are not counted as
/// false positives.
PanopticCounts panoptic_counts(std::span<const PanopticLabel> pred, std::span<const PanopticLabel> gt,
                               const ClassMap& classes);
PanopticScores panoptic_scores(const PanopticCounts& counts);
PanopticScores panoptic_quality(std::span<const PanopticLabel> pred, std::span<const PanopticLabel> gt,
                                const ClassMap& classes);

// ---------------------------------------------------------------------------
// Protocol

struct ClickRecord {
  Click click;
  std::vector<double> ious;  // per object, after this click
};

struct EpisodeResult {
  int scene = 0;
  spacetime::Window window;
  ObjectId target = 0;  // single-object mode: the target tracklet, else 0
  std::vector<EvalObject> objects;
  std::vector<double> initial_ious;
  std::vector<ClickRecord> clicks;
  std::vector<PanopticCounts> panoptic;  // per entry of cfg.ks; empty in single mode
  std::string id_mapping = "identity";
  std::vector<ObjectId> final_prediction;  // per point, after the last click
};

using SegmenterFactory = std::function<std::unique_ptr<segment::Segmenter>()>;

/// Simulated episodes for one window: one per target object in single mode,
/// one covering every object otherwise.
std::vector<EpisodeResult> run_window(const WindowData& window, segment::Segmenter& segmenter,
                                      const EvalConfig& cfg);

/// Re-applies a fixed click list. With `first_click` ids are mapped to
/// tracklets through first_click_mapping; otherwise click ids are tracklet ids
/// (or the single-mode target/background ids when `target` is set).
EpisodeResult replay_episode(const WindowData& window, segment::Segmenter& segmenter, const EvalConfig& cfg,
                             ObjectId target, std::span<const Click> clicks, bool first_click);

struct ClassRow {
  std::uint16_t semantic = 0;
  std::string name;
  int objects = 0;
  std::vector<double> miou;  // per entry of ks
};

struct ObjectRow {
  int scene = 0;
  int window_start = 0;
  int scan = 0;
  ObjectId object = 0;  // tracklet id within the window
  std::uint16_t semantic = 0;
  std::uint16_t instance = 0;
  std::vector<double> iou;  // per entry of ks
  std::vector<int> noc;     // per entry of thresholds
};

struct MetricsReport {
  int budget = 0;
  std::vector<int> ks;
  std::vector<double> thresholds;
  std::vector<double> iou_at_k;
  std::vector<double> noc_at_q;
  std::vector<double> miou_at_k;
  std::vector<ClassRow> per_class;
  std::vector<std::uint16_t> excluded_classes;  // in the class map but without objects
  std::optional<std::vector<PanopticScores>> panoptic;  // per entry of ks
  std::vector<ObjectRow> objects;
};

/// State after c_k = min(k * |objects|, clicks) clicks.
std::size_t clicks_at_k(const EpisodeResult& episode, int k);
const std::vector<double>& ious_after(const EpisodeResult& episode, std::size_t clicks);

/// Per-object NoC for one threshold, in episode object order.
std::vector<int> episode_noc(const EpisodeResult& episode, int budget, double q);

/// Mean over classes of the per-class mean IoU at k; classes without objects
/// are excluded and listed.
struct ClassTable {
  std::vector<ClassRow> rows;
  std::vector<double> headline;  // per entry of ks
  std::vector<std::uint16_t> excluded;
};
ClassTable miou_at_k(std::span<const ObjectRow> objects, const ClassMap& classes, std::span<const int> ks);

MetricsReport aggregate(std::span<const EpisodeResult> episodes, const ClassMap& classes, const EvalConfig& cfg);

struct Scene {
  std::string name;
  Sequence sequence;
};

struct ProtocolResult {
  MetricsReport report;
  std::vector<EpisodeResult> episodes;
};

/// Windows of every scene, evaluated with `workers` threads. Output does not
/// depend on the worker count.
ProtocolResult run_protocol(std::span<const Scene> scenes, const SegmenterFactory& factory, const EvalConfig& cfg,
                            int workers = 1);
ProtocolResult run_protocol(const Sequence& sequence, segment::Segmenter& segmenter, const EvalConfig& cfg);

std::vector<spacetime::Window> evaluation_windows(const Sequence& sequence, const EvalConfig& cfg);

// ---------------------------------------------------------------------------
// Report files

std::string report_json(const MetricsReport& report);
std::string report_csv(const MetricsReport& report);

}  // namespace seg4d::eval
