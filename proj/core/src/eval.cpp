#include "seg4d/eval.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "seg4d/errors.hpp"
#include "seg4d/rng.hpp"
#include "seg4d/spatial.hpp"

namespace seg4d::eval {

namespace {

using segment::Segmentation;

// Object ids used by single-object episodes.
constexpr ObjectId kTargetId = 1;
constexpr ObjectId kOtherId = 2;

bool is_ignored(const ClassMap& classes, std::uint16_t semantic) {
  const auto it = classes.find(semantic);
  return it != classes.end() && it->second.ignored;
}

bool is_thing(const ClassMap& classes, std::uint16_t semantic) {
  const auto it = classes.find(semantic);
  return it != classes.end() && it->second.thing;
}

std::string class_name(const ClassMap& classes, std::uint16_t semantic) {
  const auto it = classes.find(semantic);
  return it == classes.end() ? fmt::format("class_{}", semantic) : it->second.name;
}

double mean(std::span<const double> values) {
  if (values.empty()) return 0.0;
  double sum = 0.0;
  for (const double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

std::string number_key(double v) { return fmt::format("{}", v); }

/// Everything one episode needs besides the segmenter.
struct EpisodeSetup {
  std::vector<ObjectId> gt;
  std::vector<EvalObject> objects;
  ObjectId target = 0;
};

ObjectId owner_of(const EpisodeSetup& setup, ObjectId id) { return setup.target != 0 ? kTargetId : id; }

EpisodeSetup multi_setup(const WindowData& window) {
  EpisodeSetup setup;
  setup.gt = window.gt;
  setup.objects = window_objects(window);
  return setup;
}

EpisodeSetup single_setup(const WindowData& window, ObjectId target) {
  const Tracklet& t = window.tracklet(target);
  EpisodeSetup setup;
  setup.target = target;
  setup.gt.resize(window.gt.size());
  for (std::size_t p = 0; p < window.gt.size(); ++p) {
    const ObjectId g = window.gt[p];
    setup.gt[p] = g == kBackground ? kBackground : (g == target ? kTargetId : kOtherId);
  }
  for (const int scan : t.scans) setup.objects.push_back(EvalObject{scan, kTargetId, target, t.semantic, t.instance});
  return setup;
}

std::vector<PanopticLabel> panoptic_from_ids(const WindowData& window, std::span<const ObjectId> ids,
                                             std::uint32_t first, std::uint32_t last) {
  std::vector<PanopticLabel> out(last - first);
  for (std::uint32_t p = first; p < last; ++p) {
    const ObjectId id = ids[p];
    if (id == kBackground || id > window.tracklets.size()) continue;
    const Tracklet& t = window.tracklet(id);
    out[p - first] = PanopticLabel{t.semantic, t.thing ? id : 0u};
  }
  return out;
}

PanopticCounts window_panoptic(const WindowData& window, std::span<const ObjectId> pred) {
  PanopticCounts total;
  for (int scan = window.window.start; scan < window.window.end(); ++scan) {
    const auto [first, last] = window.cloud.scan_range(scan);
    const auto p = panoptic_from_ids(window, pred, first, last);
    const auto g = panoptic_from_ids(window, window.gt, first, last);
    total.merge(panoptic_counts(p, g, *window.classes));
  }
  return total;
}

class EpisodeRunner {
 public:
  EpisodeRunner(const WindowData& window, const EpisodeSetup& setup, segment::Segmenter& segmenter,
                const EvalConfig& cfg)
      : window_(window), setup_(setup), segmenter_(segmenter), cfg_(cfg) {
    result_.scene = window.scene;
    result_.window = window.window;
    result_.target = setup.target;
    result_.objects = setup.objects;
    ctx_.grid = &window.grid;
    ctx_.gt = setup_.gt;
    ctx_.window_start = window.window.start;
    ctx_.window_length = window.window.length;
    if (cfg.mode != Mode::kSingle) result_.panoptic.resize(cfg.ks.size());
    snapshot_done_.assign(cfg.ks.size(), false);
  }

  void start() {
    pred_ = predict();
    result_.initial_ious = measure(window_, setup_.gt, mapped(), setup_.objects);
  }

  const std::vector<ObjectId>& pred() const { return pred_; }

  void apply(const Click& click) {
    clicks_.push_back(click);
    pred_ = predict();
    const auto view = mapped();
    result_.clicks.push_back(ClickRecord{click, measure(window_, setup_.gt, view, setup_.objects)});
    const std::size_t n = clicks_.size();
    for (std::size_t i = 0; i < cfg_.ks.size(); ++i) {
      if (!snapshot_done_[i] && static_cast<std::size_t>(cfg_.ks[i]) * setup_.objects.size() == n) snapshot(i, view);
    }
  }

  void set_first_click_mapping(bool on) {
    first_click_ = on;
    if (on) result_.id_mapping = "first_click";
  }

  EpisodeResult finish() {
    const auto view = mapped();
    for (std::size_t i = 0; i < cfg_.ks.size(); ++i) {
      if (!snapshot_done_[i]) snapshot(i, view);
    }
    result_.final_prediction = view;
    return std::move(result_);
  }

 private:
  std::vector<ObjectId> predict() {
    const Segmentation seg = segmenter_.segment(ctx_, clicks_);
    Segmentation points = segment::to_points(seg, window_.grid);
    if (points.size() != window_.gt.size()) throw SegmenterError("segmentation does not cover the window");
    return std::move(points.assignment);
  }

  std::vector<ObjectId> mapped() {
    if (!first_click_) return pred_;
    mapping_ = first_click_mapping(window_, clicks_);
    return apply_mapping(pred_, mapping_);
  }

  void snapshot(std::size_t i, const std::vector<ObjectId>& view) {
    snapshot_done_[i] = true;
    if (cfg_.mode == Mode::kSingle) return;
    result_.panoptic[i] = window_panoptic(window_, view);
  }

  const WindowData& window_;
  const EpisodeSetup& setup_;
  segment::Segmenter& segmenter_;
  const EvalConfig& cfg_;
  segment::SegmentContext ctx_;
  std::vector<Click> clicks_;
  std::vector<ObjectId> pred_;
  std::vector<bool> snapshot_done_;
  bool first_click_ = false;
  std::map<ObjectId, ObjectId> mapping_;
  EpisodeResult result_;
};

EpisodeResult simulate_episode(const WindowData& window, const EpisodeSetup& setup, segment::Segmenter& segmenter,
                               const EvalConfig& cfg) {
  EpisodeRunner runner(window, setup, segmenter, cfg);
  runner.start();

  std::map<ObjectId, int> remaining;
  clicksim::SimulationState state;
  if (setup.target != 0) {
    const int scans = static_cast<int>(window.tracklet(setup.target).scans.size());
    remaining[kTargetId] = cfg.budget * scans;
    state.pending_initial = {kTargetId};
    state.eligible = {kTargetId, kOtherId};
  } else {
    for (const auto& t : window.tracklets) {
      remaining[t.id] = cfg.budget * static_cast<int>(t.scans.size());
      state.pending_initial.push_back(t.id);
      state.eligible.insert(t.id);
    }
  }

  Rng rng(derive_seed(cfg.seed, {0xe915, static_cast<std::uint64_t>(window.scene),
                                 static_cast<std::uint64_t>(window.window.start), setup.target}));
  const auto space = window.space();
  for (;;) {
    const auto click = clicksim::next_click(setup.gt, runner.pred(), space, cfg.policy, rng, state);
    if (!click) break;
    const ObjectId owner = owner_of(setup, click->object_id);
    if (--remaining[owner] <= 0) {
      for (auto it = state.eligible.begin(); it != state.eligible.end();) {
        it = owner_of(setup, *it) == owner ? state.eligible.erase(it) : std::next(it);
      }
    }
    runner.apply(*click);
  }
  return runner.finish();
}

}  // namespace

// ---------------------------------------------------------------------------

Mode parse_mode(std::string_view name) {
  if (name == "single") return Mode::kSingle;
  if (name == "multi") return Mode::kMulti;
  if (name == "fourD" || name == "4d") return Mode::kFourD;
  throw ConfigError(fmt::format("unknown mode '{}' (expected single, multi or fourD)", name));
}

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::kSingle:
      return "single";
    case Mode::kMulti:
      return "multi";
    case Mode::kFourD:
      return "fourD";
  }
  return "multi";
}

PositionBackend parse_position_backend(std::string_view name) {
  if (name == "voxel") return PositionBackend::kVoxel;
  if (name == "point") return PositionBackend::kPoint;
  throw ConfigError(fmt::format("unknown position backend '{}' (expected voxel or point)", name));
}

std::string to_string(PositionBackend backend) { return backend == PositionBackend::kVoxel ? "voxel" : "point"; }

void EvalConfig::validate() const {
  if (budget < 1) throw ConfigError("click budget must be at least 1");
  if (thresholds.empty()) throw ConfigError("at least one NoC threshold is needed");
  for (const double q : thresholds) {
    if (!(q > 0.0 && q <= 1.0)) throw ConfigError(fmt::format("threshold {} outside (0, 1]", q));
  }
  if (ks.empty()) throw ConfigError("at least one k is needed");
  for (const int k : ks) {
    if (k < 1) throw ConfigError(fmt::format("k = {} must be positive", k));
  }
  if (tau < 1) throw ConfigError("tau must be at least 1");
  if (!(voxel_size > 0.0)) throw ConfigError("voxel size must be positive");
  policy.validate();
}

double iou(std::span<const std::uint32_t> pred_members, std::span<const std::uint32_t> gt_members) {
  if (pred_members.empty() && gt_members.empty()) return 1.0;
  std::size_t inter = 0;
  auto a = pred_members.begin();
  auto b = gt_members.begin();
  while (a != pred_members.end() && b != gt_members.end()) {
    if (*a < *b) {
      ++a;
    } else if (*b < *a) {
      ++b;
    } else {
      ++inter;
      ++a;
      ++b;
    }
  }
  const std::size_t uni = pred_members.size() + gt_members.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

WindowData build_window(const Sequence& sequence, const spacetime::Window& window, double voxel_size,
                        PositionBackend backend, int scene) {
  if (sequence.scans.empty()) throw InputError("sequence has no scans");
  const int base = sequence.scans.front().scan_index;
  const int offset = window.start - base;
  if (offset < 0 || window.length < 1 || offset + window.length > static_cast<int>(sequence.scans.size())) {
    throw InputError(fmt::format("window [{}, {}) lies outside the sequence", window.start, window.end()));
  }
  const std::span<const Scan> scans(sequence.scans.data() + offset, static_cast<std::size_t>(window.length));
  for (const auto& scan : scans) {
    if (!scan.labeled()) throw InputError(fmt::format("scan {} has no ground-truth labels", scan.scan_index));
  }

  WindowData out;
  out.scene = scene;
  out.window = window;
  out.classes = &sequence.class_map;
  out.cloud = spacetime::superimpose(scans);
  out.grid = spacetime::voxelize(out.cloud, voxel_size);

  using Key = std::pair<std::uint16_t, std::uint16_t>;
  std::vector<PointLabel> labels;
  labels.reserve(out.cloud.size());
  for (const auto& scan : scans) labels.insert(labels.end(), scan.labels->begin(), scan.labels->end());

  std::map<Key, ObjectId> keys;
  for (const auto& l : labels) {
    if (is_ignored(sequence.class_map, l.semantic)) continue;
    keys.emplace(Key{l.semantic, is_thing(sequence.class_map, l.semantic) ? l.instance : std::uint16_t{0}}, 0);
  }
  for (auto& [key, id] : keys) {
    id = static_cast<ObjectId>(out.tracklets.size() + 1);
    out.tracklets.push_back(Tracklet{id, key.first, key.second, is_thing(sequence.class_map, key.first), {}});
  }

  out.gt.assign(labels.size(), kBackground);
  out.scans.resize(labels.size());
  out.click_positions.resize(labels.size());
  std::vector<std::set<int>> seen(out.tracklets.size());
  for (std::size_t p = 0; p < labels.size(); ++p) {
    const auto& point = out.cloud.points[p];
    out.scans[p] = point.scan_index;
    out.click_positions[p] = backend == PositionBackend::kVoxel ? out.grid.cells[out.grid.point_to_cell[p]].center
                                                                 : point.position;
    const auto& l = labels[p];
    if (is_ignored(sequence.class_map, l.semantic)) continue;
    const ObjectId id = keys.at(Key{l.semantic, is_thing(sequence.class_map, l.semantic) ? l.instance : std::uint16_t{0}});
    out.gt[p] = id;
    seen[id - 1].insert(point.scan_index);
  }
  for (std::size_t i = 0; i < out.tracklets.size(); ++i) {
    out.tracklets[i].scans.assign(seen[i].begin(), seen[i].end());
  }
  return out;
}

std::vector<EvalObject> window_objects(const WindowData& window) {
  std::vector<EvalObject> out;
  for (int scan = window.window.start; scan < window.window.end(); ++scan) {
    for (const auto& t : window.tracklets) {
      if (std::binary_search(t.scans.begin(), t.scans.end(), scan)) {
        out.push_back(EvalObject{scan, t.id, t.id, t.semantic, t.instance});
      }
    }
  }
  return out;
}

std::vector<double> measure(const WindowData& window, std::span<const ObjectId> gt, std::span<const ObjectId> pred,
                            std::span<const EvalObject> objects) {
  if (gt.size() != pred.size() || gt.size() != window.cloud.size()) {
    throw InputError("prediction and ground truth do not cover the window");
  }
  struct Counts {
    std::size_t gt = 0, pred = 0, inter = 0;
  };
  std::map<int, std::map<ObjectId, Counts>> per_scan;
  for (const auto& o : objects) per_scan[o.scan][o.id];
  for (auto& [scan, counts] : per_scan) {
    const auto [first, last] = window.cloud.scan_range(scan);
    for (std::uint32_t p = first; p < last; ++p) {
      if (gt[p] == kBackground) continue;
      if (auto it = counts.find(gt[p]); it != counts.end()) {
        ++it->second.gt;
        if (pred[p] == gt[p]) ++it->second.inter;
      }
      if (auto it = counts.find(pred[p]); it != counts.end()) ++it->second.pred;
    }
  }
  std::vector<double> out;
  out.reserve(objects.size());
  for (const auto& o : objects) {
    const Counts& c = per_scan[o.scan][o.id];
    const std::size_t uni = c.gt + c.pred - c.inter;
    out.push_back(uni == 0 ? 1.0 : static_cast<double>(c.inter) / static_cast<double>(uni));
  }
  return out;
}

std::map<ObjectId, ObjectId> first_click_mapping(const WindowData& window, std::span<const Click> clicks) {
  std::map<ObjectId, ObjectId> mapping;
  if (clicks.empty()) return mapping;
  const auto centers = window.grid.centers();
  const spatial::KdTree tree(centers);
  for (const auto& c : clicks) {
    if (mapping.contains(c.object_id)) continue;
    ObjectId best = kBackground;
    if (!tree.empty()) {
      const auto cell = tree.nearest(c.position).index;
      std::map<ObjectId, int> votes;
      for (const auto m : window.grid.cells[cell].members) {
        if (window.gt[m] != kBackground) ++votes[window.gt[m]];
      }
      int top = 0;
      for (const auto& [id, n] : votes) {
        if (n > top) {
          top = n;
          best = id;
        }
      }
    }
    mapping[c.object_id] = best;
  }
  return mapping;
}

std::vector<ObjectId> apply_mapping(std::span<const ObjectId> pred, const std::map<ObjectId, ObjectId>& mapping) {
  std::vector<ObjectId> out(pred.begin(), pred.end());
  for (auto& id : out) {
    if (const auto it = mapping.find(id); it != mapping.end()) id = it->second;
  }
  return out;
}

std::map<int, int> noc_accounting_4d(std::span<const TrackletStep> steps, int budget, double q) {
  std::map<int, int> noc;
  std::set<int> scans;
  int counter = 0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (i > 0 && steps[i].time <= steps[i - 1].time) {
      throw InputError(fmt::format("tracklet events out of order at time {}", steps[i].time));
    }
    if (steps[i].clicked) ++counter;
    auto ious = steps[i].ious;
    std::sort(ious.begin(), ious.end());
    for (const auto& [scan, value] : ious) {
      scans.insert(scan);
      if (value >= q && !noc.contains(scan)) {
        noc[scan] = std::min(counter, budget);
        counter = 0;
      }
    }
  }
  for (const int scan : scans) noc.try_emplace(scan, budget);
  return noc;
}

void PanopticCounts::merge(const PanopticCounts& other) {
  for (const auto& [c, v] : other.iou_sum) iou_sum[c] += v;
  for (const auto& [c, v] : other.tp) tp[c] += v;
  for (const auto& [c, v] : other.fp) fp[c] += v;
  for (const auto& [c, v] : other.fn) fn[c] += v;
}

PanopticCounts panoptic_counts(std::span<const PanopticLabel> pred, std::span<const PanopticLabel> gt,
                               const ClassMap& classes) {
  if (classes.empty()) throw InputError("panoptic quality needs a class map");
  if (pred.size() != gt.size()) throw InputError("panoptic inputs differ in length");
  using Key = std::pair<std::uint16_t, std::uint32_t>;
  auto is_void = [&](std::uint16_t semantic) { return !classes.contains(semantic) || is_ignored(classes, semantic); };
  auto key_of = [&](const PanopticLabel& l) {
    return Key{l.semantic, is_thing(classes, l.semantic) ? l.instance : 0u};
  };

  std::map<Key, std::size_t> gt_area, pred_area, pred_void;
  std::map<std::pair<Key, Key>, std::size_t> inter;
  for (std::size_t p = 0; p < gt.size(); ++p) {
    const bool gt_void = is_void(gt[p].semantic);
    const bool pred_none = is_void(pred[p].semantic);
    if (!gt_void) ++gt_area[key_of(gt[p])];
    if (pred_none) continue;
    const Key pk = key_of(pred[p]);
    ++pred_area[pk];
    if (gt_void) {
      ++pred_void[pk];
    } else {
      ++inter[{pk, key_of(gt[p])}];
    }
  }

  PanopticCounts counts;
  std::set<Key> matched_pred, matched_gt;
  for (const auto& [pair, n] : inter) {
    const auto& [pk, gk] = pair;
    if (pk.first != gk.first) continue;
    const std::size_t vo = pred_void.contains(pk) ? pred_void[pk] : 0;
    const std::size_t uni = pred_area[pk] + gt_area[gk] - n - vo;
    const double value = static_cast<double>(n) / static_cast<double>(uni);
    if (value > 0.5) {
      matched_pred.insert(pk);
      matched_gt.insert(gk);
      counts.iou_sum[pk.first] += value;
      ++counts.tp[pk.first];
    }
  }
  for (const auto& [gk, area] : gt_area) {
    if (!matched_gt.contains(gk)) ++counts.fn[gk.first];
  }
  for (const auto& [pk, area] : pred_area) {
    if (matched_pred.contains(pk)) continue;
    const std::size_t vo = pred_void.contains(pk) ? pred_void[pk] : 0;
    if (static_cast<double>(vo) / static_cast<double>(area) > 0.5) continue;
    ++counts.fp[pk.first];
  }
  return counts;
}

PanopticScores panoptic_scores(const PanopticCounts& counts) {
  std::set<std::uint16_t> classes;
  for (const auto& [c, v] : counts.tp) classes.insert(c);
  for (const auto& [c, v] : counts.fp) classes.insert(c);
  for (const auto& [c, v] : counts.fn) classes.insert(c);
  auto get = [](const std::map<std::uint16_t, int>& m, std::uint16_t c) {
    const auto it = m.find(c);
    return it == m.end() ? 0 : it->second;
  };
  PanopticScores s;
  for (const auto c : classes) {
    const int tp = get(counts.tp, c);
    const double denom = tp + 0.5 * get(counts.fp, c) + 0.5 * get(counts.fn, c);
    if (denom == 0.0) continue;
    const auto it = counts.iou_sum.find(c);
    const double sum = it == counts.iou_sum.end() ? 0.0 : it->second;
    const double pq = sum / denom;
    const double sq = tp > 0 ? sum / tp : 0.0;
    const double rq = tp / denom;
    s.per_class[c] = {pq, sq, rq};
  }
  if (s.per_class.empty()) return s;
  for (const auto& [c, v] : s.per_class) {
    s.pq += v[0];
    s.sq += v[1];
    s.rq += v[2];
  }
  const auto n = static_cast<double>(s.per_class.size());
  s.pq /= n;
  s.sq /= n;
  s.rq /= n;
  return s;
}

PanopticScores panoptic_quality(std::span<const PanopticLabel> pred, std::span<const PanopticLabel> gt,
                                const ClassMap& classes) {
  return panoptic_scores(panoptic_counts(pred, gt, classes));
}

std::vector<EpisodeResult> run_window(const WindowData& window, segment::Segmenter& segmenter,
                                      const EvalConfig& cfg) {
  std::vector<EpisodeResult> out;
  if (window.tracklets.empty()) return out;
  if (cfg.mode == Mode::kSingle) {
    for (const auto& t : window.tracklets) {
      const EpisodeSetup setup = single_setup(window, t.id);
      out.push_back(simulate_episode(window, setup, segmenter, cfg));
    }
  } else {
    const EpisodeSetup setup = multi_setup(window);
    out.push_back(simulate_episode(window, setup, segmenter, cfg));
  }
  return out;
}

EpisodeResult replay_episode(const WindowData& window, segment::Segmenter& segmenter, const EvalConfig& cfg,
                             ObjectId target, std::span<const Click> clicks, bool first_click) {
  if (target != 0 && (target > window.tracklets.size())) {
    throw InputError(fmt::format("trace target {} is not an object of window {}", target, window.window.start));
  }
  const EpisodeSetup setup = target != 0 ? single_setup(window, target) : multi_setup(window);
  EpisodeRunner runner(window, setup, segmenter, cfg);
  runner.set_first_click_mapping(first_click);
  runner.start();
  for (const auto& c : clicks) runner.apply(c);
  return runner.finish();
}

std::size_t clicks_at_k(const EpisodeResult& episode, int k) {
  return std::min(static_cast<std::size_t>(k) * episode.objects.size(), episode.clicks.size());
}

const std::vector<double>& ious_after(const EpisodeResult& episode, std::size_t clicks) {
  return clicks == 0 ? episode.initial_ious : episode.clicks.at(clicks - 1).ious;
}

std::vector<int> episode_noc(const EpisodeResult& episode, int budget, double q) {
  // Group object indices by tracklet; each tracklet runs its own counter.
  std::map<ObjectId, std::vector<std::size_t>> by_tracklet;
  for (std::size_t j = 0; j < episode.objects.size(); ++j) by_tracklet[episode.objects[j].id].push_back(j);
  const ObjectId single_owner = episode.target != 0 ? kTargetId : kBackground;

  std::vector<int> noc(episode.objects.size(), budget);
  for (const auto& [id, members] : by_tracklet) {
    std::vector<TrackletStep> steps;
    steps.reserve(episode.clicks.size() + 1);
    auto step_at = [&](int time, bool clicked, const std::vector<double>& ious) {
      TrackletStep s{time, clicked, {}};
      for (const auto j : members) s.ious.emplace_back(episode.objects[j].scan, ious[j]);
      steps.push_back(std::move(s));
    };
    step_at(0, false, episode.initial_ious);
    for (std::size_t c = 0; c < episode.clicks.size(); ++c) {
      const ObjectId clicked = single_owner != kBackground ? single_owner : episode.clicks[c].click.object_id;
      step_at(static_cast<int>(c + 1), clicked == id, episode.clicks[c].ious);
    }
    const auto per_scan = noc_accounting_4d(steps, budget, q);
    for (const auto j : members) noc[j] = per_scan.at(episode.objects[j].scan);
  }
  return noc;
}

ClassTable miou_at_k(std::span<const ObjectRow> objects, const ClassMap& classes, std::span<const int> ks) {
  ClassTable table;
  std::map<std::uint16_t, std::vector<const ObjectRow*>> by_class;
  for (const auto& row : objects) by_class[row.semantic].push_back(&row);
  for (const auto& [semantic, rows] : by_class) {
    ClassRow cr;
    cr.semantic = semantic;
    cr.name = class_name(classes, semantic);
    cr.objects = static_cast<int>(rows.size());
    for (std::size_t i = 0; i < ks.size(); ++i) {
      std::vector<double> values;
      values.reserve(rows.size());
      for (const auto* r : rows) values.push_back(r->iou.at(i));
      cr.miou.push_back(mean(values));
    }
    table.rows.push_back(std::move(cr));
  }
  for (std::size_t i = 0; i < ks.size(); ++i) {
    std::vector<double> values;
    for (const auto& cr : table.rows) values.push_back(cr.miou[i]);
    table.headline.push_back(mean(values));
  }
  for (const auto& [semantic, info] : classes) {
    if (!info.ignored && !by_class.contains(semantic)) table.excluded.push_back(semantic);
  }
  return table;
}

MetricsReport aggregate(std::span<const EpisodeResult> episodes, const ClassMap& classes, const EvalConfig& cfg) {
  MetricsReport report;
  report.budget = cfg.budget;
  report.ks = cfg.ks;
  report.thresholds = cfg.thresholds;

  for (const auto& ep : episodes) {
    std::vector<std::vector<int>> noc;
    for (const double q : cfg.thresholds) noc.push_back(episode_noc(ep, cfg.budget, q));
    for (std::size_t j = 0; j < ep.objects.size(); ++j) {
      const auto& o = ep.objects[j];
      ObjectRow row{ep.scene, ep.window.start, o.scan, o.tracklet, o.semantic, o.instance, {}, {}};
      for (const int k : cfg.ks) row.iou.push_back(ious_after(ep, clicks_at_k(ep, k)).at(j));
      for (const auto& per_q : noc) row.noc.push_back(per_q[j]);
      report.objects.push_back(std::move(row));
    }
  }

  for (std::size_t i = 0; i < cfg.ks.size(); ++i) {
    std::vector<double> values;
    for (const auto& r : report.objects) values.push_back(r.iou[i]);
    report.iou_at_k.push_back(mean(values));
  }
  for (std::size_t i = 0; i < cfg.thresholds.size(); ++i) {
    std::vector<double> values;
    for (const auto& r : report.objects) values.push_back(static_cast<double>(r.noc[i]));
    report.noc_at_q.push_back(mean(values));
  }
  ClassTable table = miou_at_k(report.objects, classes, cfg.ks);
  report.miou_at_k = std::move(table.headline);
  report.per_class = std::move(table.rows);
  report.excluded_classes = std::move(table.excluded);

  if (cfg.mode != Mode::kSingle) {
    std::vector<PanopticScores> scores;
    for (std::size_t i = 0; i < cfg.ks.size(); ++i) {
      PanopticCounts total;
      for (const auto& ep : episodes) {
        if (i < ep.panoptic.size()) total.merge(ep.panoptic[i]);
      }
      scores.push_back(panoptic_scores(total));
    }
    report.panoptic = std::move(scores);
  }
  return report;
}

std::vector<spacetime::Window> evaluation_windows(const Sequence& sequence, const EvalConfig& cfg) {
  return spacetime::windows(sequence, cfg.mode == Mode::kFourD ? cfg.tau : 1);
}

ProtocolResult run_protocol(std::span<const Scene> scenes, const SegmenterFactory& factory, const EvalConfig& cfg,
                            int workers) {
  cfg.validate();
  if (scenes.empty()) throw InputError("no scenes to evaluate");
  struct Job {
    int scene;
    spacetime::Window window;
  };
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    if (!scenes[s].sequence.labeled()) throw InputError(fmt::format("scene '{}' has no labels", scenes[s].name));
    for (const auto& w : evaluation_windows(scenes[s].sequence, cfg)) jobs.push_back(Job{static_cast<int>(s), w});
  }

  std::vector<std::vector<EpisodeResult>> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    std::unique_ptr<segment::Segmenter> segmenter;
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      try {
        if (!segmenter) segmenter = factory();
        const auto& job = jobs[j];
        const WindowData data = build_window(scenes[static_cast<std::size_t>(job.scene)].sequence, job.window,
                                             cfg.voxel_size, cfg.position_backend, job.scene);
        results[j] = run_window(data, *segmenter, cfg);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(jobs.size())));
  if (n == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    if (!errors[j]) continue;
    const auto& job = jobs[j];
    const std::string where = fmt::format("scene '{}' window {}", scenes[static_cast<std::size_t>(job.scene)].name,
                                          job.window.start);
    try {
      std::rethrow_exception(errors[j]);
    } catch (const Error& e) {
      throw Error(e.kind(), where + ": " + e.what());
    }
  }

  ProtocolResult out;
  for (auto& r : results) {
    for (auto& ep : r) out.episodes.push_back(std::move(ep));
  }
  if (out.episodes.empty()) throw InputError("the data holds no objects to evaluate");
  out.report = aggregate(out.episodes, scenes.front().sequence.class_map, cfg);
  return out;
}

ProtocolResult run_protocol(const Sequence& sequence, segment::Segmenter& segmenter, const EvalConfig& cfg) {
  cfg.validate();
  if (!sequence.labeled()) throw InputError("sequence has no labels");
  ProtocolResult out;
  for (const auto& w : evaluation_windows(sequence, cfg)) {
    const WindowData data = build_window(sequence, w, cfg.voxel_size, cfg.position_backend);
    for (auto& ep : run_window(data, segmenter, cfg)) out.episodes.push_back(std::move(ep));
  }
  if (out.episodes.empty()) throw InputError("the data holds no objects to evaluate");
  out.report = aggregate(out.episodes, sequence.class_map, cfg);
  return out;
}

std::string report_json(const MetricsReport& report) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["budget"] = report.budget;
  j["ks"] = report.ks;
  j["thresholds"] = report.thresholds;
  ordered_json summary;
  for (std::size_t i = 0; i < report.ks.size(); ++i) {
    summary["iou_at_k"][std::to_string(report.ks[i])] = report.iou_at_k[i];
  }
  for (std::size_t i = 0; i < report.thresholds.size(); ++i) {
    summary["noc_at_q"][number_key(report.thresholds[i])] = report.noc_at_q[i];
  }
  for (std::size_t i = 0; i < report.ks.size(); ++i) {
    summary["miou_at_k"][std::to_string(report.ks[i])] = report.miou_at_k[i];
  }
  j["summary"] = summary;

  ordered_json classes = ordered_json::array();
  for (const auto& row : report.per_class) {
    ordered_json c;
    c["class"] = row.semantic;
    c["name"] = row.name;
    c["objects"] = row.objects;
    for (std::size_t i = 0; i < report.ks.size(); ++i) c["miou_at_k"][std::to_string(report.ks[i])] = row.miou[i];
    classes.push_back(std::move(c));
  }
  j["per_class"] = std::move(classes);
  j["excluded_classes"] = report.excluded_classes;

  if (report.panoptic) {
    ordered_json pan = ordered_json::array();
    for (std::size_t i = 0; i < report.ks.size(); ++i) {
      const auto& s = (*report.panoptic)[i];
      ordered_json e;
      e["k"] = report.ks[i];
      e["pq"] = s.pq;
      e["sq"] = s.sq;
      e["rq"] = s.rq;
      ordered_json per = ordered_json::array();
      for (const auto& [c, v] : s.per_class) per.push_back({{"class", c}, {"pq", v[0]}, {"sq", v[1]}, {"rq", v[2]}});
      e["per_class"] = std::move(per);
      pan.push_back(std::move(e));
    }
    j["panoptic"] = std::move(pan);
  }

  ordered_json objects = ordered_json::array();
  for (const auto& r : report.objects) {
    ordered_json o;
    o["scene"] = r.scene;
    o["window"] = r.window_start;
    o["scan"] = r.scan;
    o["object"] = r.object;
    o["class"] = r.semantic;
    o["instance"] = r.instance;
    o["iou_at_k"] = r.iou;
    o["noc"] = r.noc;
    objects.push_back(std::move(o));
  }
  j["objects"] = std::move(objects);
  return j.dump(2) + "\n";
}

std::string report_csv(const MetricsReport& report) {
  std::string out = "scene,window,scan,object,class,instance,k,iou";
  for (const double q : report.thresholds) out += fmt::format(",noc@{}", q);
  out += "\n";
  for (const auto& r : report.objects) {
    for (std::size_t i = 0; i < report.ks.size(); ++i) {
      out += fmt::format("{},{},{},{},{},{},{},{}", r.scene, r.window_start, r.scan, r.object, r.semantic, r.instance,
                         report.ks[i], r.iou[i]);
      for (const int n : r.noc) out += fmt::format(",{}", n);
      out += "\n";
    }
  }
  return out;
}

}  // namespace seg4d::eval
