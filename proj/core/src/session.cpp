#include "seg4d/session.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "seg4d/errors.hpp"
#include "seg4d/harness.hpp"
#include "seg4d/ingest.hpp"
#include "seg4d/trace.hpp"

namespace seg4d::server {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_block(std::vector<std::uint8_t>& out, const std::vector<std::uint8_t>& block) {
  put_u32(out, static_cast<std::uint32_t>(block.size()));
  out.insert(out.end(), block.begin(), block.end());
}

std::string make_token(std::uint64_t counter) {
  static std::mutex mutex;
  static std::mt19937_64 gen{std::random_device{}()};
  std::lock_guard lock(mutex);
  return fmt::format("{:016x}{:04x}", gen(), counter & 0xFFFFu);
}

/// Ids per voxel from ids per point: the most frequent id among members,
/// ties to the lower id.
std::vector<ObjectId> voxel_majority(const spacetime::VoxelGrid& grid, std::span<const ObjectId> points) {
  std::vector<ObjectId> out(grid.cells.size(), kBackground);
  std::map<ObjectId, int> counts;
  for (std::size_t v = 0; v < grid.cells.size(); ++v) {
    counts.clear();
    for (const auto m : grid.cells[v].members) ++counts[points[m]];
    int best = -1;
    for (const auto& [id, n] : counts) {
      if (n > best) {
        best = n;
        out[v] = id;
      }
    }
  }
  return out;
}

json click_json(const Click& c) {
  return {{"pos", {c.position.x(), c.position.y(), c.position.z()}},
          {"scan", c.scan_index},
          {"object", c.object_id},
          {"order", c.order},
          {"iteration", c.iteration}};
}

json delta_json(const std::string& session, const Delta& d) {
  json out{{"type", "state_delta"}, {"session", session}, {"clicks", d.clicks}};
  json changed = json::array();
  for (const auto& [voxel, id] : d.changed) changed.push_back({voxel, id});
  out["changed"] = changed;
  if (d.ious) out["ious"] = *d.ious;
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

Session::Queue::Turn::Turn(Queue& q) : q_(q) {
  std::unique_lock lock(q_.mutex_);
  const std::uint64_t ticket = q_.next_++;
  q_.cv_.wait(lock, [&] { return q_.serving_ == ticket; });
}

Session::Queue::Turn::~Turn() {
  {
    std::lock_guard lock(q_.mutex_);
    ++q_.serving_;
  }
  q_.cv_.notify_all();
}

Session::Session(std::string id, std::string scene_name, eval::WindowData window, bool has_gt,
                 std::unique_ptr<segment::Segmenter> segmenter, const harness::RunConfig& cfg)
    : id_(std::move(id)),
      scene_name_(std::move(scene_name)),
      window_(std::move(window)),
      has_gt_(has_gt),
      segmenter_(std::move(segmenter)),
      snap_radius_(cfg.server.snap_radius),
      eval_cfg_(cfg.eval),
      segmenter_kind_(cfg.segmenter.kind) {
  // The window points at the caller's class map; keep a copy that lives with the session.
  classes_ = *window_.classes;
  window_.classes = &classes_;
  if (has_gt_) objects_ = eval::window_objects(window_);
  voxel_tree_ = spatial::KdTree(window_.grid.centers());
  state_ = std::make_shared<const State>(evaluate({}));
}

Session::State Session::evaluate(std::vector<Click> clicks) {
  segment::SegmentContext ctx;
  ctx.grid = &window_.grid;
  if (has_gt_) ctx.gt = window_.gt;
  ctx.window_start = window_.window.start;
  ctx.window_length = window_.window.length;
  const auto seg = segmenter_->segment(ctx, clicks);

  State s;
  s.points = segment::to_points(seg, window_.grid).assignment;
  s.voxels = seg.domain == segment::Domain::kVoxel ? seg.assignment : voxel_majority(window_.grid, s.points);
  if (has_gt_) {
    const auto mapping = eval::first_click_mapping(window_, clicks);
    s.ious.push_back(eval::measure(window_, window_.gt, eval::apply_mapping(s.points, mapping), objects_));
  }
  s.clicks = std::move(clicks);
  return s;
}

std::shared_ptr<const Session::State> Session::current() const {
  std::lock_guard lock(state_mutex_);
  return state_;
}

Delta Session::publish(std::shared_ptr<const State> next) {
  Delta d;
  {
    std::lock_guard lock(state_mutex_);
    for (std::size_t v = 0; v < next->voxels.size(); ++v) {
      if (state_->voxels[v] != next->voxels[v]) d.changed.emplace_back(static_cast<std::uint32_t>(v), next->voxels[v]);
    }
    state_ = next;
  }
  d.clicks = static_cast<int>(next->clicks.size());
  if (has_gt_) d.ious = next->ious.back();
  return d;
}

ClickOutcome Session::click(const ClickRequest& request) {
  Queue::Turn turn(queue_);
  const auto before = current();
  ClickOutcome out;
  if (!request.new_object && request.object == kBackground) throw SessionError("object ids start at 1");
  const auto hit = voxel_tree_.nearest(request.position);
  if (!hit.valid() || hit.squared_distance > snap_radius_ * snap_radius_) {
    out.reason = "no target";
    return out;
  }
  const auto& cell = window_.grid.cells[hit.index];
  std::uint32_t nearest = cell.members.front();
  double best = std::numeric_limits<double>::infinity();
  for (const auto m : cell.members) {
    const double d2 = spatial::squared_distance(window_.cloud.points[m].position, request.position);
    if (d2 < best) {
      best = d2;
      nearest = m;
    }
  }

  Click c;
  c.position = cell.center;
  c.scan_index = window_.cloud.points[nearest].scan_index;
  if (request.new_object) {
    ObjectId top = kBackground;
    for (const auto& prev : before->clicks) top = std::max(top, prev.object_id);
    c.object_id = top + 1;
  } else {
    c.object_id = request.object;
  }
  c.order = before->clicks.empty() ? 1 : before->clicks.back().order + 1;
  c.iteration = c.order;

  auto clicks = before->clicks;
  clicks.push_back(c);
  State next = evaluate(std::move(clicks));
  if (has_gt_) {
    auto history = before->ious;
    history.push_back(std::move(next.ious.back()));
    next.ious = std::move(history);
  }
  out.accepted = true;
  out.click = c;
  out.delta = publish(std::make_shared<const State>(std::move(next)));
  return out;
}

std::optional<Delta> Session::undo() {
  Queue::Turn turn(queue_);
  const auto before = current();
  if (before->clicks.empty()) return std::nullopt;
  auto clicks = before->clicks;
  clicks.pop_back();
  State next = evaluate(std::move(clicks));
  if (has_gt_) next.ious.assign(before->ious.begin(), before->ious.end() - 1);
  return publish(std::make_shared<const State>(std::move(next)));
}

std::vector<Click> Session::history() const { return current()->clicks; }
std::vector<ObjectId> Session::voxel_ids() const { return current()->voxels; }
std::vector<ObjectId> Session::point_ids() const { return current()->points; }

std::optional<std::vector<double>> Session::ious() const {
  const auto s = current();
  if (!has_gt_) return std::nullopt;
  return s->ious.back();
}

std::vector<ObjectId> Session::recompute_points(std::span<const Click> clicks) {
  Queue::Turn turn(queue_);
  return evaluate(std::vector<Click>(clicks.begin(), clicks.end())).points;
}

ExportResult Session::export_to(const fs::path& dir) {
  Queue::Turn turn(queue_);
  const auto s = current();

  const auto mapping = has_gt_ ? eval::first_click_mapping(window_, s->clicks) : std::map<ObjectId, ObjectId>{};
  harness::WindowPredictionSet set;
  set.scene = scene_name_;
  set.classes = *window_.classes;
  tracking::WindowPrediction w;
  w.window = window_.window;
  w.ids = s->points;
  w.scan_offsets = window_.cloud.scan_offsets;
  for (const auto& c : s->clicks) {
    const auto it = mapping.find(c.object_id);
    const bool known = it != mapping.end() && it->second != kBackground;
    w.semantic[c.object_id] = known ? window_.tracklet(it->second).semantic : std::uint16_t{0};
  }
  set.windows.push_back(std::move(w));
  harness::write_window_predictions(dir, set);

  eval::EvalConfig cfg = eval_cfg_;
  cfg.mode = window_.window.length > 1 ? eval::Mode::kFourD : eval::Mode::kMulti;
  if (window_.window.length > 1) cfg.tau = window_.window.length;
  eval::EpisodeResult ep;
  ep.window = window_.window;
  ep.objects = objects_;
  ep.id_mapping = "first_click";
  if (has_gt_) ep.initial_ious = s->ious.front();
  for (std::size_t i = 0; i < s->clicks.size(); ++i) {
    ep.clicks.push_back(eval::ClickRecord{s->clicks[i], has_gt_ ? s->ious[i + 1] : std::vector<double>{}});
  }
  std::ostringstream trace;
  const std::vector<eval::EpisodeResult> episodes{ep};
  const std::vector<std::string> names{scene_name_};
  harness::write_trace(trace, cfg, segmenter_kind_, episodes, names);
  ExportResult out;
  out.dir = dir;
  out.trace = dir / "trace.jsonl";
  std::ofstream f(out.trace, std::ios::binary | std::ios::trunc);
  if (!(f << trace.str())) throw SessionError("cannot write " + out.trace.string());
  out.scans = window_.window.length;
  return out;
}

std::vector<std::uint8_t> Session::cloud_frame(int budget) const {
  const auto s = current();
  const std::size_t voxels = window_.grid.cells.size();
  const std::size_t n = std::min<std::size_t>(voxels, static_cast<std::size_t>(std::max(budget, 1)));
  std::vector<std::uint32_t> chosen(n);
  for (std::size_t i = 0; i < n; ++i) chosen[i] = static_cast<std::uint32_t>(i * voxels / n);

  json header{{"session", id_},
              {"window", {{"start", window_.window.start}, {"length", window_.window.length}}},
              {"points", window_.cloud.size()},
              {"voxels", voxels},
              {"preview", n},
              {"has_gt", has_gt_}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> xyz, scans, vox, ids, rgb;
  xyz.reserve(n * 12);
  for (const auto v : chosen) {
    const auto p = window_.grid.cells[v].members.front();
    const auto& point = window_.cloud.points[p];
    for (int a = 0; a < 3; ++a) {
      const float f = static_cast<float>(point.position[a]);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(xyz, bits);
    }
    put_u32(scans, static_cast<std::uint32_t>(point.scan_index));
    put_u32(vox, v);
    put_u32(ids, s->voxels[v]);
    const auto gray = static_cast<std::uint8_t>(std::clamp(point.intensity, 0.0, 1.0) * 255.0 + 0.5);
    rgb.insert(rgb.end(), {gray, gray, gray});
  }

  std::vector<std::uint8_t> out{'S', '4', 'D', 'C'};
  put_u32(out, kCloudFrameVersion);
  put_block(out, std::vector<std::uint8_t>(text.begin(), text.end()));
  put_block(out, xyz);
  put_block(out, scans);
  put_block(out, vox);
  put_block(out, ids);
  put_block(out, rgb);
  return out;
}

// ---------------------------------------------------------------------------

SessionManager::SessionManager(harness::RunConfig cfg) : cfg_(std::move(cfg)) {}

const std::vector<eval::Scene>& SessionManager::scenes() {
  std::lock_guard lock(scenes_mutex_);
  if (!scenes_) scenes_ = harness::load_scenes(cfg_);
  return *scenes_;
}

std::string SessionManager::create(const SessionSpec& spec) {
  Sequence sequence;
  std::string name;
  spacetime::Window window{spec.start, spec.length};
  try {
    if (!spec.root.empty()) {
      const fs::path root(spec.root);
      if (!fs::is_directory(root)) throw DataError("no dataset at " + root.string());
      sequence = ingest::read_sequence(root, spec.start, spec.length);
      if (sequence.scans.empty()) throw DataError("no scans at " + root.string());
      name = root.filename().string();
      window = {sequence.scans.front().scan_index, static_cast<int>(sequence.scans.size())};
    } else {
      const auto& all = scenes();
      if (spec.scene < 0 || spec.scene >= static_cast<int>(all.size())) {
        throw DataError(fmt::format("scene {} does not exist ({} configured)", spec.scene, all.size()));
      }
      sequence = all[static_cast<std::size_t>(spec.scene)].sequence;
      name = all[static_cast<std::size_t>(spec.scene)].name;
    }
  } catch (const DataError& e) {
    throw SessionError(std::string("cannot load session data: ") + e.what());
  }
  if (spec.length < 1) throw SessionError("session windows need at least one scan");

  // Without labels the window is built over an all-unlabeled ground truth.
  const bool has_gt = std::all_of(sequence.scans.begin(), sequence.scans.end(), [&](const Scan& s) {
    return !window.contains(s.scan_index) || s.labeled();
  });
  if (!has_gt) {
    for (auto& s : sequence.scans) s.labels = std::vector<PointLabel>(s.points.size());
    auto& unlabeled = sequence.class_map[0];
    unlabeled.ignored = true;
    if (unlabeled.name.empty()) unlabeled.name = "unlabeled";
  }

  std::shared_ptr<Session> session;
  std::string id;
  {
    std::unique_lock lock(sessions_mutex_);
    id = make_token(++counter_);
  }
  try {
    auto data = eval::build_window(sequence, window, cfg_.eval.voxel_size, cfg_.eval.position_backend);
    session = std::make_shared<Session>(id, name, std::move(data), has_gt,
                                        harness::make_segmenter_factory(cfg_.segmenter)(), cfg_);
  } catch (const DataError& e) {
    throw SessionError(std::string("cannot open session: ") + e.what());
  }
  std::unique_lock lock(sessions_mutex_);
  sessions_[id] = std::move(session);
  return id;
}

std::shared_ptr<Session> SessionManager::get(const std::string& id) const {
  std::shared_lock lock(sessions_mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw SessionError(fmt::format("unknown session '{}'", id));
  return it->second;
}

bool SessionManager::close(const std::string& id) {
  std::unique_lock lock(sessions_mutex_);
  return sessions_.erase(id) > 0;
}

std::size_t SessionManager::size() const {
  std::shared_lock lock(sessions_mutex_);
  return sessions_.size();
}

std::vector<std::uint8_t> SessionManager::cloud_frame(const std::string& id) const {
  return get(id)->cloud_frame(cfg_.server.preview_budget);
}

json SessionManager::handle(const json& request) {
  try {
    if (!request.is_object() || !request.contains("type")) throw SessionError("message needs a 'type'");
    const auto type = request.at("type").get<std::string>();
    if (type == "create") {
      SessionSpec spec;
      spec.scene = request.value("scene", 0);
      spec.root = request.value("root", std::string());
      spec.start = request.value("start", 0);
      spec.length = request.value("length", cfg_.eval.tau);
      const auto id = create(spec);
      const auto s = get(id);
      return {{"type", "created"},
              {"session", id},
              {"points", s->points()},
              {"voxels", s->voxels()},
              {"window", {{"start", s->window().start}, {"length", s->window().length}}},
              {"has_gt", s->has_gt()},
              {"cloud", "/api/cloud/" + id}};
    }
    const auto id = request.at("session").get<std::string>();
    if (type == "close") return {{"type", "closed"}, {"session", id}, {"ok", close(id)}};
    const auto s = get(id);
    if (type == "click") {
      const auto pos = request.at("pos").get<std::vector<double>>();
      if (pos.size() != 3) throw SessionError("click position needs 3 values");
      ClickRequest r;
      r.position = Vec3(pos[0], pos[1], pos[2]);
      r.object = request.value("object", ObjectId{1});
      r.new_object = request.value("new_object", false);
      const auto outcome = s->click(r);
      if (!outcome.accepted) {
        return {{"type", "error"},
                {"code", "no_target"},
                {"msg", fmt::format("no voxel within {} m of the click", cfg_.server.snap_radius)}};
      }
      auto reply = delta_json(id, outcome.delta);
      reply["click"] = click_json(outcome.click);
      return reply;
    }
    if (type == "undo") {
      const auto d = s->undo();
      if (!d) return {{"type", "noop"}, {"session", id}, {"msg", "nothing to undo"}};
      return delta_json(id, *d);
    }
    if (type == "state") {
      json clicks = json::array();
      for (const auto& c : s->history()) clicks.push_back(click_json(c));
      json out{{"type", "state"}, {"session", id}, {"clicks", clicks}, {"voxel_ids", s->voxel_ids()}};
      if (const auto ious = s->ious()) out["ious"] = *ious;
      return out;
    }
    if (type == "export") {
      const fs::path dir = fs::path(cfg_.output_dir) / "sessions" / id;
      const auto result = s->export_to(dir);
      return {{"type", "exported"},
              {"session", id},
              {"dir", result.dir.string()},
              {"trace", result.trace.string()},
              {"scans", result.scans}};
    }
    throw SessionError(fmt::format("unknown message type '{}'", type));
  } catch (const Error& e) {
    return {{"type", "error"}, {"msg", e.what()}};
  } catch (const json::exception& e) {
    return {{"type", "error"}, {"msg", std::string("malformed message: ") + e.what()}};
  } catch (const std::filesystem::filesystem_error& e) {
    return {{"type", "error"}, {"msg", e.what()}};
  }
}

}  // namespace seg4d::server
