#include "seg4d/harness.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "seg4d/errors.hpp"
#include "seg4d/ingest.hpp"
#include "seg4d/trace.hpp"

namespace seg4d::harness {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char* kWindowsFile = "windows.json";

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::string window_dir_name(int start) { return fmt::format("w{:06d}", start); }

std::uint16_t label_id(ObjectId id, const std::string& what) {
  if (id > 0xFFFFu) throw DataError(fmt::format("{} id {} does not fit a 16-bit instance field", what, id));
  return static_cast<std::uint16_t>(id);
}

bool class_is_thing(const ClassMap& classes, std::uint16_t semantic) {
  const auto it = classes.find(semantic);
  return it != classes.end() && it->second.thing;
}

ordered_json classes_json(const ClassMap& classes) {
  ordered_json out = ordered_json::array();
  for (const auto& [id, info] : classes) {
    out.push_back({{"id", id}, {"name", info.name}, {"thing", info.thing}, {"ignored", info.ignored}});
  }
  return out;
}

const eval::Scene& find_scene(std::span<const eval::Scene> scenes, const std::string& name, int* index) {
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (scenes[i].name == name) {
      *index = static_cast<int>(i);
      return scenes[i];
    }
  }
  if (scenes.size() == 1) {
    *index = 0;
    return scenes.front();
  }
  throw InputError(fmt::format("scene '{}' is not part of the configured data", name));
}

void write_reports(const fs::path& dir, const eval::MetricsReport& report) {
  write_text(dir / "report.json", eval::report_json(report));
  write_text(dir / "report.csv", eval::report_csv(report));
}

std::string describe(const spacetime::Window& w) { return fmt::format("[{}, {})", w.start, w.end()); }

}  // namespace

// ---------------------------------------------------------------------------

void write_window_predictions(const fs::path& dir, const WindowPredictionSet& set) {
  ordered_json doc;
  doc["scene"] = set.scene;
  doc["classes"] = classes_json(set.classes);
  ordered_json windows = ordered_json::array();
  for (const auto& w : set.windows) {
    const fs::path wdir = dir / window_dir_name(w.window.start);
    fs::create_directories(wdir);
    for (int scan = w.window.start; scan < w.window.end(); ++scan) {
      const auto ids = w.scan(scan);
      std::vector<PointLabel> labels(ids.size());
      for (std::size_t p = 0; p < ids.size(); ++p) {
        if (ids[p] == kBackground) continue;
        const auto it = w.semantic.find(ids[p]);
        labels[p] = PointLabel{it == w.semantic.end() ? std::uint16_t{0} : it->second, label_id(ids[p], "window")};
      }
      ingest::write_labels(wdir / (ingest::scan_file_stem(scan) + ".label"), labels);
    }
    windows.push_back({{"start", w.window.start}, {"length", w.window.length}, {"dir", window_dir_name(w.window.start)}});
  }
  doc["windows"] = windows;
  write_text(dir / kWindowsFile, doc.dump(2) + "\n");
}

WindowPredictionSet read_window_predictions(const fs::path& dir) {
  json doc;
  try {
    doc = json::parse(read_text(dir / kWindowsFile));
  } catch (const json::exception& e) {
    throw DataError(fmt::format("{}: {}", (dir / kWindowsFile).string(), e.what()));
  }
  WindowPredictionSet set;
  try {
    set.scene = doc.at("scene").get<std::string>();
    for (const auto& c : doc.at("classes")) {
      set.classes[c.at("id").get<std::uint16_t>()] =
          ClassInfo{c.at("name").get<std::string>(), c.at("thing").get<bool>(), c.at("ignored").get<bool>()};
    }
    for (const auto& jw : doc.at("windows")) {
      tracking::WindowPrediction w;
      w.window.start = jw.at("start").get<int>();
      w.window.length = jw.at("length").get<int>();
      if (w.window.length < 1) throw DataError("window length must be positive");
      const fs::path wdir = dir / jw.at("dir").get<std::string>();
      w.scan_offsets.push_back(0);
      for (int scan = w.window.start; scan < w.window.end(); ++scan) {
        const fs::path path = wdir / (ingest::scan_file_stem(scan) + ".label");
        if (!fs::exists(path)) throw DataError(fmt::format("window {} lacks labels for scan {}", w.window.start, scan));
        for (const auto& l : ingest::read_labels(path)) {
          w.ids.push_back(l.instance);
          if (l.instance == kBackground) continue;
          const auto [it, fresh] = w.semantic.emplace(l.instance, l.semantic);
          if (!fresh && it->second != l.semantic) {
            throw DataError(fmt::format("window {} id {} carries classes {} and {}", w.window.start, l.instance,
                                        it->second, l.semantic));
          }
        }
        w.scan_offsets.push_back(static_cast<std::uint32_t>(w.ids.size()));
      }
      for (const auto& [id, cls] : w.semantic) w.thing[id] = class_is_thing(set.classes, cls);
      set.windows.push_back(std::move(w));
    }
  } catch (const json::exception& e) {
    throw DataError(fmt::format("{}: {}", (dir / kWindowsFile).string(), e.what()));
  }
  std::sort(set.windows.begin(), set.windows.end(),
            [](const auto& a, const auto& b) { return a.window.start < b.window.start; });
  return set;
}

WindowPredictionSet predictions_from_episodes(const eval::Scene& scene, int scene_index,
                                              std::span<const eval::EpisodeResult> episodes,
                                              const eval::EvalConfig& cfg) {
  if (cfg.mode == eval::Mode::kSingle) throw InputError("single-object episodes do not form window predictions");
  WindowPredictionSet set;
  set.scene = scene.name;
  set.classes = scene.sequence.class_map;
  const int base = scene.sequence.scans.empty() ? 0 : scene.sequence.scans.front().scan_index;
  for (const auto& ep : episodes) {
    if (ep.scene != scene_index) continue;
    tracking::WindowPrediction w;
    w.window = ep.window;
    w.ids = ep.final_prediction;
    w.scan_offsets.push_back(0);
    for (int scan = ep.window.start; scan < ep.window.end(); ++scan) {
      const auto& s = scene.sequence.scans.at(static_cast<std::size_t>(scan - base));
      w.scan_offsets.push_back(w.scan_offsets.back() + static_cast<std::uint32_t>(s.points.size()));
    }
    if (w.scan_offsets.back() != w.ids.size()) {
      throw InputError(fmt::format("episode prediction of window {} does not cover its points", describe(ep.window)));
    }
    for (const auto& o : ep.objects) {
      w.semantic[o.tracklet] = o.semantic;
      w.thing[o.tracklet] = class_is_thing(set.classes, o.semantic);
    }
    set.windows.push_back(std::move(w));
  }
  return set;
}

// ---------------------------------------------------------------------------

std::vector<fs::path> cmd_synth(const RunConfig& cfg) {
  if (!cfg.data.synthetic) throw ConfigError("synth needs a data.synthetic section");
  std::vector<fs::path> out;
  for (const auto& scene : load_scenes(cfg)) {
    const fs::path dir = fs::path(cfg.output_dir) / "scenes" / scene.name;
    ingest::write_sequence(dir, scene.sequence);
    out.push_back(dir);
  }
  write_text(fs::path(cfg.output_dir) / "config.yaml", format_run_config(cfg));
  return out;
}

eval::ProtocolResult cmd_simulate(const RunConfig& cfg) {
  const auto scenes = load_scenes(cfg);
  const auto factory = make_segmenter_factory(cfg.segmenter);
  eval::ProtocolResult result = eval::run_protocol(scenes, factory, cfg.eval, cfg.workers);

  const fs::path out(cfg.output_dir);
  fs::create_directories(out);
  write_reports(out, result.report);
  std::vector<std::string> names;
  for (const auto& s : scenes) names.push_back(s.name);
  std::ostringstream trace;
  write_trace(trace, cfg.eval, cfg.segmenter.kind, result.episodes, names);
  write_text(out / "trace.jsonl", trace.str());
  write_text(out / "config.yaml", format_run_config(cfg));
  if (cfg.eval.mode != eval::Mode::kSingle) {
    for (std::size_t s = 0; s < scenes.size(); ++s) {
      const auto set = predictions_from_episodes(scenes[s], static_cast<int>(s), result.episodes, cfg.eval);
      if (!set.windows.empty()) write_window_predictions(out / "predictions" / scenes[s].name, set);
    }
  }
  return result;
}

eval::MetricsReport cmd_replay(const fs::path& trace_path, const RunConfig& cfg) {
  std::ifstream in(trace_path, std::ios::binary);
  if (!in) throw DataError("cannot open trace " + trace_path.string());
  const Trace trace = read_trace(in);
  const auto scenes = load_scenes(cfg);
  const auto segmenter = make_segmenter_factory(cfg.segmenter)();

  std::vector<eval::EpisodeResult> episodes;
  std::map<std::pair<int, int>, std::unique_ptr<eval::WindowData>> windows;
  for (const auto& te : trace.episodes) {
    int scene_index = 0;
    const auto& scene = find_scene(scenes, te.scene, &scene_index);
    auto& data = windows[{scene_index, te.window.start}];
    if (!data || !(data->window.length == te.window.length)) {
      data = std::make_unique<eval::WindowData>(eval::build_window(scene.sequence, te.window, trace.eval.voxel_size,
                                                                   trace.eval.position_backend, scene_index));
    }
    std::vector<clicksim::Click> clicks;
    for (const auto& r : te.clicks) clicks.push_back(r.click);
    const std::string where = fmt::format("scene '{}' window {}", te.scene, describe(te.window));
    eval::EpisodeResult ep = eval::replay_episode(*data, *segmenter, trace.eval, te.target, clicks,
                                                  te.id_mapping == "first_click");

    auto same_objects = ep.objects.size() == te.objects.size();
    for (std::size_t i = 0; same_objects && i < ep.objects.size(); ++i) {
      same_objects = ep.objects[i].scan == te.objects[i].scan && ep.objects[i].tracklet == te.objects[i].tracklet;
    }
    if (!same_objects) throw InputError(where + ": trace objects do not match the data");
    auto check = [&](const std::vector<double>& logged, const std::vector<double>& replayed, std::size_t step) {
      if (logged.size() != replayed.size()) throw InputError(where + ": IoU count differs from the trace");
      for (std::size_t i = 0; i < logged.size(); ++i) {
        if (logged[i] != replayed[i]) {
          throw InputError(fmt::format("{}: trace/segmenter mismatch after {} clicks: logged IoU {} for object {}, "
                                       "replayed {}",
                                       where, step, logged[i], ep.objects[i].tracklet, replayed[i]));
        }
      }
    };
    check(te.initial_ious, ep.initial_ious, 0);
    for (std::size_t c = 0; c < te.clicks.size(); ++c) check(te.clicks[c].ious, ep.clicks[c].ious, c + 1);
    episodes.push_back(std::move(ep));
  }
  if (episodes.empty()) throw InputError("trace holds no episodes");
  const auto report = eval::aggregate(episodes, scenes.front().sequence.class_map, trace.eval);
  write_reports(fs::path(cfg.output_dir) / "replay", report);
  return report;
}

std::vector<fs::path> prediction_scene_dirs(const fs::path& predictions_dir) {
  if (fs::exists(predictions_dir / kWindowsFile)) return {predictions_dir};
  if (!fs::is_directory(predictions_dir)) throw DataError("no predictions at " + predictions_dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(predictions_dir)) {
    if (entry.is_directory() && fs::exists(entry.path() / kWindowsFile)) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw DataError("no window predictions below " + predictions_dir.string());
  return out;
}

std::vector<StitchSummary> cmd_stitch(const fs::path& predictions_dir, const RunConfig& cfg, double threshold) {
  std::vector<StitchSummary> out;
  for (const auto& dir : prediction_scene_dirs(predictions_dir)) {
    const auto set = read_window_predictions(dir);
    if (set.windows.empty()) throw DataError(dir.string() + " lists no windows");
    const auto stitched = tracking::stitch(set.windows, threshold);

    std::map<ObjectId, std::uint16_t> global_class;
    for (std::size_t i = 0; i < set.windows.size(); ++i) {
      for (const auto& [local, global] : stitched.window_to_global[i]) {
        const auto it = set.windows[i].semantic.find(local);
        if (global != kBackground && it != set.windows[i].semantic.end()) global_class.emplace(global, it->second);
      }
    }
    StitchSummary summary;
    summary.scene = set.scene;
    summary.labels_dir = fs::path(cfg.output_dir) / "stitched" / set.scene / "labels";
    fs::create_directories(summary.labels_dir);
    std::set<ObjectId> used;
    for (std::size_t k = 0; k < stitched.scans.size(); ++k) {
      const int scan = stitched.first_scan + static_cast<int>(k);
      const auto& ids = stitched.scans[k];
      std::vector<PointLabel> labels(ids.size());
      for (std::size_t p = 0; p < ids.size(); ++p) {
        if (ids[p] == kBackground) continue;
        used.insert(ids[p]);
        const auto it = global_class.find(ids[p]);
        labels[p] = PointLabel{it == global_class.end() ? std::uint16_t{0} : it->second, label_id(ids[p], "global")};
      }
      ingest::write_labels(summary.labels_dir / (ingest::scan_file_stem(scan) + ".label"), labels);
    }
    summary.scans = static_cast<int>(stitched.scans.size());
    summary.objects = static_cast<int>(used.size());
    out.push_back(summary);
  }
  return out;
}

ordered_json cmd_eval(const fs::path& predictions_dir, const RunConfig& cfg) {
  const auto scenes = load_scenes(cfg);
  std::map<std::uint16_t, std::vector<double>> per_class;
  std::vector<double> all;
  eval::PanopticCounts panoptic;
  ordered_json scene_rows = ordered_json::array();

  for (const auto& dir : prediction_scene_dirs(predictions_dir)) {
    const auto set = read_window_predictions(dir);
    int scene_index = 0;
    const auto& scene = find_scene(scenes, set.scene, &scene_index);
    const ClassMap& classes = scene.sequence.class_map;
    int objects = 0;
    for (const auto& w : set.windows) {
      const auto data = eval::build_window(scene.sequence, w.window, cfg.eval.voxel_size, cfg.eval.position_backend,
                                           scene_index);
      if (w.ids.size() != data.gt.size()) {
        throw InputError(fmt::format("window {} of scene '{}' has {} predicted points, the data {}",
                                     describe(w.window), set.scene, w.ids.size(), data.gt.size()));
      }
      const auto objs = eval::window_objects(data);
      const auto ious = eval::measure(data, data.gt, w.ids, objs);
      for (std::size_t i = 0; i < objs.size(); ++i) {
        per_class[objs[i].semantic].push_back(ious[i]);
        all.push_back(ious[i]);
      }
      objects += static_cast<int>(objs.size());

      const int base = scene.sequence.scans.front().scan_index;
      for (int scan = w.window.start; scan < w.window.end(); ++scan) {
        const auto& s = scene.sequence.scans.at(static_cast<std::size_t>(scan - base));
        const auto ids = w.scan(scan);
        std::vector<eval::PanopticLabel> pred(ids.size()), gt(ids.size());
        for (std::size_t p = 0; p < ids.size(); ++p) {
          const auto& g = (*s.labels)[p];
          gt[p] = eval::PanopticLabel{g.semantic, class_is_thing(classes, g.semantic) ? g.instance : 0u};
          if (ids[p] == kBackground) continue;
          const auto cls = w.semantic.at(ids[p]);
          pred[p] = eval::PanopticLabel{cls, class_is_thing(classes, cls) ? ids[p] : 0u};
        }
        panoptic.merge(eval::panoptic_counts(pred, gt, classes));
      }
    }
    scene_rows.push_back({{"scene", set.scene}, {"windows", set.windows.size()}, {"objects", objects}});
  }

  const ClassMap& classes = scenes.front().sequence.class_map;
  ordered_json doc;
  doc["scenes"] = scene_rows;
  doc["objects"] = all.size();
  double sum = 0.0;
  for (const double v : all) sum += v;
  doc["mean_iou"] = all.empty() ? 0.0 : sum / static_cast<double>(all.size());
  ordered_json rows = ordered_json::array();
  double class_sum = 0.0;
  for (const auto& [cls, values] : per_class) {
    double s = 0.0;
    for (const double v : values) s += v;
    const double m = s / static_cast<double>(values.size());
    class_sum += m;
    const auto it = classes.find(cls);
    rows.push_back({{"class", cls}, {"name", it == classes.end() ? std::string() : it->second.name},
                    {"objects", values.size()}, {"miou", m}});
  }
  doc["miou"] = per_class.empty() ? 0.0 : class_sum / static_cast<double>(per_class.size());
  doc["per_class"] = rows;
  bool any_segment = false;
  for (const auto& [cls, n] : panoptic.tp) any_segment |= n > 0;
  for (const auto& [cls, n] : panoptic.fp) any_segment |= n > 0;
  for (const auto& [cls, n] : panoptic.fn) any_segment |= n > 0;
  if (any_segment) {
    const auto scores = eval::panoptic_scores(panoptic);
    doc["panoptic"] = {{"pq", scores.pq}, {"sq", scores.sq}, {"rq", scores.rq}};
  }
  write_text(fs::path(cfg.output_dir) / "eval.json", doc.dump(2) + "\n");
  return doc;
}

int cmd_propagate(const fs::path& source_dir, const RunConfig& cfg) {
  const Sequence source = ingest::read_sequence(source_dir);
  if (!source.labeled()) throw DataError("propagation source " + source_dir.string() + " has no labels");
  std::map<int, const Scan*> by_index;
  for (const auto& s : source.scans) by_index[s.scan_index] = &s;

  int written = 0;
  for (const auto& scene : load_scenes(cfg)) {
    const fs::path dir = fs::path(cfg.output_dir) / "propagated" / scene.name / "labels";
    fs::create_directories(dir);
    for (const auto& target : scene.sequence.scans) {
      const auto it = by_index.find(target.scan_index);
      if (it == by_index.end()) {
        throw DataError(fmt::format("propagation source has no scan {}", target.scan_index));
      }
      const auto labeled = spacetime::to_global(*it->second);
      const auto points = spacetime::to_global(target);
      const auto labels = ingest::propagate_labels_1nn(labeled, *it->second->labels, points);
      ingest::write_labels(dir / (ingest::scan_file_stem(target.scan_index) + ".label"), labels);
      ++written;
    }
  }
  return written;
}

}  // namespace seg4d::harness
