#include "seg4d/trace.hpp"

#include <fmt/format.h>

#include "seg4d/errors.hpp"

namespace seg4d::harness {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

ordered_json window_json(const spacetime::Window& w) {
  ordered_json j;
  j["start"] = w.start;
  j["length"] = w.length;
  return j;
}

template <typename T>
T field(const json& j, const char* key, int line) {
  if (!j.contains(key)) throw InputError(fmt::format("trace line {}: missing '{}'", line, key));
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InputError(fmt::format("trace line {}: '{}' has the wrong type", line, key));
  }
}

eval::EvalConfig parse_header(const json& j, int line) {
  if (field<std::string>(j, "type", line) != "header") throw InputError("trace does not start with a header");
  const int version = field<int>(j, "version", line);
  if (version != kTraceVersion) throw InputError(fmt::format("unsupported trace version {}", version));
  eval::EvalConfig cfg;
  try {
    cfg.mode = eval::parse_mode(field<std::string>(j, "mode", line));
    cfg.tau = field<int>(j, "tau", line);
    cfg.budget = field<int>(j, "budget", line);
    cfg.ks = field<std::vector<int>>(j, "ks", line);
    cfg.thresholds = field<std::vector<double>>(j, "thresholds", line);
    cfg.voxel_size = field<double>(j, "voxel_size", line);
    cfg.position_backend = eval::parse_position_backend(field<std::string>(j, "position_backend", line));
    cfg.seed = field<std::uint64_t>(j, "seed", line);
    const json policy = field<json>(j, "policy", line);
    cfg.policy.region_selection = clicksim::parse_region_selection(field<std::string>(policy, "region_selection", line));
    cfg.policy.initial_click = clicksim::parse_click_strategy(field<std::string>(policy, "initial_click", line));
    cfg.policy.refinement_click = clicksim::parse_click_strategy(field<std::string>(policy, "refinement_click", line));
    const json db = field<json>(policy, "dbscan", line);
    cfg.policy.dbscan.eps = field<double>(db, "eps", line);
    cfg.policy.dbscan.min_pts = field<int>(db, "min_pts", line);
    cfg.validate();
  } catch (const ConfigError& e) {
    throw InputError(std::string("trace header: ") + e.what());
  }
  return cfg;
}

}  // namespace

ordered_json trace_header(const eval::EvalConfig& cfg, const std::string& segmenter) {
  ordered_json j;
  j["type"] = "header";
  j["version"] = kTraceVersion;
  j["mode"] = eval::to_string(cfg.mode);
  j["tau"] = cfg.tau;
  j["budget"] = cfg.budget;
  j["ks"] = cfg.ks;
  j["thresholds"] = cfg.thresholds;
  j["voxel_size"] = cfg.voxel_size;
  j["position_backend"] = eval::to_string(cfg.position_backend);
  j["seed"] = cfg.seed;
  j["segmenter"] = segmenter;
  ordered_json policy;
  policy["region_selection"] = clicksim::to_string(cfg.policy.region_selection);
  policy["initial_click"] = clicksim::to_string(cfg.policy.initial_click);
  policy["refinement_click"] = clicksim::to_string(cfg.policy.refinement_click);
  policy["dbscan"] = {{"eps", cfg.policy.dbscan.eps}, {"min_pts", cfg.policy.dbscan.min_pts}};
  j["policy"] = policy;
  return j;
}

ordered_json trace_episode(const std::string& scene, const eval::EpisodeResult& episode) {
  ordered_json j;
  j["type"] = "episode";
  j["scene"] = scene;
  j["window"] = window_json(episode.window);
  j["target"] = episode.target;
  j["id_mapping"] = episode.id_mapping;
  ordered_json objects = ordered_json::array();
  for (const auto& o : episode.objects) {
    objects.push_back({{"scan", o.scan}, {"object", o.tracklet}, {"class", o.semantic}, {"instance", o.instance}});
  }
  j["objects"] = objects;
  j["initial_ious"] = episode.initial_ious;
  return j;
}

ordered_json trace_click(const std::string& scene, const eval::EpisodeResult& episode,
                         const eval::ClickRecord& record) {
  const auto& c = record.click;
  ordered_json j;
  j["type"] = "click";
  j["scene"] = scene;
  j["window"] = window_json(episode.window);
  j["target"] = episode.target;
  j["scan"] = c.scan_index;
  j["position"] = {c.position.x(), c.position.y(), c.position.z()};
  j["object"] = c.object_id;
  j["order"] = c.order;
  j["iteration"] = c.iteration;
  j["ious"] = record.ious;
  return j;
}

void write_trace(std::ostream& out, const eval::EvalConfig& cfg, const std::string& segmenter,
                 std::span<const eval::EpisodeResult> episodes, std::span<const std::string> scene_names) {
  out << trace_header(cfg, segmenter).dump() << '\n';
  for (const auto& ep : episodes) {
    const std::string& scene = scene_names[static_cast<std::size_t>(ep.scene)];
    out << trace_episode(scene, ep).dump() << '\n';
    for (const auto& rec : ep.clicks) out << trace_click(scene, ep, rec).dump() << '\n';
  }
}

Trace read_trace(std::istream& in) {
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);

  Trace trace;
  bool have_header = false;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const int no = static_cast<int>(i) + 1;
    if (lines[i].empty()) continue;
    json j;
    try {
      j = json::parse(lines[i]);
    } catch (const json::parse_error&) {
      if (i + 1 == lines.size()) break;  // interrupted write
      throw InputError(fmt::format("trace line {} is not valid JSON", no));
    }
    if (!j.is_object()) throw InputError(fmt::format("trace line {} is not a record", no));
    if (!have_header) {
      trace.eval = parse_header(j, no);
      trace.segmenter = field<std::string>(j, "segmenter", no);
      have_header = true;
      continue;
    }
    const auto type = field<std::string>(j, "type", no);
    const json w = field<json>(j, "window", no);
    const spacetime::Window window{field<int>(w, "start", no), field<int>(w, "length", no)};
    if (type == "episode") {
      TraceEpisode ep;
      ep.scene = field<std::string>(j, "scene", no);
      ep.window = window;
      ep.target = field<ObjectId>(j, "target", no);
      ep.id_mapping = field<std::string>(j, "id_mapping", no);
      if (ep.id_mapping != "identity" && ep.id_mapping != "first_click") {
        throw InputError(fmt::format("trace line {}: unknown id mapping '{}'", no, ep.id_mapping));
      }
      for (const auto& o : field<json>(j, "objects", no)) {
        eval::EvalObject obj;
        obj.scan = field<int>(o, "scan", no);
        obj.tracklet = field<ObjectId>(o, "object", no);
        obj.semantic = field<std::uint16_t>(o, "class", no);
        obj.instance = field<std::uint16_t>(o, "instance", no);
        obj.id = ep.target != 0 ? 1 : obj.tracklet;
        ep.objects.push_back(obj);
      }
      ep.initial_ious = field<std::vector<double>>(j, "initial_ious", no);
      trace.episodes.push_back(std::move(ep));
    } else if (type == "click") {
      if (trace.episodes.empty()) throw InputError(fmt::format("trace line {}: click before any episode", no));
      auto& ep = trace.episodes.back();
      if (field<std::string>(j, "scene", no) != ep.scene || !(window == ep.window) ||
          field<ObjectId>(j, "target", no) != ep.target) {
        throw InputError(fmt::format("trace line {}: click does not belong to the current episode", no));
      }
      eval::ClickRecord rec;
      const auto pos = field<std::vector<double>>(j, "position", no);
      if (pos.size() != 3) throw InputError(fmt::format("trace line {}: position needs 3 values", no));
      rec.click.position = Vec3(pos[0], pos[1], pos[2]);
      rec.click.scan_index = field<int>(j, "scan", no);
      rec.click.object_id = field<ObjectId>(j, "object", no);
      rec.click.order = field<int>(j, "order", no);
      rec.click.iteration = field<int>(j, "iteration", no);
      rec.ious = field<std::vector<double>>(j, "ious", no);
      ep.clicks.push_back(std::move(rec));
    } else {
      throw InputError(fmt::format("trace line {}: unknown record type '{}'", no, type));
    }
  }
  if (!have_header) throw InputError("trace is empty");
  return trace;
}

}  // namespace seg4d::harness
