#include "seg4d/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include "seg4d/errors.hpp"
#include "seg4d/external.hpp"
#include "seg4d/ingest.hpp"
#include "seg4d/rng.hpp"

namespace seg4d::harness {

namespace {

constexpr std::uint64_t kSceneKey = 0x5ce7e;

void check_keys(const YAML::Node& node, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!node) return;
  if (!node.IsMap()) throw ConfigError(fmt::format("'{}' must be a mapping", where));
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!ok.contains(key)) {
      throw ConfigError(fmt::format("unknown key '{}{}{}'", where, where.empty() ? "" : ".", key));
    }
  }
}

template <typename T>
T get(const YAML::Node& node, const char* key, const T& fallback, const std::string& where) {
  if (!node || !node[key]) return fallback;
  try {
    return node[key].as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(fmt::format("'{}.{}' has the wrong type", where, key));
  }
}

void set_path(YAML::Node& root, const std::string& path, const std::string& value) {
  if (path.empty()) throw ConfigError("empty override key");
  std::vector<std::string> parts;
  std::stringstream ss(path);
  for (std::string part; std::getline(ss, part, '.');) {
    if (part.empty()) throw ConfigError(fmt::format("malformed override key '{}'", path));
    parts.push_back(part);
  }
  YAML::Node parsed;
  try {
    parsed = YAML::Load(value);
  } catch (const YAML::Exception& e) {
    throw ConfigError(fmt::format("override {}={}: {}", path, value, e.what()));
  }
  YAML::Node cur = root;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!cur[parts[i]] || !cur[parts[i]].IsMap()) cur[parts[i]] = YAML::Node(YAML::NodeType::Map);
    YAML::Node next = cur[parts[i]];
    cur.reset(next);
  }
  cur[parts.back()] = parsed;
}

std::vector<double> read_doubles(const YAML::Node& node, const char* key, std::vector<double> fallback,
                                 const std::string& where) {
  if (!node || !node[key]) return fallback;
  return get<std::vector<double>>(node, key, fallback, where);
}

}  // namespace

void RunConfig::validate() const {
  if (workers < 1) throw ConfigError("workers must be at least 1");
  const bool synthetic = data.synthetic.has_value();
  if (synthetic == !data.root.empty()) throw ConfigError("set exactly one of data.root and data.synthetic");
  if (synthetic) {
    const auto& s = *data.synthetic;
    if (s.scenes < 1) throw ConfigError("data.synthetic.scenes must be at least 1");
    if (s.spec.empty()) {
      if (s.options.min_objects < 1 || s.options.max_objects < s.options.min_objects) {
        throw ConfigError("data.synthetic needs 1 <= min_objects <= max_objects");
      }
      if (s.options.scans < 1) throw ConfigError("data.synthetic.scans must be at least 1");
    }
  }
  if (data.first < 0) throw ConfigError("data.first must be non-negative");
  eval.validate();
  loss.validate();
  static const std::set<std::string> kinds{"baseline", "oracle", "null", "external"};
  if (!kinds.contains(segmenter.kind)) {
    throw ConfigError(fmt::format("unknown segmenter '{}' (expected baseline, oracle, null or external)",
                                  segmenter.kind));
  }
  if (segmenter.kind == "external" && segmenter.command.empty()) {
    throw ConfigError("segmenter.command is required for the external segmenter");
  }
  if (!(segmenter.timeout > 0.0)) throw ConfigError("segmenter.timeout must be positive");
  if (output_dir.empty()) throw ConfigError("output.dir must not be empty");
  if (!(server.snap_radius > 0.0)) throw ConfigError("server.snap_radius must be positive");
  if (server.port < 0 || server.port > 65535) throw ConfigError("server.port out of range");
  if (server.preview_budget < 1) throw ConfigError("server.preview_budget must be positive");
}

RunConfig parse_run_config(std::string_view text, const Overrides& overrides) {
  YAML::Node root;
  try {
    root = text.empty() ? YAML::Node(YAML::NodeType::Map) : YAML::Load(std::string(text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  if (!root.IsMap()) throw ConfigError("config must be a mapping");
  for (const auto& [key, value] : overrides) set_path(root, key, value);

  check_keys(root, "", {"seed", "workers", "data", "eval", "voxel", "policy", "loss", "segmenter", "output", "server"});
  RunConfig cfg;
  cfg.seed = get<std::uint64_t>(root, "seed", cfg.seed, "");
  cfg.workers = get<int>(root, "workers", cfg.workers, "");

  const YAML::Node data = root["data"];
  check_keys(data, "data", {"root", "synthetic", "first", "scans"});
  cfg.data.root = get<std::string>(data, "root", "", "data");
  cfg.data.first = get<int>(data, "first", 0, "data");
  cfg.data.scans = get<int>(data, "scans", -1, "data");
  if (data && data["synthetic"] && !data["synthetic"].IsNull()) {
    const YAML::Node syn = data["synthetic"];
    check_keys(syn, "data.synthetic",
               {"scenes", "spec", "scans", "min_objects", "max_objects", "points_per_object", "ground_points",
                "extent", "moving_fraction", "noise"});
    SyntheticData s;
    const std::string w = "data.synthetic";
    s.scenes = get<int>(syn, "scenes", 1, w);
    s.spec = get<std::string>(syn, "spec", "", w);
    auto& o = s.options;
    o.scans = get<int>(syn, "scans", o.scans, w);
    o.min_objects = get<int>(syn, "min_objects", o.min_objects, w);
    o.max_objects = get<int>(syn, "max_objects", o.max_objects, w);
    o.points_per_object = get<int>(syn, "points_per_object", o.points_per_object, w);
    o.ground_points = get<int>(syn, "ground_points", o.ground_points, w);
    o.extent = get<double>(syn, "extent", o.extent, w);
    o.moving_fraction = get<double>(syn, "moving_fraction", o.moving_fraction, w);
    o.noise = get<double>(syn, "noise", o.noise, w);
    cfg.data.synthetic = s;
  }

  const YAML::Node ev = root["eval"];
  check_keys(ev, "eval", {"mode", "tau", "budget", "thresholds", "ks"});
  cfg.eval.mode = eval::parse_mode(get<std::string>(ev, "mode", eval::to_string(cfg.eval.mode), "eval"));
  cfg.eval.tau = get<int>(ev, "tau", cfg.eval.tau, "eval");
  cfg.eval.budget = get<int>(ev, "budget", cfg.eval.budget, "eval");
  cfg.eval.thresholds = read_doubles(ev, "thresholds", cfg.eval.thresholds, "eval");
  cfg.eval.ks = get<std::vector<int>>(ev, "ks", cfg.eval.ks, "eval");

  const YAML::Node vox = root["voxel"];
  check_keys(vox, "voxel", {"size"});
  cfg.eval.voxel_size = get<double>(vox, "size", cfg.eval.voxel_size, "voxel");

  const YAML::Node pol = root["policy"];
  check_keys(pol, "policy", {"region_selection", "initial_click", "refinement_click", "position_backend", "dbscan"});
  auto& policy = cfg.eval.policy;
  policy.region_selection = clicksim::parse_region_selection(
      get<std::string>(pol, "region_selection", clicksim::to_string(policy.region_selection), "policy"));
  policy.initial_click = clicksim::parse_click_strategy(
      get<std::string>(pol, "initial_click", clicksim::to_string(policy.initial_click), "policy"));
  policy.refinement_click = clicksim::parse_click_strategy(
      get<std::string>(pol, "refinement_click", clicksim::to_string(policy.refinement_click), "policy"));
  cfg.eval.position_backend = eval::parse_position_backend(
      get<std::string>(pol, "position_backend", eval::to_string(cfg.eval.position_backend), "policy"));
  if (pol && pol["dbscan"]) {
    const YAML::Node db = pol["dbscan"];
    check_keys(db, "policy.dbscan", {"eps", "min_pts"});
    policy.dbscan.eps = get<double>(db, "eps", policy.dbscan.eps, "policy.dbscan");
    policy.dbscan.min_pts = get<int>(db, "min_pts", policy.dbscan.min_pts, "policy.dbscan");
  }

  const YAML::Node loss = root["loss"];
  check_keys(loss, "loss", {"lambda_ce", "lambda_dice", "w_max", "w_min", "delta", "eps_dice"});
  cfg.loss.lambda_ce = get<double>(loss, "lambda_ce", cfg.loss.lambda_ce, "loss");
  cfg.loss.lambda_dice = get<double>(loss, "lambda_dice", cfg.loss.lambda_dice, "loss");
  cfg.loss.w_max = get<double>(loss, "w_max", cfg.loss.w_max, "loss");
  cfg.loss.w_min = get<double>(loss, "w_min", cfg.loss.w_min, "loss");
  cfg.loss.delta = get<double>(loss, "delta", cfg.loss.delta, "loss");
  cfg.loss.eps_dice = get<double>(loss, "eps_dice", cfg.loss.eps_dice, "loss");

  const YAML::Node seg = root["segmenter"];
  check_keys(seg, "segmenter", {"kind", "cutoff", "command", "timeout"});
  cfg.segmenter.kind = get<std::string>(seg, "kind", cfg.segmenter.kind, "segmenter");
  cfg.segmenter.cutoff = get<double>(seg, "cutoff", cfg.segmenter.cutoff, "segmenter");
  cfg.segmenter.command = get<std::string>(seg, "command", cfg.segmenter.command, "segmenter");
  cfg.segmenter.timeout = get<double>(seg, "timeout", cfg.segmenter.timeout, "segmenter");

  const YAML::Node out = root["output"];
  check_keys(out, "output", {"dir"});
  cfg.output_dir = get<std::string>(out, "dir", cfg.output_dir, "output");

  const YAML::Node srv = root["server"];
  check_keys(srv, "server", {"host", "port", "snap_radius", "preview_budget", "static_dir"});
  cfg.server.host = get<std::string>(srv, "host", cfg.server.host, "server");
  cfg.server.port = get<int>(srv, "port", cfg.server.port, "server");
  cfg.server.snap_radius = get<double>(srv, "snap_radius", cfg.server.snap_radius, "server");
  cfg.server.preview_budget = get<int>(srv, "preview_budget", cfg.server.preview_budget, "server");
  cfg.server.static_dir = get<std::string>(srv, "static_dir", cfg.server.static_dir, "server");

  cfg.eval.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path, const Overrides& overrides) {
  std::string text;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    text = buffer.str();
  }
  Overrides all;
  if (const char* env = std::getenv(kDatasetRootEnv); env && *env) {
    // Only for configs reading a dataset; synthetic runs are left alone.
    YAML::Node probe = text.empty() ? YAML::Node() : YAML::Load(text);
    const bool synthetic = probe.IsMap() && probe["data"] && probe["data"]["synthetic"];
    if (!synthetic) all.emplace_back("data.root", env);
  }
  all.insert(all.end(), overrides.begin(), overrides.end());
  return parse_run_config(text, all);
}

std::string format_run_config(const RunConfig& cfg) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "seed" << YAML::Value << cfg.seed;
  out << YAML::Key << "workers" << YAML::Value << cfg.workers;

  out << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
  if (!cfg.data.root.empty()) out << YAML::Key << "root" << YAML::Value << cfg.data.root;
  out << YAML::Key << "first" << YAML::Value << cfg.data.first;
  out << YAML::Key << "scans" << YAML::Value << cfg.data.scans;
  if (cfg.data.synthetic) {
    const auto& s = *cfg.data.synthetic;
    out << YAML::Key << "synthetic" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "scenes" << YAML::Value << s.scenes;
    if (!s.spec.empty()) out << YAML::Key << "spec" << YAML::Value << s.spec;
    out << YAML::Key << "scans" << YAML::Value << s.options.scans;
    out << YAML::Key << "min_objects" << YAML::Value << s.options.min_objects;
    out << YAML::Key << "max_objects" << YAML::Value << s.options.max_objects;
    out << YAML::Key << "points_per_object" << YAML::Value << s.options.points_per_object;
    out << YAML::Key << "ground_points" << YAML::Value << s.options.ground_points;
    out << YAML::Key << "extent" << YAML::Value << s.options.extent;
    out << YAML::Key << "moving_fraction" << YAML::Value << s.options.moving_fraction;
    out << YAML::Key << "noise" << YAML::Value << s.options.noise;
    out << YAML::EndMap;
  }
  out << YAML::EndMap;

  out << YAML::Key << "eval" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "mode" << YAML::Value << eval::to_string(cfg.eval.mode);
  out << YAML::Key << "tau" << YAML::Value << cfg.eval.tau;
  out << YAML::Key << "budget" << YAML::Value << cfg.eval.budget;
  out << YAML::Key << "thresholds" << YAML::Value << YAML::Flow << cfg.eval.thresholds;
  out << YAML::Key << "ks" << YAML::Value << YAML::Flow << cfg.eval.ks;
  out << YAML::EndMap;

  out << YAML::Key << "voxel" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "size" << YAML::Value << cfg.eval.voxel_size << YAML::EndMap;

  const auto& p = cfg.eval.policy;
  out << YAML::Key << "policy" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "region_selection" << YAML::Value << clicksim::to_string(p.region_selection);
  out << YAML::Key << "initial_click" << YAML::Value << clicksim::to_string(p.initial_click);
  out << YAML::Key << "refinement_click" << YAML::Value << clicksim::to_string(p.refinement_click);
  out << YAML::Key << "position_backend" << YAML::Value << eval::to_string(cfg.eval.position_backend);
  out << YAML::Key << "dbscan" << YAML::Value << YAML::Flow << YAML::BeginMap;
  out << YAML::Key << "eps" << YAML::Value << p.dbscan.eps;
  out << YAML::Key << "min_pts" << YAML::Value << p.dbscan.min_pts << YAML::EndMap;
  out << YAML::EndMap;

  out << YAML::Key << "loss" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "lambda_ce" << YAML::Value << cfg.loss.lambda_ce;
  out << YAML::Key << "lambda_dice" << YAML::Value << cfg.loss.lambda_dice;
  out << YAML::Key << "w_max" << YAML::Value << cfg.loss.w_max;
  out << YAML::Key << "w_min" << YAML::Value << cfg.loss.w_min;
  out << YAML::Key << "delta" << YAML::Value << cfg.loss.delta;
  out << YAML::Key << "eps_dice" << YAML::Value << cfg.loss.eps_dice;
  out << YAML::EndMap;

  out << YAML::Key << "segmenter" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "kind" << YAML::Value << cfg.segmenter.kind;
  out << YAML::Key << "cutoff" << YAML::Value << cfg.segmenter.cutoff;
  if (!cfg.segmenter.command.empty()) out << YAML::Key << "command" << YAML::Value << cfg.segmenter.command;
  out << YAML::Key << "timeout" << YAML::Value << cfg.segmenter.timeout;
  out << YAML::EndMap;

  out << YAML::Key << "output" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "dir" << YAML::Value << cfg.output_dir << YAML::EndMap;

  out << YAML::Key << "server" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "host" << YAML::Value << cfg.server.host;
  out << YAML::Key << "port" << YAML::Value << cfg.server.port;
  out << YAML::Key << "snap_radius" << YAML::Value << cfg.server.snap_radius;
  out << YAML::Key << "preview_budget" << YAML::Value << cfg.server.preview_budget;
  if (!cfg.server.static_dir.empty()) out << YAML::Key << "static_dir" << YAML::Value << cfg.server.static_dir;
  out << YAML::EndMap;

  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

std::vector<eval::Scene> load_scenes(const RunConfig& cfg) {
  std::vector<eval::Scene> scenes;
  if (!cfg.data.root.empty()) {
    const std::filesystem::path root(cfg.data.root);
    if (!std::filesystem::is_directory(root)) throw DataError("dataset root " + root.string() + " is not a directory");
    scenes.push_back(eval::Scene{root.filename().string(), ingest::read_sequence(root, cfg.data.first, cfg.data.scans)});
    return scenes;
  }
  const auto& syn = *cfg.data.synthetic;
  std::optional<ingest::SceneSpec> fixed;
  if (!syn.spec.empty()) fixed = ingest::load_scene_spec(syn.spec);
  for (int i = 0; i < syn.scenes; ++i) {
    const std::uint64_t seed = derive_seed(cfg.seed, {kSceneKey, static_cast<std::uint64_t>(i)});
    const ingest::SceneSpec spec = fixed ? *fixed : ingest::random_scene(seed, syn.options);
    const std::uint64_t gen_seed = fixed && fixed->seed && syn.scenes == 1 ? *fixed->seed : seed;
    Sequence seq = ingest::generate_synthetic(spec, gen_seed);
    if (cfg.data.first > 0 || cfg.data.scans >= 0) {
      const auto first = std::min<std::size_t>(static_cast<std::size_t>(cfg.data.first), seq.scans.size());
      const auto count = cfg.data.scans < 0 ? seq.scans.size() - first
                                            : std::min<std::size_t>(static_cast<std::size_t>(cfg.data.scans),
                                                                    seq.scans.size() - first);
      seq.scans = std::vector<Scan>(seq.scans.begin() + static_cast<std::ptrdiff_t>(first),
                                    seq.scans.begin() + static_cast<std::ptrdiff_t>(first + count));
    }
    scenes.push_back(eval::Scene{fmt::format("s{:03d}", i), std::move(seq)});
  }
  return scenes;
}

eval::SegmenterFactory make_segmenter_factory(const SegmenterConfig& cfg) {
  if (cfg.kind == "baseline") {
    const segment::BaselineOptions options{cfg.cutoff};
    return [options] { return std::make_unique<segment::BaselineSegmenter>(options); };
  }
  if (cfg.kind == "oracle") return [] { return std::make_unique<segment::OracleSegmenter>(); };
  if (cfg.kind == "null") return [] { return std::make_unique<segment::NullSegmenter>(); };
  if (cfg.kind == "external") {
    const segment::ExternalOptions options{cfg.command, cfg.timeout};
    return [options] { return std::make_unique<segment::ExternalSegmenter>(options); };
  }
  throw ConfigError(fmt::format("unknown segmenter '{}'", cfg.kind));
}

}  // namespace seg4d::harness
