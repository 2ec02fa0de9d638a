#pragma once

#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seg4d/eval.hpp"

namespace seg4d::harness {

inline constexpr int kTraceVersion = 1;

/// Click log, one JSON record per line: a header, then per episode an
/// "episode" record followed by its "click" records.
struct TraceEpisode {
  std::string scene;
  spacetime::Window window;
  ObjectId target = 0;
  std::string id_mapping = "identity";
  std::vector<eval::EvalObject> objects;
  std::vector<double> initial_ious;
  std::vector<eval::ClickRecord> clicks;
};

struct Trace {
  eval::EvalConfig eval;
  std::string segmenter;
  std::vector<TraceEpisode> episodes;
};

nlohmann::ordered_json trace_header(const eval::EvalConfig& cfg, const std::string& segmenter);
nlohmann::ordered_json trace_episode(const std::string& scene, const eval::EpisodeResult& episode);
nlohmann::ordered_json trace_click(const std::string& scene, const eval::EpisodeResult& episode,
                                   const eval::ClickRecord& record);

void write_trace(std::ostream& out, const eval::EvalConfig& cfg, const std::string& segmenter,
                 std::span<const eval::EpisodeResult> episodes, std::span<const std::string> scene_names);

/// Parses a trace. A final line cut short (no trailing newline, not valid
/// JSON) is dropped, so an interrupted log reads up to its last full click.
Trace read_trace(std::istream& in);

}  // namespace seg4d::harness
