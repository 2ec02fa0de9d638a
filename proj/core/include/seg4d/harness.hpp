#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seg4d/config.hpp"
#include "seg4d/eval.hpp"
#include "seg4d/tracking.hpp"

namespace seg4d::harness {

// ---------------------------------------------------------------------------
// Window prediction files
//
// <dir>/windows.json lists the windows and the class table; every window has
// a directory w<start> with one label file per scan. The instance field holds
// the window-local id, the semantic field its class.

struct WindowPredictionSet {
  std::string scene;
  ClassMap classes;
  std::vector<tracking::WindowPrediction> windows;
};

void write_window_predictions(const std::filesystem::path& dir, const WindowPredictionSet& set);
WindowPredictionSet read_window_predictions(const std::filesystem::path& dir);

/// Window predictions of one scene from simulated episodes (multi-object
/// modes). Ids are window tracklet ids, classes the tracklet classes.
WindowPredictionSet predictions_from_episodes(const eval::Scene& scene, int scene_index,
                                              std::span<const eval::EpisodeResult> episodes,
                                              const eval::EvalConfig& cfg);

// ---------------------------------------------------------------------------
// Commands. Every command writes below cfg.output_dir.

/// Writes each configured scene as a dataset-format sequence under scenes/.
std::vector<std::filesystem::path> cmd_synth(const RunConfig& cfg);

/// Runs the protocol. Writes report.json, report.csv, trace.jsonl,
/// config.yaml and, except in single-object mode, predictions/<scene>/.
eval::ProtocolResult cmd_simulate(const RunConfig& cfg);

/// Re-applies the clicks of a trace (evaluation settings from its header,
/// data and segmenter from `cfg`), checks every logged IoU and writes
/// replay/report.json and replay/report.csv.
eval::MetricsReport cmd_replay(const std::filesystem::path& trace_path, const RunConfig& cfg);

struct StitchSummary {
  std::string scene;
  int scans = 0;
  int objects = 0;  // distinct global ids
  std::filesystem::path labels_dir;
};

/// Chains window predictions and writes per-scan label files with global
/// instance ids to stitched/<scene>/labels/. `predictions_dir` is one scene
/// directory (holding windows.json) or a directory of them.
std::vector<StitchSummary> cmd_stitch(const std::filesystem::path& predictions_dir, const RunConfig& cfg,
                         double threshold = 0.5);

/// Scene directories below `predictions_dir`, or the directory itself.
std::vector<std::filesystem::path> prediction_scene_dirs(const std::filesystem::path& predictions_dir);

/// Scores existing window predictions against the configured data:
/// per-object IoU (prediction ids read as window tracklet ids), mIoU and
/// panoptic quality. Writes eval.json and returns its content.
nlohmann::ordered_json cmd_eval(const std::filesystem::path& predictions_dir, const RunConfig& cfg);

/// Transfers labels scan by scan (matched by scan index, world frame) from
/// the labeled sequence at `source_dir` onto the configured data by nearest
/// neighbour, writing propagated/<scene>/labels/. Returns the scan count.
int cmd_propagate(const std::filesystem::path& source_dir, const RunConfig& cfg);

}  // namespace seg4d::harness
