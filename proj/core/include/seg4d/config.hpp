#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "seg4d/eval.hpp"
#include "seg4d/loss.hpp"
#include "seg4d/synthetic.hpp"

namespace seg4d::harness {

inline constexpr const char* kDatasetRootEnv = "SEG4D_DATASET_ROOT";

struct SyntheticData {
  int scenes = 1;
  std::string spec;  // optional scene file; random scenes when empty
  ingest::RandomSceneOptions options;
};

struct DataConfig {
  std::string root;  // SemanticKITTI-style sequence directory
  std::optional<SyntheticData> synthetic;
  int first = 0;
  int scans = -1;  // -1: to the end
};

struct SegmenterConfig {
  std::string kind = "baseline";  // baseline, oracle, null, external
  double cutoff = 0.0;
  std::string command;
  double timeout = 30.0;
};

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  double snap_radius = 0.5;
  int preview_budget = 300000;
  std::string static_dir;
};

struct RunConfig {
  std::uint64_t seed = 0;
  int workers = 1;
  DataConfig data;
  eval::EvalConfig eval;
  loss::LossConfig loss;
  SegmenterConfig segmenter;
  std::string output_dir = "out";
  ServerConfig server;

  void validate() const;
};

/// "key.path=value" assignments applied on top of the document before it is
/// interpreted. Values are YAML scalars or flow collections.
using Overrides = std::vector<std::pair<std::string, std::string>>;

RunConfig parse_run_config(std::string_view text, const Overrides& overrides = {});

/// Reads a config file (empty path: defaults), applies the dataset-root
/// environment variable and then `overrides`.
RunConfig load_run_config(const std::filesystem::path& path, const Overrides& overrides = {});

/// Canonical YAML form; parsing it gives back the same configuration.
std::string format_run_config(const RunConfig& cfg);

/// Scenes described by the data section. Synthetic scene i uses seed
/// derive_seed(cfg.seed, {scene key, i}).
std::vector<eval::Scene> load_scenes(const RunConfig& cfg);

eval::SegmenterFactory make_segmenter_factory(const SegmenterConfig& cfg);

}  // namespace seg4d::harness
