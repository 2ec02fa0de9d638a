// seg4d: command-line front end for simulation runs, metrics, stitching,
// replay, label propagation and the annotation server.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include <fmt/format.h>

#include "seg4d/config.hpp"
#include "seg4d/errors.hpp"
#include "seg4d/harness.hpp"
#include "seg4d/http_server.hpp"
#include "seg4d/session.hpp"

namespace {

using seg4d::harness::Overrides;

struct Flags {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::string> out, root, mode, segmenter, command, region, initial, refinement, backend;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers, tau, budget, scenes;
  std::optional<double> voxel;
  std::optional<std::string> host;
  std::optional<int> port;
};

Overrides overrides_from(const Flags& f) {
  Overrides o;
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw seg4d::ConfigError("--set expects key=value, got '" + s + "'");
    o.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  auto add = [&o](const char* key, const auto& value) {
    if (value) o.emplace_back(key, fmt::format("{}", *value));
  };
  add("output.dir", f.out);
  if (f.root) {
    o.emplace_back("data.root", *f.root);
    o.emplace_back("data.synthetic", "~");
  }
  add("data.synthetic.scenes", f.scenes);
  add("seed", f.seed);
  add("workers", f.workers);
  add("eval.mode", f.mode);
  add("eval.tau", f.tau);
  add("eval.budget", f.budget);
  add("voxel.size", f.voxel);
  add("segmenter.kind", f.segmenter);
  add("segmenter.command", f.command);
  add("policy.region_selection", f.region);
  add("policy.initial_click", f.initial);
  add("policy.refinement_click", f.refinement);
  add("policy.position_backend", f.backend);
  add("server.host", f.host);
  add("server.port", f.port);
  return o;
}

void print_summary(const seg4d::eval::MetricsReport& r) {
  for (std::size_t i = 0; i < r.ks.size(); ++i) {
    fmt::print("IoU@{:<3} {:.4f}   mIoU@{:<3} {:.4f}\n", r.ks[i], r.iou_at_k[i], r.ks[i], r.miou_at_k[i]);
  }
  for (std::size_t i = 0; i < r.thresholds.size(); ++i) {
    fmt::print("NoC@{:.2f} {:.4f}\n", r.thresholds[i], r.noc_at_q[i]);
  }
  if (r.panoptic && !r.panoptic->empty()) {
    const auto& p = r.panoptic->front();
    fmt::print("PQ@{} {:.4f}  SQ {:.4f}  RQ {:.4f}\n", r.ks.front(), p.pq, p.sq, p.rq);
  }
  fmt::print("objects {}\n", r.objects.size());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interactive 4D LiDAR segmentation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  app.add_option("-c,--config", f.config, "YAML run configuration")->check(CLI::ExistingFile);
  app.add_option("--set", f.sets, "Override a config key: key.path=value (repeatable)");
  app.add_option("-o,--out", f.out, "Output directory (output.dir)");
  app.add_option("--root", f.root, "Dataset sequence directory (data.root)");
  app.add_option("--scenes", f.scenes, "Number of synthetic scenes (data.synthetic.scenes)");
  app.add_option("--seed", f.seed, "Run seed (seed)");
  app.add_option("-j,--workers", f.workers, "Worker threads (workers)");
  app.add_option("--mode", f.mode, "single, multi or fourD (eval.mode)");
  app.add_option("--tau", f.tau, "Scans per window in fourD mode (eval.tau)");
  app.add_option("--budget", f.budget, "Click budget per object (eval.budget)");
  app.add_option("--voxel", f.voxel, "Voxel size in meters (voxel.size)");
  app.add_option("--segmenter", f.segmenter, "baseline, oracle, null or external (segmenter.kind)");
  app.add_option("--segmenter-command", f.command, "External segmenter command line (segmenter.command)");
  app.add_option("--region", f.region, "si or max_size (policy.region_selection)");
  app.add_option("--initial-click", f.initial, "Initial click strategy (policy.initial_click)");
  app.add_option("--refinement-click", f.refinement, "Refinement click strategy (policy.refinement_click)");
  app.add_option("--position-backend", f.backend, "voxel or point (policy.position_backend)");

  auto* synth = app.add_subcommand("synth", "Write synthetic scenes in dataset layout");
  auto* simulate = app.add_subcommand("simulate", "Run the simulated click protocol");
  auto* config = app.add_subcommand("config", "Print the effective configuration");

  std::string predictions;
  auto* eval = app.add_subcommand("eval", "Score existing window predictions");
  eval->add_option("-p,--predictions", predictions, "Predictions directory")->required();

  double threshold = 0.5;
  auto* stitch = app.add_subcommand("stitch", "Chain window predictions into global ids");
  stitch->add_option("-p,--predictions", predictions, "Predictions directory")->required();
  stitch->add_option("--threshold", threshold, "Association IoU threshold");

  std::string trace;
  auto* replay = app.add_subcommand("replay", "Re-apply a click trace and recompute metrics");
  replay->add_option("-t,--trace", trace, "Trace file (trace.jsonl)")->required()->check(CLI::ExistingFile);

  std::string source;
  auto* propagate = app.add_subcommand("propagate", "Nearest-neighbour label transfer onto the configured data");
  propagate->add_option("-s,--source", source, "Labeled source sequence")->required();

  auto* serve = app.add_subcommand("serve", "Start the annotation server");
  serve->add_option("--host", f.host, "Bind address (server.host)");
  serve->add_option("--port", f.port, "Port, 0 for any free port (server.port)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const auto cfg = seg4d::harness::load_run_config(f.config, overrides_from(f));
    if (config->parsed()) {
      std::cout << seg4d::harness::format_run_config(cfg);
    } else if (synth->parsed()) {
      for (const auto& dir : seg4d::harness::cmd_synth(cfg)) fmt::print("{}\n", dir.string());
    } else if (simulate->parsed()) {
      const auto result = seg4d::harness::cmd_simulate(cfg);
      print_summary(result.report);
      fmt::print("wrote {}\n", cfg.output_dir);
    } else if (eval->parsed()) {
      std::cout << seg4d::harness::cmd_eval(predictions, cfg).dump(2) << '\n';
    } else if (stitch->parsed()) {
      for (const auto& s : seg4d::harness::cmd_stitch(predictions, cfg, threshold)) {
        fmt::print("{}: {} scans, {} objects -> {}\n", s.scene, s.scans, s.objects, s.labels_dir.string());
      }
    } else if (replay->parsed()) {
      print_summary(seg4d::harness::cmd_replay(trace, cfg));
    } else if (propagate->parsed()) {
      fmt::print("propagated {} scans\n", seg4d::harness::cmd_propagate(source, cfg));
    } else if (serve->parsed()) {
      seg4d::server::SessionManager sessions(cfg);
      seg4d::server::serve(sessions, [&](int port) {
        fmt::print("listening on http://{}:{}\n", cfg.server.host, port);
        std::fflush(stdout);
      });
    }
  } catch (const seg4d::Error& e) {
    fmt::print(stderr, "seg4d: {}\n", e.what());
    return seg4d::exit_code(e);
  } catch (const std::exception& e) {
    fmt::print(stderr, "seg4d: {}\n", e.what());
    return 1;
  }
  return 0;
}
