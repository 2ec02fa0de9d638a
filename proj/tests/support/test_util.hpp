#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <system_error>
#include <unistd.h>
#include <vector>

#include "seg4d/config.hpp"
#include "seg4d/rng.hpp"
#include "seg4d/synthetic.hpp"
#include "seg4d/types.hpp"

namespace seg4d::test {

/// Directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            ("seg4d-test-" + std::to_string(::getpid()) + "-" + std::to_string(stamp) + "-" +
             std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::vector<Vec3> random_points(Rng& rng, std::size_t n, double lo = -5.0, double hi = 5.0) {
  std::vector<Vec3> out(n);
  for (auto& p : out) p = Vec3(uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi));
  return out;
}

/// Small static scene: few objects, few points, for fast protocol runs.
inline ingest::RandomSceneOptions small_scene(int scans = 4) {
  ingest::RandomSceneOptions o;
  o.min_objects = 3;
  o.max_objects = 5;
  o.scans = scans;
  o.points_per_object = 60;
  o.ground_points = 300;
  o.extent = 15.0;
  return o;
}

inline Sequence make_scene(std::uint64_t seed, const ingest::RandomSceneOptions& options) {
  return ingest::generate_synthetic(ingest::random_scene(seed, options), seed);
}

/// Run configuration over `scenes` small synthetic scenes.
inline harness::RunConfig synthetic_config(const std::filesystem::path& out, int scenes = 2, int scans = 4) {
  harness::RunConfig cfg;
  cfg.seed = 7;
  harness::SyntheticData syn;
  syn.scenes = scenes;
  syn.options = small_scene(scans);
  cfg.data.synthetic = syn;
  cfg.output_dir = out.string();
  cfg.eval.budget = 4;
  cfg.eval.seed = cfg.seed;
  return cfg;
}

}  // namespace seg4d::test
