#include <benchmark/benchmark.h>

#include "seg4d/rng.hpp"
#include "seg4d/segment.hpp"
#include "seg4d/spacetime.hpp"

using namespace seg4d;

namespace {

void BM_BaselineSegment(benchmark::State& state) {
  Rng rng(20);
  std::vector<Point> points(100000);
  for (auto& p : points) p.position = Vec3(uniform(rng, -30, 30), uniform(rng, -30, 30), uniform(rng, -2, 3));
  const auto grid = spacetime::voxelize(points, 0.2);
  std::vector<clicksim::Click> clicks;
  for (int i = 0; i < state.range(0); ++i) {
    clicksim::Click c;
    c.position = points[draw_index(rng, points.size())].position;
    c.object_id = static_cast<ObjectId>(1 + i % 8);
    c.order = i + 1;
    clicks.push_back(c);
  }
  for (auto _ : state) benchmark::DoNotOptimize(segment::baseline_segment(grid, clicks));
  state.counters["voxels"] = static_cast<double>(grid.cells.size());
}
BENCHMARK(BM_BaselineSegment)->Arg(1)->Arg(10)->Arg(40);

}  // namespace
