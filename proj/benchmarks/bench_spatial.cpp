#include <benchmark/benchmark.h>

#include "seg4d/ingest.hpp"
#include "seg4d/rng.hpp"
#include "seg4d/spacetime.hpp"
#include "seg4d/spatial.hpp"

using namespace seg4d;

namespace {

std::vector<Point> cloud(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Point> out(n);
  for (auto& p : out) p.position = Vec3(uniform(rng, -40, 40), uniform(rng, -40, 40), uniform(rng, -2, 3));
  return out;
}

void BM_Voxelize(benchmark::State& state) {
  const auto points = cloud(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(spacetime::voxelize(points, 0.1));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Voxelize)->Arg(10000)->Arg(120000);

void BM_KdTreeNearest(benchmark::State& state) {
  const auto points = cloud(static_cast<std::size_t>(state.range(0)), 2);
  std::vector<Vec3> positions;
  for (const auto& p : points) positions.push_back(p.position);
  const spatial::KdTree tree(positions);
  const auto queries = cloud(1000, 3);
  for (auto _ : state) {
    for (const auto& q : queries) benchmark::DoNotOptimize(tree.nearest(q.position));
  }
  state.SetItemsProcessed(state.iterations() * 1000);
}
BENCHMARK(BM_KdTreeNearest)->Arg(10000)->Arg(120000);

void BM_Propagate1nn(benchmark::State& state) {
  const auto source = cloud(static_cast<std::size_t>(state.range(0)), 4);
  const auto target = cloud(static_cast<std::size_t>(state.range(0)), 5);
  std::vector<PointLabel> labels(source.size(), PointLabel{10, 1});
  for (auto _ : state) benchmark::DoNotOptimize(ingest::propagate_labels_1nn(source, labels, target));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Propagate1nn)->Arg(10000)->Arg(120000);

}  // namespace
