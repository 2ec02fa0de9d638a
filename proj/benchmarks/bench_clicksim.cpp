#include <benchmark/benchmark.h>

#include "seg4d/clicksim.hpp"
#include "seg4d/rng.hpp"

using namespace seg4d;

namespace {

void BM_ClickBd(benchmark::State& state) {
  Rng rng(10);
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<Vec3> positions(n);
  for (auto& p : positions) p = Vec3(uniform(rng, -10, 10), uniform(rng, -10, 10), uniform(rng, 0, 2));
  std::vector<std::uint32_t> members;
  for (std::uint32_t i = 0; i < n; ++i) {
    if (positions[i].x() < 0) members.push_back(i);
  }
  for (auto _ : state) benchmark::DoNotOptimize(clicksim::pick_bd(members, positions));
}
BENCHMARK(BM_ClickBd)->Arg(1000)->Arg(20000);

void BM_ErrorRegions(benchmark::State& state) {
  Rng rng(11);
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<ObjectId> gt(n), pred(n);
  for (std::size_t i = 0; i < n; ++i) {
    gt[i] = static_cast<ObjectId>(i * 16 / n);
    pred[i] = draw_index(rng, 10) == 0 ? static_cast<ObjectId>(draw_index(rng, 16)) : gt[i];
  }
  for (auto _ : state) benchmark::DoNotOptimize(clicksim::error_regions(gt, pred));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ErrorRegions)->Arg(100000)->Arg(500000);

}  // namespace
