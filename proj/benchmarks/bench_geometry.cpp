#include <benchmark/benchmark.h>

#include "stspot/evalkit.hpp"
#include "stspot/geometry.hpp"
#include "stspot/rng.hpp"

using namespace stspot;

namespace {

geom::Polygon random_quad(Rng& rng) {
  const double cx = rng.uniform(10, 54), cy = rng.uniform(10, 54);
  const double w = rng.uniform(6, 30), h = rng.uniform(4, 14);
  const double a = rng.uniform(-0.5, 0.5);
  const double ca = std::cos(a), sa = std::sin(a);
  geom::Polygon p;
  for (auto [dx, dy] : {std::pair{-w / 2, -h / 2}, std::pair{w / 2, -h / 2},
                        std::pair{w / 2, h / 2}, std::pair{-w / 2, h / 2}})
    p.push_back({cx + dx * ca - dy * sa, cy + dx * sa + dy * ca});
  return p;
}

}  // namespace

static void BM_PolygonIoU(benchmark::State& state) {
  Rng rng(7);
  std::vector<std::pair<geom::Polygon, geom::Polygon>> pairs;
  for (int i = 0; i < 64; ++i)
    pairs.emplace_back(random_quad(rng), random_quad(rng));
  std::size_t k = 0;
  for (auto _ : state) {
    const auto& [a, b] = pairs[k++ % pairs.size()];
    benchmark::DoNotOptimize(evalkit::polygon_iou(a, b));
  }
}
BENCHMARK(BM_PolygonIoU);

static void BM_EditDistance(benchmark::State& state) {
  Rng rng(11);
  std::vector<std::string> words;
  for (int i = 0; i < 64; ++i) {
    std::string w;
    for (int j = 0; j < 8; ++j)
      w.push_back("0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ"[rng.uniform_int(0, 35)]);
    words.push_back(w);
  }
  std::size_t k = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        evalkit::edit_distance(words[k % 64], words[(k + 1) % 64]));
    ++k;
  }
}
BENCHMARK(BM_EditDistance);
