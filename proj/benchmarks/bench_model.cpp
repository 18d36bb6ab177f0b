#include <benchmark/benchmark.h>

#include "stspot/config.hpp"
#include "stspot/model.hpp"
#include "stspot/trainer.hpp"

using namespace stspot;

namespace {

config::RunConfig bench_config() {
  config::RunConfig cfg = config::profile_config("desk");
  cfg.gen.max_arc_sweep = 0.4;
  return cfg;
}

}  // namespace

static void BM_ForwardTrainStep(benchmark::State& state) {
  auto cfg = bench_config();
  auto net = model::SpotterModel::create(cfg.model);
  std::vector<datagen::SceneSample> batch = {
      datagen::synthesize_sample(cfg.gen, 1),
      datagen::synthesize_sample(cfg.gen, 2)};
  for (auto _ : state) {
    Rng rng(3);
    auto losses = net.forward_train(batch, rng, cfg.train.weights, false,
                                    cfg.train.gt_jitter);
    net.params().zero_grads();
    ad::backward(losses.l_match);
    benchmark::DoNotOptimize(losses.l_match.item());
  }
}
BENCHMARK(BM_ForwardTrainStep)->Unit(benchmark::kMillisecond);

static void BM_Inference(benchmark::State& state) {
  auto cfg = bench_config();
  auto net = model::SpotterModel::create(cfg.model);
  auto sample = datagen::synthesize_sample(cfg.gen, 5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(net.infer(sample, cfg.infer));
  }
}
BENCHMARK(BM_Inference)->Unit(benchmark::kMillisecond);

static void BM_SameForward(benchmark::State& state) {
  nn::ParamStore ps;
  Rng rng(17);
  same::SameConfig cfg;
  cfg.channels = 64;
  cfg.roi_size = 8;
  auto sm = same::SameModule::create(ps, cfg, rng);
  auto leaf = [&](ad::Shape shape) {
    std::vector<double> v(ad::shape_numel(shape));
    for (auto& x : v) x = rng.normal(0, 1);
    return ad::Tensor::from_data(shape, std::move(v));
  };
  ad::Tensor mask = leaf({1, 8, 8});
  same::RoiAttentionCrop crop{leaf({64, 8, 8}), leaf({64, 16, 16}),
                              leaf({64, 32, 32})};
  for (auto _ : state) {
    ad::Tensor d1 = sm.mask_transformer_encode(mask);
    auto rm = sm.hierarchical_embed(d1, crop);
    auto fm = sm.fuse_attention_masks(rm, crop);
    benchmark::DoNotOptimize(fm.sm3.values().data());
  }
}
BENCHMARK(BM_SameForward)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
