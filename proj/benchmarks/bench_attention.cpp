// Microbenchmarks for the attention slots and the full forward pass at the
// two preset widths (run with --benchmark_min_time=... to tighten noise).
#include <benchmark/benchmark.h>

#include <random>

#include "msct/adam.hpp"
#include "msct/attention.hpp"
#include "msct/autograd.hpp"
#include "msct/model.hpp"
#include "msct/objectives.hpp"

using namespace msct;

namespace {

constexpr int kBatch = 8;
constexpr int kSeq = 9;  // T = 8 frames plus the CLS slot

struct SlotSetup {
  AttentionConfig cfg;
  AttentionWeights w;
  Tensor x, x_other;
};

SlotSetup make_slot(int C, int h, bool with_cross, bool with_conv) {
  SlotSetup s;
  s.cfg.C = C;
  s.cfg.h = h;
  std::mt19937_64 rng(1);
  s.w = make_attention_weights(s.cfg, rng, with_cross, with_conv, 0.02);
  s.x = Tensor::randn({kBatch, kSeq, C}, rng);
  s.x_other = Tensor::randn({kBatch, kSeq, C}, rng);
  return s;
}

ModelConfig model_config(int C) {
  ModelConfig cfg;
  if (C == 16) {  // desk preset dimensions
    cfg.C = 16;
    cfg.h = 4;
    cfg.n_blocks = 2;
    cfg.C_a = 12;
    cfg.C_v_feat = 10;
  }  // otherwise keep the full-scale defaults (C=64, h=8, six blocks)
  return cfg;
}

void bench_mha_self(benchmark::State& state) {
  const auto s = make_slot(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)),
                           false, false);
  for (auto _ : state) {
    benchmark::DoNotOptimize(mha_self(s.x, s.w, s.cfg));
  }
}

void bench_mssa(benchmark::State& state) {
  const auto s = make_slot(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)),
                           false, true);
  for (auto _ : state) {
    benchmark::DoNotOptimize(mssa(s.x, s.w, s.cfg));
  }
}

void bench_dca(benchmark::State& state) {
  const auto s = make_slot(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)),
                           true, false);
  for (auto _ : state) {
    benchmark::DoNotOptimize(dca(s.x, s.x_other, s.w, s.cfg));
  }
}

void bench_model_forward(benchmark::State& state) {
  const ModelConfig cfg = model_config(static_cast<int>(state.range(0)));
  std::mt19937_64 rng(2);
  const Model model(cfg, rng);
  const Tensor x_a = Tensor::randn({kBatch, cfg.C_a, cfg.T}, rng);
  const Tensor v = Tensor::randn({kBatch, cfg.T, cfg.C_v_feat}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.forward(x_a, v));
  }
}

void bench_train_step(benchmark::State& state) {
  const ModelConfig cfg = model_config(static_cast<int>(state.range(0)));
  std::mt19937_64 rng(3);
  const Model model(cfg, rng);
  auto params = model.params();
  for (Tensor& p : params) p.set_requires_grad();
  Adam opt(AdamConfig{}, params);

  const Tensor x_a = Tensor::randn({kBatch, cfg.C_a, cfg.T}, rng);
  const Tensor v = Tensor::randn({kBatch, cfg.T, cfg.C_v_feat}, rng);
  std::vector<LabelTriple> labels(kBatch);
  for (int i = 0; i < kBatch; ++i) labels[i] = {i % 2, (i / 2) % 2, (i % 2) & ((i / 2) % 2)};

  for (auto _ : state) {
    GradTape tape;
    TapeScope scope(tape);
    const auto out = model.forward(x_a, v);
    const Tensor loss =
        total_loss(out.logits.a, out.logits.v, out.logits.m, out.Z_a.Z, out.Z_v.Z, labels, cfg.loss);
    for (Tensor& p : params) p.zero_grad();
    tape.backward(loss);
    opt.step(params);
    benchmark::DoNotOptimize(loss.scalar_value());
  }
}

}  // namespace

BENCHMARK(bench_mha_self)->ArgNames({"C", "h"})->Args({16, 4})->Args({64, 8});
BENCHMARK(bench_mssa)->ArgNames({"C", "h"})->Args({16, 4})->Args({64, 8});
BENCHMARK(bench_dca)->ArgNames({"C", "h"})->Args({16, 4})->Args({64, 8});
BENCHMARK(bench_model_forward)->ArgNames({"C"})->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(bench_train_step)->ArgNames({"C"})->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
