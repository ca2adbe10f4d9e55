#include <benchmark/benchmark.h>

#include "pbact/attention.hpp"
#include "pbact/losses.hpp"
#include "pbact/model.hpp"
#include "pbact/rng.hpp"
#include "pbact/tensor.hpp"

using namespace pbact;

static void BM_Matmul64(benchmark::State& state) {
  Rng rng(1);
  Tensor a = Tensor::rand_uniform({20, 64}, rng, -1, 1);
  Tensor b = Tensor::rand_uniform({64, 64}, rng, -1, 1);
  NoGradGuard no_grad;
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.values().data());
  }
}
BENCHMARK(BM_Matmul64);

static void BM_AttentionWithPb(benchmark::State& state) {
  Rng rng(2);
  const int len = 20, d = 64;
  Tensor q = Tensor::rand_uniform({len, d}, rng, -1, 1);
  Tensor k = Tensor::rand_uniform({len, d}, rng, -1, 1);
  Tensor v = Tensor::rand_uniform({len, d}, rng, -1, 1);
  ParametricBias pb{"demo", Tensor::rand_uniform({len, 5}, rng, -1, 1), true};
  PbProjection proj{0, xavier_uniform(5, d, rng), xavier_uniform(5, d, rng), 0.1};
  NoGradGuard no_grad;
  for (auto _ : state) {
    auto [out, trace] = attention_with_pb(q, k, v, pb, proj, 4);
    benchmark::DoNotOptimize(out.values().data());
  }
}
BENCHMARK(BM_AttentionWithPb);

static void BM_PolicyForward(benchmark::State& state) {
  PolicyConfig config;
  PolicyModel model(config, 7);
  Rng rng(3);
  Observation obs{{0.0, 0.0, 1.0, 0.05, -0.1, 0.0}};
  PbTable table({{"d0", Label::kSuccess}}, config.chunk, config.d_pb);
  NoGradGuard no_grad;
  for (auto _ : state) {
    auto fwd = model.forward(obs, &table.lookup("d0"));
    benchmark::DoNotOptimize(fwd.chunk.values().data());
  }
}
BENCHMARK(BM_PolicyForward);

static void BM_PolicyForwardBackward(benchmark::State& state) {
  PolicyConfig config;
  PolicyModel model(config, 7);
  Observation obs{{0.0, 0.0, 1.0, 0.05, -0.1, 0.0}};
  PbTable table({{"d0", Label::kSuccess}}, config.chunk, config.d_pb);
  Rng rng(4);
  Tensor target = Tensor::rand_uniform({config.chunk, config.action_dim}, rng, -1, 1);
  for (auto _ : state) {
    auto fwd = model.forward(obs, &table.lookup("d0"));
    Tensor loss = mean(pbact::abs(sub(fwd.chunk, target)));
    backward(loss);
    benchmark::DoNotOptimize(loss.item());
    for (auto& [name, p] : model.named_parameters()) {
      Tensor t = p;
      t.zero_grad();
    }
    table.lookup("d0").matrix.zero_grad();
  }
}
BENCHMARK(BM_PolicyForwardBackward);

static void BM_TraceDivergence(benchmark::State& state) {
  Rng rng(5);
  auto make_trace = [&] {
    AttentionTrace t;
    t.layers = 2;
    t.heads = 4;
    t.length = 20;
    for (int i = 0; i < 8; ++i)
      t.mats.push_back(softmax_rows(Tensor::rand_uniform({20, 20}, rng, -1, 1)));
    return t;
  };
  AttentionTrace a = make_trace(), b = make_trace();
  NoGradGuard no_grad;
  for (auto _ : state) {
    benchmark::DoNotOptimize(trace_divergence(a, b).item());
  }
}
BENCHMARK(BM_TraceDivergence);

BENCHMARK_MAIN();
