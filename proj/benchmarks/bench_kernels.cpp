#include <benchmark/benchmark.h>

#include "stainlab/attention.hpp"
#include "stainlab/model.hpp"
#include "stainlab/ops.hpp"
#include "stainlab/optim.hpp"
#include "stainlab/stain.hpp"
#include "stainlab/synth.hpp"

using namespace stainlab;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool grad = false) {
  Tensor t(shape);
  for (float& v : t.data()) v = static_cast<float>(rng.normal(0.0, 1.0));
  if (grad) t.set_requires_grad(true);
  return t;
}

void BM_Conv2dForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto side = static_cast<std::size_t>(state.range(1));
  Rng rng(1);
  const Tensor x = random_tensor({4, c, side, side}, rng);
  const Tensor w = random_tensor({c, c, 3, 3}, rng);
  const Tensor b = random_tensor({c}, rng);
  for (auto _ : state) {
    Tape tape(false);
    benchmark::DoNotOptimize(ops::conv2d(tape, x, w, b, 1, 1).data().data());
  }
  state.SetItemsProcessed(state.iterations() * 4 * int64_t(c * c * 9 * side * side));
}
BENCHMARK(BM_Conv2dForward)->Args({16, 48})->Args({64, 12})->Unit(benchmark::kMicrosecond);

void BM_Conv2dBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto side = static_cast<std::size_t>(state.range(1));
  Rng rng(2);
  const Tensor x = random_tensor({4, c, side, side}, rng, true);
  const Tensor w = random_tensor({c, c, 3, 3}, rng, true);
  const Tensor b = random_tensor({c}, rng, true);
  for (auto _ : state) {
    Tape tape;
    Tensor y = ops::sum(tape, ops::conv2d(tape, x, w, b, 1, 1));
    tape.backward(y);
    benchmark::DoNotOptimize(w.grad().data());
  }
}
BENCHMARK(BM_Conv2dBackward)->Args({16, 48})->Args({64, 12})->Unit(benchmark::kMicrosecond);

void BM_Covariance(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto side = static_cast<std::size_t>(state.range(1));
  Rng rng(3);
  const Tensor f = random_tensor({4, c, side, side}, rng);
  for (auto _ : state) {
    Tape tape(false);
    benchmark::DoNotOptimize(covariance(tape, f).data().data());
  }
}
BENCHMARK(BM_Covariance)->Args({16, 48})->Args({256, 6})->Unit(benchmark::kMicrosecond);

void BM_MacenkoEstimate(benchmark::State& state) {
  SynthConfig cfg;
  cfg.image_size = static_cast<std::size_t>(state.range(0));
  Rng rng(4);
  const SynthSample s = generate(cfg, rng);
  for (auto _ : state) benchmark::DoNotOptimize(estimate_stain_matrix(s.image));
}
BENCHMARK(BM_MacenkoEstimate)->Arg(96)->Arg(256)->Unit(benchmark::kMicrosecond);

void BM_TrainStep(benchmark::State& state) {
  ModelConfig cfg;
  cfg.variant = static_cast<Variant>(state.range(0));
  cfg.input_size = 48;
  cfg.encoder_channels = {8, 16, 32, 64, 128};
  Rng rng(5);
  SegModel model = SegModel::build(cfg, rng);
  BasicTrainBatch<float> batch;
  batch.images = random_tensor({4, 3, 48, 48}, rng);
  batch.masks = Tensor({4, 1, 48, 48});
  for (float& v : batch.images.data()) v = 0.5f + 0.1f * v;
  for (std::size_t i = 0; i < batch.masks.data().size(); i += 3) batch.masks.data()[i] = 1.0f;
  if (cfg.variant != Variant::Baseline) {
    batch.stain_targets = Tensor({4, 3, 2}, 0.5f);
    batch.augmented = batch.images;
  }
  AdamW optim;
  for (auto _ : state) {
    Tape tape;
    model.params().zero_grad();
    auto [outputs, losses] = model.forward_train(tape, batch, 0.5, 1.0, rng);
    tape.backward(losses.total);
    optim.step(model.params());
  }
  state.SetLabel(to_string(cfg.variant));
}
BENCHMARK(BM_TrainStep)->Arg(int(Variant::Baseline))->Arg(int(Variant::StinvCa))->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
