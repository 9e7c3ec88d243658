#include <benchmark/benchmark.h>

#include <cmath>
#include <numbers>

#include "unist/audio_features.hpp"
#include "unist/decoding.hpp"
#include "unist/losses.hpp"
#include "unist/model.hpp"
#include "unist/numerics.hpp"
#include "unist/training.hpp"

namespace {

namespace nn = unist::nn;
using unist::Rng;

nn::Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, bool grad = false) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = rng.uniform_real(-1.0, 1.0);
  return nn::Tensor::matrix(r, c, std::move(v), grad);
}

unist::audio::FeatureMatrix random_features(std::size_t frames, std::size_t dim, Rng& rng) {
  unist::audio::FeatureMatrix m(frames, dim);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t f = 0; f < dim; ++f) m(t, f) = rng.uniform_real(-1.0, 1.0);
  return m;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const auto a = random_matrix(n, n, rng), b = random_matrix(n, n, rng);
  for (auto _ : state) benchmark::DoNotOptimize(nn::matmul(a, b).data().data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  auto a = random_matrix(n, n, rng, true), b = random_matrix(n, n, rng, true);
  for (auto _ : state) {
    a.zero_grad();
    b.zero_grad();
    nn::sum(nn::matmul(a, b)).backward();
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(64);

void BM_LogMel(benchmark::State& state) {
  const auto seconds = static_cast<double>(state.range(0));
  unist::audio::Waveform wave;
  wave.samples.resize(static_cast<std::size_t>(16000 * seconds));
  for (std::size_t i = 0; i < wave.samples.size(); ++i)
    wave.samples[i] = 0.5 * std::sin(2.0 * std::numbers::pi * 440.0 * static_cast<double>(i) / 16000.0);
  unist::audio::FeatureConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(unist::audio::log_mel(wave, cfg).values().data());
  state.SetLabel(std::to_string(state.range(0)) + " s of audio");
}
BENCHMARK(BM_LogMel)->Arg(1)->Arg(10);

void BM_CtcLoss(benchmark::State& state) {
  const auto T = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  const auto lp = nn::log_softmax_rows(random_matrix(T, 128, rng));
  std::vector<int> target(T / 4);
  for (auto& t : target) t = static_cast<int>(rng.uniform_int(5, 127));
  for (auto _ : state) benchmark::DoNotOptimize(unist::loss::ctc_loss(lp, target, 4).item());
}
BENCHMARK(BM_CtcLoss)->Arg(32)->Arg(128);

void BM_ToySampleStep(benchmark::State& state) {
  auto cfg = unist::model::ModelConfig::toy();
  unist::model::UnifiedModel model(cfg, 4);
  Rng rng(5);
  unist::train::Sample s;
  s.id = "bench";
  s.task = unist::Task::ST;
  s.src_lang = {"es"};
  s.tgt_lang = {"en"};
  s.speech = std::make_shared<unist::audio::FeatureMatrix>(random_features(80, 40, rng));
  s.transcript_ids = {10, 20, 30};
  s.tgt_ids = {40, 50, 60};
  unist::train::LossContext ctx;
  ctx.label_smoothing = 0.1;
  for (auto _ : state) {
    model.params().zero_grad();
    auto out = unist::train::sample_loss(model, s, ctx);
    out.main.backward();
  }
  state.SetLabel("forward + backward, toy model, 80 frames");
}
BENCHMARK(BM_ToySampleStep)->Unit(benchmark::kMillisecond);

void BM_BeamSearch(benchmark::State& state) {
  const auto cfg = unist::model::ModelConfig::toy();
  const unist::model::UnifiedModel model(cfg, 6);
  const std::vector<int> src{10, 11, 12, 13, unist::text::kEos};
  const unist::decode::ModelScorer scorer(model, model.encode_text(src, {"es"}), {"en"});
  const std::vector<const unist::decode::StepScorer*> members{&scorer};
  const unist::decode::DecodeConfig dc{static_cast<int>(state.range(0)), 10, 1, 1.0};
  for (auto _ : state) benchmark::DoNotOptimize(unist::decode::beam_search(members, dc).score);
}
BENCHMARK(BM_BeamSearch)->Arg(1)->Arg(5)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
