#include <benchmark/benchmark.h>

#include "gist/constellation.hpp"
#include "gist/datagen.hpp"
#include "gist/embedding.hpp"
#include "gist/losses.hpp"
#include "gist/optimizer.hpp"
#include "gist/rng.hpp"
#include "gist/trainer.hpp"

namespace {

using namespace gist;

Matrix normal_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (auto& x : m.data()) x = rng.normal();
  return m;
}

LabeledBatch labeled(std::size_t n, std::size_t dim, std::size_t classes, Rng& rng) {
  LabeledBatch b{normal_matrix(n, dim, rng), std::vector<int>(n)};
  for (auto& y : b.labels) y = static_cast<int>(rng.below(classes));
  return b;
}

// args: classes, displacements
void BM_ConstellationLogits(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  const auto m = static_cast<std::size_t>(state.range(1));
  Rng rng(1);
  auto clf = ConstellationClassifier::make(k, 16, 0, GVariant::additive, rng);
  if (m > 0) clf.init_structure(m, GVariant::additive, rng, 0.1);
  const auto f = normal_matrix(128, 16, rng);
  for (auto _ : state) benchmark::DoNotOptimize(constellation_logits(clf, f, false));
  state.SetItemsProcessed(state.iterations() * 128);
}
BENCHMARK(BM_ConstellationLogits)->Args({20, 0})->Args({20, 4})->Args({100, 4})->Args({20, 16});

void BM_RotationMember(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  Vector w(d), delta(d), u(d, 0.0);
  for (auto& x : w) x = rng.normal();
  for (auto& x : delta) x = rng.normal();
  u[0] = 1.0;
  for (auto _ : state) benchmark::DoNotOptimize(g_rotation(w, delta, u));
}
BENCHMARK(BM_RotationMember)->Arg(16)->Arg(64);

void BM_EmbeddingForwardBackward(benchmark::State& state) {
  Rng rng(3);
  const auto net = EmbeddingNet::make(16, {64}, 16, Activation::relu, rng);
  const auto x = normal_matrix(128, 16, rng);
  const auto g = normal_matrix(128, 16, rng);
  for (auto _ : state) {
    auto fwd = net.forward(x);
    benchmark::DoNotOptimize(net.backward(fwd.tape, g));
  }
  state.SetItemsProcessed(state.iterations() * 128);
}
BENCHMARK(BM_EmbeddingForwardBackward);

// One dual-batch step of the second phase: both losses, combine, update.
void BM_GistStep(benchmark::State& state) {
  Rng rng(4);
  Model model{EmbeddingNet::make(16, {64}, 16, Activation::relu, rng),
              ConstellationClassifier::make(20, 16, 0, GVariant::additive, rng), Scoring::cosine};
  model.classifier.init_structure(4, GVariant::additive, rng, 0.1);
  auto velocity = MomentumBuffers::zeros_like(model);
  const auto bc = labeled(128, 16, 20, rng);
  const auto br = labeled(128, 16, 20, rng);
  const SgdSettings settings{1e-4, 0.9, 5e-4, 0.01};
  const auto routing = Routing::gist();
  for (auto _ : state) {
    auto o = loss_overall(model, bc, br, 0.5, routing);
    benchmark::DoNotOptimize(sgd_step(model, velocity, o.grads, settings));
  }
}
BENCHMARK(BM_GistStep);

void BM_DefaultEpoch(benchmark::State& state) {
  DataConfig dc;
  const auto data = generate(dc);
  TrainConfig tc;
  for (auto _ : state) {
    Trainer t(tc, data.train);
    t.set_keep_audit(false);
    benchmark::DoNotOptimize(t.run_epoch());
  }
}
BENCHMARK(BM_DefaultEpoch)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
