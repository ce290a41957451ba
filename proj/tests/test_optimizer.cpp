#include <gtest/gtest.h>

#include <cmath>

#include "gist/error.hpp"
#include "gist/optimizer.hpp"
#include "gist/rng.hpp"

using namespace gist;

namespace {

Model tiny_model(Rng& rng) {
  Model m{EmbeddingNet::make(3, {4}, 2, Activation::relu, rng),
          ConstellationClassifier::make(3, 2, 1, GVariant::additive, rng), Scoring::cosine};
  return m;
}

}  // namespace

TEST(SgdUpdate, ZeroGradientNoDecayLeavesParams) {
  Vector p{1.0, -2.0}, v{0.0, 0.0};
  const Vector g{0.0, 0.0};
  sgd_update(p, v, g, 0.1, 0.9, 0.0);
  EXPECT_EQ(p, (Vector{1.0, -2.0}));
}

TEST(SgdUpdate, VanillaStep) {
  Vector p{1.0}, v{0.0};
  sgd_update(p, v, Vector{0.5}, 0.1, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(p[0], 1.0 - 0.1 * 0.5);
}

TEST(SgdUpdate, TwoMomentumStepsOnConstantGradient) {
  Vector p{0.0}, v{0.0};
  const Vector g{2.0};
  sgd_update(p, v, g, 0.1, 0.9, 0.0);
  sgd_update(p, v, g, 0.1, 0.9, 0.0);
  EXPECT_NEAR(p[0], -0.1 * 2.0 * 2.9, 1e-15);
}

TEST(SgdUpdate, WeightDecayEntersVelocity) {
  Vector p{2.0}, v{0.0};
  sgd_update(p, v, Vector{0.0}, 0.5, 0.9, 0.1);
  EXPECT_DOUBLE_EQ(v[0], 0.2);
  EXPECT_DOUBLE_EQ(p[0], 2.0 - 0.5 * 0.2);
}

TEST(SgdStep, UnpopulatedBlocksAreUntouched) {
  Rng rng(1);
  auto model = tiny_model(rng);
  auto vel = MomentumBuffers::zeros_like(model);
  vel.displacements(0, 0) = 0.3;
  const auto before = model;
  const auto vel_before = vel;
  GradientBundle g;
  g.centers = {Matrix(3, 2, 1.0), kFromBalanced};
  const auto audit = sgd_step(model, vel, g, {0.1, 0.9, 5e-4, 1.0});
  EXPECT_EQ(audit.centers, kFromBalanced);
  EXPECT_EQ(audit.displacements, kFromNone);
  EXPECT_FALSE(bitwise_equal(model.classifier.centers(), before.classifier.centers()));
  EXPECT_TRUE(bitwise_equal(model.classifier.displacements(), before.classifier.displacements()));
  EXPECT_TRUE(bitwise_equal(model.classifier.aux_centers(), before.classifier.aux_centers()));
  EXPECT_EQ(model.classifier.tau_raw(), before.classifier.tau_raw());
  EXPECT_EQ(model.embedding, before.embedding);
  EXPECT_TRUE(bitwise_equal(vel.displacements, vel_before.displacements));
  EXPECT_EQ(vel.embedding, vel_before.embedding);
}

TEST(SgdStep, TauIsNeverDecayedAndUsesItsScale) {
  Rng rng(2);
  auto model = tiny_model(rng);
  auto vel = MomentumBuffers::zeros_like(model);
  const double raw0 = model.classifier.tau_raw();
  GradientBundle g;
  g.tau_raw = {0.0, kFromRandom};
  auto audit = sgd_step(model, vel, g, {0.1, 0.9, 0.5, 1.0});
  EXPECT_FALSE(audit.tau_decayed);
  EXPECT_EQ(model.classifier.tau_raw(), raw0);
  g.tau_raw.grad = 1.0;
  sgd_step(model, vel, g, {0.1, 0.0, 0.5, 0.01});
  EXPECT_DOUBLE_EQ(model.classifier.tau_raw(), raw0 - 0.1 * 0.01 * 1.0);
}

TEST(SgdStep, BiasesAreNotDecayed) {
  Rng rng(3);
  auto model = tiny_model(rng);
  model.embedding.mutable_layers()[0].bias.assign(4, 1.0);
  auto vel = MomentumBuffers::zeros_like(model);
  GradientBundle g;
  g.embedding = {model.embedding.zero_grads(), kFromRandom};
  const auto w0 = model.embedding.layers()[0].weight;
  sgd_step(model, vel, g, {0.1, 0.0, 0.5, 1.0});
  EXPECT_EQ(model.embedding.layers()[0].bias, Vector(4, 1.0));
  EXPECT_DOUBLE_EQ(model.embedding.layers()[0].weight(0, 0), w0(0, 0) * (1.0 - 0.1 * 0.5));
}

TEST(SgdStep, NonFiniteGradientDiverges) {
  Rng rng(4);
  auto model = tiny_model(rng);
  auto vel = MomentumBuffers::zeros_like(model);
  GradientBundle g;
  g.centers = {Matrix(3, 2, std::nan("")), kFromBalanced};
  EXPECT_THROW(sgd_step(model, vel, g, {}), DivergenceError);
  g.centers.grad.fill(1e308);
  EXPECT_THROW(sgd_step(model, vel, g, {1e10, 0.0, 0.0, 1.0}), DivergenceError);
}

TEST(Momentum, ZerosLikeMatchesShapes) {
  Rng rng(5);
  auto model = tiny_model(rng);
  const auto v = MomentumBuffers::zeros_like(model);
  EXPECT_EQ(v.centers.rows(), 3u);
  EXPECT_EQ(v.aux_centers.rows(), 3u);
  EXPECT_EQ(v.displacements.rows(), 1u);
  EXPECT_EQ(v.embedding.size(), 2u);
  EXPECT_FALSE(v.mlp.has_value());
  EXPECT_EQ(v.tau_raw, 0.0);
}
