#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "gist/model.hpp"

namespace gist {

/// Bit set of the losses that contributed to a gradient block.
using Provenance = std::uint8_t;
inline constexpr Provenance kFromNone = 0;
inline constexpr Provenance kFromBalanced = 1;  // L_c, class-balanced batch
inline constexpr Provenance kFromRandom = 2;    // L_r, random batch

std::string provenance_to_string(Provenance p);

template <typename T>
struct Routed {
  T grad{};
  Provenance from = kFromNone;

  bool populated() const noexcept { return from != kFromNone; }
};

/// Per-block gradients, each tagged with the losses that wrote it. A block
/// is only ever written by a loss whose route includes it.
struct GradientBundle {
  Routed<Matrix> centers;              // W
  Routed<Matrix> aux_centers;          // V
  Routed<Matrix> displacements;        // Delta
  Routed<std::optional<MlpMap>> mlp;   // g = mlp parameters
  Routed<double> tau_raw;              // d/d log(tau)
  Routed<LayerGrads> embedding;

  bool all_finite() const;
};

struct CrossEntropy {
  double loss = 0.0;
  Matrix grad_logits;
};

/// Mean over the batch of -log softmax(logits)[label]; gradient
/// (softmax - onehot) / batch_size.
CrossEntropy ce_loss(const Matrix& logits, std::span<const int> labels);

/// Which centers a loss scores with and which blocks it may write.
struct LossRoute {
  bool use_aux = false;
  bool centers = false;
  bool structure = false;
  bool tau = false;
  bool embedding = false;
};

/// Routes for the class-balanced and random terms of one objective.
struct Routing {
  LossRoute balanced;
  LossRoute random;

  /// L_c writes W, tau, embedding; L_r scores V and writes V, structure,
  /// tau, embedding.
  static Routing gist();
  /// As gist(), but L_r scores and writes W in place of V.
  static Routing merged_centers();
  /// A single loss that writes every block it touches (no asymmetry).
  static LossRoute full(bool use_aux = false);
};

struct LossValue {
  double loss = 0.0;
  GradientBundle grads;
};

/// Cross-entropy of a batch under the given route; the bundle is tagged with
/// `tag` on every block the route writes and nothing else.
LossValue routed_loss(const Model& model, const LabeledBatch& batch, const LossRoute& route,
                      Provenance tag);

/// L_c on a class-balanced batch, scored with W.
LossValue loss_class_balanced(const Model& model, const LabeledBatch& batch_c,
                              const LossRoute& route = Routing::gist().balanced);

/// L_r on a random batch, scored with V.
LossValue loss_random(const Model& model, const LabeledBatch& batch_r,
                      const LossRoute& route = Routing::gist().random);

struct OverallLoss {
  double loss = 0.0;  // L_r + lambda L_c
  double loss_balanced = 0.0;
  double loss_random = 0.0;
  GradientBundle grads;
};

/// L = L_r + lambda L_c with the routed sum of both bundles.
OverallLoss loss_overall(const Model& model, const LabeledBatch& batch_c,
                         const LabeledBatch& batch_r, double lambda,
                         const Routing& routing = Routing::gist());

/// Blockwise lambda * balanced + random; a block present in only one input
/// keeps that input's scaling and provenance.
GradientBundle combine(const GradientBundle& balanced, double lambda, const GradientBundle& random);

}  // namespace gist
