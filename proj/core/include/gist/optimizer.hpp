#pragma once

#include <optional>
#include <span>

#include "gist/losses.hpp"
#include "gist/model.hpp"

namespace gist {

/// One velocity buffer per parameter block, same shapes as the model.
struct MomentumBuffers {
  LayerGrads embedding;
  Matrix centers;
  Matrix aux_centers;
  Matrix displacements;
  std::optional<MlpMap> mlp;
  double tau_raw = 0.0;

  static MomentumBuffers zeros_like(const Model& model);
  bool operator==(const MomentumBuffers&) const = default;
};

struct SgdSettings {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// Multiplier on lr for the log-temperature block.
  double tau_lr_scale = 1.0;
};

/// v <- momentum v + grad + weight_decay param; param <- param - lr v.
void sgd_update(std::span<double> param, std::span<double> velocity, std::span<const double> grad,
                double lr, double momentum, double weight_decay);

/// What a step touched: which losses fed each block, and whether decay was
/// applied to tau (it never is).
struct StepAudit {
  Provenance embedding = kFromNone;
  Provenance centers = kFromNone;
  Provenance aux_centers = kFromNone;
  Provenance displacements = kFromNone;
  Provenance mlp = kFromNone;
  Provenance tau = kFromNone;
  bool tau_decayed = false;
};

/// Applies the update to every populated block of the bundle. Blocks with
/// empty provenance, and their velocity buffers, are left untouched. Weight
/// decay covers weight matrices, W, V and displacements, never tau or
/// biases. Non-finite gradients or results raise DivergenceError.
StepAudit sgd_step(Model& model, MomentumBuffers& velocity, const GradientBundle& grads,
                   const SgdSettings& settings);

}  // namespace gist
