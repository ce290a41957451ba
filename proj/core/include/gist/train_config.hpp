#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "gist/constellation.hpp"
#include "gist/embedding.hpp"
#include "gist/losses.hpp"
#include "gist/sampling.hpp"

namespace gist {

class KeyValues;

/// The objective of the second phase. The first phase is derived from it:
/// plain pretrains with dot scoring, cos_cb with class-balanced batches, and
/// every other mode with cosine scoring on random batches.
enum class Mode : std::uint8_t {
  plain = 0,           // softmax classifier, random sampling
  cos_random = 1,      // cosine classifier, random sampling only
  cos_cb = 2,          // cosine classifier, class-balanced sampling only
  cos_cs_cb = 3,       // constellation, both batches class-balanced, no routing
  gist = 4,            // constellation, routed dual-batch objective
  merged_centers = 5,  // as gist, but L_r scores and trains W instead of V
};

std::string to_string(Mode m);
Mode parse_mode(const std::string& name);

enum class Phase : std::uint8_t { pretrain = 0, gist = 1, done = 2 };
std::string to_string(Phase p);

/// The batches and routes one training step uses.
struct StepPlan {
  bool uses_balanced = false;
  bool uses_random = false;
  /// Second batch drawn from the balanced sampler instead of the random one.
  bool second_batch_balanced = false;
  /// Two-batch objective L_r + lambda L_c (otherwise one routed loss).
  bool dual = false;
  Routing routing;
  LossRoute single;
  Provenance single_tag = kFromNone;
};

struct TrainConfig {
  Mode mode = Mode::gist;
  std::size_t feature_dim = 16;
  std::vector<std::size_t> hidden{64};
  Activation activation = Activation::relu;
  std::size_t epochs_pretrain = 30;
  std::size_t epochs_gist = 30;
  double lr0 = 0.1;
  double lr_decay_factor = 0.1;
  std::size_t lr_decay_every = 10;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double lambda = 0.5;
  std::size_t batch_size = 128;
  std::size_t balanced_classes = 4;
  std::size_t balanced_per_class = 32;
  std::size_t displacements = 4;
  GVariant g = GVariant::additive;
  double tau_init = 10.0;
  double tau_lr_scale = 0.01;
  double delta_init = 0.1;  // displacement norm relative to the mean center norm
  std::uint64_t seed = 1;

  void validate() const;
  std::string to_text() const;
  std::uint64_t hash() const;

  Scoring scoring() const { return mode == Mode::plain ? Scoring::dot : Scoring::cosine; }
  std::size_t total_epochs() const { return epochs_pretrain + epochs_gist; }
  BatchSpec random_spec() const;
  BatchSpec balanced_spec() const;
  StepPlan plan(Phase phase) const;

  static TrainConfig from(const KeyValues& kv);
  /// Parses the canonical text written by to_text().
  static TrainConfig from_text(const std::string& text);
  static const std::set<std::string>& keys();
};

}  // namespace gist
