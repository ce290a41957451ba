#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gist/datagen.hpp"
#include "gist/embedding.hpp"
#include "gist/losses.hpp"
#include "gist/model.hpp"
#include "gist/numeric.hpp"
#include "gist/rng.hpp"
#include "gist/train_config.hpp"

namespace gist::testing {

/// A parameter block of a model with its gradient in a bundle.
struct Block {
  std::string name;
  std::function<std::size_t(const Model&)> size;
  std::function<double(const Model&, std::size_t)> get;
  std::function<void(Model&, std::size_t, double)> set;
  // Null when the bundle does not populate the block.
  std::function<const double*(const GradientBundle&)> grad;
  std::function<Provenance(const GradientBundle&)> from;
};

inline std::vector<Block> model_blocks(const Model& model) {
  std::vector<Block> out;
  const auto n_layers = model.embedding.num_layers();
  for (std::size_t l = 0; l < n_layers; ++l) {
    out.push_back({"embedding[" + std::to_string(l) + "].weight",
                   [l](const Model& m) { return m.embedding.layers()[l].weight.size(); },
                   [l](const Model& m, std::size_t i) { return m.embedding.layers()[l].weight.data()[i]; },
                   [l](Model& m, std::size_t i, double v) { m.embedding.mutable_layers()[l].weight.data()[i] = v; },
                   [l](const GradientBundle& g) -> const double* {
                     return g.embedding.populated() ? g.embedding.grad[l].weight.data().data() : nullptr;
                   },
                   [](const GradientBundle& g) { return g.embedding.from; }});
    out.push_back({"embedding[" + std::to_string(l) + "].bias",
                   [l](const Model& m) { return m.embedding.layers()[l].bias.size(); },
                   [l](const Model& m, std::size_t i) { return m.embedding.layers()[l].bias[i]; },
                   [l](Model& m, std::size_t i, double v) { m.embedding.mutable_layers()[l].bias[i] = v; },
                   [l](const GradientBundle& g) -> const double* {
                     return g.embedding.populated() ? g.embedding.grad[l].bias.data() : nullptr;
                   },
                   [](const GradientBundle& g) { return g.embedding.from; }});
  }
  out.push_back({"W", [](const Model& m) { return m.classifier.centers().size(); },
                 [](const Model& m, std::size_t i) { return m.classifier.centers().data()[i]; },
                 [](Model& m, std::size_t i, double v) { m.classifier.mutable_centers().data()[i] = v; },
                 [](const GradientBundle& g) -> const double* {
                   return g.centers.populated() ? g.centers.grad.data().data() : nullptr;
                 },
                 [](const GradientBundle& g) { return g.centers.from; }});
  if (model.classifier.has_aux())
    out.push_back({"V", [](const Model& m) { return m.classifier.aux_centers().size(); },
                   [](const Model& m, std::size_t i) { return m.classifier.aux_centers().data()[i]; },
                   [](Model& m, std::size_t i, double v) { m.classifier.mutable_aux_centers().data()[i] = v; },
                   [](const GradientBundle& g) -> const double* {
                     return g.aux_centers.populated() ? g.aux_centers.grad.data().data() : nullptr;
                   },
                   [](const GradientBundle& g) { return g.aux_centers.from; }});
  if (model.classifier.num_displacements() > 0)
    out.push_back({"Delta", [](const Model& m) { return m.classifier.displacements().size(); },
                   [](const Model& m, std::size_t i) { return m.classifier.displacements().data()[i]; },
                   [](Model& m, std::size_t i, double v) {
                     m.classifier.mutable_displacements().data()[i] = v;
                   },
                   [](const GradientBundle& g) -> const double* {
                     return g.displacements.populated() ? g.displacements.grad.data().data() : nullptr;
                   },
                   [](const GradientBundle& g) { return g.displacements.from; }});
  if (model.classifier.mlp()) {
    using Part = std::function<std::span<double>(MlpMap&)>;
    const std::vector<std::pair<std::string, Part>> parts{
        {"mlp.hidden_weight", [](MlpMap& p) { return p.hidden_weight.data(); }},
        {"mlp.hidden_bias", [](MlpMap& p) { return std::span<double>(p.hidden_bias); }},
        {"mlp.out_weight", [](MlpMap& p) { return p.out_weight.data(); }},
        {"mlp.out_bias", [](MlpMap& p) { return std::span<double>(p.out_bias); }},
    };
    for (const auto& [name, part] : parts) {
      out.push_back({name,
                     [part](const Model& m) { auto copy = *m.classifier.mlp(); return part(copy).size(); },
                     [part](const Model& m, std::size_t i) { auto copy = *m.classifier.mlp(); return part(copy)[i]; },
                     [part](Model& m, std::size_t i, double v) { part(*m.classifier.mutable_mlp())[i] = v; },
                     [part](const GradientBundle& g) -> const double* {
                       if (!g.mlp.populated() || !g.mlp.grad) return nullptr;
                       auto& mutable_grad = const_cast<MlpMap&>(*g.mlp.grad);
                       return part(mutable_grad).data();
                     },
                     [](const GradientBundle& g) { return g.mlp.from; }});
    }
  }
  if (model.scoring == Scoring::cosine)
    out.push_back({"tau", [](const Model&) { return std::size_t{1}; },
                   [](const Model& m, std::size_t) { return m.classifier.tau_raw(); },
                   [](Model& m, std::size_t, double v) { m.classifier.set_tau_raw(v); },
                   [](const GradientBundle& g) -> const double* {
                     return g.tau_raw.populated() ? &g.tau_raw.grad : nullptr;
                   },
                   [](const GradientBundle& g) { return g.tau_raw.from; }});
  return out;
}

/// Central-difference derivative of f(model) along one coordinate.
inline double numeric_partial(const Model& model, const Block& b, std::size_t i,
                              const std::function<double(const Model&)>& f, double h = 1e-5) {
  Model probe = model;
  const double x = b.get(probe, i);
  b.set(probe, i, x + h);
  const double up = f(probe);
  b.set(probe, i, x - h);
  const double down = f(probe);
  return (up - down) / (2.0 * h);
}

inline bool fd_close(double analytic, double numeric) {
  return std::abs(analytic - numeric) <=
         std::max(1e-6, 1e-4 * std::max(std::abs(analytic), std::abs(numeric)));
}

/// Smallest gap between the best and second-best member score, and the
/// smallest |pre-activation| of any hidden unit. Finite differences are
/// unreliable when either is near zero.
inline double kink_margin(const Model& model, const LabeledBatch& batch, bool use_aux) {
  double margin = 1e300;
  const auto fwd = model.embedding.forward(batch.inputs);
  for (std::size_t l = 0; l < fwd.tape.pre_activation.size(); ++l) {
    if (l + 1 == fwd.tape.pre_activation.size() && !model.embedding.activate_output()) break;
    if (model.embedding.activation() != Activation::relu) break;
    for (double z : fwd.tape.pre_activation[l].data()) margin = std::min(margin, std::abs(z));
  }
  const auto& clf = model.classifier;
  const auto members = clf.members(use_aux);
  const double tau = clf.tau();
  const std::size_t per = clf.members_per_class();
  if (per < 2) return margin;
  for (std::size_t i = 0; i < fwd.features.rows(); ++i)
    for (std::size_t k = 0; k < clf.num_classes(); ++k) {
      std::vector<double> s;
      for (std::size_t j = 0; j < per; ++j)
        s.push_back(member_score(fwd.features.row(i), members.row(k * per + j), tau, model.scoring));
      std::sort(s.begin(), s.end());
      margin = std::min(margin, s[per - 1] - s[per - 2]);
    }
  return margin;
}

/// A random labeled batch with every class present at least once.
inline LabeledBatch random_batch(std::size_t n, std::size_t dim, std::size_t classes, Rng& rng) {
  LabeledBatch b{Matrix(n, dim), std::vector<int>(n)};
  for (auto& x : b.inputs.data()) x = rng.normal();
  for (std::size_t i = 0; i < n; ++i)
    b.labels[i] = static_cast<int>(i < classes ? i : rng.below(classes));
  return b;
}

/// A small, fast configuration for trainer tests.
inline TrainConfig tiny_train_config() {
  TrainConfig c;
  c.feature_dim = 8;
  c.hidden = {16};
  c.epochs_pretrain = 3;
  c.epochs_gist = 3;
  c.lr_decay_every = 2;
  c.batch_size = 32;
  c.balanced_classes = 4;
  c.balanced_per_class = 8;
  c.displacements = 2;
  c.tau_lr_scale = 0.01;
  c.seed = 7;
  return c;
}

inline DataConfig tiny_data_config() {
  DataConfig d;
  d.num_classes = 6;
  d.input_dim = 8;
  d.n_max = 120;
  d.n_min = 5;
  d.test_per_class = 20;
  d.seed = 11;
  return d;
}

}  // namespace gist::testing
