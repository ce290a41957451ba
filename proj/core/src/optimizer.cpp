#include "gist/optimizer.hpp"

#include <cmath>

#include "gist/error.hpp"

namespace gist {

namespace {

bool finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

void check_shape(std::span<const double> a, std::span<const double> b, const char* block) {
  require(a.size() == b.size(), std::string("sgd_step: shape mismatch in ") + block);
}

void update_block(std::span<double> param, std::span<double> velocity, std::span<const double> grad,
                  const SgdSettings& s, double decay, const char* block) {
  check_shape(param, grad, block);
  check_shape(param, velocity, block);
  sgd_update(param, velocity, grad, s.lr, s.momentum, decay);
  if (!finite(param)) throw DivergenceError(std::string("sgd_step: non-finite update in ") + block);
}

}  // namespace

MomentumBuffers MomentumBuffers::zeros_like(const Model& model) {
  MomentumBuffers b;
  b.embedding = model.embedding.zero_grads();
  const auto& clf = model.classifier;
  b.centers = Matrix(clf.num_classes(), clf.dim());
  if (clf.has_aux()) b.aux_centers = Matrix(clf.num_classes(), clf.dim());
  b.displacements = Matrix(clf.num_displacements(), clf.dim());
  if (clf.mlp()) b.mlp = MlpMap::zeros(clf.mlp()->dim(), clf.mlp()->hidden());
  return b;
}

void sgd_update(std::span<double> param, std::span<double> velocity, std::span<const double> grad,
                double lr, double momentum, double weight_decay) {
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i] + weight_decay * param[i];
    param[i] -= lr * velocity[i];
  }
}

StepAudit sgd_step(Model& model, MomentumBuffers& v, const GradientBundle& g,
                   const SgdSettings& s) {
  if (!g.all_finite()) throw DivergenceError("sgd_step: non-finite gradient");
  require(s.lr > 0.0 && s.momentum >= 0.0 && s.weight_decay >= 0.0 && s.tau_lr_scale >= 0.0,
          "sgd_step: invalid optimizer settings");
  StepAudit audit;
  auto& clf = model.classifier;

  if (g.embedding.populated()) {
    auto& layers = model.embedding.mutable_layers();
    require(g.embedding.grad.size() == layers.size() && v.embedding.size() == layers.size(),
            "sgd_step: embedding depth mismatch");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      update_block(layers[i].weight.data(), v.embedding[i].weight.data(),
                   g.embedding.grad[i].weight.data(), s, s.weight_decay, "embedding weight");
      update_block(layers[i].bias, v.embedding[i].bias, g.embedding.grad[i].bias, s, 0.0,
                   "embedding bias");
    }
    audit.embedding = g.embedding.from;
  }
  if (g.centers.populated()) {
    update_block(clf.mutable_centers().data(), v.centers.data(), g.centers.grad.data(), s,
                 s.weight_decay, "centers");
    audit.centers = g.centers.from;
  }
  if (g.aux_centers.populated()) {
    update_block(clf.mutable_aux_centers().data(), v.aux_centers.data(), g.aux_centers.grad.data(),
                 s, s.weight_decay, "aux centers");
    audit.aux_centers = g.aux_centers.from;
  }
  if (g.displacements.populated()) {
    update_block(clf.mutable_displacements().data(), v.displacements.data(),
                 g.displacements.grad.data(), s, s.weight_decay, "displacements");
    audit.displacements = g.displacements.from;
  }
  if (g.mlp.populated() && g.mlp.grad) {
    auto& m = clf.mutable_mlp();
    require(m.has_value() && v.mlp.has_value(), "sgd_step: mlp gradient without mlp parameters");
    const auto& gm = *g.mlp.grad;
    update_block(m->hidden_weight.data(), v.mlp->hidden_weight.data(), gm.hidden_weight.data(), s,
                 s.weight_decay, "mlp hidden weight");
    update_block(m->hidden_bias, v.mlp->hidden_bias, gm.hidden_bias, s, 0.0, "mlp hidden bias");
    update_block(m->out_weight.data(), v.mlp->out_weight.data(), gm.out_weight.data(), s,
                 s.weight_decay, "mlp output weight");
    update_block(m->out_bias, v.mlp->out_bias, gm.out_bias, s, 0.0, "mlp output bias");
    audit.mlp = g.mlp.from;
  }
  if (g.tau_raw.populated()) {
    double raw = clf.tau_raw();
    const double grad = g.tau_raw.grad;
    SgdSettings tau_settings = s;
    tau_settings.lr = s.lr * s.tau_lr_scale;
    update_block(std::span<double>(&raw, 1), std::span<double>(&v.tau_raw, 1),
                 std::span<const double>(&grad, 1), tau_settings, 0.0, "tau");
    clf.set_tau_raw(raw);
    audit.tau = g.tau_raw.from;
  }
  return audit;
}

}  // namespace gist
