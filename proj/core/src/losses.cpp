#include "gist/losses.hpp"

#include <cmath>

#include "gist/error.hpp"
#include "gist/numeric.hpp"

namespace gist {

namespace {

bool finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

bool finite(const LayerGrads& layers) {
  for (const auto& l : layers)
    if (!finite(l.weight.data()) || !finite(l.bias)) return false;
  return true;
}

bool finite(const MlpMap& m) {
  return finite(m.hidden_weight.data()) && finite(m.hidden_bias) && finite(m.out_weight.data()) &&
         finite(m.out_bias);
}

// out = lambda * a + b, element-wise.
void blend(std::span<const double> a, double lambda, std::span<const double> b,
           std::span<double> out) {
  require(a.size() == b.size() && a.size() == out.size(), "combine: block shapes differ");
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = lambda * a[i] + b[i];
}

void scale(std::span<double> v, double lambda) {
  for (auto& x : v) x *= lambda;
}

Matrix combine_block(const Matrix* a, double lambda, const Matrix* b) {
  if (a && b) {
    Matrix out(a->rows(), a->cols());
    require(a->rows() == b->rows() && a->cols() == b->cols(), "combine: block shapes differ");
    blend(a->data(), lambda, b->data(), out.data());
    return out;
  }
  if (a) {
    Matrix out = *a;
    scale(out.data(), lambda);
    return out;
  }
  return *b;
}

Vector combine_block(const Vector* a, double lambda, const Vector* b) {
  if (a && b) {
    Vector out(a->size());
    blend(*a, lambda, *b, out);
    return out;
  }
  if (a) {
    Vector out = *a;
    scale(out, lambda);
    return out;
  }
  return *b;
}

template <typename T, typename F>
Routed<T> combine_routed(const Routed<T>& a, const Routed<T>& b, F&& merge) {
  Routed<T> out;
  if (!a.populated() && !b.populated()) return out;
  out.from = a.from | b.from;
  out.grad = merge(a.populated() ? &a.grad : nullptr, b.populated() ? &b.grad : nullptr);
  return out;
}

}  // namespace

std::string provenance_to_string(Provenance p) {
  if (p == kFromNone) return "{}";
  std::string s = "{";
  if (p & kFromBalanced) s += "L_c";
  if ((p & kFromBalanced) && (p & kFromRandom)) s += ",";
  if (p & kFromRandom) s += "L_r";
  return s + "}";
}

bool GradientBundle::all_finite() const {
  if (centers.populated() && !finite(centers.grad.data())) return false;
  if (aux_centers.populated() && !finite(aux_centers.grad.data())) return false;
  if (displacements.populated() && !finite(displacements.grad.data())) return false;
  if (mlp.populated() && mlp.grad && !finite(*mlp.grad)) return false;
  if (tau_raw.populated() && !std::isfinite(tau_raw.grad)) return false;
  if (embedding.populated() && !finite(embedding.grad)) return false;
  return true;
}

CrossEntropy ce_loss(const Matrix& logits, std::span<const int> labels) {
  require(logits.rows() == labels.size(), "ce_loss: label count differs from batch size");
  require(logits.rows() > 0, "ce_loss: empty batch");
  const std::size_t n = logits.rows();
  const std::size_t k = logits.cols();
  CrossEntropy out{0.0, Matrix(n, k)};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < k,
            "ce_loss: label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(k) +
                ")");
    const auto row = logits.row(i);
    const auto y = static_cast<std::size_t>(labels[i]);
    out.loss += log_sum_exp(row) - row[y];
    auto g = out.grad_logits.row(i);
    std::copy(row.begin(), row.end(), g.begin());
    softmax_inplace(g);
    g[y] -= 1.0;
    for (auto& x : g) x *= inv_n;
  }
  out.loss *= inv_n;
  return out;
}

Routing Routing::gist() {
  Routing r;
  r.balanced = {.use_aux = false, .centers = true, .structure = false, .tau = true, .embedding = true};
  r.random = {.use_aux = true, .centers = true, .structure = true, .tau = true, .embedding = true};
  return r;
}

Routing Routing::merged_centers() {
  Routing r = gist();
  r.random.use_aux = false;
  return r;
}

LossRoute Routing::full(bool use_aux) {
  return {.use_aux = use_aux, .centers = true, .structure = true, .tau = true, .embedding = true};
}

LossValue routed_loss(const Model& model, const LabeledBatch& batch, const LossRoute& route,
                      Provenance tag) {
  const auto& clf = model.classifier;
  const auto fwd = model.embedding.forward(batch.inputs);
  const auto logits = constellation_logits(clf, fwd.features, route.use_aux, model.scoring);
  auto ce = ce_loss(logits.logits, batch.labels);

  ScoreTargets targets;
  targets.centers = route.centers;
  targets.structure = route.structure && clf.num_displacements() > 0;
  targets.tau = route.tau && model.scoring == Scoring::cosine;
  targets.features = route.embedding;
  auto sg = constellation_backward(clf, fwd.features, route.use_aux, model.scoring, logits,
                                   ce.grad_logits, targets);

  LossValue out;
  out.loss = ce.loss;
  auto& g = out.grads;
  if (targets.centers) {
    auto& block = route.use_aux ? g.aux_centers : g.centers;
    block.grad = std::move(sg.centers);
    block.from = tag;
  }
  if (targets.structure) {
    g.displacements = {std::move(sg.displacements), tag};
    if (clf.variant() == GVariant::mlp) g.mlp = {std::move(sg.mlp), tag};
  }
  if (targets.tau) g.tau_raw = {sg.tau_raw, tag};
  if (targets.features) {
    auto back = model.embedding.backward(fwd.tape, sg.features);
    g.embedding = {std::move(back.params), tag};
  }
  return out;
}

LossValue loss_class_balanced(const Model& model, const LabeledBatch& batch_c,
                              const LossRoute& route) {
  return routed_loss(model, batch_c, route, kFromBalanced);
}

LossValue loss_random(const Model& model, const LabeledBatch& batch_r, const LossRoute& route) {
  return routed_loss(model, batch_r, route, kFromRandom);
}

GradientBundle combine(const GradientBundle& c, double lambda, const GradientBundle& r) {
  const auto matrices = [lambda](const Matrix* a, const Matrix* b) {
    return combine_block(a, lambda, b);
  };
  GradientBundle out;
  out.centers = combine_routed(c.centers, r.centers, matrices);
  out.aux_centers = combine_routed(c.aux_centers, r.aux_centers, matrices);
  out.displacements = combine_routed(c.displacements, r.displacements, matrices);
  out.tau_raw = combine_routed(c.tau_raw, r.tau_raw, [lambda](const double* a, const double* b) {
    if (a && b) return lambda * *a + *b;
    return a ? lambda * *a : *b;
  });
  out.mlp = combine_routed(c.mlp, r.mlp,
                           [lambda](const std::optional<MlpMap>* a, const std::optional<MlpMap>* b) {
                             const MlpMap* ma = a ? &**a : nullptr;
                             const MlpMap* mb = b ? &**b : nullptr;
                             MlpMap m;
                             m.hidden_weight = combine_block(ma ? &ma->hidden_weight : nullptr,
                                                             lambda, mb ? &mb->hidden_weight : nullptr);
                             m.hidden_bias = combine_block(ma ? &ma->hidden_bias : nullptr, lambda,
                                                           mb ? &mb->hidden_bias : nullptr);
                             m.out_weight = combine_block(ma ? &ma->out_weight : nullptr, lambda,
                                                          mb ? &mb->out_weight : nullptr);
                             m.out_bias = combine_block(ma ? &ma->out_bias : nullptr, lambda,
                                                        mb ? &mb->out_bias : nullptr);
                             return std::optional<MlpMap>(std::move(m));
                           });
  out.embedding = combine_routed(
      c.embedding, r.embedding, [lambda](const LayerGrads* a, const LayerGrads* b) {
        const std::size_t n = a ? a->size() : b->size();
        require(!(a && b) || a->size() == b->size(), "combine: embedding depth differs");
        LayerGrads out(n);
        for (std::size_t i = 0; i < n; ++i) {
          out[i].weight = combine_block(a ? &(*a)[i].weight : nullptr, lambda,
                                        b ? &(*b)[i].weight : nullptr);
          out[i].bias = combine_block(a ? &(*a)[i].bias : nullptr, lambda,
                                      b ? &(*b)[i].bias : nullptr);
        }
        return out;
      });
  return out;
}

OverallLoss loss_overall(const Model& model, const LabeledBatch& batch_c,
                         const LabeledBatch& batch_r, double lambda, const Routing& routing) {
  require(lambda >= 0.0, "loss_overall: lambda must be non-negative");
  const auto lc = loss_class_balanced(model, batch_c, routing.balanced);
  const auto lr = loss_random(model, batch_r, routing.random);
  OverallLoss out;
  out.loss_balanced = lc.loss;
  out.loss_random = lr.loss;
  out.loss = lr.loss + lambda * lc.loss;
  out.grads = combine(lc.grads, lambda, lr.grads);
  return out;
}

}  // namespace gist
