#include "gist/constellation.hpp"

#include <cmath>

#include "gist/error.hpp"
#include "gist/numeric.hpp"
#include "gist/rng.hpp"

namespace gist {

namespace {

// sin(theta) below this counts as delta parallel to u.
constexpr double kParallelTolerance = 1e-12;

// Shared pieces of the closed-form rotation: n = delta/|delta|, c = u.n,
// s = |n - c u| = sin theta and v = (n - c u) / s, the unit vector
// completing the rotation plane.
struct RotationFrame {
  Vector n;
  Vector v;
  double c = 1.0;
  double s = 0.0;
  double delta_norm = 0.0;
  bool identity = false;
};

RotationFrame rotation_frame(std::span<const double> delta, std::span<const double> u) {
  require(delta.size() == u.size(), "g_rotation: delta and u lengths differ");
  require(delta.size() >= 2, "g_rotation: dimension must be at least 2");
  RotationFrame f;
  f.delta_norm = norm(delta);
  if (f.delta_norm == 0.0) throw DegenerateInputError("g_rotation: zero displacement");
  f.n.assign(delta.begin(), delta.end());
  for (auto& x : f.n) x /= f.delta_norm;
  f.c = dot(u, f.n);
  f.v = f.n;
  axpy(-f.c, u, f.v);
  // A second pass keeps v orthogonal to u when delta is nearly (anti)parallel.
  axpy(-dot(u, f.v), u, f.v);
  f.s = norm(f.v);
  f.identity = f.s < kParallelTolerance;
  if (!f.identity)
    for (auto& x : f.v) x /= f.s;
  return f;
}

void check_same_length(std::span<const double> a, std::span<const double> b, const char* op) {
  require(a.size() == b.size(), std::string(op) + ": length mismatch");
}

}  // namespace

std::string to_string(GVariant g) {
  switch (g) {
    case GVariant::additive: return "additive";
    case GVariant::rotation: return "rotation";
    case GVariant::mlp: return "mlp";
  }
  return "?";
}

GVariant parse_g_variant(const std::string& name) {
  if (name == "additive") return GVariant::additive;
  if (name == "rotation") return GVariant::rotation;
  if (name == "mlp") return GVariant::mlp;
  throw ContractError("unknown g variant '" + name + "' (expected additive|rotation|mlp)");
}

std::string to_string(Scoring s) { return s == Scoring::cosine ? "cosine" : "dot"; }

MlpMap MlpMap::zeros(std::size_t dim, std::size_t hidden) {
  return {Matrix(hidden, 2 * dim), Vector(hidden, 0.0), Matrix(dim, hidden), Vector(dim, 0.0)};
}

MlpMap MlpMap::near_additive(std::size_t dim, Rng& rng, double noise) {
  // tanh(s x) / s ~ x for small s x, so out = B tanh(A [w; d]) ~ w + d.
  constexpr double kScale = 0.5;
  MlpMap m = zeros(dim, dim);
  for (std::size_t i = 0; i < dim; ++i) {
    m.hidden_weight(i, i) = kScale;
    m.hidden_weight(i, dim + i) = kScale;
    m.out_weight(i, i) = 1.0 / kScale;
  }
  for (auto& x : m.hidden_weight.data()) x += noise * rng.normal();
  for (auto& x : m.out_weight.data()) x += noise * rng.normal();
  return m;
}

Vector g_additive(std::span<const double> w, std::span<const double> delta) {
  check_same_length(w, delta, "g_additive");
  Vector out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = w[i] + delta[i];
  return out;
}

Vector g_rotation(std::span<const double> w, std::span<const double> delta,
                  std::span<const double> u) {
  check_same_length(w, delta, "g_rotation");
  const auto f = rotation_frame(delta, u);
  Vector out(w.begin(), w.end());
  if (f.identity) return out;
  // R w = w + ((c - 1) a - s b) u + ((c - 1) b + s a) v, a = u.w, b = v.w
  const double a = dot(u, w);
  const double b = dot(f.v, w);
  axpy((f.c - 1.0) * a - f.s * b, u, out);
  axpy((f.c - 1.0) * b + f.s * a, f.v, out);
  return out;
}

Matrix rotation_matrix(std::span<const double> delta, std::span<const double> u) {
  const std::size_t d = delta.size();
  Matrix r(d, d);
  Vector e(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    e[i] = 1.0;
    const auto col = g_rotation(e, delta, u);
    for (std::size_t row = 0; row < d; ++row) r(row, i) = col[row];
    e[i] = 0.0;
  }
  return r;
}

void g_rotation_backward(std::span<const double> w, std::span<const double> delta,
                         std::span<const double> u, std::span<const double> grad_out,
                         std::span<double> grad_w, std::span<double> grad_delta) {
  const std::size_t d = w.size();
  require(grad_out.size() == d && grad_w.size() == d && grad_delta.size() == d,
          "g_rotation_backward: length mismatch");
  const auto f = rotation_frame(delta, u);
  if (f.identity) {
    axpy(1.0, grad_out, grad_w);
    return;
  }
  const double a = dot(u, w);
  const double b = dot(f.v, w);
  const double gu = dot(grad_out, u);
  const double gv = dot(grad_out, f.v);
  const double cm = f.c - 1.0;

  // d/dw
  axpy(1.0, grad_out, grad_w);
  axpy(cm * gu + f.s * gv, u, grad_w);
  axpy(cm * gv - f.s * gu, f.v, grad_w);

  // d/dv, d/dc, d/ds treating them as free, then chain through
  // v = p / |p|, s = |p|, p = n - c u, c = u.n, n = delta / |delta|.
  Vector dv(d, 0.0);
  axpy(cm * b + f.s * a, grad_out, dv);
  axpy(cm * gv - f.s * gu, w, dv);
  const double dc = a * gu + b * gv;
  const double ds = a * gv - b * gu;
  const double vdv = dot(f.v, dv);
  Vector dn(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) dn[i] = (dv[i] - f.v[i] * vdv) / f.s + ds * f.v[i];
  axpy(dc - dot(u, dn), u, dn);
  const double nd = dot(f.n, dn);
  for (std::size_t i = 0; i < d; ++i) grad_delta[i] += (dn[i] - f.n[i] * nd) / f.delta_norm;
}

Vector g_mlp(std::span<const double> w, std::span<const double> delta, const MlpMap& mlp) {
  check_same_length(w, delta, "g_mlp");
  const std::size_t d = w.size();
  require(mlp.hidden_weight.cols() == 2 * d && mlp.out_weight.rows() == d &&
              mlp.out_weight.cols() == mlp.hidden() && mlp.hidden_bias.size() == mlp.hidden() &&
              mlp.out_bias.size() == d,
          "g_mlp: parameter shapes do not compose with [w; delta]");
  Vector h(mlp.hidden());
  for (std::size_t r = 0; r < h.size(); ++r) {
    const auto row = mlp.hidden_weight.row(r);
    h[r] = std::tanh(dot(row.first(d), w) + dot(row.subspan(d), delta) + mlp.hidden_bias[r]);
  }
  Vector out(d);
  for (std::size_t r = 0; r < d; ++r) out[r] = dot(mlp.out_weight.row(r), h) + mlp.out_bias[r];
  return out;
}

void g_mlp_backward(std::span<const double> w, std::span<const double> delta, const MlpMap& mlp,
                    std::span<const double> grad_out, std::span<double> grad_w,
                    std::span<double> grad_delta, MlpMap& grad_mlp) {
  const std::size_t d = w.size();
  const std::size_t hdim = mlp.hidden();
  require(grad_out.size() == d && grad_w.size() == d && grad_delta.size() == d,
          "g_mlp_backward: length mismatch");
  require(grad_mlp.hidden() == hdim && grad_mlp.dim() == d, "g_mlp_backward: gradient shape");
  Vector h(hdim);
  for (std::size_t r = 0; r < hdim; ++r) {
    const auto row = mlp.hidden_weight.row(r);
    h[r] = std::tanh(dot(row.first(d), w) + dot(row.subspan(d), delta) + mlp.hidden_bias[r]);
  }
  Vector dz(hdim, 0.0);
  for (std::size_t r = 0; r < d; ++r) {
    const double g = grad_out[r];
    grad_mlp.out_bias[r] += g;
    auto gb = grad_mlp.out_weight.row(r);
    const auto b = mlp.out_weight.row(r);
    for (std::size_t c = 0; c < hdim; ++c) {
      gb[c] += g * h[c];
      dz[c] += g * b[c];
    }
  }
  for (std::size_t c = 0; c < hdim; ++c) {
    dz[c] *= 1.0 - h[c] * h[c];
    grad_mlp.hidden_bias[c] += dz[c];
    auto ga = grad_mlp.hidden_weight.row(c);
    const auto arow = mlp.hidden_weight.row(c);
    for (std::size_t i = 0; i < d; ++i) {
      ga[i] += dz[c] * w[i];
      ga[d + i] += dz[c] * delta[i];
      grad_w[i] += dz[c] * arow[i];
      grad_delta[i] += dz[c] * arow[d + i];
    }
  }
}

ConstellationClassifier::ConstellationClassifier(Matrix centers, Matrix displacements, double tau,
                                                 GVariant variant, std::optional<MlpMap> mlp)
    : centers_(std::move(centers)),
      aux_centers_(centers_),
      displacements_(std::move(displacements)),
      variant_(variant),
      mlp_(std::move(mlp)) {
  require(tau > 0.0, "ConstellationClassifier: tau must be positive");
  tau_raw_ = std::log(tau);
  if (displacements_.empty()) displacements_ = Matrix(0, centers_.cols());
  axis_.assign(centers_.cols(), 0.0);
  if (!axis_.empty()) axis_[0] = 1.0;
  validate();
}

ConstellationClassifier ConstellationClassifier::make(std::size_t num_classes, std::size_t dim,
                                                      std::size_t num_displacements,
                                                      GVariant variant, Rng& rng, double tau0) {
  require(num_classes > 0 && dim > 0, "ConstellationClassifier::make: empty shape");
  Matrix centers(num_classes, dim);
  for (std::size_t k = 0; k < num_classes; ++k) {
    const auto dir = random_direction(dim, 1.0, rng);
    std::copy(dir.begin(), dir.end(), centers.row(k).begin());
  }
  ConstellationClassifier clf(std::move(centers), Matrix(0, dim), tau0, GVariant::additive);
  clf.init_structure(num_displacements, variant, rng);
  return clf;
}

void ConstellationClassifier::validate() const {
  require(centers_.rows() > 0 && centers_.cols() > 0, "ConstellationClassifier: empty centers");
  require(displacements_.cols() == centers_.cols(),
          "ConstellationClassifier: displacement width differs from center width");
  if (has_aux())
    require(aux_centers_.rows() == centers_.rows() && aux_centers_.cols() == centers_.cols(),
            "ConstellationClassifier: auxiliary centers shape differs from centers");
  require(mlp_.has_value() == (variant_ == GVariant::mlp),
          "ConstellationClassifier: MLP parameters present iff g = mlp");
  if (variant_ == GVariant::mlp)
    require(mlp_->dim() == dim() && mlp_->hidden_weight.cols() == 2 * dim(),
            "ConstellationClassifier: MLP shape does not match dimension");
  if (variant_ == GVariant::rotation) require(dim() >= 2, "rotation g needs d >= 2");
}

const Matrix& ConstellationClassifier::aux_centers() const {
  require(has_aux(), "auxiliary centers were discarded after training");
  return aux_centers_;
}

Matrix& ConstellationClassifier::mutable_aux_centers() {
  require(has_aux(), "auxiliary centers were discarded after training");
  return aux_centers_;
}

double ConstellationClassifier::tau() const { return std::exp(tau_raw_); }

void ConstellationClassifier::set_structure(Matrix displacements, GVariant variant,
                                            std::optional<MlpMap> mlp) {
  displacements_ = displacements.empty() ? Matrix(0, dim()) : std::move(displacements);
  variant_ = variant;
  mlp_ = std::move(mlp);
  validate();
}

void ConstellationClassifier::init_structure(std::size_t m, GVariant variant, Rng& rng,
                                             double scale) {
  double mean_norm = 0.0;
  for (std::size_t k = 0; k < num_classes(); ++k) mean_norm += norm(centers_.row(k));
  mean_norm /= static_cast<double>(num_classes());
  require(scale > 0.0, "init_structure: scale must be positive");
  Matrix delta(m, dim());
  for (std::size_t j = 0; j < m; ++j) {
    auto dir = random_direction(dim(), variant == GVariant::rotation ? scale : scale * mean_norm, rng);
    // Rotation displacements encode an angle from the axis, so start near it.
    if (variant == GVariant::rotation) dir[0] += 1.0;
    std::copy(dir.begin(), dir.end(), delta.row(j).begin());
  }
  std::optional<MlpMap> mlp;
  if (variant == GVariant::mlp) mlp = MlpMap::near_additive(dim(), rng);
  set_structure(std::move(delta), variant, std::move(mlp));
}

Vector ConstellationClassifier::member(std::size_t k, std::size_t j, bool use_aux) const {
  require(k < num_classes() && j < members_per_class(), "member: index out of range");
  const auto w = center_block(use_aux).row(k);
  if (j == 0) return Vector(w.begin(), w.end());
  const auto delta = displacements_.row(j - 1);
  switch (variant_) {
    case GVariant::additive: return g_additive(w, delta);
    case GVariant::rotation: return g_rotation(w, delta, axis_);
    case GVariant::mlp: return g_mlp(w, delta, *mlp_);
  }
  return {};
}

Matrix ConstellationClassifier::members(bool use_aux) const {
  const std::size_t per = members_per_class();
  Matrix out(num_classes() * per, dim());
  for (std::size_t k = 0; k < num_classes(); ++k)
    for (std::size_t j = 0; j < per; ++j) {
      const auto v = member(k, j, use_aux);
      std::copy(v.begin(), v.end(), out.row(k * per + j).begin());
    }
  return out;
}

double member_score(std::span<const double> feature, std::span<const double> member, double tau,
                    Scoring scoring) {
  return scoring == Scoring::cosine ? tau * cosine(feature, member) : dot(feature, member);
}

LogitResult member_logits(const Matrix& features, const Matrix& members, std::size_t per_class,
                          double tau, Scoring scoring) {
  require(per_class > 0 && members.rows() % per_class == 0,
          "member_logits: member count is not a multiple of the constellation size");
  require(features.cols() == members.cols(), "member_logits: feature width differs from members");
  const std::size_t num_classes = members.rows() / per_class;
  LogitResult out{Matrix(features.rows(), num_classes), IndexMatrix(features.rows(), num_classes)};
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const auto f = features.row(i);
    for (std::size_t k = 0; k < num_classes; ++k) {
      double best = member_score(f, members.row(k * per_class), tau, scoring);
      std::uint32_t best_j = 0;
      for (std::size_t j = 1; j < per_class; ++j) {
        const double s = member_score(f, members.row(k * per_class + j), tau, scoring);
        if (s > best) {
          best = s;
          best_j = static_cast<std::uint32_t>(j);
        }
      }
      out.logits(i, k) = best;
      out.argmax(i, k) = best_j;
    }
  }
  return out;
}

LogitResult constellation_logits(const ConstellationClassifier& clf, const Matrix& features,
                                 bool use_aux, Scoring scoring) {
  require(features.cols() == clf.dim(), "constellation_logits: features have " +
                                            std::to_string(features.cols()) +
                                            " columns, classifier expects " +
                                            std::to_string(clf.dim()));
  return member_logits(features, clf.members(use_aux), clf.members_per_class(), clf.tau(),
                       scoring);
}

ScoreGrads constellation_backward(const ConstellationClassifier& clf, const Matrix& features,
                                  bool use_aux, Scoring scoring, const LogitResult& forward,
                                  const Matrix& grad_logits, const ScoreTargets& targets) {
  const std::size_t n = features.rows();
  const std::size_t num_classes = clf.num_classes();
  const std::size_t d = clf.dim();
  const std::size_t per = clf.members_per_class();
  require(features.cols() == d, "constellation_backward: feature width mismatch");
  require(grad_logits.rows() == n && grad_logits.cols() == num_classes &&
              forward.logits.rows() == n && forward.logits.cols() == num_classes &&
              forward.argmax.rows == n && forward.argmax.cols == num_classes,
          "constellation_backward: logits shape mismatch");

  const Matrix& centers = clf.center_block(use_aux);
  const Matrix members = clf.members(use_aux);
  const double tau = clf.tau();

  ScoreGrads out;
  Matrix grad_members(members.rows(), d);
  if (targets.features) out.features = Matrix(n, d);

  for (std::size_t i = 0; i < n; ++i) {
    const auto f = features.row(i);
    const double f_norm = norm(f);
    for (std::size_t k = 0; k < num_classes; ++k) {
      const double g = grad_logits(i, k);
      if (g == 0.0) continue;
      const std::size_t r = k * per + forward.argmax(i, k);
      const auto c = members.row(r);
      auto gm = grad_members.row(r);
      if (scoring == Scoring::dot) {
        axpy(g, f, gm);
        if (targets.features) axpy(g, c, out.features.row(i));
        continue;
      }
      // s = tau * cos; ds/dc = tau (f/(|f||c|) - cos c/|c|^2), symmetric in f.
      const double c_norm = norm(c);
      if (f_norm == 0.0 || c_norm == 0.0)
        throw DegenerateInputError("constellation_backward: zero-norm feature or member");
      const double cs = dot(f, c) / (f_norm * c_norm);
      const double scale = g * tau;
      for (std::size_t t = 0; t < d; ++t)
        gm[t] += scale * (f[t] / (f_norm * c_norm) - cs * c[t] / (c_norm * c_norm));
      if (targets.features) {
        auto gf = out.features.row(i);
        for (std::size_t t = 0; t < d; ++t)
          gf[t] += scale * (c[t] / (f_norm * c_norm) - cs * f[t] / (f_norm * f_norm));
      }
      // d(tau cos)/d(log tau) = tau cos = the logit itself.
      if (targets.tau) out.tau_raw += g * forward.logits(i, k);
    }
  }

  if (!targets.centers && !targets.structure) return out;

  // Route member gradients back through g to the centers and structure.
  Matrix grad_centers(num_classes, d);
  Matrix grad_delta(clf.num_displacements(), d);
  std::optional<MlpMap> grad_mlp;
  if (clf.variant() == GVariant::mlp) grad_mlp = MlpMap::zeros(d, clf.mlp()->hidden());
  for (std::size_t k = 0; k < num_classes; ++k) {
    const auto w = centers.row(k);
    axpy(1.0, grad_members.row(k * per), grad_centers.row(k));
    for (std::size_t j = 1; j < per; ++j) {
      const auto gm = grad_members.row(k * per + j);
      const auto delta = clf.displacements().row(j - 1);
      switch (clf.variant()) {
        case GVariant::additive:
          axpy(1.0, gm, grad_centers.row(k));
          axpy(1.0, gm, grad_delta.row(j - 1));
          break;
        case GVariant::rotation:
          g_rotation_backward(w, delta, clf.rotation_axis(), gm, grad_centers.row(k),
                              grad_delta.row(j - 1));
          break;
        case GVariant::mlp:
          g_mlp_backward(w, delta, *clf.mlp(), gm, grad_centers.row(k), grad_delta.row(j - 1),
                         *grad_mlp);
          break;
      }
    }
  }
  if (targets.centers) out.centers = std::move(grad_centers);
  if (targets.structure) {
    out.displacements = std::move(grad_delta);
    out.mlp = std::move(grad_mlp);
  }
  return out;
}

UsageReport constellation_usage(const ConstellationClassifier& clf, const Matrix& features,
                                std::span<const int> labels, Scoring scoring) {
  require(features.rows() > 0, "constellation_usage: empty input");
  require(labels.size() == features.rows(), "constellation_usage: label count mismatch");
  const std::size_t per = clf.members_per_class();
  const std::size_t num_classes = clf.num_classes();
  const auto logits = constellation_logits(clf, features, /*use_aux=*/false, scoring);

  std::vector<std::vector<std::size_t>> per_class(num_classes, std::vector<std::size_t>(per, 0));
  UsageReport report;
  report.member_counts.assign(per, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < num_classes,
            "constellation_usage: label out of range");
    const auto k = static_cast<std::size_t>(labels[i]);
    const auto j = logits.argmax(i, k);
    ++report.member_counts[j];
    ++per_class[k][j];
  }
  report.histogram.resize(per);
  for (std::size_t j = 0; j < per; ++j)
    report.histogram[j] =
        static_cast<double>(report.member_counts[j]) / static_cast<double>(labels.size());

  report.classes_using_member.assign(per, 0);
  for (const auto& counts : per_class) {
    std::size_t total = 0;
    for (auto c : counts) total += c;
    if (total == 0) continue;
    ++report.classes_seen;
    bool all = true;
    for (std::size_t j = 0; j < per; ++j) {
      const bool used = 10 * counts[j] >= total;
      if (used) ++report.classes_using_member[j];
      all = all && used;
    }
    if (all) ++report.classes_using_all;
  }
  return report;
}

}  // namespace gist
