#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gist/matrix.hpp"

namespace gist {

class Rng;

/// The map g(center, displacement) that builds constellation members.
enum class GVariant : std::uint8_t { additive = 0, rotation = 1, mlp = 2 };

/// cosine is the weighted cosine score tau * cos(f, w); dot is the raw
/// inner product of the plain softmax classifier (no tau).
enum class Scoring : std::uint8_t { cosine = 0, dot = 1 };

std::string to_string(GVariant g);
GVariant parse_g_variant(const std::string& name);
std::string to_string(Scoring s);

/// Two-layer map [w; delta] -> tanh(A [w; delta] + a) -> B h + b.
struct MlpMap {
  Matrix hidden_weight;  // H x 2d
  Vector hidden_bias;    // H
  Matrix out_weight;     // d x H
  Vector out_bias;       // d

  std::size_t dim() const noexcept { return out_weight.rows(); }
  std::size_t hidden() const noexcept { return hidden_weight.rows(); }
  bool operator==(const MlpMap&) const = default;

  static MlpMap zeros(std::size_t dim, std::size_t hidden);
  /// Starts close to g(w, delta) = w + delta (hidden == dim) plus small noise.
  static MlpMap near_additive(std::size_t dim, Rng& rng, double noise = 0.01);
};

Vector g_additive(std::span<const double> w, std::span<const double> delta);

/// R w with R = I - uu^T - vv^T + [u, v] R_theta [u, v]^T, where v is the
/// unit component of delta orthogonal to u and theta the angle from u to
/// delta. u must be unit length. Returns w when delta is parallel to u.
Vector g_rotation(std::span<const double> w, std::span<const double> delta,
                  std::span<const double> u);

/// The d x d matrix applied by g_rotation, column i = g_rotation(e_i).
Matrix rotation_matrix(std::span<const double> delta, std::span<const double> u);

Vector g_mlp(std::span<const double> w, std::span<const double> delta, const MlpMap& mlp);

/// Accumulate d<grad_out, g(w, delta)>/dw and /ddelta into the outputs.
void g_rotation_backward(std::span<const double> w, std::span<const double> delta,
                         std::span<const double> u, std::span<const double> grad_out,
                         std::span<double> grad_w, std::span<double> grad_delta);
void g_mlp_backward(std::span<const double> w, std::span<const double> delta, const MlpMap& mlp,
                    std::span<const double> grad_out, std::span<double> grad_w,
                    std::span<double> grad_delta, MlpMap& grad_mlp);

struct IndexMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint32_t> data;

  IndexMatrix() = default;
  IndexMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0) {}
  std::uint32_t& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  std::uint32_t operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  bool operator==(const IndexMatrix&) const = default;
};

/// logits(i, k) = max_j score(f_i, w_kj); argmax(i, k) = the smallest j
/// attaining it. Member j = 0 is the bare center.
struct LogitResult {
  Matrix logits;
  IndexMatrix argmax;
};

/// Class centers W, auxiliary centers V (training only), shared
/// displacements, and the temperature, stored as log(tau) so tau > 0.
class ConstellationClassifier {
 public:
  ConstellationClassifier() = default;
  ConstellationClassifier(Matrix centers, Matrix displacements, double tau, GVariant variant,
                          std::optional<MlpMap> mlp = std::nullopt);

  /// Unit-norm random centers (V copies W), displacements as small
  /// perturbations of the center, tau = tau0.
  static ConstellationClassifier make(std::size_t num_classes, std::size_t dim,
                                      std::size_t num_displacements, GVariant variant, Rng& rng,
                                      double tau0 = 10.0);

  std::size_t num_classes() const noexcept { return centers_.rows(); }
  std::size_t dim() const noexcept { return centers_.cols(); }
  std::size_t num_displacements() const noexcept { return displacements_.rows(); }
  std::size_t members_per_class() const noexcept { return displacements_.rows() + 1; }
  GVariant variant() const noexcept { return variant_; }

  const Matrix& centers() const noexcept { return centers_; }
  Matrix& mutable_centers() noexcept { return centers_; }

  bool has_aux() const noexcept { return !aux_centers_.empty(); }
  /// Throws ContractError once the auxiliary centers have been discarded.
  const Matrix& aux_centers() const;
  Matrix& mutable_aux_centers();
  void reset_aux_from_centers() { aux_centers_ = centers_; }
  void discard_aux() { aux_centers_ = Matrix(); }

  const Matrix& displacements() const noexcept { return displacements_; }
  Matrix& mutable_displacements() noexcept { return displacements_; }

  double tau() const;
  double tau_raw() const noexcept { return tau_raw_; }
  void set_tau_raw(double raw) noexcept { tau_raw_ = raw; }

  const std::optional<MlpMap>& mlp() const noexcept { return mlp_; }
  std::optional<MlpMap>& mutable_mlp() noexcept { return mlp_; }

  /// e_1, the fixed reference vector of the rotation variant.
  const Vector& rotation_axis() const noexcept { return axis_; }

  /// Replace the structure parameters (displacements, variant, MLP).
  void set_structure(Matrix displacements, GVariant variant, std::optional<MlpMap> mlp);
  /// Fresh structure parameters for m displacements around the current
  /// centers: random directions of norm scale * mean |w_k| (rotation: the
  /// axis plus a perturbation of norm scale).
  void init_structure(std::size_t num_displacements, GVariant variant, Rng& rng,
                      double scale = 0.1);

  const Matrix& center_block(bool use_aux) const { return use_aux ? aux_centers() : centers_; }

  /// Member j of class k built from W (use_aux = false) or V.
  Vector member(std::size_t k, std::size_t j, bool use_aux) const;
  /// All members, row k * members_per_class() + j.
  Matrix members(bool use_aux) const;

  bool operator==(const ConstellationClassifier&) const = default;

 private:
  void validate() const;

  Matrix centers_;
  Matrix aux_centers_;
  Matrix displacements_;
  double tau_raw_ = 0.0;
  GVariant variant_ = GVariant::additive;
  std::optional<MlpMap> mlp_;
  Vector axis_;
};

/// Scores every (sample, class) pair against an explicit member matrix with
/// per_class rows per class. Zero-norm members or features raise
/// DegenerateInputError under cosine scoring.
LogitResult member_logits(const Matrix& features, const Matrix& members, std::size_t per_class,
                          double tau, Scoring scoring);

/// Score of one feature row against one member, bit-identical to the value
/// member_logits records.
double member_score(std::span<const double> feature, std::span<const double> member, double tau,
                    Scoring scoring);

LogitResult constellation_logits(const ConstellationClassifier& clf, const Matrix& features,
                                 bool use_aux, Scoring scoring = Scoring::cosine);

/// Which blocks a backward pass writes. Blocks not requested stay empty.
struct ScoreTargets {
  bool centers = false;
  bool structure = false;  // displacements and MLP parameters
  bool tau = false;
  bool features = false;
};

struct ScoreGrads {
  Matrix centers;                // K x d, of W or V depending on use_aux
  Matrix displacements;          // m x d
  std::optional<MlpMap> mlp;
  double tau_raw = 0.0;
  Matrix features;               // batch x d
};

/// Reverse pass through constellation_logits for a given d(loss)/d(logits).
/// The max over members is a hard selector: only the recorded argmax member
/// receives gradient.
ScoreGrads constellation_backward(const ConstellationClassifier& clf, const Matrix& features,
                                  bool use_aux, Scoring scoring, const LogitResult& forward,
                                  const Matrix& grad_logits, const ScoreTargets& targets);

/// How often each member wins for the sample's own class.
struct UsageReport {
  std::vector<double> histogram;            // m + 1 fractions, sums to 1
  std::vector<std::size_t> member_counts;   // m + 1 raw counts
  /// classes_using_member[j]: classes choosing member j for >= 10% of their samples.
  std::vector<std::size_t> classes_using_member;
  /// Classes choosing every member for >= 10% of their samples.
  std::size_t classes_using_all = 0;
  std::size_t classes_seen = 0;
};

UsageReport constellation_usage(const ConstellationClassifier& clf, const Matrix& features,
                                std::span<const int> labels, Scoring scoring = Scoring::cosine);

}  // namespace gist
