#include "gist/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gist/error.hpp"
#include "gist/rng.hpp"

namespace gist {

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double log_sum_exp(std::span<const double> v) {
  require(!v.empty(), "log_sum_exp: empty vector");
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

void softmax_inplace(std::span<double> v) {
  require(!v.empty(), "softmax: empty vector");
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double& x : v) {
    x = std::exp(x - m);
    s += x;
  }
  for (double& x : v) x /= s;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "cosine: length mismatch");
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw DegenerateInputError("cosine: zero-norm input");
  return dot(a, b) / (na * nb);
}

Vector finite_diff_grad(const ScalarFunction& f, std::span<const double> x, double h) {
  require(h > 0.0, "finite_diff_grad: step must be positive");
  Vector point(x.begin(), x.end());
  Vector grad(x.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + h;
    const double up = f(point);
    point[i] = saved - h;
    const double down = f(point);
    point[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw DivergenceError("finite_diff_grad: non-finite evaluation at coordinate " +
                            std::to_string(i));
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

bool approx_equal(double a, double b, double abs_tol, double rel_tol) {
  const double tol = std::max(abs_tol, rel_tol * std::max(std::abs(a), std::abs(b)));
  return std::abs(a - b) <= tol;
}

Matrix random_orthogonal(std::size_t n, Rng& rng) {
  Matrix q(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = q.row(r);
    for (;;) {
      for (auto& x : row) x = rng.normal();
      // Two Gram-Schmidt passes keep the basis orthogonal to rounding.
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t p = 0; p < r; ++p) {
          const auto prev = q.row(p);
          axpy(-dot(row, prev), prev, row);
        }
      }
      const double len = norm(row);
      if (len > 1e-8) {
        for (auto& x : row) x /= len;
        break;
      }
    }
  }
  return q;
}

Vector random_direction(std::size_t n, double length, Rng& rng) {
  Vector v(n);
  double len = 0.0;
  while (len == 0.0) {
    for (auto& x : v) x = rng.normal();
    len = norm(v);
  }
  for (auto& x : v) x *= length / len;
  return v;
}

}  // namespace gist
