#pragma once

#include <functional>
#include <span>

#include "gist/matrix.hpp"

namespace gist {

class Rng;

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> v);

/// log(sum(exp(v))) shifted by max(v). Throws ContractError on empty input.
double log_sum_exp(std::span<const double> v);

/// In-place softmax using the same max shift as log_sum_exp.
void softmax_inplace(std::span<double> v);

/// a.b / (|a||b|). Throws DegenerateInputError if either vector has zero norm.
double cosine(std::span<const double> a, std::span<const double> b);

using ScalarFunction = std::function<double(std::span<const double>)>;

inline constexpr double kDefaultFiniteDiffStep = 1e-5;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
/// A non-finite evaluation raises DivergenceError naming the coordinate.
Vector finite_diff_grad(const ScalarFunction& f, std::span<const double> x,
                        double h = kDefaultFiniteDiffStep);

/// |a - b| <= max(abs_tol, rel_tol * max(|a|, |b|))
bool approx_equal(double a, double b, double abs_tol, double rel_tol);

/// Haar-ish random orthogonal matrix via Gram-Schmidt on a Gaussian matrix.
Matrix random_orthogonal(std::size_t n, Rng& rng);

/// Uniform random direction scaled to the given norm.
Vector random_direction(std::size_t n, double length, Rng& rng);

}  // namespace gist
