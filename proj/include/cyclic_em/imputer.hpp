#pragma once

#include "cyclic_em/causal_function.hpp"
#include "cyclic_em/dataset.hpp"

#include <cstdint>
#include <vector>

namespace cyclic_em {

// Precision of x under a linear Gaussian SEM x = U B^T x + U e + c with
// e ~ N(0, Theta^{-1}) and c_I ~ N(0, I):
//   Theta_X = (I - B U) (U Theta + I - U) (I - U B^T).
// Reduces to (I - B) Theta (I - B^T) without interventions.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>
build_interventional_precision(const Eigen::MatrixBase<Derived>& adjacency,
                               const Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1>&
                                   noise_precision,
                               const InterventionExperiment& experiment) {
  using Scalar = typename Derived::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const Index d = adjacency.rows();
  if (adjacency.cols() != d || noise_precision.size() != d || experiment.d() != d)
    throw ParameterError("build_interventional_precision: dimension mismatch");
  const Vec u = experiment.u_diagonal().template cast<Scalar>();
  const Vec middle = (u.array() * noise_precision.array() + (Scalar(1) - u.array())).matrix();
  const Mat right = Mat::Identity(d, d) - u.asDiagonal() * adjacency.transpose();
  Mat out = right.transpose() * middle.asDiagonal() * right;
  return Scalar(0.5) * (out + out.transpose());
}

// Cholesky factor of the precision with the missing coordinates moved first:
// upper^T upper = P Theta_X P^T, order[k] = original index at position k.
struct PrecisionFactorization {
  Matrix precision;
  std::vector<Index> order;
  Index missing_count = 0;
  Matrix upper;
};

// Missing indices are those with observed == 0 (listed in `missing`).
PrecisionFactorization factorize_for_pattern(const Matrix& precision,
                                             const std::vector<Index>& missing);

// Draws x_missing ~ p(x_missing | x_observed) for one row using an existing
// factorization: solves upper_{mm} x_m = z - upper_{mo} x_o.
void impute_row(const PrecisionFactorization& factor, Eigen::Ref<Vector> x, Rng& rng);

// Conditional Gaussian imputation of every row of `values` given its
// non-missing entries, all rows sharing one precision matrix (one
// interventional experiment). Row k draws from stream (seed, row_ids[k])
// (row_ids defaults to 0..n-1). Observed entries are copied bit-exactly.
Matrix impute_gaussian_batch(const Matrix& values, const ObservedMask& observed,
                             const Matrix& precision, std::uint64_t seed,
                             const std::vector<Index>& row_ids = {});

// J_f(0) with the given mask. Its transpose plays the role of the weighted
// adjacency when imputing under a nonlinear model.
Matrix linearization_matrix(const CausalFunction& f, const Matrix& mask);

// Weighted adjacency B_hat (B_hat(j, i) for j -> i) of the model linearised at
// zero under its expected mask sigmoid(phi).
Matrix effective_adjacency(const CausalModel& model);

// Interventional precision of the linearised model for `experiment`.
Matrix model_precision(const CausalModel& model, const InterventionExperiment& experiment);

// Replaces each missing entry by the mean of the observed entries of its node
// within the same regime; nodes never observed in a regime fall back to 0
// with a warning. The result is marked fully observed.
InterventionalDataset mean_impute(const InterventionalDataset& data);

// Column means over observed entries of one batch (fallback 0 + warning).
Matrix mean_impute_batch(const Matrix& values, const ObservedMask& observed);

}  // namespace cyclic_em
