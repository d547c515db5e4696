#pragma once

#include "cyclic_em/causal_function.hpp"
#include "cyclic_em/common.hpp"
#include "cyclic_em/sem.hpp"

#include <cmath>
#include <vector>

namespace cyclic_em {

enum class LogDetMode { exact, truncated, russian_roulette };

struct LogDetEstimatorConfig {
  LogDetMode mode = LogDetMode::russian_roulette;
  double poisson_mean = 5.0;  // N, mean of the random series cut-off
  int probes = 1;             // Hutchinson vectors per evaluation
  int truncation = 10;        // series length for truncated mode
  // Power-iteration contraction check before estimating (warning only).
  bool check_contraction = false;
};

// P(n >= k) for n ~ Poisson(mean), summed over the upper tail.
double poisson_survival(double mean, int k);

// Frozen randomness of one log-det evaluation: series length and probe
// vectors (columns), with the weight applied to each probe's contribution.
struct LogDetDraw {
  int cutoff = 0;
  Matrix probes;
  double probe_weight = 1.0;
  // Term weights c_k, k = 1..cutoff (index k - 1).
  std::vector<double> coefficients;
};

// Russian roulette: cutoff ~ Poisson(N), Gaussian probes, c_k = 1/(k P(n>=k)).
// Truncated: fixed cutoff, basis-vector probes (exact traces), c_k = 1/k.
// Exact: an empty draw.
LogDetDraw draw_logdet(const LogDetEstimatorConfig& config, Index d, Rng& rng);

// -sum_k c_k w^T A^k w over the probes of `draw`, touching A only through
// op.apply(v) = A v and, for the gradient, op.apply_transpose(u) = A^T u.
// When grad is non-null, adds d value / d A to it.
template <typename Op>
double power_series_log_det(const Op& op, const LogDetDraw& draw, Matrix* grad = nullptr) {
  const int n = draw.cutoff;
  if (n <= 0 || draw.probes.cols() == 0) return 0.0;
  const Index d = draw.probes.rows();
  double total = 0.0;
  Matrix forward(d, n + 1), backward(d, n);
  for (Index p = 0; p < draw.probes.cols(); ++p) {
    const Vector w = draw.probes.col(p);
    forward.col(0) = w;
    double series = 0.0;
    for (int k = 1; k <= n; ++k) {
      forward.col(k) = op.apply(forward.col(k - 1));
      series += draw.coefficients[k - 1] * w.dot(forward.col(k));
    }
    total -= draw.probe_weight * series;
    if (grad) {
      // d(w^T A^k w)/dA = sum_{m<k} (A^T)^m w (A^{k-1-m} w)^T
      backward.col(0) = w;
      for (int m = 1; m < n; ++m) backward.col(m) = op.apply_transpose(backward.col(m - 1));
      Matrix weighted = Matrix::Zero(d, n);
      for (int m = 0; m < n; ++m)
        for (int l = 0; m + l + 1 <= n; ++l)
          weighted.col(m) += draw.coefficients[m + l] * forward.col(l);
      *grad -= draw.probe_weight * (backward * weighted.transpose());
    }
  }
  return total;
}

// A = U J_f(x) through Jacobian-vector products only.
class ResidualJacobianOperator {
 public:
  ResidualJacobianOperator(const FunctionAt& at, const Vector& u_diagonal)
      : at_(at), u_(u_diagonal) {}
  Vector apply(const Vector& v) const { return u_.cwiseProduct(at_.jvp(v)); }
  Vector apply_transpose(const Vector& v) const { return at_.vjp(u_.cwiseProduct(v)); }
  Index dim() const { return u_.size(); }

 private:
  const FunctionAt& at_;
  const Vector& u_;
};

// log|det(I - U J_f(x))| by dense LU with partial pivoting.
double exact_log_abs_det(const CausalFunction& f, const Vector& x,
                         const InterventionExperiment& experiment, const Matrix& mask);

// Unbiased (russian_roulette) or truncated power-series estimate, averaged
// over config.probes Hutchinson vectors; exact mode defers to LU.
double estimate_log_abs_det(const CausalFunction& f, const Vector& x,
                            const InterventionExperiment& experiment, const Matrix& mask,
                            const LogDetEstimatorConfig& config, Rng& rng);

// log p(x) for a complete sample under the intervened model: standard normal
// for intervened coordinates, Gaussian residuals x - f(x) with precision
// Theta on observed coordinates, plus the log-det term. When `upstream` is
// non-null it receives the gradient of the returned value with respect to
// f(x), J_f(x) and log_var.
double interventional_log_density(const CausalModel& model, const Vector& x,
                                  const InterventionExperiment& experiment, const Matrix& mask,
                                  const LogDetEstimatorConfig& config, const LogDetDraw& draw,
                                  Upstream* upstream = nullptr);

double interventional_log_density(const CausalModel& model, const Vector& x,
                                  const InterventionExperiment& experiment, const Matrix& mask,
                                  const LogDetEstimatorConfig& config, Rng& rng);

// Randomness shared by one evaluation of the batch objective: one mask for
// the batch and one log-det draw per row.
struct ObjectiveNoise {
  MaskSample mask;
  std::vector<LogDetDraw> draws;
};

ObjectiveNoise draw_objective_noise(const CausalModel& model, Index rows,
                                    const LogDetEstimatorConfig& config, bool hard_mask, Rng& rng);

struct ObjectiveResult {
  double value = 0.0;
  double mean_log_density = 0.0;
  ModelGradient gradient;  // empty unless requested
};

// Mean interventional log-density of the rows of `batch` (all from
// `experiment`) minus sparsity * E||M||_1.
ObjectiveResult expected_objective(const CausalModel& model, const Matrix& batch,
                                   const InterventionExperiment& experiment, double sparsity,
                                   const LogDetEstimatorConfig& config, const ObjectiveNoise& noise,
                                   bool with_gradient);

ObjectiveResult expected_objective(const CausalModel& model, const Matrix& batch,
                                   const InterventionExperiment& experiment, double sparsity,
                                   const LogDetEstimatorConfig& config, bool hard_mask, Rng& rng,
                                   bool with_gradient);

}  // namespace cyclic_em
