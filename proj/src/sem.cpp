#include "cyclic_em/sem.hpp"

#include <algorithm>
#include <sstream>

namespace cyclic_em {

InterventionExperiment::InterventionExperiment(Index d, std::vector<Index> intervened)
    : d_(d), intervened_(std::move(intervened)), u_diag_(Vector::Ones(d)) {
  std::sort(intervened_.begin(), intervened_.end());
  intervened_.erase(std::unique(intervened_.begin(), intervened_.end()), intervened_.end());
  for (Index i : intervened_) {
    if (i < 0 || i >= d) throw ParameterError("intervention target out of range");
    u_diag_[i] = 0.0;
  }
}

std::vector<Index> InterventionExperiment::observed() const {
  std::vector<Index> out;
  for (Index i = 0; i < d_; ++i)
    if (u_diag_[i] != 0.0) out.push_back(i);
  return out;
}

std::string to_string(SemKind kind) { return kind == SemKind::linear ? "linear" : "tanh"; }

SemKind sem_kind_from_string(const std::string& name) {
  if (name == "linear") return SemKind::linear;
  if (name == "tanh") return SemKind::tanh;
  throw ParameterError("unknown sem kind '" + name + "'");
}

Vector solve_sem(const GroundTruthSEM& sem, const InterventionExperiment& experiment,
                 const Vector& noise, const Vector& exogenous,
                 const FixedPointOptions& options) {
  const Index d = sem.d();
  const Vector& u = experiment.u_diagonal();
  const Vector rhs = u.cwiseProduct(noise) + exogenous;
  const Matrix& w = sem.weights.weights;

  if (sem.kind == SemKind::linear) {
    const Matrix system = Matrix::Identity(d, d) - u.asDiagonal() * w.transpose();
    Eigen::PartialPivLU<Matrix> lu(system);
    return lu.solve(rhs);
  }

  const double alpha = sem.contractive ? 1.0 : options.damping;
  Vector x = Vector::Zero(d);
  for (int it = 0; it < options.max_iterations; ++it) {
    Vector target = u.cwiseProduct((w.transpose() * x).array().tanh().matrix()) + rhs;
    Vector next = (1.0 - alpha) * x + alpha * target;
    const double change = (next - x).lpNorm<Eigen::Infinity>();
    x = std::move(next);
    if (change < options.tolerance) return x;
  }
  std::ostringstream msg;
  msg << "fixed-point iteration did not converge in " << options.max_iterations
      << " iterations (spectral norm of W = " << spectral_norm(w) << ")";
  throw SimulationError(msg.str());
}

Matrix simulate(const GroundTruthSEM& sem, const InterventionExperiment& experiment, Index n,
                std::uint64_t seed, const FixedPointOptions& options) {
  const Index d = sem.d();
  if (experiment.d() != d) throw ParameterError("simulate: experiment dimension mismatch");
  if (sem.noise_std.size() != d) throw ParameterError("simulate: noise_std dimension mismatch");
  Matrix out(n, d);

  // Linear systems share one factorization across rows.
  Eigen::PartialPivLU<Matrix> lu;
  if (sem.kind == SemKind::linear)
    lu.compute(Matrix::Identity(d, d) -
               experiment.u_diagonal().asDiagonal() * sem.weights.weights.transpose());

  for (Index k = 0; k < n; ++k) {
    Rng rng = make_stream(seed, static_cast<std::uint64_t>(k));
    Vector noise = standard_normal(d, rng).cwiseProduct(sem.noise_std);
    Vector exogenous = Vector::Zero(d);
    const Vector draws = standard_normal(d, rng);
    for (Index i : experiment.intervened()) exogenous[i] = draws[i];
    if (sem.kind == SemKind::linear) {
      const Vector rhs = experiment.u_diagonal().cwiseProduct(noise) + exogenous;
      out.row(k) = lu.solve(rhs).transpose();
    } else {
      out.row(k) = solve_sem(sem, experiment, noise, exogenous, options).transpose();
    }
  }
  return out;
}

std::vector<PlannedExperiment> make_single_node_plan(Index d, Index n_per_intervention) {
  if (d < 1) throw ParameterError("make_single_node_plan: need d >= 1");
  std::vector<PlannedExperiment> plan;
  plan.reserve(static_cast<std::size_t>(d));
  for (Index k = 0; k < d; ++k) plan.push_back({InterventionExperiment(d, {k}), n_per_intervention});
  return plan;
}

}  // namespace cyclic_em
