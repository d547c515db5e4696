#include "cyclic_em/likelihood.hpp"

#include <sstream>

namespace cyclic_em {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 log(2 pi)

// log|det(I - A)| and, optionally, its gradient -(I - A)^{-T}.
double exact_from_matrix(const Matrix& a, Matrix* grad) {
  const Index d = a.rows();
  const Matrix system = Matrix::Identity(d, d) - a;
  Eigen::PartialPivLU<Matrix> lu(system);
  const Matrix& packed = lu.matrixLU();
  double value = 0.0;
  for (Index i = 0; i < d; ++i) {
    const double pivot = packed(i, i);
    if (pivot == 0.0) throw DensityError("I - U J_f is singular");
    value += std::log(std::abs(pivot));
  }
  if (grad) *grad -= lu.inverse().transpose();
  return value;
}

}  // namespace

double poisson_survival(double mean, int k) {
  if (k <= 0) return 1.0;
  // Upper tail summed directly to avoid cancellation in 1 - CDF.
  double log_pmf = -mean + k * std::log(mean) - std::lgamma(k + 1.0);
  double term = std::exp(log_pmf);
  double tail = 0.0;
  for (int j = k; j < k + 1000; ++j) {
    tail += term;
    term *= mean / (j + 1.0);
    if (term < tail * 1e-17) break;
  }
  return tail;
}

LogDetDraw draw_logdet(const LogDetEstimatorConfig& config, Index d, Rng& rng) {
  LogDetDraw draw;
  switch (config.mode) {
    case LogDetMode::exact:
      return draw;
    case LogDetMode::truncated:
      if (config.truncation < 0) throw ParameterError("truncation must be non-negative");
      draw.cutoff = config.truncation;
      draw.probes = Matrix::Identity(d, d);
      draw.probe_weight = 1.0;
      for (int k = 1; k <= draw.cutoff; ++k) draw.coefficients.push_back(1.0 / k);
      return draw;
    case LogDetMode::russian_roulette: {
      if (!(config.poisson_mean > 0.0)) throw ParameterError("poisson mean must be positive");
      if (config.probes < 1) throw ParameterError("need at least one probe");
      std::poisson_distribution<int> cutoff(config.poisson_mean);
      draw.cutoff = cutoff(rng);
      draw.probes.resize(d, config.probes);
      for (int p = 0; p < config.probes; ++p) draw.probes.col(p) = standard_normal(d, rng);
      draw.probe_weight = 1.0 / config.probes;
      for (int k = 1; k <= draw.cutoff; ++k)
        draw.coefficients.push_back(1.0 / (k * poisson_survival(config.poisson_mean, k)));
      return draw;
    }
  }
  return draw;
}

double exact_log_abs_det(const CausalFunction& f, const Vector& x,
                         const InterventionExperiment& experiment, const Matrix& mask) {
  const Matrix a = experiment.u_diagonal().asDiagonal() * jacobian(f, x, mask);
  return exact_from_matrix(a, nullptr);
}

double estimate_log_abs_det(const CausalFunction& f, const Vector& x,
                            const InterventionExperiment& experiment, const Matrix& mask,
                            const LogDetEstimatorConfig& config, Rng& rng) {
  if (config.mode == LogDetMode::exact) return exact_log_abs_det(f, x, experiment, mask);
  const FunctionAt at(f, x, mask);
  const ResidualJacobianOperator op(at, experiment.u_diagonal());
  if (config.check_contraction) {
    const double norm = power_iteration_norm(
        op.dim(), [&](const Vector& v) { return op.apply(v); },
        [&](const Vector& v) { return op.apply_transpose(v); });
    if (norm >= 1.0) {
      std::ostringstream msg;
      msg << "log-det series applied to a non-contractive Jacobian (norm estimate " << norm
          << ")";
      warn(msg.str());
    }
  }
  const LogDetDraw draw = draw_logdet(config, dimension(f), rng);
  return power_series_log_det(op, draw);
}

double interventional_log_density(const CausalModel& model, const Vector& x,
                                  const InterventionExperiment& experiment, const Matrix& mask,
                                  const LogDetEstimatorConfig& config, const LogDetDraw& draw,
                                  Upstream* upstream) {
  const Index d = model.d();
  const FunctionAt at(model.function, x, mask);
  const Vector& u = experiment.u_diagonal();
  const Vector residual = x - at.output();
  const Vector precision = model.noise.precision();

  double value = 0.0;
  for (Index i = 0; i < d; ++i) {
    if (u[i] == 0.0) {
      value += -kHalfLog2Pi - 0.5 * x[i] * x[i];
    } else {
      value += -kHalfLog2Pi - 0.5 * model.noise.log_var[i] -
               0.5 * precision[i] * residual[i] * residual[i];
    }
  }

  Matrix grad_a;
  if (upstream) grad_a = Matrix::Zero(d, d);
  if (config.mode == LogDetMode::exact) {
    value += exact_from_matrix(u.asDiagonal() * at.jacobian(), upstream ? &grad_a : nullptr);
  } else {
    const ResidualJacobianOperator op(at, u);
    value += power_series_log_det(op, draw, upstream ? &grad_a : nullptr);
  }

  if (upstream) {
    upstream->d_output = u.cwiseProduct(precision.cwiseProduct(residual));
    upstream->d_log_var =
        u.cwiseProduct((0.5 * precision.array() * residual.array().square() - 0.5).matrix());
    // A = diag(u) J, so dJ(i, j) = u_i dA(i, j).
    upstream->d_jacobian = u.asDiagonal() * grad_a;
  }
  return value;
}

double interventional_log_density(const CausalModel& model, const Vector& x,
                                  const InterventionExperiment& experiment, const Matrix& mask,
                                  const LogDetEstimatorConfig& config, Rng& rng) {
  const LogDetDraw draw = draw_logdet(config, model.d(), rng);
  return interventional_log_density(model, x, experiment, mask, config, draw);
}

ObjectiveNoise draw_objective_noise(const CausalModel& model, Index rows,
                                    const LogDetEstimatorConfig& config, bool hard_mask,
                                    Rng& rng) {
  ObjectiveNoise noise;
  noise.mask = sample_mask(model.mask, hard_mask, rng);
  noise.draws.reserve(static_cast<std::size_t>(rows));
  for (Index r = 0; r < rows; ++r) noise.draws.push_back(draw_logdet(config, model.d(), rng));
  return noise;
}

ObjectiveResult expected_objective(const CausalModel& model, const Matrix& batch,
                                   const InterventionExperiment& experiment, double sparsity,
                                   const LogDetEstimatorConfig& config, const ObjectiveNoise& noise,
                                   bool with_gradient) {
  const Index n = batch.rows();
  if (n == 0) throw ParameterError("expected_objective: empty batch");
  if (static_cast<Index>(noise.draws.size()) != n)
    throw ContractViolation("objective noise was drawn for a different batch size");

  ObjectiveResult result;
  if (with_gradient) result.gradient = ModelGradient::zeros_like(model);
  double total = 0.0;
  Upstream upstream;
  for (Index r = 0; r < n; ++r) {
    const Vector x = batch.row(r).transpose();
    total += interventional_log_density(model, x, experiment, noise.mask.value, config,
                                        noise.draws[static_cast<std::size_t>(r)],
                                        with_gradient ? &upstream : nullptr);
    if (with_gradient) result.gradient += parameter_gradients(model, x, noise.mask, upstream);
  }
  result.mean_log_density = total / double(n);

  const Matrix prob = model.mask.probabilities();
  result.value = result.mean_log_density - sparsity * prob.sum();
  if (with_gradient) {
    result.gradient *= 1.0 / double(n);
    Matrix penalty = -sparsity * (prob.array() * (1.0 - prob.array())).matrix();
    penalty.diagonal().setZero();
    result.gradient.logits += penalty;
  }
  return result;
}

ObjectiveResult expected_objective(const CausalModel& model, const Matrix& batch,
                                   const InterventionExperiment& experiment, double sparsity,
                                   const LogDetEstimatorConfig& config, bool hard_mask, Rng& rng,
                                   bool with_gradient) {
  const ObjectiveNoise noise = draw_objective_noise(model, batch.rows(), config, hard_mask, rng);
  return expected_objective(model, batch, experiment, sparsity, config, noise, with_gradient);
}

}  // namespace cyclic_em
