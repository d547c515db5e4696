#include "cyclic_em/em_trainer.hpp"

#include "cyclic_em/csv.hpp"
#include "cyclic_em/imputer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

namespace cyclic_em {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void adam_tensor(Eigen::Ref<Matrix> param, const Matrix& grad, Eigen::Ref<Matrix> m,
                 Eigen::Ref<Matrix> v, const TrainConfig& config, long step) {
  const auto& a = config.adam;
  m = a.beta1 * m + (1.0 - a.beta1) * grad;
  v = a.beta2 * v + (1.0 - a.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(a.beta1, double(step));
  const double c2 = 1.0 - std::pow(a.beta2, double(step));
  param.array() += config.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + a.epsilon);
}

std::string parameter_dump(const CausalModel& model) {
  std::ostringstream out;
  out.precision(6);
  if (const auto* lin = std::get_if<LinearFunction>(&model.function)) {
    out << "B =\n" << lin->weights << '\n';
  } else {
    const auto& mlp = std::get<MaskedMlpFunction>(model.function);
    out << "W1 =\n" << mlp.input_weights << "\nW2 =\n" << mlp.output_weights << '\n';
  }
  out << "logits =\n" << model.mask.logits << "\nlog_var = " << model.noise.log_var.transpose();
  return out.str();
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0) throw ParameterError("epochs must be non-negative");
  if (batch_size < 1) throw ParameterError("batch_size must be positive");
  if (!(learning_rate >= 0.0)) throw ParameterError("learning_rate must be non-negative");
  if (!(sparsity >= 0.0)) throw ParameterError("lambda must be non-negative");
  if (!(lipschitz_budget > 0.0 && lipschitz_budget < 1.0))
    throw ParameterError("lipschitz_budget must lie in (0, 1)");
  if (!(temperature > 0.0)) throw ParameterError("temperature must be positive");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ParameterError("threshold must lie in (0, 1)");
}

std::vector<Batch> make_batches(const InterventionalDataset& data, Index batch_size) {
  std::vector<Batch> out;
  for (Index k = 0; k < static_cast<Index>(data.regimes.size()); ++k) {
    const auto rows = data.rows_of_regime(k);
    for (std::size_t start = 0; start < rows.size(); start += std::size_t(batch_size)) {
      const std::size_t stop = std::min(rows.size(), start + std::size_t(batch_size));
      out.push_back({k, std::vector<Index>(rows.begin() + long(start), rows.begin() + long(stop))});
    }
  }
  return out;
}

Matrix e_step(const CausalModel& model, const InterventionalDataset& data, std::uint64_t seed,
              int epoch) {
  Matrix completed = data.values;
  const std::uint64_t epoch_seed = mix64(seed ^ 0x65737465ULL) ^ mix64(std::uint64_t(epoch) + 7);
  for (Index k = 0; k < static_cast<Index>(data.regimes.size()); ++k) {
    const auto rows = data.rows_of_regime(k);
    std::vector<Index> incomplete;
    for (Index r : rows)
      if ((data.observed.row(r).array() == 0).any()) incomplete.push_back(r);
    if (incomplete.empty()) continue;
    const Matrix precision = model_precision(model, data.regimes[std::size_t(k)]);
    const InterventionalDataset part = data.select_rows(incomplete);
    const Matrix filled =
        impute_gaussian_batch(part.values, part.observed, precision, epoch_seed, incomplete);
    for (std::size_t r = 0; r < incomplete.size(); ++r)
      completed.row(incomplete[r]) = filled.row(Index(r));
  }
  return completed;
}

double apply_update(CausalModel& model, const ModelGradient& gradient, AdamState& state,
                    const TrainConfig& config) {
  ++state.step;
  if (auto* lin = std::get_if<LinearFunction>(&model.function)) {
    adam_tensor(lin->weights, gradient.function.weights, state.first.function.weights,
                state.second.function.weights, config, state.step);
    lin->weights.diagonal().setZero();
  } else {
    auto& mlp = std::get<MaskedMlpFunction>(model.function);
    adam_tensor(mlp.input_weights, gradient.function.weights, state.first.function.weights,
                state.second.function.weights, config, state.step);
    adam_tensor(mlp.output_weights, gradient.function.output_weights,
                state.first.function.output_weights, state.second.function.output_weights,
                config, state.step);
  }
  adam_tensor(model.mask.logits, gradient.logits, state.first.logits, state.second.logits, config,
              state.step);
  model.mask.logits.diagonal().setZero();
  adam_tensor(model.noise.log_var, gradient.log_var, state.first.log_var, state.second.log_var,
              config, state.step);
  spectral_project(model.function, config.lipschitz_budget);
  return lipschitz_bound(model.function);
}

MStepResult m_step(CausalModel& model, AdamState& state, const InterventionalDataset& data,
                   const Matrix& completed, const TrainConfig& config, int epoch) {
  Rng order_rng = make_stream(config.seed, std::uint64_t(epoch), 0x6f72ULL);
  std::vector<Batch> batches;
  for (Index k = 0; k < static_cast<Index>(data.regimes.size()); ++k) {
    auto rows = data.rows_of_regime(k);
    std::shuffle(rows.begin(), rows.end(), order_rng);
    for (std::size_t start = 0; start < rows.size(); start += std::size_t(config.batch_size)) {
      const std::size_t stop = std::min(rows.size(), start + std::size_t(config.batch_size));
      batches.push_back(
          {k, std::vector<Index>(rows.begin() + long(start), rows.begin() + long(stop))});
    }
  }
  std::shuffle(batches.begin(), batches.end(), order_rng);

  MStepResult result;
  double weighted_q = 0.0;
  Index total_rows = 0;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const auto& batch = batches[b];
    Matrix x(static_cast<Index>(batch.rows.size()), data.d());
    for (std::size_t r = 0; r < batch.rows.size(); ++r) x.row(Index(r)) = completed.row(batch.rows[r]);
    Rng rng = make_stream(config.seed, std::uint64_t(epoch), 0x10000ULL + b);
    const ObjectiveResult obj =
        expected_objective(model, x, data.regimes[std::size_t(batch.regime)], config.sparsity,
                           config.logdet, config.hard_mask, rng, true);
    if (!std::isfinite(obj.value) || !obj.gradient.all_finite())
      throw NumericalError("non-finite objective or gradient at epoch " + std::to_string(epoch) +
                           "\n" + parameter_dump(model));
    weighted_q += obj.value * double(x.rows());
    total_rows += x.rows();
    const double lip = apply_update(model, obj.gradient, state, config);
    result.max_step_lipschitz = std::max(result.max_step_lipschitz, lip);
    result.max_step_effective_norm =
        std::max(result.max_step_effective_norm, spectral_norm(effective_adjacency(model)));
  }
  result.q_value = total_rows ? weighted_q / double(total_rows) : 0.0;
  return result;
}

ObservedLikelihood observed_log_likelihood(const CausalModel& model,
                                           const InterventionalDataset& data, Index batch_size) {
  ObservedLikelihood out;
  out.per_row.assign(std::size_t(data.rows()), 0.0);
  const Index d = data.d();
  for (Index k = 0; k < static_cast<Index>(data.regimes.size()); ++k) {
    const Matrix precision = model_precision(model, data.regimes[std::size_t(k)]);
    const Matrix covariance = precision.llt().solve(Matrix::Identity(d, d));
    std::map<std::vector<Index>, std::pair<Eigen::LLT<Matrix>, double>> cache;
    for (Index r : data.rows_of_regime(k)) {
      std::vector<Index> seen;
      for (Index i = 0; i < d; ++i)
        if (data.observed(r, i)) seen.push_back(i);
      if (seen.empty()) continue;
      auto it = cache.find(seen);
      if (it == cache.end()) {
        const Index m = Index(seen.size());
        Matrix sub(m, m);
        for (Index a = 0; a < m; ++a)
          for (Index b = 0; b < m; ++b) sub(a, b) = covariance(seen[a], seen[b]);
        Eigen::LLT<Matrix> llt(sub);
        if (llt.info() != Eigen::Success)
          throw FactorizationError("marginal covariance is not positive definite");
        const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
        it = cache.emplace(seen, std::make_pair(std::move(llt), log_det)).first;
      }
      Vector xs(Index(seen.size()));
      for (std::size_t a = 0; a < seen.size(); ++a) xs[Index(a)] = data.values(r, seen[a]);
      const Vector white = it->second.first.matrixL().solve(xs);
      out.per_row[std::size_t(r)] =
          -0.5 * white.squaredNorm() - 0.5 * it->second.second - 0.5 * double(seen.size()) * kLog2Pi;
    }
  }
  const double n = double(data.rows());
  out.mean = n > 0 ? std::accumulate(out.per_row.begin(), out.per_row.end(), 0.0) / n : 0.0;

  std::vector<double> batch_means;
  for (const auto& batch : make_batches(data, batch_size)) {
    double s = 0.0;
    for (Index r : batch.rows) s += out.per_row[std::size_t(r)];
    batch_means.push_back(s / double(batch.rows.size()));
  }
  if (batch_means.size() > 1) {
    const double mean = std::accumulate(batch_means.begin(), batch_means.end(), 0.0) /
                        double(batch_means.size());
    double ss = 0.0;
    for (double v : batch_means) ss += (v - mean) * (v - mean);
    out.batch_se = std::sqrt(ss / double(batch_means.size() - 1) / double(batch_means.size()));
  }
  return out;
}

double evaluate_nll(const CausalModel& model, const InterventionalDataset& heldout,
                    std::uint64_t seed) {
  if (heldout.rows() == 0) return std::numeric_limits<double>::quiet_NaN();
  const Matrix values = heldout.complete() ? heldout.values : e_step(model, heldout, seed, 0);
  const Matrix mask = model.mask.probabilities();
  LogDetEstimatorConfig exact;
  exact.mode = LogDetMode::exact;
  const LogDetDraw none{};
  double total = 0.0;
  for (Index r = 0; r < heldout.rows(); ++r)
    total -= interventional_log_density(model, values.row(r).transpose(), heldout.experiment(r),
                                        mask, exact, none);
  return total / double(heldout.rows());
}

GraphStructure learned_structure(const CausalModel& model, double threshold) {
  return extract_structure(model.mask.probabilities(), threshold);
}

FitResult fit(const InterventionalDataset& data, const TrainConfig& config,
              const std::optional<GraphStructure>& truth) {
  config.validate();
  data.validate();
  if (truth && truth->d() != data.d()) throw ParameterError("truth dimension mismatch");
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();

  Rng init_rng = make_stream(config.seed, 0x696e6974ULL);
  FitResult result;
  result.model = init_model(config.model_kind, data.d(), config.lipschitz_budget,
                            config.temperature, init_rng, config.hidden);
  AdamState state(result.model);
  const bool needs_imputation = config.impute && !data.complete();

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const Matrix completed =
        needs_imputation ? e_step(result.model, data, config.seed, epoch) : data.values;
    const MStepResult m = m_step(result.model, state, data, completed, config, epoch);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.q_value = m.q_value;
    rec.max_step_lipschitz = m.max_step_lipschitz;
    rec.max_step_effective_norm = m.max_step_effective_norm;
    const ObservedLikelihood obs = observed_log_likelihood(result.model, data, config.batch_size);
    rec.observed_loglik = obs.mean;
    rec.observed_loglik_se = obs.batch_se;
    if (truth)
      rec.shd = double(shd(learned_structure(result.model, config.threshold), *truth));
    rec.wall_time_s = std::chrono::duration<double>(Clock::now() - start).count();
    result.metrics.epochs.push_back(rec);
  }
  result.metrics.structure = learned_structure(result.model, config.threshold);
  return result;
}

void write_metrics_csv(const std::filesystem::path& path, const RunMetrics& metrics) {
  csv::Table t;
  t.header = {"epoch", "observed_loglik", "q_value", "shd", "wall_time_s"};
  for (const auto& e : metrics.epochs)
    t.rows.push_back({std::to_string(e.epoch), csv::format_double(e.observed_loglik),
                      csv::format_double(e.q_value), csv::format_double(e.shd),
                      csv::format_double(e.wall_time_s)});
  csv::write(path, t);
}

}  // namespace cyclic_em
