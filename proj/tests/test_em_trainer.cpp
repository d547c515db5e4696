#include <doctest.h>

#include "cyclic_em/em_trainer.hpp"
#include "cyclic_em/imputer.hpp"
#include "cyclic_em/missingness.hpp"
#include "support.hpp"

using namespace cyclic_em;

namespace {

constexpr double kLog2PiE = 2.8378770664093454836;

InterventionalDataset chain_data(Index n, double sigma, std::uint64_t seed) {
  GroundTruthSEM sem;
  Matrix b = Matrix::Zero(2, 2);
  b(0, 1) = 0.5;
  sem.weights.weights = b;
  sem.noise_std = Vector::Constant(2, sigma);
  auto plan = make_single_node_plan(2, n);
  plan.push_back({InterventionExperiment::observational(2), n});
  return simulate_dataset(sem, plan, seed);
}

// Linear model whose expected mask is all ones.
CausalModel fixed_linear(const Matrix& b, const Vector& log_var) {
  CausalModel m;
  m.function = LinearFunction{b};
  m.mask = MaskDistribution{Matrix::Constant(b.rows(), b.rows(), 60.0), 1.0};
  m.mask.logits.diagonal().setZero();
  m.noise = NoisePrecision{log_var};
  return m;
}

TrainConfig quick(int epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("fit basics") {
  const auto data = apply_mcar(chain_data(50, 0.25, 1), {0.3, 2});
  SUBCASE("zero epochs") {
    const auto r = fit(data, quick(0));
    CHECK(r.metrics.epochs.empty());
    Rng rng = make_stream(5, 0x696e6974ULL);
    const CausalModel init = init_model(FunctionKindTag::linear, 2, 0.9, 1.0, rng);
    CHECK(std::get<LinearFunction>(r.model.function).weights ==
          std::get<LinearFunction>(init.function).weights);
  }
  SUBCASE("zero learning rate keeps parameters") {
    TrainConfig c = quick(3);
    c.learning_rate = 0.0;
    const auto r = fit(data, c);
    const auto init = fit(data, quick(0));
    CHECK(std::get<LinearFunction>(r.model.function).weights ==
          std::get<LinearFunction>(init.model.function).weights);
    CHECK(r.model.mask.logits == init.model.mask.logits);
    CHECK(r.metrics.epochs.size() == 3);
    for (const auto& e : r.metrics.epochs) CHECK(std::isfinite(e.q_value));
  }
  SUBCASE("deterministic") {
    const auto a = fit(data, quick(4));
    const auto b = fit(data, quick(4));
    CHECK(a.model.mask.logits == b.model.mask.logits);
    CHECK(a.model.noise.log_var == b.model.noise.log_var);
    CHECK(a.metrics.epochs.back().observed_loglik == b.metrics.epochs.back().observed_loglik);
  }
  SUBCASE("complete data: the E-step is the identity") {
    const auto clean = chain_data(50, 0.25, 1);
    TrainConfig off = quick(3);
    off.impute = false;
    const auto a = fit(clean, quick(3));
    const auto b = fit(clean, off);
    CHECK(a.model.mask.logits == b.model.mask.logits);
    CHECK(std::get<LinearFunction>(a.model.function).weights ==
          std::get<LinearFunction>(b.model.function).weights);
    CHECK(e_step(a.model, clean, 1, 1) == clean.values);
  }
  SUBCASE("contractivity after every step") {
    const auto r = fit(data, quick(5));
    for (const auto& e : r.metrics.epochs) CHECK(e.max_step_lipschitz <= 0.9 + 1e-9);
  }
  SUBCASE("invalid config") {
    TrainConfig c = quick(1);
    c.lipschitz_budget = 1.0;
    CHECK_THROWS_AS(fit(data, c), ParameterError);
    c = quick(1);
    c.batch_size = 0;
    CHECK_THROWS_AS(fit(data, c), ParameterError);
  }
}

TEST_CASE("e-step") {
  Matrix b = Matrix::Zero(2, 2);
  b(0, 1) = 0.5;
  const CausalModel m = fixed_linear(b, Vector::Zero(2));

  SUBCASE("chain conditional moments") {
    const Index n = 40000;
    InterventionalDataset data;
    data.values = Matrix::Ones(n, 2);
    data.observed = ObservedMask::Ones(n, 2);
    data.observed.col(0).setZero();
    data.regimes = {InterventionExperiment::observational(2)};
    data.regime_of_row.assign(std::size_t(n), 0);
    const Matrix out = e_step(m, data, 3, 1);
    const double mean = out.col(0).mean();
    const double var = (out.col(0).array() - mean).square().sum() / double(n - 1);
    CHECK(std::abs(mean - 0.4) < 4.0 * std::sqrt(0.8 / n));
    CHECK(std::abs(var - 0.8) < 4.0 * 0.8 * std::sqrt(2.0 / n));
  }
  SUBCASE("determinism per (seed, epoch)") {
    const auto data = apply_mcar(chain_data(30, 0.25, 4), {0.5, 1});
    CHECK(e_step(m, data, 7, 2) == e_step(m, data, 7, 2));
    CHECK(e_step(m, data, 7, 2) != e_step(m, data, 7, 3));
  }
}

TEST_CASE("lower bound on the observed log-likelihood") {
  Rng rng(12);
  const Index d = 4;
  const CausalModel current =
      fixed_linear(testing::random_contractive(d, 0.8, rng), standard_normal(d, rng) * 0.5);
  const CausalModel other =
      fixed_linear(testing::random_contractive(d, 0.7, rng), standard_normal(d, rng) * 0.5);
  const InterventionExperiment exp(d, {3});

  Vector x = standard_normal(d, rng);
  ObservedMask pattern = ObservedMask::Ones(1, d);
  pattern(0, 0) = 0;
  pattern(0, 2) = 0;
  InterventionalDataset one;
  one.values = x.transpose();
  one.observed = pattern;
  one.regimes = {exp};
  one.regime_of_row = {0};

  const Index draws = 40000;
  const Matrix precision = model_precision(current, exp);
  const Matrix rows = impute_gaussian_batch(Matrix(x.transpose().replicate(draws, 1)),
                                            ObservedMask(pattern.replicate(draws, 1)), precision, 3);
  Matrix sub(2, 2);
  sub << precision(0, 0), precision(0, 2), precision(2, 0), precision(2, 2);
  const double entropy = kLog2PiE - 0.5 * std::log(sub.determinant());

  LogDetEstimatorConfig exact;
  exact.mode = LogDetMode::exact;
  auto q_of = [&](const CausalModel& m) {
    std::vector<double> v;
    for (Index r = 0; r < draws; ++r)
      v.push_back(interventional_log_density(m, rows.row(r).transpose(), exp,
                                             m.mask.probabilities(), exact, LogDetDraw{}));
    double mean = 0.0, sq = 0.0;
    for (double a : v) mean += a;
    mean /= double(draws);
    for (double a : v) sq += (a - mean) * (a - mean);
    return std::make_pair(mean, std::sqrt(sq / double(draws - 1) / double(draws)));
  };
  const auto [q_cur, se_cur] = q_of(current);
  const double ll_cur = observed_log_likelihood(current, one, 64).mean;
  CHECK(std::abs(q_cur + entropy - ll_cur) < 4.0 * se_cur);

  const auto [q_other, se_other] = q_of(other);
  const double ll_other = observed_log_likelihood(other, one, 64).mean;
  CHECK(q_other + entropy <= ll_other + 4.0 * se_other);
}

TEST_CASE("held-out NLL") {
  SUBCASE("standard normal entropy") {
    const Index d = 3, n = 20000;
    Rng rng(1);
    InterventionalDataset data;
    data.values.resize(n, d);
    for (Index r = 0; r < n; ++r) data.values.row(r) = standard_normal(d, rng).transpose();
    data.observed = ObservedMask::Ones(n, d);
    data.regimes = {InterventionExperiment::observational(d)};
    data.regime_of_row.assign(std::size_t(n), 0);
    CausalModel m = fixed_linear(Matrix::Zero(d, d), Vector::Zero(d));
    const double oracle = 0.5 * double(d) * kLog2PiE;
    CHECK(std::abs(evaluate_nll(m, data) - oracle) < 4.0 * std::sqrt(1.5 / double(n)));
  }
  SUBCASE("empty set") {
    InterventionalDataset empty;
    empty.values.resize(0, 2);
    empty.observed.resize(0, 2);
    CHECK(std::isnan(evaluate_nll(fixed_linear(Matrix::Zero(2, 2), Vector::Zero(2)), empty)));
  }
}

TEST_CASE("training behaviour") {
  SUBCASE("complete-data fit recovers the chain") {
    TrainConfig c = quick(150);
    c.sparsity = 0.0;
    const auto r = fit(chain_data(300, 0.5, 8), c);
    Matrix truth = Matrix::Zero(2, 2);
    truth(0, 1) = 0.5;
    const Matrix est = effective_adjacency(r.model);
    INFO("estimate " << est);
    CHECK((est - truth).cwiseAbs().maxCoeff() < 0.05);
  }
  SUBCASE("a dominant penalty empties the graph") {
    TrainConfig c = quick(100);
    c.sparsity = 100.0;
    const auto r = fit(chain_data(100, 0.5, 2), c);
    Matrix p = r.model.mask.probabilities();
    p.diagonal().setConstant(0.0);
    CHECK(p.maxCoeff() < 0.1);
    CHECK(r.metrics.structure.edge_count() == 0);
  }
  SUBCASE("non-finite objective aborts with a parameter dump") {
    const auto data = chain_data(10, 0.25, 1);
    Rng rng(1);
    CausalModel m = init_model(FunctionKindTag::linear, 2, 0.9, 1.0, rng);
    AdamState state(m);
    const Matrix huge = Matrix::Constant(data.rows(), 2, 1e300);
    try {
      m_step(m, state, data, huge, quick(1), 1);
      FAIL("expected a numerical error");
    } catch (const NumericalError& e) {
      CHECK(std::string(e.what()).find("B =") != std::string::npos);
    }
  }
}

TEST_CASE("metrics file") {
  testing::TempDir dir("metrics");
  const auto r = fit(apply_mcar(chain_data(20, 0.25, 1), {0.2, 1}), quick(2),
                     GraphStructure::from_edges(2, {{0, 1}}));
  write_metrics_csv(dir / "metrics.csv", r.metrics);
  const std::string text = testing::slurp(dir / "metrics.csv");
  CHECK(text.rfind("epoch,observed_loglik,q_value,shd,wall_time_s\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
}
