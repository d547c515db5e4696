#include "cyclic_em/imputer.hpp"

#include <map>
#include <string>

namespace cyclic_em {

PrecisionFactorization factorize_for_pattern(const Matrix& precision,
                                             const std::vector<Index>& missing) {
  const Index d = precision.rows();
  PrecisionFactorization out;
  out.precision = precision;
  out.missing_count = static_cast<Index>(missing.size());
  std::vector<bool> is_missing(static_cast<std::size_t>(d), false);
  for (Index i : missing) {
    if (i < 0 || i >= d) throw ParameterError("missing index out of range");
    is_missing[static_cast<std::size_t>(i)] = true;
  }
  out.order = missing;
  for (Index i = 0; i < d; ++i)
    if (!is_missing[static_cast<std::size_t>(i)]) out.order.push_back(i);

  Matrix permuted(d, d);
  for (Index r = 0; r < d; ++r)
    for (Index c = 0; c < d; ++c)
      permuted(r, c) = precision(out.order[static_cast<std::size_t>(r)],
                                 out.order[static_cast<std::size_t>(c)]);
  Eigen::LLT<Matrix> llt(permuted);
  if (llt.info() != Eigen::Success)
    throw FactorizationError("interventional precision is not positive definite");
  out.upper = llt.matrixU();
  return out;
}

void impute_row(const PrecisionFactorization& factor, Eigen::Ref<Vector> x, Rng& rng) {
  const Index m = factor.missing_count;
  if (m == 0) return;
  const Index d = static_cast<Index>(factor.order.size());
  Vector observed(d - m);
  for (Index k = m; k < d; ++k) observed[k - m] = x[factor.order[static_cast<std::size_t>(k)]];
  Vector rhs = standard_normal(m, rng);
  if (d > m) rhs -= factor.upper.topRightCorner(m, d - m) * observed;
  const Vector drawn =
      factor.upper.topLeftCorner(m, m).triangularView<Eigen::Upper>().solve(rhs);
  for (Index k = 0; k < m; ++k) x[factor.order[static_cast<std::size_t>(k)]] = drawn[k];
}

Matrix impute_gaussian_batch(const Matrix& values, const ObservedMask& observed,
                             const Matrix& precision, std::uint64_t seed,
                             const std::vector<Index>& row_ids) {
  const Index n = values.rows(), d = values.cols();
  if (observed.rows() != n || observed.cols() != d || precision.rows() != d)
    throw ParameterError("impute_gaussian_batch: dimension mismatch");
  if (!row_ids.empty() && static_cast<Index>(row_ids.size()) != n)
    throw ParameterError("impute_gaussian_batch: row id count mismatch");

  Matrix out = values;
  // Rows with the same missing pattern share one factorization.
  std::map<std::vector<Index>, PrecisionFactorization> cache;
  for (Index r = 0; r < n; ++r) {
    std::vector<Index> missing;
    for (Index i = 0; i < d; ++i)
      if (observed(r, i) == 0) missing.push_back(i);
    if (missing.empty()) continue;
    auto it = cache.find(missing);
    if (it == cache.end()) it = cache.emplace(missing, factorize_for_pattern(precision, missing)).first;
    const Index id = row_ids.empty() ? r : row_ids[static_cast<std::size_t>(r)];
    Rng rng = make_stream(seed, static_cast<std::uint64_t>(id), 0x696dULL);
    Vector x = out.row(r).transpose();
    impute_row(it->second, x, rng);
    for (Index i : missing) out(r, i) = x[i];
  }
  return out;
}

Matrix linearization_matrix(const CausalFunction& f, const Matrix& mask) {
  return jacobian(f, Vector::Zero(dimension(f)), mask);
}

Matrix effective_adjacency(const CausalModel& model) {
  return linearization_matrix(model.function, model.mask.probabilities()).transpose();
}

Matrix model_precision(const CausalModel& model, const InterventionExperiment& experiment) {
  return build_interventional_precision(effective_adjacency(model), model.noise.precision(),
                                        experiment);
}

Matrix mean_impute_batch(const Matrix& values, const ObservedMask& observed) {
  Matrix out = values;
  for (Index i = 0; i < values.cols(); ++i) {
    double sum = 0.0;
    Index count = 0;
    for (Index r = 0; r < values.rows(); ++r)
      if (observed(r, i)) {
        sum += values(r, i);
        ++count;
      }
    double mean = 0.0;
    if (count > 0) {
      mean = sum / double(count);
    } else if (values.rows() > 0 && (observed.col(i).array() == 0).any()) {
      warn("node " + std::to_string(i) + " is never observed in the batch; imputing 0");
    }
    for (Index r = 0; r < values.rows(); ++r)
      if (!observed(r, i)) out(r, i) = mean;
  }
  return out;
}

InterventionalDataset mean_impute(const InterventionalDataset& data) {
  InterventionalDataset out = data;
  for (Index k = 0; k < static_cast<Index>(data.regimes.size()); ++k) {
    const auto rows = data.rows_of_regime(k);
    if (rows.empty()) continue;
    const InterventionalDataset part = data.select_rows(rows);
    const Matrix filled = mean_impute_batch(part.values, part.observed);
    for (std::size_t r = 0; r < rows.size(); ++r) out.values.row(rows[r]) = filled.row(Index(r));
  }
  out.observed.setOnes();
  return out;
}

}  // namespace cyclic_em
