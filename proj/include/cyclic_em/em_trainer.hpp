#pragma once

#include "cyclic_em/causal_function.hpp"
#include "cyclic_em/dataset.hpp"
#include "cyclic_em/graph.hpp"
#include "cyclic_em/likelihood.hpp"

#include <filesystem>
#include <limits>
#include <optional>
#include <vector>

namespace cyclic_em {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  int epochs = 100;
  Index batch_size = 64;
  double learning_rate = 1e-2;
  double sparsity = 1e-2;  // lambda
  double lipschitz_budget = 0.9;
  LogDetEstimatorConfig logdet{};
  double temperature = 1.0;
  bool hard_mask = false;  // straight-through when true, relaxed otherwise
  std::uint64_t seed = 0;
  AdamConfig adam{};
  FunctionKindTag model_kind = FunctionKindTag::linear;
  Index hidden = 0;
  double threshold = 0.5;
  // Run the conditional-Gaussian E-step; false trains on the values as given.
  bool impute = true;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double observed_loglik = 0.0;     // mean per sample
  double observed_loglik_se = 0.0;  // standard error over batch means
  double q_value = 0.0;
  double shd = std::numeric_limits<double>::quiet_NaN();
  double wall_time_s = 0.0;
  double max_step_lipschitz = 0.0;  // largest layer-norm product after any step
  double max_step_effective_norm = 0.0;  // largest ||J_f(0)|| under sigmoid(phi) after any step
};

struct RunMetrics {
  std::vector<EpochRecord> epochs;
  GraphStructure structure;
  double test_nll = std::numeric_limits<double>::quiet_NaN();
};

struct FitResult {
  CausalModel model;
  RunMetrics metrics;
};

// Rows of each regime split into consecutive chunks of at most batch_size.
struct Batch {
  Index regime = 0;
  std::vector<Index> rows;
};
std::vector<Batch> make_batches(const InterventionalDataset& data, Index batch_size);

// Imputes every missing entry by one draw from the conditional Gaussian of
// the model linearised at zero. Deterministic in (model, seed, epoch).
Matrix e_step(const CausalModel& model, const InterventionalDataset& data, std::uint64_t seed,
              int epoch);

struct AdamState {
  ModelGradient first;
  ModelGradient second;
  long step = 0;

  explicit AdamState(const CausalModel& model)
      : first(ModelGradient::zeros_like(model)), second(ModelGradient::zeros_like(model)) {}
};

// Ascent step followed by spectral projection. Returns the layer-norm
// product after projection.
double apply_update(CausalModel& model, const ModelGradient& gradient, AdamState& state,
                    const TrainConfig& config);

struct MStepResult {
  double q_value = 0.0;
  double max_step_lipschitz = 0.0;
  double max_step_effective_norm = 0.0;
};

// One pass of mini-batch ascent over `completed` (rows aligned with data).
MStepResult m_step(CausalModel& model, AdamState& state, const InterventionalDataset& data,
                   const Matrix& completed, const TrainConfig& config, int epoch);

struct ObservedLikelihood {
  double mean = 0.0;
  double batch_se = 0.0;
  std::vector<double> per_row;
};

// Marginal Gaussian log-likelihood of the observed coordinates of every row
// under the (linearised) model: x_obs ~ N(0, [Theta_X^{-1}]_obs,obs). Exact
// for linear models.
ObservedLikelihood observed_log_likelihood(const CausalModel& model,
                                           const InterventionalDataset& data, Index batch_size);

// Mean of -log p(x) over `heldout` with the exact log-det. Incomplete rows are
// imputed once with the model first.
double evaluate_nll(const CausalModel& model, const InterventionalDataset& heldout,
                    std::uint64_t seed = 0);

FitResult fit(const InterventionalDataset& data, const TrainConfig& config,
              const std::optional<GraphStructure>& truth = std::nullopt);

// Learned structure: sigmoid(phi) > threshold.
GraphStructure learned_structure(const CausalModel& model, double threshold);

// metrics.csv with header epoch,observed_loglik,q_value,shd,wall_time_s.
void write_metrics_csv(const std::filesystem::path& path, const RunMetrics& metrics);

}  // namespace cyclic_em
