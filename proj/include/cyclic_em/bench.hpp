#pragma once

#include "cyclic_em/config.hpp"
#include "cyclic_em/dataset.hpp"
#include "cyclic_em/em_trainer.hpp"
#include "cyclic_em/sem.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cyclic_em {

// Ground truth and samples for one seed of the synthetic protocol.
struct SyntheticProblem {
  GroundTruthSEM sem;
  GraphStructure truth;
  InterventionalDataset complete;  // single-node interventions on every node
  InterventionalDataset heldout;   // fresh complete samples for NLL
};

SyntheticProblem make_problem(const DataSection& data, std::uint64_t seed);

// Mask seed for (seed, rate) so every rate masks independently.
std::uint64_t mask_seed(std::uint64_t base, std::uint64_t seed, double rate);

struct MethodInputs {
  const InterventionalDataset* masked = nullptr;
  const InterventionalDataset* complete = nullptr;  // needed by `clean`
  const InterventionalDataset* heldout = nullptr;   // optional
  std::optional<GraphStructure> truth;
};

struct MethodRun {
  FitResult fit;
  double wall_time_s = 0.0;
};

// missnodags: EM with Gaussian imputation. mean_impute_then_learn: impute
// once by regime means, then train without E-steps. clean: train on the
// complete data.
MethodRun run_method(const std::string& method, const MethodInputs& inputs,
                     const TrainConfig& config);

// metrics.csv, checkpoint.csv, adjacency_est.csv, edges_est.csv, run_meta.csv.
void write_run_artifacts(const std::filesystem::path& dir, const std::string& method,
                         const MethodRun& run, const TrainConfig& config);

void cmd_generate(const std::filesystem::path& config_path, std::uint64_t seed,
                  const std::filesystem::path& out_dir);

void cmd_train(const std::filesystem::path& data_dir, const std::filesystem::path& config_path,
               const std::string& method, const std::filesystem::path& out_dir);

struct SummaryRow {
  double missing_rate = 0.0;
  std::string method;
  std::uint64_t seed = 0;
  double shd = std::numeric_limits<double>::quiet_NaN();
  double nll_test = std::numeric_limits<double>::quiet_NaN();
  double wall_time_s = 0.0;
  std::string status = "ok";
};

struct AggregateRow {
  double missing_rate = 0.0;
  std::string method;
  Index n = 0;
  double shd_mean = 0.0;
  double shd_stderr = 0.0;
  double nll_mean = 0.0;
  double nll_stderr = 0.0;
  double wall_time_mean = 0.0;
};

// Runs the full (seed, rate, method) grid with `jobs` workers. Rows come back
// in grid order regardless of completion order.
std::vector<SummaryRow> run_sweep(const ExperimentConfig& config, int jobs,
                                  const std::optional<std::filesystem::path>& runs_dir);

// Groups ok rows by (rate, method); ordered by rate then method name.
std::vector<AggregateRow> aggregate(const std::vector<SummaryRow>& rows);

void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows);
std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path);
void write_aggregate_csv(const std::filesystem::path& path, const std::vector<AggregateRow>& rows);

void cmd_sweep(const std::filesystem::path& config_path, const std::filesystem::path& out_dir,
               std::optional<int> jobs);

void cmd_report(const std::filesystem::path& runs_dir, const std::filesystem::path& out_path);

}  // namespace cyclic_em
