#pragma once

#include "cyclic_em/common.hpp"
#include "cyclic_em/sem.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace cyclic_em {

using ObservedMask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

// Samples x (n x d), non-missingness indicators r (1 = observed) and the
// interventional experiment of every row. For simulated data, entries with
// r = 0 still hold the true value in memory; they are written as NaN.
struct InterventionalDataset {
  Matrix values;
  ObservedMask observed;
  std::vector<InterventionExperiment> regimes;
  std::vector<Index> regime_of_row;

  Index rows() const { return values.rows(); }
  Index d() const { return values.cols(); }
  const InterventionExperiment& experiment(Index row) const {
    return regimes[static_cast<std::size_t>(regime_of_row[static_cast<std::size_t>(row)])];
  }
  std::vector<Index> rows_of_regime(Index regime) const;
  double missing_fraction() const;
  bool complete() const { return (observed.array() != 0).all(); }

  // Index of `experiment` in `regimes`, appending it when new.
  Index regime_index(const InterventionExperiment& experiment);
  InterventionalDataset select_rows(const std::vector<Index>& rows) const;
  // Same rows with every indicator set to observed.
  InterventionalDataset unmasked() const;
  // Throws ValidationError on shape or invariant violations.
  void validate() const;
};

InterventionalDataset simulate_dataset(const GroundTruthSEM& sem,
                                       const std::vector<PlannedExperiment>& plan,
                                       std::uint64_t seed);

struct DatasetMeta {
  Index d = 0;
  std::string sem_kind = "unknown";
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

// Manifest directory: samples.csv, mask.csv, regimes.csv, meta.csv.
void write_manifest(const std::filesystem::path& dir, const InterventionalDataset& data,
                    const DatasetMeta& meta);

struct Manifest {
  InterventionalDataset data;
  DatasetMeta meta;
};

Manifest read_manifest(const std::filesystem::path& dir);

}  // namespace cyclic_em
