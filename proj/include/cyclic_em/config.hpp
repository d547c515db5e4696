#pragma once

#include "cyclic_em/em_trainer.hpp"
#include "cyclic_em/sem.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace cyclic_em {

// Line-oriented `section.key = value` text; `#` starts a comment.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  std::string origin_;
};

struct DataSection {
  Index d = 3;
  double density = 1.0;
  SemKind sem = SemKind::linear;
  double sigma = 0.25;
  double lipschitz = 0.9;
  bool contractive = true;
  Index n_per_intervention = 100;
  Index n_test_per_intervention = 10;
  double weight_low = 0.25;
  double weight_high = 0.6;
};

struct MissingSection {
  std::vector<double> rates{0.0};
  std::uint64_t seed = 0;
};

struct SweepSection {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  int jobs = 1;
};

struct ExperimentConfig {
  DataSection data;
  MissingSection missing;
  TrainConfig train;
  // Fraction of rows per regime held out for NLL when no heldout/ manifest exists.
  double holdout_fraction = 0.0;
  std::vector<std::string> methods{"missnodags"};
  SweepSection sweep;
  std::string out_dir;

  void validate() const;
};

// Unknown keys and malformed values raise UsageError naming the key.
ExperimentConfig parse_experiment_config(const KeyValueConfig& kv);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

}  // namespace cyclic_em
