#pragma once

#include "cyclic_em/common.hpp"
#include "cyclic_em/graph.hpp"

#include <string>
#include <vector>

namespace cyclic_em {

// Surgical intervention: nodes in `intervened` lose their parents and are set
// exogenously; the remaining nodes (the observed set U) follow the SEM.
class InterventionExperiment {
 public:
  InterventionExperiment() = default;
  InterventionExperiment(Index d, std::vector<Index> intervened);

  static InterventionExperiment observational(Index d) { return {d, {}}; }

  Index d() const { return d_; }
  const std::vector<Index>& intervened() const { return intervened_; }
  std::vector<Index> observed() const;
  bool is_intervened(Index i) const { return u_diag_[i] == 0.0; }
  // Diagonal of U: 1 for observed (non-intervened) nodes, 0 otherwise.
  const Vector& u_diagonal() const { return u_diag_; }

  friend bool operator==(const InterventionExperiment& a, const InterventionExperiment& b) {
    return a.d_ == b.d_ && a.intervened_ == b.intervened_;
  }

 private:
  Index d_ = 0;
  std::vector<Index> intervened_;
  Vector u_diag_;
};

enum class SemKind { linear, tanh };

std::string to_string(SemKind kind);
SemKind sem_kind_from_string(const std::string& name);

// x = f(x) + e with f(x) = B^T x (linear) or tanh(W^T x) (tanh).
struct GroundTruthSEM {
  SemKind kind = SemKind::linear;
  WeightedAdjacency weights;
  Vector noise_std;
  double lipschitz = 0.9;
  // When false, the fixed point is found by damped iteration.
  bool contractive = true;

  Index d() const { return weights.d(); }
};

struct FixedPointOptions {
  double tolerance = 1e-9;
  int max_iterations = 1000;
  double damping = 0.5;
};

// Draws n samples of the intervened SEM x = U f(x) + U e + c with
// e ~ N(0, diag(noise_std^2)) and c_I ~ N(0, I). Row k uses its own random
// stream derived from (seed, k). Returns n x d.
Matrix simulate(const GroundTruthSEM& sem, const InterventionExperiment& experiment, Index n,
                std::uint64_t seed, const FixedPointOptions& options = {});

// Solves x = U f(x) + U e + c for one noise draw.
Vector solve_sem(const GroundTruthSEM& sem, const InterventionExperiment& experiment,
                 const Vector& noise, const Vector& exogenous,
                 const FixedPointOptions& options = {});

struct PlannedExperiment {
  InterventionExperiment experiment;
  Index count = 0;
};

// One experiment per node, each intervening exactly that node.
std::vector<PlannedExperiment> make_single_node_plan(Index d, Index n_per_intervention);

}  // namespace cyclic_em
