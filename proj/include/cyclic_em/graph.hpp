#pragma once

#include "cyclic_em/common.hpp"

#include <filesystem>
#include <utility>
#include <vector>

namespace cyclic_em {

using EdgeMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

// Directed graph on d nodes. edges(j, i) == 1 iff j -> i. No self-loops.
class GraphStructure {
 public:
  GraphStructure() = default;
  explicit GraphStructure(Index d);
  // Entries must be 0/1; the diagonal is cleared.
  explicit GraphStructure(EdgeMatrix edges);

  static GraphStructure from_edges(Index d,
                                   const std::vector<std::pair<Index, Index>>& edges);

  Index d() const { return edges_.rows(); }
  const EdgeMatrix& edges() const { return edges_; }
  bool has_edge(Index src, Index dst) const { return edges_(src, dst) != 0; }
  void set_edge(Index src, Index dst, bool present);
  Index edge_count() const;
  Matrix as_real() const { return edges_.cast<double>(); }

  friend bool operator==(const GraphStructure& a, const GraphStructure& b) {
    return a.edges_.rows() == b.edges_.rows() && a.edges_ == b.edges_;
  }

 private:
  EdgeMatrix edges_;
};

// Weighted adjacency with B(j, i) the weight of j -> i, so that a linear SEM
// reads x = B^T x + e.
struct WeightedAdjacency {
  Matrix weights;

  Index d() const { return weights.rows(); }
  GraphStructure structure() const;
};

// Largest singular value.
template <typename Derived>
typename Derived::RealScalar spectral_norm(const Eigen::MatrixBase<Derived>& a) {
  using Real = typename Derived::RealScalar;
  if (a.size() == 0) return Real(0);
  Eigen::JacobiSVD<Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>>
      svd(a.eval());
  return svd.singularValues()(0);
}

// Power iteration on A^T A given only matrix-vector products. Returns the
// estimate of ||A||_2 after at most max_iter steps or when the relative
// change falls below tol.
template <typename MatVec, typename RMatVec>
double power_iteration_norm(Index d, MatVec&& matvec, RMatVec&& rmatvec,
                            int max_iter = 100, double tol = 1e-8) {
  Vector v = Vector::Ones(d) / std::sqrt(static_cast<double>(d));
  double estimate = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Vector av = matvec(v);
    Vector w = rmatvec(av);
    const double norm_w = w.norm();
    if (norm_w == 0.0) return 0.0;
    const double next = std::sqrt(norm_w);
    v = w / norm_w;
    if (std::abs(next - estimate) <= tol * std::max(1.0, next)) return next;
    estimate = next;
  }
  return estimate;
}

// Scales `a` by target / ||a||_2 when ||a||_2 > target. Returns the factor
// applied (1 when untouched). Overshoots of a few ulps are left alone so that
// projecting twice is a no-op.
template <typename Derived>
double project_spectral_norm(Eigen::MatrixBase<Derived>& a, double target) {
  const double norm = spectral_norm(a);
  if (norm <= target * (1.0 + 1e-12) || norm == 0.0) return 1.0;
  const double factor = target / norm;
  a *= factor;
  return factor;
}

// Each ordered off-diagonal pair is an edge with probability
// expected_density / (d - 1).
GraphStructure sample_erdos_renyi(Index d, double expected_density, Rng& rng);

// Draws each edge weight uniformly from (-high, -low) U (low, high) and then
// rescales the whole matrix so that its spectral norm is at most
// target_lipschitz.
WeightedAdjacency assign_weights_and_project(const GraphStructure& structure,
                                             double band_low, double band_high,
                                             double target_lipschitz, Rng& rng);

// Structural Hamming distance: additions, deletions and reversals each cost 1.
Index shd(const GraphStructure& estimated, const GraphStructure& truth);

// Edge (j, i) iff probability(j, i) > threshold, diagonal dropped.
GraphStructure extract_structure(const Matrix& mask_probabilities,
                                 double threshold = 0.5);

// adjacency.csv: d rows of d comma-separated reals.
void write_adjacency_csv(const std::filesystem::path& path, const Matrix& weights);
Matrix read_adjacency_csv(const std::filesystem::path& path);

// edges.csv: header src,dst,weight with zero-based indices. Weights for the
// edges of `structure` are taken from `weights`.
void write_edges_csv(const std::filesystem::path& path, const GraphStructure& structure,
                     const Matrix& weights);
WeightedAdjacency read_edges_csv(const std::filesystem::path& path, Index d);

}  // namespace cyclic_em
