#include "cyclic_em/graph.hpp"

#include "cyclic_em/csv.hpp"

#include <string>

namespace cyclic_em {

GraphStructure::GraphStructure(Index d) : edges_(EdgeMatrix::Zero(d, d)) {
  if (d < 0) throw ParameterError("negative node count");
}

GraphStructure::GraphStructure(EdgeMatrix edges) : edges_(std::move(edges)) {
  if (edges_.rows() != edges_.cols()) throw ParameterError("edge matrix must be square");
  for (Index i = 0; i < edges_.size(); ++i)
    if (edges_.data()[i] > 1) throw ParameterError("edge matrix entries must be 0/1");
  edges_.diagonal().setZero();
}

GraphStructure GraphStructure::from_edges(Index d,
                                          const std::vector<std::pair<Index, Index>>& edges) {
  GraphStructure g(d);
  for (auto [src, dst] : edges) {
    if (src < 0 || dst < 0 || src >= d || dst >= d)
      throw ParameterError("edge index out of range");
    g.set_edge(src, dst, true);
  }
  return g;
}

void GraphStructure::set_edge(Index src, Index dst, bool present) {
  if (src == dst) return;
  edges_(src, dst) = present ? 1 : 0;
}

Index GraphStructure::edge_count() const { return edges_.cast<Index>().sum(); }

GraphStructure WeightedAdjacency::structure() const {
  EdgeMatrix e = (weights.array() != 0.0).cast<std::uint8_t>();
  return GraphStructure(std::move(e));
}

GraphStructure sample_erdos_renyi(Index d, double expected_density, Rng& rng) {
  if (d < 2) throw ParameterError("sample_erdos_renyi: need d >= 2");
  if (!(expected_density > 0.0) || expected_density * d > double(d * (d - 1)))
    throw ParameterError("sample_erdos_renyi: expected density must lie in (0, d - 1]");
  const double p = expected_density / double(d - 1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  GraphStructure g(d);
  for (Index j = 0; j < d; ++j)
    for (Index i = 0; i < d; ++i) {
      const bool edge = unif(rng) < p;
      if (j != i) g.set_edge(j, i, edge);
    }
  return g;
}

WeightedAdjacency assign_weights_and_project(const GraphStructure& structure,
                                             double band_low, double band_high,
                                             double target_lipschitz, Rng& rng) {
  if (!(band_low > 0.0 && band_low < band_high))
    throw ParameterError("weight band must satisfy 0 < low < high");
  if (!(target_lipschitz > 0.0)) throw ParameterError("target lipschitz must be positive");
  const Index d = structure.d();
  WeightedAdjacency out{Matrix::Zero(d, d)};
  std::uniform_real_distribution<double> magnitude(band_low, band_high);
  std::bernoulli_distribution negative(0.5);
  for (Index j = 0; j < d; ++j)
    for (Index i = 0; i < d; ++i)
      if (structure.has_edge(j, i)) {
        const double w = magnitude(rng);
        out.weights(j, i) = negative(rng) ? -w : w;
      }
  project_spectral_norm(out.weights, target_lipschitz);
  return out;
}

Index shd(const GraphStructure& estimated, const GraphStructure& truth) {
  if (estimated.d() != truth.d()) throw ParameterError("shd: dimension mismatch");
  const Index d = truth.d();
  Index total = 0;
  for (Index i = 0; i < d; ++i)
    for (Index j = i + 1; j < d; ++j) {
      const bool t_ij = truth.has_edge(i, j), t_ji = truth.has_edge(j, i);
      const bool e_ij = estimated.has_edge(i, j), e_ji = estimated.has_edge(j, i);
      const bool diff_ij = t_ij != e_ij, diff_ji = t_ji != e_ji;
      if (diff_ij && diff_ji) {
        // Opposite graphs own the two differing edges: a single reversal.
        total += (t_ij != t_ji) ? 1 : 2;
      } else {
        total += Index(diff_ij) + Index(diff_ji);
      }
    }
  return total;
}

GraphStructure extract_structure(const Matrix& mask_probabilities, double threshold) {
  if (mask_probabilities.rows() != mask_probabilities.cols())
    throw ParameterError("mask probabilities must be square");
  EdgeMatrix e = (mask_probabilities.array() > threshold).cast<std::uint8_t>();
  return GraphStructure(std::move(e));
}

void write_adjacency_csv(const std::filesystem::path& path, const Matrix& weights) {
  csv::Table t;
  for (Index r = 0; r < weights.rows(); ++r) {
    std::vector<std::string> row;
    for (Index c = 0; c < weights.cols(); ++c) row.push_back(csv::format_double(weights(r, c)));
    t.rows.push_back(std::move(row));
  }
  csv::write(path, t);
}

Matrix read_adjacency_csv(const std::filesystem::path& path) {
  Matrix m = csv::read_matrix(path, false);
  if (m.rows() != m.cols()) throw ValidationError(path.string() + " is not square");
  return m;
}

void write_edges_csv(const std::filesystem::path& path, const GraphStructure& structure,
                     const Matrix& weights) {
  csv::Table t;
  t.header = {"src", "dst", "weight"};
  for (Index j = 0; j < structure.d(); ++j)
    for (Index i = 0; i < structure.d(); ++i)
      if (structure.has_edge(j, i))
        t.rows.push_back({std::to_string(j), std::to_string(i), csv::format_double(weights(j, i))});
  csv::write(path, t);
}

WeightedAdjacency read_edges_csv(const std::filesystem::path& path, Index d) {
  const csv::Table t = csv::read(path, true);
  if (t.header != std::vector<std::string>{"src", "dst", "weight"})
    throw ValidationError(path.string() + ": expected header src,dst,weight");
  WeightedAdjacency out{Matrix::Zero(d, d)};
  for (const auto& row : t.rows) {
    if (row.size() != 3) throw ValidationError(path.string() + ": bad edge row");
    const Index src = std::stol(row[0]), dst = std::stol(row[1]);
    if (src < 0 || dst < 0 || src >= d || dst >= d || src == dst)
      throw ValidationError(path.string() + ": edge index out of range");
    out.weights(src, dst) = csv::parse_double(row[2]);
  }
  return out;
}

}  // namespace cyclic_em
