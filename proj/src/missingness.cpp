#include "cyclic_em/missingness.hpp"

namespace cyclic_em {

InterventionalDataset apply_mcar(const InterventionalDataset& data, const McarConfig& config) {
  if (!(config.rate >= 0.0 && config.rate < 1.0))
    throw ParameterError("apply_mcar: rate must lie in [0, 1)");
  InterventionalDataset out = data;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (Index row = 0; row < out.rows(); ++row) {
    Rng rng = make_stream(config.seed, static_cast<std::uint64_t>(row), 0x6d63ULL);
    const auto& experiment = out.experiment(row);
    for (Index i = 0; i < out.d(); ++i) {
      const bool drop = unif(rng) < config.rate;
      if (experiment.is_intervened(i)) {
        out.observed(row, i) = 1;
      } else if (drop) {
        out.observed(row, i) = 0;
      }
    }
  }
  return out;
}

}  // namespace cyclic_em
