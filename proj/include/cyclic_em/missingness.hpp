#pragma once

#include "cyclic_em/dataset.hpp"

namespace cyclic_em {

// Missing completely at random: every non-intervened entry goes missing
// independently with probability `rate`.
struct McarConfig {
  double rate = 0.0;
  std::uint64_t seed = 0;
};

// Masks are drawn row by row from streams derived from (seed, row). Entries
// already missing stay missing; intervened entries are always observed.
InterventionalDataset apply_mcar(const InterventionalDataset& data, const McarConfig& config);

}  // namespace cyclic_em
