#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cyclic_em {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Error taxonomy. The CLI maps ParameterError/ValidationError/UsageError to
// exit code 1 and every NumericalError subclass to exit code 2.
struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractViolation : std::logic_error {
  using std::logic_error::logic_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SimulationError : NumericalError {
  using NumericalError::NumericalError;
};
struct FactorizationError : NumericalError {
  using NumericalError::NumericalError;
};
struct DensityError : NumericalError {
  using NumericalError::NumericalError;
};

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent streams from (seed, index).
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Rng make_stream(std::uint64_t seed, std::uint64_t stream) {
  return Rng(mix64(mix64(seed) ^ mix64(stream + 0x632be59bd9b4e019ULL)));
}

inline Rng make_stream(std::uint64_t seed, std::uint64_t stream,
                       std::uint64_t substream) {
  return make_stream(mix64(seed) ^ stream, substream);
}

template <typename Gen>
Vector standard_normal(Index n, Gen& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector out(n);
  for (Index i = 0; i < n; ++i) out[i] = normal(rng);
  return out;
}

// Warnings that do not abort a computation (non-contractive Jacobian, mean
// imputation fallback). Defaults to stderr; tests swap in a collector.
using WarningSink = std::function<void(std::string_view)>;
// An empty sink restores the stderr default.
void set_warning_sink(WarningSink sink);
void warn(std::string_view message);

}  // namespace cyclic_em
