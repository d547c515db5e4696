#pragma once

#include "cyclic_em/causal_function.hpp"
#include "cyclic_em/common.hpp"
#include "cyclic_em/graph.hpp"
#include "cyclic_em/likelihood.hpp"
#include "cyclic_em/sem.hpp"

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace cyclic_em::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("cyclic_em_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// Collects warnings for the lifetime of the guard.
class WarningCapture {
 public:
  WarningCapture() {
    set_warning_sink([this](std::string_view m) { messages.emplace_back(m); });
  }
  ~WarningCapture() { set_warning_sink(nullptr); }
  std::vector<std::string> messages;
};

inline Matrix uniform_matrix(Index rows, Index cols, double scale, Rng& rng) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Matrix m(rows, cols);
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r) m(r, c) = u(rng);
  return m;
}

// Dense zero-diagonal B rescaled to spectral norm `norm`.
inline Matrix random_contractive(Index d, double norm, Rng& rng) {
  Matrix b = uniform_matrix(d, d, 1.0, rng);
  b.diagonal().setZero();
  const double s = spectral_norm(b);
  return s > 0 ? Matrix(b * (norm / s)) : b;
}

inline InterventionExperiment random_experiment(Index d, double p, Rng& rng) {
  std::bernoulli_distribution pick(p);
  std::vector<Index> targets;
  for (Index i = 0; i < d; ++i)
    if (pick(rng)) targets.push_back(i);
  return {d, targets};
}

// Relative error of two gradient blocks in the Frobenius norm.
inline double block_relative_error(const Matrix& analytic, const Matrix& numeric) {
  const double scale = std::max({analytic.norm(), numeric.norm(), 1e-8});
  return (analytic - numeric).norm() / scale;
}

struct GradientCheck {
  double worst = 0.0;
  std::string worst_block;
  std::string description;
};

// One random configuration: model kind, d <= max_d, experiment, log-det mode,
// relaxed mask with random temperature, sparsity, small batch. The analytic
// gradient of expected_objective is compared with central differences of the
// same objective under frozen noise (logistic mask noise, series cut-off and
// probes).
inline GradientCheck check_objective_gradient(Rng& rng, Index max_d = 6) {
  std::uniform_int_distribution<Index> dim(2, max_d);
  std::uniform_int_distribution<int> kind_pick(0, 1), mode_pick(0, 2), hid(1, 4);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Index d = dim(rng);
  const bool mlp = kind_pick(rng) == 1;
  const Index h = hid(rng);

  CausalModel model = init_model(mlp ? FunctionKindTag::mlp : FunctionKindTag::linear, d,
                                 0.5 + 0.4 * unit(rng), 0.5 + unit(rng), rng, h, 0.6);
  model.mask.logits = uniform_matrix(d, d, 2.0, rng);
  model.mask.logits.diagonal().setZero();
  model.noise.log_var = uniform_matrix(d, 1, 1.0, rng);

  LogDetEstimatorConfig cfg;
  cfg.mode = static_cast<LogDetMode>(mode_pick(rng));
  cfg.probes = 1 + int(unit(rng) * 3);
  cfg.truncation = 1 + int(unit(rng) * 8);
  const InterventionExperiment exp = random_experiment(d, 0.3, rng);
  const double sparsity = unit(rng) * 0.1;
  const Matrix batch = uniform_matrix(1 + Index(unit(rng) * 3), d, 1.5, rng);

  ObjectiveNoise noise = draw_objective_noise(model, batch.rows(), cfg, false, rng);
  const ModelGradient g =
      expected_objective(model, batch, exp, sparsity, cfg, noise, true).gradient;

  auto value_at = [&](const CausalModel& m) {
    ObjectiveNoise frozen = noise;
    frozen.mask = mask_from_noise(m.mask, noise.mask.logistic_noise, false);
    return expected_objective(m, batch, exp, sparsity, cfg, frozen, false).value;
  };
  auto numeric = [&](auto&& param_of, Index rows, Index cols) {
    Matrix out(rows, cols);
    for (Index c = 0; c < cols; ++c)
      for (Index r = 0; r < rows; ++r) {
        const double step = 1e-6;
        CausalModel plus = model, minus = model;
        param_of(plus)(r, c) += step;
        param_of(minus)(r, c) -= step;
        out(r, c) = (value_at(plus) - value_at(minus)) / (2.0 * step);
      }
    return out;
  };

  GradientCheck out;
  std::ostringstream desc;
  desc << (mlp ? "mlp" : "linear") << " d=" << d << " mode=" << int(cfg.mode)
       << " intervened=" << exp.intervened().size();
  out.description = desc.str();
  auto record = [&](const std::string& name, const Matrix& a, const Matrix& n) {
    const double e = block_relative_error(a, n);
    if (e > out.worst) {
      out.worst = e;
      out.worst_block = name;
    }
  };

  if (mlp) {
    auto w1 = [](CausalModel& m) -> Matrix& {
      return std::get<MaskedMlpFunction>(m.function).input_weights;
    };
    auto w2 = [](CausalModel& m) -> Matrix& {
      return std::get<MaskedMlpFunction>(m.function).output_weights;
    };
    record("W1", g.function.weights, numeric(w1, d, h));
    record("W2", g.function.output_weights, numeric(w2, h, d));
  } else {
    auto b = [](CausalModel& m) -> Matrix& { return std::get<LinearFunction>(m.function).weights; };
    record("B", g.function.weights, numeric(b, d, d));
  }
  auto phi = [](CausalModel& m) -> Matrix& { return m.mask.logits; };
  Matrix num_phi = numeric(phi, d, d);
  num_phi.diagonal().setZero();
  record("phi", g.logits, num_phi);
  Matrix num_ell(d, 1);
  for (Index i = 0; i < d; ++i) {
    CausalModel plus = model, minus = model;
    plus.noise.log_var[i] += 1e-6;
    minus.noise.log_var[i] -= 1e-6;
    num_ell(i, 0) = (value_at(plus) - value_at(minus)) / 2e-6;
  }
  record("log_var", g.log_var, num_ell);
  return out;
}

}  // namespace cyclic_em::testing
