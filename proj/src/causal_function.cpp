#include "cyclic_em/causal_function.hpp"

#include "cyclic_em/csv.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace cyclic_em {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

Matrix sigmoid(const Matrix& a) { return (1.0 / (1.0 + (-a.array()).exp())).matrix(); }

}  // namespace

Index dimension(const CausalFunction& f) {
  return std::visit([](const auto& g) { return g.d(); }, f);
}

std::string kind_name(const CausalFunction& f) {
  return std::holds_alternative<LinearFunction>(f) ? "linear" : "mlp";
}

Matrix MaskDistribution::probabilities() const {
  Matrix p = sigmoid(logits);
  p.diagonal().setZero();
  return p;
}

Matrix full_mask(Index d) {
  Matrix m = Matrix::Ones(d, d);
  m.diagonal().setZero();
  return m;
}

MaskSample mask_from_noise(const MaskDistribution& dist, const Matrix& logistic_noise, bool hard) {
  if (!(dist.temperature > 0.0)) throw ParameterError("mask temperature must be positive");
  MaskSample s;
  s.logistic_noise = logistic_noise;
  s.hard = hard;
  s.relaxed = sigmoid((dist.logits + logistic_noise) / dist.temperature);
  s.relaxed.diagonal().setZero();
  if (hard) {
    s.value = (s.relaxed.array() > 0.5).cast<double>().matrix();
  } else {
    s.value = s.relaxed;
  }
  s.value.diagonal().setZero();
  return s;
}

MaskSample sample_mask(const MaskDistribution& dist, bool hard, Rng& rng) {
  const Index d = dist.d();
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Matrix noise(d, d);
  for (Index c = 0; c < d; ++c)
    for (Index r = 0; r < d; ++r) {
      double u = unif(rng);
      while (u <= 0.0) u = unif(rng);
      noise(r, c) = std::log(u) - std::log1p(-u);
    }
  return mask_from_noise(dist, noise, hard);
}

Vector evaluate(const CausalFunction& f, const Vector& x, const Matrix& mask) {
  return FunctionAt(f, x, mask).output();
}

Matrix jacobian(const CausalFunction& f, const Vector& x, const Matrix& mask) {
  return FunctionAt(f, x, mask).jacobian();
}

FunctionAt::FunctionAt(const CausalFunction& f, const Vector& x, const Matrix& mask)
    : f_(&f), mask_(&mask), x_(x) {
  const Index d = dimension(f);
  if (x.size() != d || mask.rows() != d || mask.cols() != d)
    throw ParameterError("causal function: dimension mismatch");
  std::visit(overloaded{
                 [&](const LinearFunction& g) {
                   output_ = mask.cwiseProduct(g.weights).transpose() * x;
                 },
                 [&](const MaskedMlpFunction& g) {
                   const Matrix pre = g.input_weights.transpose() * (x.asDiagonal() * mask);
                   hidden_ = pre.array().tanh().matrix();
                   slope_out_ =
                       (1.0 - hidden_.array().square()).matrix().cwiseProduct(g.output_weights);
                   output_ = g.output_weights.cwiseProduct(hidden_).colwise().sum().transpose();
                 }},
             f);
}

Vector FunctionAt::jvp(const Vector& v) const {
  return std::visit(
      overloaded{[&](const LinearFunction& g) -> Vector {
                   return mask_->cwiseProduct(g.weights).transpose() * v;
                 },
                 [&](const MaskedMlpFunction& g) -> Vector {
                   const Matrix inner = g.input_weights.transpose() * (v.asDiagonal() * *mask_);
                   return slope_out_.cwiseProduct(inner).colwise().sum().transpose();
                 }},
      *f_);
}

Vector FunctionAt::vjp(const Vector& u) const {
  return std::visit(overloaded{[&](const LinearFunction& g) -> Vector {
                                 return mask_->cwiseProduct(g.weights) * u;
                               },
                               [&](const MaskedMlpFunction& g) -> Vector {
                                 const Matrix inner =
                                     *mask_ * u.asDiagonal() * slope_out_.transpose();
                                 return g.input_weights.cwiseProduct(inner).rowwise().sum();
                               }},
                    *f_);
}

Matrix FunctionAt::jacobian() const {
  return std::visit(overloaded{[&](const LinearFunction& g) -> Matrix {
                                 return mask_->cwiseProduct(g.weights).transpose();
                               },
                               [&](const MaskedMlpFunction& g) -> Matrix {
                                 return mask_->cwiseProduct(g.input_weights * slope_out_)
                                     .transpose();
                               }},
                    *f_);
}

FunctionGradient FunctionGradient::zeros_like(const CausalFunction& f) {
  return std::visit(
      overloaded{[](const LinearFunction& g) {
                   const Index d = g.d();
                   return FunctionGradient{Matrix::Zero(d, d), Matrix(), Matrix::Zero(d, d)};
                 },
                 [](const MaskedMlpFunction& g) {
                   const Index d = g.d();
                   return FunctionGradient{Matrix::Zero(d, g.hidden()),
                                           Matrix::Zero(g.hidden(), d), Matrix::Zero(d, d)};
                 }},
      f);
}

FunctionGradient& FunctionGradient::operator+=(const FunctionGradient& other) {
  weights += other.weights;
  if (output_weights.size()) output_weights += other.output_weights;
  mask += other.mask;
  return *this;
}

FunctionGradient& FunctionGradient::operator*=(double s) {
  weights *= s;
  output_weights *= s;
  mask *= s;
  return *this;
}

void accumulate_function_gradient(const CausalFunction& f, const Vector& x, const Matrix& mask,
                                  const Vector& d_output, const Matrix& d_jacobian,
                                  FunctionGradient& grad) {
  std::visit(
      overloaded{
          [&](const LinearFunction& g) {
            // f = (M .* B)^T x, J = (M .* B)^T
            const Matrix outer = x * d_output.transpose() + d_jacobian.transpose();
            grad.weights += outer.cwiseProduct(mask);
            grad.mask += outer.cwiseProduct(g.weights);
          },
          [&](const MaskedMlpFunction& g) {
            const Matrix& w1 = g.input_weights;
            const Matrix& w2 = g.output_weights;
            const Matrix pre = w1.transpose() * (x.asDiagonal() * mask);
            const Matrix hidden = pre.array().tanh().matrix();
            const Matrix slope = (1.0 - hidden.array().square()).matrix();
            const Matrix slope_out = slope.cwiseProduct(w2);

            // Output path.
            grad.output_weights += hidden * d_output.asDiagonal();
            Matrix d_pre = slope_out * d_output.asDiagonal();

            // Jacobian path: J^T = M .* (W1 (S .* W2)).
            const Matrix g_masked = d_jacobian.transpose().cwiseProduct(mask);  // [j, i]
            const Matrix q = w1.transpose() * g_masked;                        // h x d
            grad.output_weights += slope.cwiseProduct(q);
            d_pre.array() += -2.0 * w2.array() * q.array() * hidden.array() * slope.array();
            grad.weights += g_masked * slope_out.transpose();
            grad.mask += d_jacobian.transpose().cwiseProduct(w1 * slope_out);

            // Pre-activation A = W1^T diag(x) M.
            grad.weights += x.asDiagonal() * mask * d_pre.transpose();
            grad.mask += x.asDiagonal() * w1 * d_pre;
          }},
      f);
}

void spectral_project(CausalFunction& f, double budget) {
  if (!(budget > 0.0)) throw ParameterError("lipschitz budget must be positive");
  std::visit(overloaded{[&](LinearFunction& g) { project_spectral_norm(g.weights, budget); },
                        [&](MaskedMlpFunction& g) {
                          const double per_layer = std::sqrt(budget);
                          project_spectral_norm(g.input_weights, per_layer);
                          project_spectral_norm(g.output_weights, per_layer);
                        }},
             f);
}

double lipschitz_bound(const CausalFunction& f) {
  return std::visit(overloaded{[](const LinearFunction& g) { return spectral_norm(g.weights); },
                               [](const MaskedMlpFunction& g) {
                                 return spectral_norm(g.input_weights) *
                                        spectral_norm(g.output_weights);
                               }},
                    f);
}

CausalModel init_model(FunctionKindTag kind, Index d, double lipschitz_budget, double temperature,
                       Rng& rng, Index hidden, double init_scale) {
  if (!(lipschitz_budget > 0.0 && lipschitz_budget < 1.0))
    throw ParameterError("lipschitz budget must lie in (0, 1)");
  std::uniform_real_distribution<double> unif(-init_scale, init_scale);
  auto draw = [&](Index rows, Index cols) {
    Matrix m(rows, cols);
    for (Index c = 0; c < cols; ++c)
      for (Index r = 0; r < rows; ++r) m(r, c) = unif(rng);
    return m;
  };
  CausalModel model;
  if (kind == FunctionKindTag::linear) {
    Matrix b = draw(d, d);
    b.diagonal().setZero();
    model.function = LinearFunction{std::move(b)};
  } else {
    const Index h = hidden > 0 ? hidden : d;
    model.function = MaskedMlpFunction{draw(d, h), draw(h, d)};
  }
  spectral_project(model.function, lipschitz_budget);
  model.mask = MaskDistribution{Matrix::Zero(d, d), temperature};
  model.noise = NoisePrecision{Vector::Zero(d)};
  model.lipschitz_budget = lipschitz_budget;
  return model;
}

ModelGradient ModelGradient::zeros_like(const CausalModel& model) {
  const Index d = model.d();
  return {FunctionGradient::zeros_like(model.function), Matrix::Zero(d, d), Vector::Zero(d)};
}

ModelGradient& ModelGradient::operator+=(const ModelGradient& other) {
  function += other.function;
  logits += other.logits;
  log_var += other.log_var;
  return *this;
}

ModelGradient& ModelGradient::operator*=(double s) {
  function *= s;
  logits *= s;
  log_var *= s;
  return *this;
}

bool ModelGradient::all_finite() const {
  return function.weights.allFinite() && function.output_weights.allFinite() &&
         function.mask.allFinite() && logits.allFinite() && log_var.allFinite();
}

Matrix logits_gradient(const MaskDistribution& dist, const MaskSample& mask, const Matrix& d_mask) {
  // Straight-through: the forward value may be rounded, the derivative is
  // always that of the relaxed sample.
  Matrix g = d_mask.cwiseProduct(
                 (mask.relaxed.array() * (1.0 - mask.relaxed.array())).matrix()) /
             dist.temperature;
  g.diagonal().setZero();
  return g;
}

ModelGradient parameter_gradients(const CausalModel& model, const Vector& x, const MaskSample& mask,
                                  const Upstream& upstream) {
  const Index d = model.d();
  if (mask.logistic_noise.rows() != d || mask.logistic_noise.cols() != d)
    throw ContractViolation("mask sample dimension does not match the model");
  const MaskSample replay = mask_from_noise(model.mask, mask.logistic_noise, mask.hard);
  if ((replay.relaxed - mask.relaxed).lpNorm<Eigen::Infinity>() > 1e-12 ||
      (replay.value - mask.value).lpNorm<Eigen::Infinity>() > 1e-12)
    throw ContractViolation("mask sample was not drawn from the current mask distribution");

  ModelGradient grad = ModelGradient::zeros_like(model);
  const Vector d_out = upstream.d_output.size() ? upstream.d_output : Vector::Zero(d);
  const Matrix d_jac = upstream.d_jacobian.size() ? upstream.d_jacobian : Matrix::Zero(d, d);
  accumulate_function_gradient(model.function, x, mask.value, d_out, d_jac, grad.function);
  grad.logits = logits_gradient(model.mask, mask, grad.function.mask);
  if (upstream.d_log_var.size()) grad.log_var = upstream.d_log_var;
  return grad;
}

namespace {

void write_section(std::ostream& out, const std::string& name, const Matrix& m) {
  out << '[' << name << "]\n";
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      if (c) out << ',';
      out << csv::format_double(m(r, c));
    }
    out << '\n';
  }
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const CausalModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  const bool linear = std::holds_alternative<LinearFunction>(model.function);
  const Index h = linear ? 0 : std::get<MaskedMlpFunction>(model.function).hidden();
  out << "key,value\n"
      << "kind," << kind_name(model.function) << '\n'
      << "d," << model.d() << '\n'
      << "h," << h << '\n'
      << "tau," << csv::format_double(model.mask.temperature) << '\n'
      << "budget," << csv::format_double(model.lipschitz_budget) << '\n';
  if (linear) {
    write_section(out, "weights", std::get<LinearFunction>(model.function).weights);
  } else {
    const auto& g = std::get<MaskedMlpFunction>(model.function);
    write_section(out, "weights", g.input_weights);
    write_section(out, "output_weights", g.output_weights);
  }
  write_section(out, "logits", model.mask.logits);
  write_section(out, "log_var", model.noise.log_var.transpose());
}

CausalModel read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::map<std::string, std::string> header;
  std::map<std::string, std::vector<std::vector<double>>> sections;
  std::string line, current;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      current = line.substr(1, line.size() - 2);
      sections[current];
      continue;
    }
    const auto fields = csv::split(line);
    if (current.empty()) {
      if (fields.size() == 2 && fields[0] != "key") header[fields[0]] = fields[1];
    } else {
      std::vector<double> row;
      for (const auto& f : fields) row.push_back(csv::parse_double(f));
      sections[current].push_back(std::move(row));
    }
  }
  auto to_matrix = [&](const std::string& name) {
    if (!sections.count(name)) throw ValidationError("checkpoint lacks section " + name);
    const auto& rows = sections[name];
    Matrix m(static_cast<Index>(rows.size()), rows.empty() ? 0 : Index(rows[0].size()));
    for (Index r = 0; r < m.rows(); ++r) {
      if (Index(rows[r].size()) != m.cols()) throw ValidationError("ragged checkpoint section");
      for (Index c = 0; c < m.cols(); ++c) m(r, c) = rows[r][c];
    }
    return m;
  };
  for (const char* key : {"kind", "d", "tau", "budget"})
    if (!header.count(key)) throw ValidationError(std::string("checkpoint lacks key ") + key);

  CausalModel model;
  const Index d = std::stol(header["d"]);
  if (header["kind"] == "linear") {
    model.function = LinearFunction{to_matrix("weights")};
  } else if (header["kind"] == "mlp") {
    model.function = MaskedMlpFunction{to_matrix("weights"), to_matrix("output_weights")};
  } else {
    throw ValidationError("unknown checkpoint kind " + header["kind"]);
  }
  model.mask = MaskDistribution{to_matrix("logits"), csv::parse_double(header["tau"])};
  model.noise = NoisePrecision{to_matrix("log_var").row(0).transpose()};
  model.lipschitz_budget = csv::parse_double(header["budget"]);
  if (model.d() != d || model.mask.d() != d || model.noise.log_var.size() != d)
    throw ValidationError("checkpoint dimensions are inconsistent");
  return model;
}

}  // namespace cyclic_em
