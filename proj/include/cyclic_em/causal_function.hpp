#pragma once

#include "cyclic_em/common.hpp"
#include "cyclic_em/graph.hpp"

#include <filesystem>
#include <string>
#include <variant>

namespace cyclic_em {

// f(x) = (M .* B)^T x, i.e. f_i = sum_j M(j, i) B(j, i) x_j.
struct LinearFunction {
  Matrix weights;

  Index d() const { return weights.rows(); }
};

// One hidden tanh layer, no biases. Output i sees only the inputs allowed by
// column i of the mask:
//   f_i(x) = sum_k W2(k, i) tanh( sum_j W1(j, k) M(j, i) x_j ).
struct MaskedMlpFunction {
  Matrix input_weights;   // W1, d x h
  Matrix output_weights;  // W2, h x d

  Index d() const { return input_weights.rows(); }
  Index hidden() const { return input_weights.cols(); }
};

using CausalFunction = std::variant<LinearFunction, MaskedMlpFunction>;

Index dimension(const CausalFunction& f);
std::string kind_name(const CausalFunction& f);

// Independent Bernoulli edge gates with binary-concrete relaxation.
struct MaskDistribution {
  Matrix logits;  // phi; diagonal ignored
  double temperature = 1.0;

  Index d() const { return logits.rows(); }
  // sigmoid(phi) with a zero diagonal.
  Matrix probabilities() const;
};

// Theta = diag(exp(-log_var)).
struct NoisePrecision {
  Vector log_var;

  Vector precision() const { return (-log_var.array()).exp().matrix(); }
};

// One realisation of the mask together with the logistic noise that produced
// it. `value` is what the forward pass uses (hard 0/1 or relaxed), `relaxed`
// carries the straight-through gradient.
struct MaskSample {
  Matrix logistic_noise;
  Matrix relaxed;
  Matrix value;
  bool hard = true;
};

MaskSample sample_mask(const MaskDistribution& dist, bool hard, Rng& rng);
// Rebuilds the sample from frozen logistic noise.
MaskSample mask_from_noise(const MaskDistribution& dist, const Matrix& logistic_noise, bool hard);
// Deterministic all-ones mask (zero diagonal).
Matrix full_mask(Index d);

Vector evaluate(const CausalFunction& f, const Vector& x, const Matrix& mask);

// J(i, j) = d f_i / d x_j.
Matrix jacobian(const CausalFunction& f, const Vector& x, const Matrix& mask);

// Cached forward state of f at one point, serving Jacobian-vector products
// without forming J.
class FunctionAt {
 public:
  FunctionAt(const CausalFunction& f, const Vector& x, const Matrix& mask);

  const Vector& output() const { return output_; }
  // J v
  Vector jvp(const Vector& v) const;
  // J^T u
  Vector vjp(const Vector& u) const;
  Matrix jacobian() const;

 private:
  const CausalFunction* f_;
  const Matrix* mask_;
  Vector x_;
  Vector output_;
  Matrix hidden_;        // tanh activations, h x d (column i serves output i)
  Matrix slope_out_;     // (1 - hidden^2) .* W2, h x d
};

// Gradients of a scalar loss with respect to the parameters of f and the mask
// values it was evaluated with.
struct FunctionGradient {
  Matrix weights;         // dB or dW1
  Matrix output_weights;  // dW2 (empty for linear)
  Matrix mask;            // dM

  static FunctionGradient zeros_like(const CausalFunction& f);
  FunctionGradient& operator+=(const FunctionGradient& other);
  FunctionGradient& operator*=(double s);
};

// Accumulates into `grad` the gradient of
//   d_output . f(x) + sum_ij d_jacobian(i, j) J(i, j)
// with respect to the parameters of f and the mask entries.
void accumulate_function_gradient(const CausalFunction& f, const Vector& x, const Matrix& mask,
                                  const Vector& d_output, const Matrix& d_jacobian,
                                  FunctionGradient& grad);

// Rescales weights so that the product of layer spectral norms is at most
// `budget` (each of the L layers is capped at budget^(1/L)).
void spectral_project(CausalFunction& f, double budget);
// Product of layer spectral norms.
double lipschitz_bound(const CausalFunction& f);

struct CausalModel {
  CausalFunction function;
  MaskDistribution mask;
  NoisePrecision noise;
  double lipschitz_budget = 0.9;

  Index d() const { return dimension(function); }
};

enum class FunctionKindTag { linear, mlp };

// Weights i.i.d. uniform(-init_scale, init_scale) then projected, logits 0,
// log-variances 0. Hidden width defaults to d.
CausalModel init_model(FunctionKindTag kind, Index d, double lipschitz_budget,
                       double temperature, Rng& rng, Index hidden = 0,
                       double init_scale = 0.1);

// Gradient for every learnable field of a CausalModel.
struct ModelGradient {
  FunctionGradient function;
  Matrix logits;
  Vector log_var;

  static ModelGradient zeros_like(const CausalModel& model);
  ModelGradient& operator+=(const ModelGradient& other);
  ModelGradient& operator*=(double s);
  bool all_finite() const;
};

// What the objective hands back to the parameters of one evaluation.
struct Upstream {
  Vector d_output;    // d loss / d f(x)
  Matrix d_jacobian;  // d loss / d J_f(x)
  Vector d_log_var;   // direct d loss / d log_var
};

// Gradients for B or (W1, W2), phi (straight-through through the relaxed mask)
// and log_var. Throws ContractViolation when `mask` was not produced by
// `model.mask` with its own logistic noise.
ModelGradient parameter_gradients(const CausalModel& model, const Vector& x,
                                  const MaskSample& mask, const Upstream& upstream);

// Chain rule from mask values to logits.
Matrix logits_gradient(const MaskDistribution& dist, const MaskSample& mask, const Matrix& d_mask);

// Checkpoint: key,value header then [section] blocks of CSV rows.
void write_checkpoint(const std::filesystem::path& path, const CausalModel& model);
CausalModel read_checkpoint(const std::filesystem::path& path);

}  // namespace cyclic_em
