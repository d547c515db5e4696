#include <doctest.h>

#include "cyclic_em/causal_function.hpp"
#include "support.hpp"

using namespace cyclic_em;
using cyclic_em::testing::uniform_matrix;

namespace {

MaskedMlpFunction random_mlp(Index d, Index h, double scale, Rng& rng) {
  return {uniform_matrix(d, h, scale, rng), uniform_matrix(h, d, scale, rng)};
}

Matrix fd_jacobian(const CausalFunction& f, const Vector& x, const Matrix& mask) {
  const Index d = x.size();
  Matrix j(d, d);
  for (Index c = 0; c < d; ++c) {
    Vector a = x, b = x;
    a[c] += 1e-6;
    b[c] -= 1e-6;
    j.col(c) = (evaluate(f, a, mask) - evaluate(f, b, mask)) / 2e-6;
  }
  return j;
}

}  // namespace

TEST_CASE("evaluation and jacobians") {
  Rng rng(4);
  const Index d = 5;
  const Matrix b = uniform_matrix(d, d, 0.5, rng);
  const Matrix mask = full_mask(d);

  SUBCASE("linear") {
    const CausalFunction f = LinearFunction{b};
    const Vector x = standard_normal(d, rng);
    Matrix bm = b;
    bm.diagonal().setZero();
    CHECK((evaluate(f, x, mask) - bm.transpose() * x).norm() < 1e-12);
    CHECK((jacobian(f, x, mask) - bm.transpose()).norm() < 1e-12);
    CHECK(evaluate(f, Vector::Zero(d), mask).isZero(0.0));
    CHECK(jacobian(f, x, Matrix::Zero(d, d)).isZero(0.0));
  }
  SUBCASE("mlp against finite differences") {
    const CausalFunction f = random_mlp(d, 3, 0.8, rng);
    Matrix m = (uniform_matrix(d, d, 1.0, rng).array() > 0.0).cast<double>();
    m.diagonal().setZero();
    for (int t = 0; t < 5; ++t) {
      const Vector x = standard_normal(d, rng);
      CHECK((jacobian(f, x, m) - fd_jacobian(f, x, m)).cwiseAbs().maxCoeff() < 1e-8);
    }
    CHECK(evaluate(f, Vector::Zero(d), m).isZero(0.0));
  }
  SUBCASE("mlp at zero has the masked closed form") {
    const MaskedMlpFunction g = random_mlp(d, 4, 0.8, rng);
    const CausalFunction f = g;
    Matrix m = (uniform_matrix(d, d, 1.0, rng).array() > 0.0).cast<double>();
    m.diagonal().setZero();
    const Matrix closed = (g.output_weights.transpose() * g.input_weights.transpose())
                              .cwiseProduct(m.transpose());
    CHECK((jacobian(f, Vector::Zero(d), m) - closed).norm() < 1e-12);
  }
  SUBCASE("hard-masked column is invariant to every input") {
    const CausalFunction f = random_mlp(d, 3, 0.8, rng);
    Matrix m = full_mask(d);
    m.col(2).setZero();
    const Vector x = standard_normal(d, rng);
    for (Index j = 0; j < d; ++j) {
      Vector y = x;
      y[j] += 3.0;
      CHECK(evaluate(f, y, m)[2] == evaluate(f, x, m)[2]);
    }
    CHECK(jacobian(f, x, m).row(2).isZero(0.0));
  }
  SUBCASE("jvp and vjp agree with the dense jacobian") {
    for (const CausalFunction f : {CausalFunction(LinearFunction{b}),
                                   CausalFunction(random_mlp(d, 6, 0.7, rng))}) {
      const Vector x = standard_normal(d, rng);
      const FunctionAt at(f, x, mask);
      const Matrix j = at.jacobian();
      const Vector v = standard_normal(d, rng);
      CHECK((at.jvp(v) - j * v).norm() < 1e-12);
      CHECK((at.vjp(v) - j.transpose() * v).norm() < 1e-12);
    }
  }
}

TEST_CASE("mask distribution") {
  Rng rng(8);
  MaskDistribution dist{Matrix::Zero(4, 4), 1.0};
  SUBCASE("hard samples at zero logits are Bernoulli(1/2)") {
    Matrix sum = Matrix::Zero(4, 4);
    for (int t = 0; t < 10000; ++t) sum += sample_mask(dist, true, rng).value;
    sum /= 10000.0;
    for (Index j = 0; j < 4; ++j)
      for (Index i = 0; i < 4; ++i) {
        if (i == j) CHECK(sum(j, i) == 0.0);
        else CHECK(std::abs(sum(j, i) - 0.5) <= 0.02);
      }
  }
  SUBCASE("saturated logits") {
    dist.logits.setConstant(80.0);
    const auto s = sample_mask(dist, false, rng);
    CHECK((s.value - full_mask(4)).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("low temperature relaxed samples are nearly binary") {
    dist.temperature = 1e-4;
    const auto s = sample_mask(dist, false, rng);
    CHECK((s.value.array() * (1.0 - s.value.array())).maxCoeff() < 1e-3);
  }
  SUBCASE("replay from noise") {
    const auto s = sample_mask(dist, true, rng);
    const auto r = mask_from_noise(dist, s.logistic_noise, true);
    CHECK(r.value == s.value);
    CHECK(r.relaxed == s.relaxed);
  }
}

TEST_CASE("spectral projection") {
  Rng rng(12);
  SUBCASE("linear forced to the budget") {
    CausalFunction f = LinearFunction{testing::random_contractive(5, 2.0, rng)};
    spectral_project(f, 0.9);
    CHECK(lipschitz_bound(f) == doctest::Approx(0.9).epsilon(1e-12));
    const Matrix before = std::get<LinearFunction>(f).weights;
    spectral_project(f, 0.9);
    CHECK(std::get<LinearFunction>(f).weights == before);
  }
  SUBCASE("within budget is untouched") {
    CausalFunction f = LinearFunction{testing::random_contractive(5, 0.3, rng)};
    const Matrix before = std::get<LinearFunction>(f).weights;
    spectral_project(f, 0.9);
    CHECK(std::get<LinearFunction>(f).weights == before);
  }
  SUBCASE("mlp secant pairs stay within the budget") {
    CausalFunction f = random_mlp(5, 7, 2.0, rng);
    spectral_project(f, 0.8);
    CHECK(lipschitz_bound(f) <= 0.8 + 1e-12);
    const Matrix m = full_mask(5);
    double worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
      const Vector x = standard_normal(5, rng), y = standard_normal(5, rng);
      worst = std::max(worst, (evaluate(f, x, m) - evaluate(f, y, m)).norm() / (x - y).norm());
    }
    CHECK(worst <= 0.8 + 1e-6);
  }
  CHECK_THROWS_AS(init_model(FunctionKindTag::linear, 3, 1.0, 1.0, rng), ParameterError);
}

TEST_CASE("function gradients") {
  Rng rng(21);
  const Index d = 4;

  SUBCASE("zero upstream gives zero gradient") {
    const CausalFunction f = random_mlp(d, 3, 0.5, rng);
    FunctionGradient g = FunctionGradient::zeros_like(f);
    accumulate_function_gradient(f, standard_normal(d, rng), full_mask(d), Vector::Zero(d),
                                 Matrix::Zero(d, d), g);
    CHECK(g.weights.isZero(0.0));
    CHECK(g.output_weights.isZero(0.0));
    CHECK(g.mask.isZero(0.0));
  }
  SUBCASE("quadratic residual loss on a linear map") {
    const Matrix b = uniform_matrix(d, d, 0.5, rng);
    const CausalFunction f = LinearFunction{b};
    const Matrix m = full_mask(d);
    const Vector x = standard_normal(d, rng);
    // loss = ||x - (M.*B)^T x||^2, d loss / d f = -2 (x - f)
    const Vector r = x - evaluate(f, x, m);
    FunctionGradient g = FunctionGradient::zeros_like(f);
    accumulate_function_gradient(f, x, m, -2.0 * r, Matrix::Zero(d, d), g);
    const Matrix closed = (-2.0 * x * r.transpose()).cwiseProduct(m);
    CHECK((g.weights - closed).norm() < 1e-12);
  }
  SUBCASE("output and jacobian paths against finite differences") {
    for (int t = 0; t < 10; ++t) {
      const MaskedMlpFunction g0 = random_mlp(d, 3, 0.9, rng);
      Matrix m = uniform_matrix(d, d, 1.0, rng).cwiseAbs();
      m.diagonal().setZero();
      const Vector x = standard_normal(d, rng);
      const Vector dout = standard_normal(d, rng);
      const Matrix djac = uniform_matrix(d, d, 1.0, rng);
      auto loss = [&](const MaskedMlpFunction& g, const Matrix& mm) {
        const CausalFunction f = g;
        const FunctionAt at(f, x, mm);
        return dout.dot(at.output()) + djac.cwiseProduct(at.jacobian()).sum();
      };
      FunctionGradient grad = FunctionGradient::zeros_like(CausalFunction(g0));
      accumulate_function_gradient(CausalFunction(g0), x, m, dout, djac, grad);
      auto fd = [&](auto&& pick, Index rows, Index cols) {
        Matrix out(rows, cols);
        for (Index c = 0; c < cols; ++c)
          for (Index r = 0; r < rows; ++r) {
            MaskedMlpFunction gp = g0, gm = g0;
            Matrix mp = m, mm = m;
            pick(gp, mp)(r, c) += 1e-6;
            pick(gm, mm)(r, c) -= 1e-6;
            out(r, c) = (loss(gp, mp) - loss(gm, mm)) / 2e-6;
          }
        return out;
      };
      const Matrix n1 = fd([](MaskedMlpFunction& g, Matrix&) -> Matrix& { return g.input_weights; }, d, 3);
      const Matrix n2 = fd([](MaskedMlpFunction& g, Matrix&) -> Matrix& { return g.output_weights; }, 3, d);
      Matrix nm = fd([](MaskedMlpFunction&, Matrix& mm) -> Matrix& { return mm; }, d, d);
      CHECK(testing::block_relative_error(grad.weights, n1) < 1e-6);
      CHECK(testing::block_relative_error(grad.output_weights, n2) < 1e-6);
      CHECK(testing::block_relative_error(grad.mask, nm) < 1e-6);
    }
  }
  SUBCASE("foreign mask sample is rejected") {
    const CausalModel model = init_model(FunctionKindTag::linear, d, 0.9, 1.0, rng);
    MaskDistribution other = model.mask;
    other.logits.setConstant(1.0);
    const MaskSample s = sample_mask(other, false, rng);
    Upstream up{Vector::Ones(d), Matrix::Zero(d, d), Vector::Zero(d)};
    CHECK_THROWS_AS(parameter_gradients(model, Vector::Ones(d), s, up), ContractViolation);
  }
}

TEST_CASE("checkpoint round trip") {
  testing::TempDir dir("ckpt");
  Rng rng(33);
  for (auto kind : {FunctionKindTag::linear, FunctionKindTag::mlp}) {
    CausalModel m = init_model(kind, 4, 0.85, 0.7, rng, 3);
    m.mask.logits = uniform_matrix(4, 4, 2.0, rng);
    m.noise.log_var = standard_normal(4, rng);
    write_checkpoint(dir / "c.csv", m);
    const CausalModel back = read_checkpoint(dir / "c.csv");
    CHECK(kind_name(back.function) == kind_name(m.function));
    CHECK(back.mask.logits == m.mask.logits);
    CHECK(back.noise.log_var == m.noise.log_var);
    CHECK(back.mask.temperature == m.mask.temperature);
    CHECK(back.lipschitz_budget == m.lipschitz_budget);
    if (kind == FunctionKindTag::mlp) {
      CHECK(std::get<MaskedMlpFunction>(back.function).input_weights ==
            std::get<MaskedMlpFunction>(m.function).input_weights);
      CHECK(std::get<MaskedMlpFunction>(back.function).output_weights ==
            std::get<MaskedMlpFunction>(m.function).output_weights);
    } else {
      CHECK(std::get<LinearFunction>(back.function).weights ==
            std::get<LinearFunction>(m.function).weights);
    }
  }
}
