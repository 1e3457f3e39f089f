#include <cmath>
#include <numbers>

#include "doctest.h"
#include "support/primitive_suite.hpp"
#include "support/gradcheck.hpp"
#include "support/jacobi.hpp"
#include "support/pca_oracle.hpp"
#include "wim/num/autodiff.hpp"
#include "wim/num/binary_io.hpp"
#include "wim/num/optim.hpp"
#include "wim/num/pca.hpp"
#include "wim/num/stats.hpp"

using namespace wim::num;
using wim::testing::max_gradient_error;
using wim::testing::random_away_from;
using wim::testing::random_tensor;
using wim::testing::weighted_sum;

TEST_CASE("tensor construction validates shape and finiteness") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  CHECK_THROWS_AS(Tensor({1}, {std::nan("")}), NumericError);
  CHECK_THROWS_AS(Tensor({1}, {INFINITY}), NumericError);
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.transposed().shape() == Shape{3, 2});
}

TEST_CASE("forward primitive examples") {
  Tape tape(false);
  Tensor a = Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6});
  auto y = matmul(tape.constant(Tensor::identity(3)), tape.constant(a));
  CHECK(y.value() == a);

  auto r = relu(tape.constant(Tensor::vector({-1, 0, 2})));
  CHECK(r.value() == Tensor::vector({0, 0, 2}));

  auto s = softmax_rows(tape.constant(Tensor::matrix(1, 2, {0, 0})));
  CHECK(s.value()[0] == doctest::Approx(0.5));
  CHECK(s.value()[1] == doctest::Approx(0.5));
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(3);
  Tape tape(false);
  for (int trial = 0; trial < 20; ++trial) {
    auto s = softmax_rows(tape.constant(random_tensor({7, 5}, rng, -30.0, 30.0)));
    for (std::size_t r = 0; r < 7; ++r) {
      double total = 0.0;
      for (double v : s.value().row(r)) total += v;
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("shape mismatch diagnostics name both shapes") {
  Tape tape;
  auto a = tape.constant(Tensor({2, 3}));
  auto b = tape.constant(Tensor({2, 3}));
  try {
    (void)matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("x [2, 3]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, tape.constant(Tensor({3, 2}))), ShapeError);
}

TEST_CASE("backward examples") {
  Tape tape;
  auto x = tape.leaf(Tensor::vector({1, 2, 3}));
  tape.backward(sum(x));
  CHECK(tape.grad(x) == Tensor::vector({1, 1, 1}));

  Tape tape2;
  auto z = tape2.leaf(Tensor::vector({1, 2}));
  tape2.backward(sum(mul(z, z)));
  CHECK(tape2.grad(z) == Tensor::vector({2, 4}));
}

TEST_CASE("backward rejects untaped values and non-scalars") {
  Tape tape;
  auto c = tape.constant(Tensor::scalar(2.0));
  CHECK_THROWS_AS(tape.backward(scale(c, 3.0)), std::invalid_argument);
  auto x = tape.leaf(Tensor::vector({1, 2}));
  CHECK_THROWS_AS(tape.backward(x), ShapeError);
  Tape other;
  auto y = other.leaf(Tensor::scalar(1.0));
  CHECK_THROWS(tape.backward(y));
}

TEST_CASE("inference tapes do not record") {
  Tape tape(false);
  auto x = tape.leaf(Tensor::vector({1, 2}));
  auto y = sum(mul(x, x));
  CHECK_FALSE(tape.requires_grad(y));
  CHECK(y.value().item() == 5.0);
}

TEST_CASE("random two-layer MLP gradients match finite differences") {
  Rng rng(11);
  std::vector<Tensor> inputs = {random_tensor({5, 4}, rng), random_tensor({4, 6}, rng), random_tensor({6}, rng),
                                random_tensor({6, 3}, rng), random_tensor({3}, rng)};
  auto f = [](Tape&, const std::vector<Var>& v) {
    auto h = tanh(add_bias(matmul(v[0], v[1]), v[2]));
    auto out = add_bias(matmul(h, v[3]), v[4]);
    return sum(mul(out, out));
  };
  CHECK(max_gradient_error(inputs, f) < 1e-4);
}

TEST_CASE("every differentiable primitive matches finite differences") {
  for (const auto& c : wim::testing::primitive_cases(17)) {
    const double err = max_gradient_error(c.inputs, c.loss);
    INFO(c.name << " max relative error " << err);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("circular convolution wraps around") {
  Tape tape(false);
  // Kernel [0, 1, 0] is the identity; [1, 0, 0] reads one step to the left.
  auto x = tape.constant(Tensor::matrix(1, 4, {1, 2, 3, 4}));
  auto id = circular_conv1d(x, tape.constant(Tensor({1, 1, 3}, {0, 1, 0})), 1, 4);
  CHECK(id.value() == Tensor::matrix(1, 4, {1, 2, 3, 4}));
  auto left = circular_conv1d(x, tape.constant(Tensor({1, 1, 3}, {1, 0, 0})), 1, 4);
  CHECK(left.value() == Tensor::matrix(1, 4, {4, 1, 2, 3}));
}

TEST_CASE("parameters receive gradients through the tape") {
  Parameter w("w", Tensor::vector({1.0, -2.0}));
  Tape tape;
  auto v = tape.param(w);
  tape.backward(sum_squares(v));
  CHECK(w.grad == Tensor::vector({2.0, -4.0}));
}

namespace {

std::vector<double> train_quadratic(std::uint64_t seed, OptimizerConfig cfg, int steps) {
  Rng rng(seed);
  Parameter w("w", random_tensor({4, 3}, rng));
  Tensor target = random_tensor({4, 3}, rng);
  Optimizer opt(cfg, {&w});
  for (int s = 0; s < steps; ++s) {
    opt.zero_grad();
    Tape tape;
    tape.backward(sum_squares(sub(tape.param(w), tape.constant(target))));
    opt.step();
  }
  return w.value.storage();
}

}  // namespace

TEST_CASE("optimizer runs are bit-identical for identical seeds") {
  const auto a = train_quadratic(5, OptimizerConfig::adamw(1e-2), 50);
  const auto b = train_quadratic(5, OptimizerConfig::adamw(1e-2), 50);
  CHECK(a == b);
  const auto c = train_quadratic(6, OptimizerConfig::adamw(1e-2), 50);
  CHECK(a != c);
}

TEST_CASE("adam first step moves each weight by the learning rate") {
  Parameter w("w", Tensor::vector({1.0, -1.0}));
  Optimizer opt(OptimizerConfig::adam(0.1), {&w});
  opt.zero_grad();
  w.grad = Tensor::vector({3.0, -0.5});
  opt.step();
  CHECK(w.value[0] == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(w.value[1] == doctest::Approx(-0.9).epsilon(1e-7));
  CHECK(opt.steps() == 1);

  Parameter u("u", Tensor::vector({1.0}));
  Optimizer decayed(OptimizerConfig::adamw(0.1), {&u});
  decayed.zero_grad();
  decayed.step();  // zero gradient: only decoupled decay acts
  CHECK(u.value[0] == doctest::Approx(1.0 - 0.1 * 0.01));
}

TEST_CASE("sgd with momentum accumulates a velocity") {
  Parameter w("w", Tensor::vector({1.0}));
  Optimizer opt(OptimizerConfig::sgd(0.1, 0.5), {&w});
  w.grad = Tensor::vector({2.0});
  opt.step();
  CHECK(w.value[0] == doctest::Approx(0.8));
  opt.step();  // velocity 0.5 * 2 + 2 = 3
  CHECK(w.value[0] == doctest::Approx(0.5));
}

TEST_CASE("adam defaults") {
  const auto cfg = OptimizerConfig::adamw(2e-4);
  CHECK(cfg.beta1 == 0.9);
  CHECK(cfg.beta2 == 0.999);
  CHECK(cfg.epsilon == 1e-8);
  CHECK(cfg.weight_decay == 0.01);
}

TEST_CASE("optimizer rejects non-finite parameters") {
  Parameter w("w", Tensor::vector({1.0}));
  Optimizer opt(OptimizerConfig::adam(1e308), {&w});
  w.grad = Tensor::vector({1.0});
  CHECK_THROWS_AS((opt.step(), opt.step()), NumericError);
}

TEST_CASE("pca: points on the x axis") {
  Tensor X = Tensor::matrix(4, 3, {1, 0, 0, -2, 0, 0, 3, 0, 0, 0.5, 0, 0});
  const auto r = pca_top_components(X, 1);
  CHECK(std::abs(r.components[0][0]) == doctest::Approx(1.0));
  CHECK(r.components[0][0] > 0.0);
  CHECK(r.explained_variance_ratio[0] == doctest::Approx(1.0));
}

TEST_CASE("pca: two points") {
  const std::vector<double> p = {1, 2, 3}, q = {-1, 0.5, 2};
  Tensor X = Tensor::matrix(2, 3, {p[0], p[1], p[2], q[0], q[1], q[2]});
  const auto r = pca_top_components(X, 1);
  std::vector<double> diff = {p[0] - q[0], p[1] - q[1], p[2] - q[2]};
  double n = 0.0;
  for (double v : diff) n += v * v;
  n = std::sqrt(n);
  double cos = 0.0;
  for (int i = 0; i < 3; ++i) cos += diff[i] / n * r.components[0][i];
  CHECK(std::abs(cos) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("pca: degenerate data") {
  Tensor X = Tensor::matrix(3, 2, {1, 1, 1, 1, 1, 1});
  CHECK_THROWS_WITH_AS(pca_top_components(X, 1), "degenerate data", NumericError);
  CHECK_THROWS_AS(pca_top_components(Tensor::matrix(1, 2, {1, 2}), 1), ShapeError);
  CHECK_THROWS_AS(pca_top_components(Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 7}), 3), ShapeError);
}

TEST_CASE("pca without centering keeps the mean direction") {
  // Rows all equal u: classical PCA has nothing to explain, raw second moments do.
  Tensor X = Tensor::matrix(3, 2, {3, 4, 3, 4, 3, 4});
  const auto r = pca_top_components(X, 1, Centering::none);
  CHECK(r.components[0][0] == doctest::Approx(0.6));
  CHECK(r.components[0][1] == doctest::Approx(0.8));
  CHECK(r.explained_variance_ratio[0] == doctest::Approx(1.0));
}


TEST_CASE("pca matches the Jacobi oracle on a random 6x5 matrix") {
  Rng rng(2024);
  const auto [ratio_err, vec_err] = wim::testing::compare_with_jacobi(random_tensor({6, 5}, rng));
  CHECK(ratio_err < 1e-8);
  CHECK(vec_err < 1e-6);
}

TEST_CASE("pca components are orthonormal with non-increasing ratios") {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const auto r = pca_top_components(random_tensor({8, 6}, rng), 5);
    double sum_ratio = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      sum_ratio += r.explained_variance_ratio[i];
      CHECK(r.explained_variance_ratio[i] >= 0.0);
      if (i) CHECK(r.explained_variance_ratio[i] <= r.explained_variance_ratio[i - 1] + 1e-12);
      for (std::size_t j = 0; j < 5; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < 6; ++c) dot += r.components[i][c] * r.components[j][c];
        CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-8));
      }
    }
    CHECK(sum_ratio <= 1.0 + 1e-12);
  }
}

TEST_CASE("stats examples") {
  const std::vector<double> x = {1, 2, 3, 4, 5};
  std::vector<double> y, neg;
  for (double v : x) {
    y.push_back(2 * v + 1);
    neg.push_back(-v);
  }
  CHECK(pearson(x, y) == doctest::Approx(1.0));
  CHECK(spearman(x, neg) == doctest::Approx(-1.0));
  const std::vector<double> a = {1, 2, 3, 4}, b = {1, 3, 2, 4};
  CHECK(spearman(a, b) == doctest::Approx(0.8));
  const auto s = stats(x, y);
  CHECK(s.mean == doctest::Approx(3.0));
  CHECK(s.std == doctest::Approx(std::sqrt(2.5)));
}

TEST_CASE("spearman uses average ranks for ties") {
  const std::vector<double> x = {1, 2, 2, 3};
  const auto r = average_ranks(x);
  CHECK(r == std::vector<double>{1.0, 2.5, 2.5, 4.0});
}

TEST_CASE("stats reject zero variance and short input") {
  const std::vector<double> c = {1, 1, 1}, x = {1, 2, 3};
  CHECK_THROWS_AS(pearson(c, x), NumericError);
  const std::vector<double> one = {1};
  CHECK_THROWS_AS(pearson(one, one), ShapeError);
}

TEST_CASE("binary reader reports truncation offset") {
  BinaryWriter w;
  w.magic("TEST");
  w.u32(7);
  auto bytes = w.bytes();
  bytes.pop_back();
  BinaryReader r(bytes);
  r.expect_magic("TEST");
  try {
    (void)r.u32();
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("offset 4") != std::string::npos);
  }
}
