#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_util.hpp"

using namespace gatiaa;
using testutil::random_matrix;

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), ShapeError);
  Tensor<float> t({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t(1, 2), 6.0f);
  EXPECT_EQ(t.row(1)[0], 4.0f);
}

TEST(Primitives, RowSoftmaxOfEqualLogitsIsUniform) {
  Tape<double> t;
  auto y = row_softmax(t.constant(Tensor<double>::matrix(1, 3)));
  for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(y.value()(0, j), 1.0 / 3.0);
}

TEST(Primitives, LeakyReluAtTwoPoints) {
  Tape<double> t;
  auto y = leaky_relu(t.constant(Tensor<double>({1, 2}, {-1.0, 2.0})), 0.2);
  EXPECT_DOUBLE_EQ(y.value()[0], -0.2);
  EXPECT_DOUBLE_EQ(y.value()[1], 2.0);
}

TEST(Primitives, IdentityMatmul) {
  std::mt19937_64 rng(1);
  Tape<double> t;
  auto eye = Tensor<double>::matrix(3, 3);
  for (int i = 0; i < 3; ++i) eye.data()[i * 3 + i] = 1.0;
  const auto x = random_matrix<double>(3, 4, rng);
  EXPECT_EQ(matmul(t.constant(eye), t.constant(x)).value(), x);
}

TEST(Primitives, MatmulMatchesTripleLoop) {
  std::mt19937_64 rng(2);
  const auto a = random_matrix<double>(4, 5, rng), b = random_matrix<double>(5, 3, rng);
  Tape<double> t;
  const auto c = matmul(t.constant(a), t.constant(b)).value();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 5; ++k) s += a(i, k) * b(k, j);
      EXPECT_NEAR(c(i, j), s, 1e-12);
    }
}

TEST(Primitives, ShapeErrorsNameTheOperation) {
  Tape<double> t;
  auto a = t.constant(Tensor<double>::matrix(2, 3)), b = t.constant(Tensor<double>::matrix(2, 2));
  try {
    add(a, b);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_EQ(e.op(), "add");
    EXPECT_EQ(e.lhs(), (Shape{2, 3}));
    EXPECT_EQ(e.rhs(), (Shape{2, 2}));
  }
  EXPECT_THROW(matmul(a, a), ShapeError);
  EXPECT_THROW(t.constant(Tensor<double>::matrix(0, 3)), ShapeError);
}

TEST(Primitives, LogRejectsNonPositive) {
  Tape<double> t;
  EXPECT_THROW(log(t.constant(Tensor<double>({1, 2}, {1.0, 0.0}))), ValueError);
}

TEST(Primitives, FullyMaskedRowGivesZeros) {
  Tape<double> t;
  auto y = masked_row_softmax(t.constant(Tensor<double>({2, 2}, {1, 2, 3, 4})), {0, 0, 1, 1});
  EXPECT_EQ(y.value()[0], 0.0);
  EXPECT_EQ(y.value()[1], 0.0);
  EXPECT_NEAR(y.value()[2] + y.value()[3], 1.0, 1e-15);
}

TEST(Primitives, SoftmaxRowsAreDistributions) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Tape<double> t;
    auto y = row_softmax(t.constant(random_matrix<double>(5, 7, rng, 10.0)));
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0;
      for (double v : y.value().row(r)) {
        EXPECT_GE(v, 0.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    Tape<float> tf;
    auto yf = row_softmax(tf.constant(random_matrix<float>(5, 7, rng, 10.0)));
    for (std::size_t r = 0; r < 5; ++r) {
      float s = 0;
      for (float v : yf.value().row(r)) s += v;
      EXPECT_NEAR(s, 1.0f, 1e-6f);
    }
  }
}

TEST(Backward, SumGivesOnes) {
  Tape<double> t;
  auto x = t.variable(Tensor<double>::matrix(2, 2, 5.0));
  t.backward(sum(x));
  EXPECT_EQ(x.grad(), Tensor<double>::matrix(2, 2, 1.0));
}

TEST(Backward, SquareGivesTwoX) {
  Tape<double> t;
  auto x = t.variable(Tensor<double>::scalar(3.0));
  t.backward(sum(multiply(x, x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, SumOfSoftmaxHasZeroGradient) {
  std::mt19937_64 rng(4);
  Tape<double> t;
  auto x = t.variable(random_matrix<double>(1, 6, rng));
  t.backward(sum(row_softmax(x)));
  for (double g : x.grad().data()) EXPECT_NEAR(g, 0.0, 1e-15);
}

TEST(Backward, RequiresScalarLoss) {
  Tape<double> t;
  auto x = t.variable(Tensor<double>::matrix(2, 2));
  EXPECT_THROW(t.backward(x), ShapeError);
}

TEST(Backward, RepeatedCallsAccumulateAndResetIsBitExact) {
  std::mt19937_64 rng(5);
  Tape<double> t;
  auto x = t.variable(random_matrix<double>(3, 3, rng));
  auto loss = sum(multiply(row_softmax(x), exp(x)));
  t.backward(loss);
  const auto once = x.grad();
  t.backward(loss);
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_EQ(x.grad()[i], 2 * once[i]);
  t.zero_grad();
  t.backward(loss);
  EXPECT_EQ(x.grad(), once);
}

TEST(Backward, ParameterLeavesAreSharedWithinATape) {
  Parameter<double> p("p", Tensor<double>::matrix(1, 2, 1.0));
  Tape<double> t;
  auto a = t.parameter(p), b = t.parameter(p);
  EXPECT_EQ(a.id(), b.id());
  t.backward(sum(add(a, b)));
  t.accumulate_parameter_grads();
  EXPECT_EQ(p.grad, Tensor<double>::matrix(1, 2, 2.0));
}

// Every primitive against central differences on random instances.
TEST(GradCheck, EveryPrimitive) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    Parameter<double> a("a", random_matrix<double>(3, 4, rng)), b("b", random_matrix<double>(3, 4, rng));
    Parameter<double> c("c", random_matrix<double>(4, 2, rng)), row("row", random_matrix<double>(1, 4, rng));
    Parameter<double> col("col", random_matrix<double>(3, 1, rng)), col2("col2", random_matrix<double>(5, 1, rng));
    const auto w = random_matrix<double>(3, 4, rng);
    const auto w35 = random_matrix<double>(3, 5, rng);
    const std::vector<std::size_t> seg{0, 1, 1};
    const std::vector<std::uint8_t> mask{1, 0, 1, 1, 0, 0, 0, 0, 1, 1, 1, 0};
    auto f = [&](Tape<double>& t) {
      auto A = t.parameter(a), B = t.parameter(b);
      auto W = t.constant(w);
      std::vector<Var<double>> terms{
          sum(multiply(W, subtract(A, B))),
          sum(matmul(A, t.parameter(c))),
          sum(multiply(W, add_row(A, t.parameter(row)))),
          sum(multiply(W, scale(A, 0.7))),
          sum(multiply(transpose(W), transpose(A))),
          sum(multiply(W, row_softmax(A))),
          sum(multiply(W, masked_row_softmax(B, mask))),
          sum(multiply(W, relu(A))),
          sum(multiply(W, leaky_relu(B, 0.2))),
          sum(multiply(W, exp(A))),
          sum(log(add(multiply(A, A), t.constant(Tensor<double>::matrix(3, 4, 1.0))))),
          sum(multiply(W, clamp_min(B, -0.3))),
          mean(multiply(A, B)),
          sum(multiply(segment_sum(A, seg, 2), segment_mean(B, seg, 2))),
          sum(multiply(slice_rows(A, 1, 2), gather_rows(t.parameter(row), std::vector<std::size_t>{0, 0}))),
          sum(multiply(W, scale_rows(B, {1.0, -2.0, 0.5}))),
          sum(multiply(concat<double>({A, B}, 0), concat<double>({B, A}, 0))),
          sum(multiply(concat<double>({A, t.parameter(col)}, 1), concat<double>({B, t.parameter(col)}, 1))),
          sum(multiply(t.constant(w35), outer_add(t.parameter(col), t.parameter(col2)))),
      };
      Var<double> total = terms[0];
      for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
      return total;
    };
    const auto res = grad_check(f, {&a, &b, &c, &row, &col, &col2}, 1e-5, 64, trial);
    ASSERT_LT(res.max_rel_error, 1e-4) << "trial " << trial << " worst " << res.worst_parameter;
  }
}

TEST(GradCheck, LinearMapIsExact) {
  std::mt19937_64 rng(7);
  Parameter<double> w("w", random_matrix<double>(4, 3, rng));
  const auto x = random_matrix<double>(2, 4, rng);
  const auto res = grad_check([&](Tape<double>& t) { return sum(matmul(t.constant(x), t.parameter(w))); }, {&w});
  EXPECT_LT(res.max_rel_error_strict, 1e-8);
}

TEST(GradCheck, GatLayerMseOnThreeNodes) {
  std::mt19937_64 rng(8);
  GatLayer<double> gat("gat", 4, 3, 2, 2, HeadCombine::concat, false, rng);
  Parameter<double> x("x", random_matrix<double>(3, 4, rng));
  const auto target = random_matrix<double>(3, 6, rng);
  BatchLayout layout;
  layout.graph_index = {0, 0, 0};
  layout.counts = {3};
  layout.offsets = {0};
  std::vector<Parameter<double>*> ps{&x};
  gat.collect(ps);
  auto f = [&](Tape<double>& t) {
    auto d = subtract(gat.forward(t, t.parameter(x), layout).nodes, t.constant(target));
    return mean(multiply(d, d));
  };
  EXPECT_LT(grad_check(f, ps, 1e-5).max_rel_error, 1e-4);
}

TEST(GradCheck, DetectsWrongGradient) {
  Parameter<double> p("p", Tensor<double>({1, 2}, {0.3, -0.4}));
  auto f = [&](Tape<double>& t) {
    auto x = t.parameter(p);
    const std::size_t ix = x.id();
    // Forward x^2, backward claims 3x.
    Tensor<double> sq = x.value();
    for (auto& v : sq.data()) v *= v;
    auto y = t.record("bad_square", sq, {x}, [ix](auto& s, const Tensor<double>& g) {
      auto& gx = s.at(ix);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 3 * s.value(ix)[i] * g[i];
    });
    return sum(y);
  };
  EXPECT_GT(grad_check(f, {&p}).max_rel_error, 0.1);
}

TEST(GradCheck, NonFiniteLossIsAnError) {
  Parameter<double> p("p", Tensor<double>::scalar(1e300));
  EXPECT_THROW(grad_check([&](Tape<double>& t) { return sum(exp(t.parameter(p))); }, {&p}), ValueError);
}

TEST(GradCheck, RelativeErrorFormula) {
  EXPECT_DOUBLE_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(1e-13, 0.0), 0.1);
  EXPECT_DOUBLE_EQ(relative_error(1e-13, 0.0, 1e-6), 1e-7);
}

TEST(GradSuite, AllUnitsPassAndCorruptionIsCaught) {
  const auto reports = run_grad_suite();
  ASSERT_EQ(reports.size(), 9u);
  for (const auto& r : reports) EXPECT_TRUE(r.passed) << r.unit << " " << r.result.max_rel_error;
  for (const auto& r : reports) {
    GradSuiteOptions opt;
    opt.corrupt_unit = r.unit;
    for (const auto& c : run_grad_suite(opt))
      EXPECT_EQ(c.passed, c.unit != r.unit) << "corrupting " << r.unit << " affected " << c.unit;
  }
}
