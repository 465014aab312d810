#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "test_util.hpp"

using namespace gatiaa;
using testutil::random_matrix;

namespace {

BatchLayout layout_of(std::vector<std::size_t> counts) {
  BatchLayout l;
  std::size_t off = 0;
  for (std::size_t g = 0; g < counts.size(); ++g) {
    l.offsets.push_back(off);
    l.graph_index.insert(l.graph_index.end(), counts[g], g);
    off += counts[g];
  }
  l.counts = std::move(counts);
  return l;
}

Tensor<double> identity(std::size_t n) {
  auto t = Tensor<double>::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

Tensor<double> rows_of(std::size_t n, const std::vector<double>& u) {
  auto t = Tensor<double>::matrix(n, u.size());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < u.size(); ++c) t(r, c) = u[c];
  return t;
}

double leaky(double x, double s) { return x > 0 ? x : s * x; }

}  // namespace

TEST(Linear, IdentityWeightReturnsInput) {
  std::mt19937_64 rng(1);
  Linear<double> lin("l", 3, 3, rng);
  lin.weight.value = identity(3);
  Tape<double> t;
  const auto x = random_matrix<double>(4, 3, rng);
  EXPECT_EQ(lin.forward(t, t.constant(x)).value(), x);
}

TEST(Linear, ZeroWeightGivesBiasRows) {
  std::mt19937_64 rng(2);
  Linear<double> lin("l", 3, 2, rng);
  lin.weight.value = Tensor<double>::matrix(3, 2);
  lin.bias.value = Tensor<double>({1, 2}, {0.5, -1.5});
  Tape<double> t;
  const auto y = lin.forward(t, t.constant(random_matrix<double>(5, 3, rng))).value();
  for (std::size_t r = 0; r < 5; ++r) {
    EXPECT_EQ(y(r, 0), 0.5);
    EXPECT_EQ(y(r, 1), -1.5);
  }
}

TEST(Linear, MatchesMatmulPrimitive) {
  std::mt19937_64 rng(3);
  Linear<double> lin("l", 4, 2, rng);
  lin.bias.value = random_matrix<double>(1, 2, rng);
  const auto x = random_matrix<double>(3, 4, rng);
  Tape<double> t;
  const auto y = lin.forward(t, t.constant(x)).value();
  const auto ref = matmul(t.constant(x), t.constant(lin.weight.value)).value();
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_DOUBLE_EQ(y(r, c), ref(r, c) + lin.bias.value[c]);
}

TEST(Linear, InitBoundsAndZeroBias) {
  std::mt19937_64 rng(4);
  Linear<double> lin("l", 16, 8, rng);
  for (double w : lin.weight.value.data()) EXPECT_LE(std::abs(w), 0.25);
  for (double b : lin.bias.value.data()) EXPECT_EQ(b, 0.0);
}

TEST(Linear, WidthMismatchIsAnError) {
  std::mt19937_64 rng(5);
  Linear<double> lin("l", 4, 2, rng);
  Tape<double> t;
  EXPECT_THROW(lin.forward(t, t.constant(Tensor<double>::matrix(2, 3))), ShapeError);
}

TEST(Gcn, TwoNodesSwap) {
  std::mt19937_64 rng(6);
  GcnLayer<double> gcn("g", 3, 3, Aggregate::sum, rng);
  gcn.transform.weight.value = identity(3);
  const auto x = random_matrix<double>(2, 3, rng);
  Tape<double> t;
  const auto y = gcn.forward(t, t.constant(x), layout_of({2})).value();
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_DOUBLE_EQ(y(0, c), x(1, c));
    EXPECT_DOUBLE_EQ(y(1, c), x(0, c));
  }
}

TEST(Gcn, IdenticalNodesMeanIsFixedPoint) {
  std::mt19937_64 rng(7);
  GcnLayer<double> gcn("g", 3, 3, Aggregate::mean, rng);
  gcn.transform.weight.value = identity(3);
  const std::vector<double> u{0.3, -1.2, 2.0};
  Tape<double> t;
  const auto y = gcn.forward(t, t.constant(rows_of(5, u)), layout_of({5})).value();
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(y(r, c), u[c], 1e-12);
}

TEST(Gcn, SumMatchesPairLoop) {
  std::mt19937_64 rng(8);
  GcnLayer<double> gcn("g", 4, 3, Aggregate::sum, rng);
  gcn.transform.bias.value = random_matrix<double>(1, 3, rng);
  const auto x = random_matrix<double>(3, 4, rng);
  Tape<double> t;
  const auto y = gcn.forward(t, t.constant(x), layout_of({3})).value();
  const auto& W = gcn.transform.weight.value;
  const auto& b = gcn.transform.bias.value;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t o = 0; o < 3; ++o) {
      double acc = 0;
      for (std::size_t j = 0; j < 3; ++j) {
        if (j == i) continue;
        double wv = b[o];
        for (std::size_t k = 0; k < 4; ++k) wv += x(j, k) * W(k, o);
        acc += wv;
      }
      EXPECT_NEAR(y(i, o), acc, 1e-12);
    }
}

TEST(Gcn, SingleNodeGraphGivesZeros) {
  std::mt19937_64 rng(9);
  GcnLayer<double> gcn("g", 2, 2, Aggregate::mean, rng);
  gcn.transform.bias.value = Tensor<double>({1, 2}, {1.0, 1.0});
  Tape<double> t;
  const auto y = gcn.forward(t, t.constant(random_matrix<double>(1, 2, rng)), layout_of({1})).value();
  EXPECT_EQ(y, Tensor<double>::matrix(1, 2));
}

TEST(Gat, TwoNodesAttendFully) {
  std::mt19937_64 rng(10);
  GatLayer<double> gat("gat", 3, 2, 4, 3, HeadCombine::concat, false, rng);
  Tape<double> t;
  const auto out = gat.forward(t, t.constant(random_matrix<double>(2, 3, rng)), layout_of({2}), true);
  for (const auto& a : out.alpha[0]) {
    EXPECT_DOUBLE_EQ(a(0, 1), 1.0);
    EXPECT_DOUBLE_EQ(a(1, 0), 1.0);
    EXPECT_EQ(a(0, 0), 0.0);
  }
  EXPECT_EQ(out.nodes.cols(), 6u);
}

TEST(Gat, IdenticalNodesAttendUniformly) {
  std::mt19937_64 rng(11);
  GatLayer<double> gat("gat", 3, 2, 4, 2, HeadCombine::average, false, rng);
  Tape<double> t;
  const auto out = gat.forward(t, t.constant(rows_of(4, {0.5, -0.25, 1.0})), layout_of({4}), true);
  for (const auto& a : out.alpha[0])
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(a(i, j), i == j ? 0.0 : 1.0 / 3.0, 1e-12);
  const auto& y = out.nodes.value();
  EXPECT_EQ(y.cols(), 2u);
  for (std::size_t r = 1; r < 4; ++r)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(y(r, c), y(0, c), 1e-12);
}

// Literal transcription of the attention equations with explicit loops.
TEST(Gat, MatchesPairwiseOracle) {
  std::mt19937_64 rng(12);
  for (bool loops : {false, true})
    for (HeadCombine comb : {HeadCombine::concat, HeadCombine::average}) {
      const std::size_t n = 3, d_in = 4, d_head = 3, d_att = 2, K = 2;
      GatLayer<double> gat("gat", d_in, d_head, d_att, K, comb, loops, rng);
      const auto x = random_matrix<double>(n, d_in, rng);
      Tape<double> t;
      const auto out = gat.forward(t, t.constant(x), layout_of({n}), true);
      std::vector<std::vector<double>> expect(n, std::vector<double>(gat.out_dim(), 0.0));
      for (std::size_t k = 0; k < K; ++k) {
        const auto& W = gat.heads[k].value.value;
        const auto& U = gat.heads[k].attention.value;
        const auto& a = gat.heads[k].score.value;
        auto uv = [&](std::size_t i, std::size_t m) {
          double s = 0;
          for (std::size_t c = 0; c < d_in; ++c) s += U(c, m) * x(i, c);
          return s;
        };
        for (std::size_t i = 0; i < n; ++i) {
          std::vector<double> e(n, 0.0);
          double z = 0;
          for (std::size_t j = 0; j < n; ++j) {
            if (j == i && !loops) continue;
            double s = 0;
            for (std::size_t m = 0; m < d_att; ++m) s += a[m] * uv(i, m) + a[d_att + m] * uv(j, m);
            e[j] = std::exp(leaky(s, 0.2));
            z += e[j];
          }
          for (std::size_t j = 0; j < n; ++j) {
            const double alpha = e[j] / z;
            EXPECT_NEAR(out.alpha[0][k](i, j), alpha, 1e-12);
            for (std::size_t o = 0; o < d_head; ++o) {
              double wv = 0;
              for (std::size_t c = 0; c < d_in; ++c) wv += x(j, c) * W(c, o);
              if (comb == HeadCombine::concat)
                expect[i][k * d_head + o] += alpha * wv;
              else
                expect[i][o] += alpha * wv / static_cast<double>(K);
            }
          }
        }
      }
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < gat.out_dim(); ++o) EXPECT_NEAR(out.nodes.value()(i, o), expect[i][o], 1e-12);
    }
}

TEST(Gat, AttentionRowsSumToOne) {
  std::mt19937_64 rng(13);
  GatLayer<float> gat("gat", 5, 3, 4, 4, HeadCombine::concat, false, rng);
  const std::vector<std::size_t> counts{1, 2, 7, 12};
  Tape<float> t;
  const auto out = gat.forward(t, t.constant(random_matrix<float>(22, 5, rng, 3.0)), layout_of(counts), true);
  for (std::size_t g = 0; g < counts.size(); ++g)
    for (const auto& a : out.alpha[g])
      for (std::size_t i = 0; i < a.rows(); ++i) {
        double s = 0;
        for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j);
        // A lone node has no neighbours and keeps an all-zero row.
        EXPECT_NEAR(s, counts[g] == 1 ? 0.0 : 1.0, 1e-6) << "graph " << g;
      }
  for (std::size_t c = 0; c < out.nodes.cols(); ++c) EXPECT_EQ(out.nodes.value()(0, c), 0.0f);
}

TEST(Gat, HeadWidths) {
  std::mt19937_64 rng(14);
  EXPECT_EQ(GatLayer<float>("a", 4, 3, 2, 5, HeadCombine::concat, false, rng).out_dim(), 15u);
  EXPECT_EQ(GatLayer<float>("b", 4, 3, 2, 5, HeadCombine::average, false, rng).out_dim(), 3u);
  EXPECT_THROW(GatLayer<float>("c", 4, 3, 2, 0, HeadCombine::concat, false, rng), ValueError);
}

TEST(Gat, PerGraphIsolation) {
  std::mt19937_64 rng(15);
  GatLayer<float> gat("gat", 4, 3, 2, 2, HeadCombine::concat, false, rng);
  auto x = random_matrix<float>(9, 4, rng);
  const auto layout = layout_of({4, 5});
  Tape<float> t1;
  const auto before = gat.forward(t1, t1.constant(x), layout).nodes.value();
  for (std::size_t r = 4; r < 9; ++r)
    for (std::size_t c = 0; c < 4; ++c) x(r, c) = 0.0f;
  Tape<float> t2;
  const auto after = gat.forward(t2, t2.constant(x), layout).nodes.value();
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < after.cols(); ++c) EXPECT_EQ(after(r, c), before(r, c));
}

TEST(Gat, PermutationEquivariant) {
  std::mt19937_64 rng(16);
  GatLayer<float> gat("gat", 4, 3, 2, 3, HeadCombine::concat, false, rng);
  const auto x = random_matrix<float>(7, 4, rng);
  std::vector<std::size_t> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  auto px = x;
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t c = 0; c < 4; ++c) px(r, c) = x(perm[r], c);
  Tape<float> t;
  const auto y = gat.forward(t, t.constant(x), layout_of({7})).nodes.value();
  const auto py = gat.forward(t, t.constant(px), layout_of({7})).nodes.value();
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t c = 0; c < y.cols(); ++c) EXPECT_NEAR(py(r, c), y(perm[r], c), 1e-5);
}

TEST(Gat, EqualFeaturesReduceToMeanGcn) {
  std::mt19937_64 rng(17);
  GatLayer<double> gat("gat", 3, 2, 4, 2, HeadCombine::concat, false, rng);
  GcnLayer<double> gcn("gcn", 3, 4, Aggregate::mean, rng);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 2; ++c) gcn.transform.weight.value(r, k * 2 + c) = gat.heads[k].value.value(r, c);
  const auto x = rows_of(5, {0.7, -0.1, 0.4});
  Tape<double> t;
  const auto a = gat.forward(t, t.constant(x), layout_of({5})).nodes.value();
  const auto b = gcn.forward(t, t.constant(x), layout_of({5})).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
}

TEST(GraphSizeNorm, DividesByNodeCount) {
  Tape<double> t;
  const auto y = graph_size_norm(t.constant(Tensor<double>::matrix(4, 2, 8.0)), layout_of({4})).value();
  for (double v : y.data()) EXPECT_EQ(v, 2.0);
  const auto one = graph_size_norm(t.constant(Tensor<double>::matrix(1, 2, 3.0)), layout_of({1})).value();
  for (double v : one.data()) EXPECT_EQ(v, 3.0);
  const auto mixed = graph_size_norm(t.constant(Tensor<double>::matrix(7, 1, 10.0)), layout_of({2, 5})).value();
  for (std::size_t r = 0; r < 7; ++r) EXPECT_DOUBLE_EQ(mixed[r], r < 2 ? 5.0 : 2.0);
}

TEST(MeanPool, Examples) {
  Tape<double> t;
  const auto same = global_mean_pool(t.constant(rows_of(3, {1.0, -2.0})), layout_of({3})).value();
  EXPECT_DOUBLE_EQ(same(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(same(0, 1), -2.0);
  const auto opp = global_mean_pool(t.constant(Tensor<double>({2, 2}, {1.0, -3.0, -1.0, 3.0})), layout_of({2})).value();
  EXPECT_EQ(opp, Tensor<double>::matrix(1, 2));

  std::mt19937_64 rng(18);
  const auto x = random_matrix<double>(5, 3, rng);
  const auto m = global_mean_pool(t.constant(x), layout_of({5})).value();
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0;
    for (std::size_t r = 0; r < 5; ++r) s += x(r, c);
    EXPECT_NEAR(m(0, c), s / 5, 1e-15);
  }
}

TEST(GatPool, ZeroGateGivesNodeMean) {
  std::mt19937_64 rng(19);
  GatPool<double> pool("p", 3, 2, rng);
  for (auto& g : pool.gates) g.weight.value = Tensor<double>::matrix(3, 1);
  const auto x = random_matrix<double>(6, 3, rng);
  const auto layout = layout_of({2, 4});
  Tape<double> t;
  const auto y = pool.forward(t, t.constant(x), layout).value();
  const auto ref = global_mean_pool(t.constant(x), layout).value();
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(GatPool, SaturatedGatePicksOneNode) {
  std::mt19937_64 rng(20);
  GatPool<double> pool("p", 3, 1, rng);
  pool.gates[0].weight.value = Tensor<double>({3, 1}, {1.0, 0.0, 0.0});
  auto x = random_matrix<double>(4, 3, rng, 0.1);
  x(2, 0) = 60.0;
  Tape<double> t;
  const auto y = pool.forward(t, t.constant(x), layout_of({4})).value();
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(y(0, c), x(2, c), 1e-6);
}

TEST(GatPool, DuplicateHeadsEqualOneHead) {
  std::mt19937_64 rng(21);
  GatPool<double> one("p", 4, 1, rng), many("q", 4, 3, rng);
  for (auto& g : many.gates) g.weight.value = one.gates[0].weight.value;
  const auto x = random_matrix<double>(5, 4, rng);
  Tape<double> t;
  const auto a = one.forward(t, t.constant(x), layout_of({5})).value();
  const auto b = many.forward(t, t.constant(x), layout_of({5})).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
  EXPECT_EQ(b.cols(), 4u);
}

TEST(BatchNorm, EvalWithUnitStatsIsIdentity) {
  std::mt19937_64 rng(22);
  BatchNorm<double> bn("bn", 3);
  bn.epsilon = 0.0;
  const auto x = random_matrix<double>(4, 3, rng);
  Tape<double> t;
  const auto y = bn.forward(t, t.constant(x), Mode::eval).value();
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(BatchNorm, ConstantColumnNormalizesToZero) {
  BatchNorm<double> bn("bn", 1);
  Tape<double> t;
  const auto y = bn.forward(t, t.constant(Tensor<double>::matrix(5, 1, 4.2)), Mode::train).value();
  for (double v : y.data()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(BatchNorm, TwoRowsByHand) {
  BatchNorm<double> bn("bn", 2);
  bn.gamma.value = Tensor<double>({1, 2}, {2.0, 1.0});
  bn.beta.value = Tensor<double>({1, 2}, {0.5, 0.0});
  Tape<double> t;
  // Column 0: 1, 3 -> mean 2, biased var 1. Column 1: -2, 2 -> mean 0, var 4.
  const auto y = bn.forward(t, t.constant(Tensor<double>({2, 2}, {1.0, -2.0, 3.0, 2.0})), Mode::train).value();
  const double s0 = 1.0 / std::sqrt(1.0 + 1e-5), s1 = 2.0 / std::sqrt(4.0 + 1e-5);
  EXPECT_NEAR(y(0, 0), 2.0 * -1.0 * s0 + 0.5, 1e-12);
  EXPECT_NEAR(y(1, 0), 2.0 * 1.0 * s0 + 0.5, 1e-12);
  EXPECT_NEAR(y(0, 1), -s1, 1e-12);
  EXPECT_NEAR(y(1, 1), s1, 1e-12);
  // Running stats: momentum 0.1 toward mean and unbiased variance (2 and 8).
  EXPECT_NEAR(bn.running_mean[0], 0.2, 1e-12);
  EXPECT_NEAR(bn.running_mean[1], 0.0, 1e-12);
  EXPECT_NEAR(bn.running_var[0], 0.9 + 0.1 * 2.0, 1e-12);
  EXPECT_NEAR(bn.running_var[1], 0.9 + 0.1 * 8.0, 1e-12);
}

TEST(BatchNorm, SingleRowTrainIsAnError) {
  BatchNorm<double> bn("bn", 2);
  Tape<double> t;
  EXPECT_THROW(bn.forward(t, t.constant(Tensor<double>::matrix(1, 2)), Mode::train), ValueError);
  EXPECT_NO_THROW(bn.forward(t, t.constant(Tensor<double>::matrix(1, 2)), Mode::eval));
}

TEST(Dropout, IdentityCases) {
  std::mt19937_64 rng(23);
  const auto x = random_matrix<double>(3, 3, rng);
  Tape<double> t;
  const auto v = t.constant(x);
  EXPECT_EQ(dropout(v, 0.0, Mode::train, rng).value(), x);
  EXPECT_EQ(dropout(v, 0.0, Mode::eval, rng).value(), x);
  EXPECT_EQ(dropout(v, 0.8, Mode::eval, rng).value(), x);
  EXPECT_THROW(dropout(v, 1.0, Mode::train, rng), ValueError);
}

TEST(Dropout, SurvivorFractionAndMean) {
  std::mt19937_64 rng(24);
  const auto mask = dropout_mask<double>({1000, 1000}, 0.8, rng);
  std::size_t kept = 0;
  double total = 0;
  for (double m : mask.data()) {
    kept += m != 0.0;
    total += m;
  }
  EXPECT_NEAR(static_cast<double>(kept) / 1e6, 0.2, 0.002);
  EXPECT_NEAR(total / 1e6, 1.0, 0.01);
}

TEST(Dropout, SameSeedSameMask) {
  std::mt19937_64 a(25), b(25);
  EXPECT_EQ(dropout_mask<float>({10, 10}, 0.5, a), dropout_mask<float>({10, 10}, 0.5, b));
}
