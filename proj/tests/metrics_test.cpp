#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "test_util.hpp"

using namespace gatiaa;
using testutil::tiny_spec;

namespace {

// Definitional Pearson: covariance over the product of standard deviations.
double pearson_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  double cov = 0, vx = 0, vy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    cov += (x[i] - mx) * (y[i] - my);
    vx += (x[i] - mx) * (x[i] - mx);
    vy += (y[i] - my) * (y[i] - my);
  }
  return (cov / n) / (std::sqrt(vx / n) * std::sqrt(vy / n));
}

// Rank of x[i]: 1 + #smaller + (#equal - 1) / 2, by brute force.
std::vector<double> rank_oracle(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double less = 0, equal = 0;
    for (double v : x) {
      less += v < x[i];
      equal += v == x[i];
    }
    r[i] = 1 + less + (equal - 1) / 2;
  }
  return r;
}

std::vector<double> normal_vector(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

ScoreHistogram one_hot(std::size_t bin) {
  std::array<double, kScoreBins> w{};
  w[bin] = 1.0;
  return ScoreHistogram::normalized(w);
}

std::vector<FeatureGraph> labelled_with(const std::vector<double>& scores) {
  std::vector<FeatureGraph> out;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    FeatureGraph g;
    g.id = "m" + std::to_string(i);
    g.grid_w = g.grid_h = 1;
    g.nodes = Tensor<float>::matrix(1, 2);
    g.label = discretized_normal_histogram(scores[i], 1.0);
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace

TEST(MeanScore, Examples) {
  EXPECT_DOUBLE_EQ(mean_score(std::vector<double>(10, 0.1)), 5.5);
  EXPECT_NEAR(mean_score(ScoreHistogram{}), 5.5, 1e-6);
  EXPECT_DOUBLE_EQ(mean_score(one_hot(9)), 10.0);
  std::array<double, kScoreBins> half{};
  half[3] = 0.5;
  half[5] = 0.5;
  EXPECT_DOUBLE_EQ(mean_score(half), 5.0);
  half[5] = 0.6;
  EXPECT_THROW(mean_score(half), ValueError);
}

TEST(Plcc, Examples) {
  const std::vector<double> x{1, 4, 2, 8, 5};
  std::vector<double> y;
  for (double v : x) y.push_back(-2 * v + 7);
  EXPECT_NEAR(plcc(x, x), 1.0, 1e-15);
  EXPECT_NEAR(plcc(x, y), -1.0, 1e-15);
  EXPECT_THROW(plcc(x, std::vector<double>(5, 3.0)), ValueError);
  EXPECT_THROW(plcc(std::vector<double>{1}, std::vector<double>{2}), ValueError);
}

TEST(Plcc, MatchesDefinitionalOracle) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = normal_vector(1000, rng);
    auto y = normal_vector(1000, rng);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += 0.3 * trial * x[i];
    EXPECT_NEAR(plcc(x, y), pearson_oracle(x, y), 1e-12);
  }
}

TEST(Srcc, Examples) {
  const std::vector<double> x{0.1, 0.5, 0.3, 0.9};
  std::vector<double> up, down;
  for (double v : x) {
    up.push_back(std::exp(v));
    down.push_back(-v * v * v);
  }
  EXPECT_NEAR(srcc(x, up), 1.0, 1e-15);
  EXPECT_NEAR(srcc(x, down), -1.0, 1e-15);
  EXPECT_THROW(srcc(x, std::vector<double>(4, 1.0)), ValueError);
}

TEST(Srcc, TiesGetAverageRanks) {
  const std::vector<double> x{1, 2, 2, 3};
  EXPECT_EQ(fractional_ranks(x), (std::vector<double>{1, 2.5, 2.5, 4}));
  const std::vector<double> y{0.3, 0.1, 0.9, 0.4};
  EXPECT_NEAR(srcc(x, y), pearson_oracle(rank_oracle(x), rank_oracle(y)), 1e-15);
}

TEST(Srcc, MatchesBruteForceRanksWithManyTies) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> coarse(0, 20);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> x(300), y(300);
    for (auto& v : x) v = coarse(rng);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + coarse(rng);
    EXPECT_EQ(fractional_ranks(x), rank_oracle(x));
    EXPECT_NEAR(srcc(x, y), pearson_oracle(rank_oracle(x), rank_oracle(y)), 1e-12);
  }
}

TEST(Correlation, InvariantUnderIncreasingMaps) {
  std::mt19937_64 rng(3);
  const auto x = normal_vector(500, rng);
  auto y = normal_vector(500, rng);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += x[i];
  std::vector<double> ax, ay, mx;
  for (double v : x) {
    ax.push_back(3.5 * v - 2.0);
    mx.push_back(std::exp(2.0 * v));
  }
  for (double v : y) ay.push_back(0.25 * v + 10.0);
  EXPECT_NEAR(plcc(ax, y), plcc(x, y), 1e-12);
  EXPECT_NEAR(plcc(x, ay), plcc(x, y), 1e-12);
  EXPECT_NEAR(srcc(ax, ay), srcc(x, y), 1e-12);
  EXPECT_NEAR(srcc(mx, y), srcc(x, y), 1e-12);
}

TEST(Threshold, Examples) {
  const std::vector<double> s{2, 6, 7, 4.9, 5};
  const auto same = threshold_metrics(s, s);
  EXPECT_EQ(same.acc, 1.0);
  EXPECT_EQ(same.balanced_acc, 1.0);

  const auto half = threshold_metrics(std::vector<double>{6, 4, 7, 3}, std::vector<double>{6, 6, 6, 6});
  EXPECT_EQ(half.acc, 0.5);
  EXPECT_EQ(half.balanced_acc, 0.5);
  EXPECT_TRUE(half.class_missing);
}

TEST(Threshold, SkewedDataWithAllPositivePredictor) {
  std::vector<double> gt(100), pred(100, 8.0);
  for (std::size_t i = 0; i < 100; ++i) gt[i] = i < 70 ? 6.0 : 3.0;
  const auto m = threshold_metrics(pred, gt);
  EXPECT_DOUBLE_EQ(m.acc, 0.7);
  EXPECT_DOUBLE_EQ(m.balanced_acc, 0.5);
  EXPECT_FALSE(m.class_missing);
}

TEST(Threshold, BalancedClassesGiveEqualAccuracies) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(1, 10);
  std::vector<double> gt, pred;
  for (int i = 0; i < 200; ++i) {
    gt.push_back(i % 2 ? 7.0 : 3.0);
    pred.push_back(u(rng));
  }
  const auto m = threshold_metrics(pred, gt);
  EXPECT_EQ(m.acc, m.balanced_acc);
}

TEST(Threshold, ConfusionMarginalsAreClassCounts) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(1, 10);
  std::vector<double> gt(333), pred(333);
  for (auto& v : gt) v = u(rng);
  for (auto& v : pred) v = u(rng);
  const auto m = threshold_metrics(pred, gt);
  std::size_t gt1 = 0, pred1 = 0;
  for (double v : gt) gt1 += v >= 5;
  for (double v : pred) pred1 += v >= 5;
  EXPECT_EQ(m.confusion[1][0] + m.confusion[1][1], gt1);
  EXPECT_EQ(m.confusion[0][0] + m.confusion[0][1], 333 - gt1);
  EXPECT_EQ(m.confusion[0][1] + m.confusion[1][1], pred1);
  EXPECT_EQ(m.confusion[0][0] + m.confusion[0][1] + m.confusion[1][0] + m.confusion[1][1], 333u);
}

TEST(Evaluate, OracleModelScoresPerfectly) {
  const auto graphs = labelled_with({2.0, 3.5, 5.5, 6.0, 8.0, 9.0});
  std::vector<ScorePrediction> preds;
  for (const auto& g : graphs) {
    ScorePrediction p;
    std::array<double, kScoreBins> d{};
    for (std::size_t b = 0; b < kScoreBins; ++b) d[b] = (*g.label)[b];
    p.dist = d;
    p.score = mean_score(*g.label);
    preds.push_back(p);
  }
  const auto r = evaluate_predictions(graphs, preds);
  EXPECT_NEAR(*r.plcc, 1.0, 1e-12);
  EXPECT_NEAR(*r.srcc, 1.0, 1e-12);
  EXPECT_EQ(r.threshold.acc, 1.0);
  for (std::size_t b = 0; b < kScoreBins; ++b) EXPECT_NEAR(r.mean_pred_dist[b], r.mean_gt_dist[b], 1e-12);
  double total = 0;
  for (double v : r.mean_gt_dist) total += v;
  EXPECT_NEAR(total, 1.0, 1e-6);
}

TEST(Evaluate, ConstantModelReportsUndefinedCorrelation) {
  const auto graphs = labelled_with({2.0, 4.0, 6.0, 8.0});
  std::vector<ScorePrediction> preds(4, ScorePrediction{6.0, std::nullopt});
  const auto r = evaluate_predictions(graphs, preds);
  EXPECT_FALSE(r.plcc);
  EXPECT_FALSE(r.srcc);
  EXPECT_NE(r.correlation_error.find("zero variance"), std::string::npos);
  EXPECT_DOUBLE_EQ(r.threshold.acc, 0.5);
  std::ostringstream os;
  write_metrics_csv(os, r);
  EXPECT_NE(os.str().find("plcc,nan"), std::string::npos);
}

TEST(Evaluate, TrainedTinyModelReportIsFinite) {
  SynthConfig sc;
  sc.dim = 6;
  const auto data = synth_generate(1, 120, sc);
  const std::vector<FeatureGraph> train_set(data.begin(), data.begin() + 96), test(data.begin() + 96, data.end());
  Model<float> m(tiny_spec(Variant::GAT1_GATP), 1);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.lr0 = 3e-3;
  train(m, train_set, {}, cfg);
  const auto r = evaluate(m, test);
  EXPECT_EQ(r.count, 24u);
  ASSERT_TRUE(r.plcc && r.srcc);
  EXPECT_TRUE(std::isfinite(*r.plcc) && std::isfinite(*r.srcc));
  EXPECT_GE(r.threshold.acc, 0.0);
  for (double v : r.mean_pred_dist) EXPECT_TRUE(std::isfinite(v));
  std::ostringstream os;
  write_distribution_csv(os, r);
  const std::string csv = os.str();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 11);
  EXPECT_THROW(evaluate(m, {}), ValueError);
}
