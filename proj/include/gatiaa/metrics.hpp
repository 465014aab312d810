#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gatiaa/graph.hpp"

namespace gatiaa {

// Weighted average of bin scores 1..10.
inline double mean_score(std::span<const double> bins) {
  if (bins.size() != kScoreBins) throw ValueError("mean_score: expected 10 bins, got " + std::to_string(bins.size()));
  double total = 0, score = 0;
  for (std::size_t i = 0; i < bins.size(); ++i) {
    if (!(bins[i] >= 0)) throw ValueError("mean_score: negative or non-finite bin");
    total += bins[i];
    score += static_cast<double>(i + 1) * bins[i];
  }
  if (std::abs(total - 1.0) > 1e-6) throw ValueError("mean_score: histogram is not normalized (sum " + std::to_string(total) + ")");
  return score;
}

inline double mean_score(const ScoreHistogram& h) {
  std::array<double, kScoreBins> b{};
  for (std::size_t i = 0; i < kScoreBins; ++i) b[i] = h[i];
  return mean_score(b);
}

// Pearson linear correlation (two-pass, double precision).
inline double plcc(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValueError("plcc: length mismatch");
  if (x.size() < 2) throw ValueError("plcc: need at least 2 samples");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0 || syy == 0) throw ValueError("plcc: zero variance");
  return sxy / std::sqrt(sxx * syy);
}

// 1-based ranks; tied values share the average of the ranks they span.
inline std::vector<double> fractional_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double srcc(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValueError("srcc: length mismatch");
  if (x.size() < 2) throw ValueError("srcc: need at least 2 samples");
  const auto rx = fractional_ranks(x), ry = fractional_ranks(y);
  try {
    return plcc(rx, ry);
  } catch (const ValueError&) {
    throw ValueError("srcc: all values equal");
  }
}

struct ThresholdMetrics {
  double acc = 0;
  double balanced_acc = 0;
  // confusion[gt][pred], class 1 = score >= threshold
  std::array<std::array<std::size_t, 2>, 2> confusion{};
  bool class_missing = false;  // balanced accuracy averaged over one class only
};

inline ThresholdMetrics threshold_metrics(std::span<const double> pred, std::span<const double> gt, double tau = 5.0) {
  if (pred.size() != gt.size()) throw ValueError("threshold_metrics: length mismatch");
  if (pred.empty()) throw ValueError("threshold_metrics: no samples");
  ThresholdMetrics m;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int g = gt[i] >= tau ? 1 : 0, p = pred[i] >= tau ? 1 : 0;
    ++m.confusion[g][p];
    correct += g == p;
  }
  m.acc = static_cast<double>(correct) / static_cast<double>(pred.size());
  double recall_sum = 0;
  int present = 0;
  for (int c = 0; c < 2; ++c) {
    const std::size_t total = m.confusion[c][0] + m.confusion[c][1];
    if (total == 0) continue;
    recall_sum += static_cast<double>(m.confusion[c][c]) / static_cast<double>(total);
    ++present;
  }
  m.balanced_acc = recall_sum / present;
  m.class_missing = present < 2;
  return m;
}

// One prediction: the mean score and, for histogram heads, the distribution.
struct ScorePrediction {
  double score = 0;
  std::optional<std::array<double, kScoreBins>> dist;
};

struct EvalReport {
  std::size_t count = 0;
  std::optional<double> plcc;
  std::optional<double> srcc;
  std::string correlation_error;  // set when PLCC/SRCC are undefined
  ThresholdMetrics threshold;
  std::array<double, kScoreBins> mean_pred_dist{};
  std::array<double, kScoreBins> mean_gt_dist{};
  std::vector<double> pred_scores;
  std::vector<double> gt_scores;
};

// Scores predictions against the labelled graphs they were made for.
inline EvalReport evaluate_predictions(const std::vector<FeatureGraph>& graphs,
                                       const std::vector<ScorePrediction>& preds) {
  if (graphs.empty()) throw ValueError("evaluate: empty test set");
  if (graphs.size() != preds.size()) throw ValueError("evaluate: prediction count mismatch");
  EvalReport r;
  r.count = graphs.size();
  std::size_t with_dist = 0;
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    if (!graphs[i].label) throw ValueError("evaluate: graph '" + graphs[i].id + "' has no label");
    const auto& gt = *graphs[i].label;
    r.gt_scores.push_back(mean_score(gt));
    r.pred_scores.push_back(preds[i].score);
    for (std::size_t b = 0; b < kScoreBins; ++b) r.mean_gt_dist[b] += gt[b];
    if (preds[i].dist) {
      ++with_dist;
      for (std::size_t b = 0; b < kScoreBins; ++b) r.mean_pred_dist[b] += (*preds[i].dist)[b];
    }
  }
  for (auto& v : r.mean_gt_dist) v /= static_cast<double>(r.count);
  for (auto& v : r.mean_pred_dist) v = with_dist ? v / static_cast<double>(with_dist) : 0.0;
  try {
    r.plcc = plcc(r.pred_scores, r.gt_scores);
    r.srcc = srcc(r.pred_scores, r.gt_scores);
  } catch (const ValueError& e) {
    r.correlation_error = e.what();
  }
  r.threshold = threshold_metrics(r.pred_scores, r.gt_scores);
  return r;
}

inline std::string format_metric(const std::optional<double>& v) {
  if (!v) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", *v);
  return buf;
}

// Scalar metrics block followed by the 2x2 confusion block.
inline void write_metrics_csv(std::ostream& os, const EvalReport& r) {
  os << "metric,value\n";
  os << "count," << r.count << '\n';
  os << "plcc," << format_metric(r.plcc) << '\n';
  os << "srcc," << format_metric(r.srcc) << '\n';
  os << "acc," << format_metric(r.threshold.acc) << '\n';
  os << "balanced_acc," << format_metric(r.threshold.balanced_acc) << '\n';
  os << "class_missing," << (r.threshold.class_missing ? 1 : 0) << '\n';
  os << '\n';
  os << "gt_label,pred_0,pred_1\n";
  for (int g = 0; g < 2; ++g) os << g << ',' << r.threshold.confusion[g][0] << ',' << r.threshold.confusion[g][1] << '\n';
}

inline void write_distribution_csv(std::ostream& os, const EvalReport& r) {
  os << "bin,mean_pred,mean_gt\n";
  for (std::size_t b = 0; b < kScoreBins; ++b)
    os << b + 1 << ',' << format_metric(r.mean_pred_dist[b]) << ',' << format_metric(r.mean_gt_dist[b]) << '\n';
}

}  // namespace gatiaa
