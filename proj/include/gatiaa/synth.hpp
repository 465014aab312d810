#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "gatiaa/graph.hpp"

namespace gatiaa {

// Planted-signal dataset: node features are standard normal and the score is a
// known closed-form function of them, so learnability can be checked without
// real photographs.
struct SynthConfig {
  std::size_t dim = 32;
  std::size_t grid_w_min = 2, grid_w_max = 8;
  std::size_t grid_h_min = 2, grid_h_max = 6;
  double noise = 0.0;          // std of Gaussian noise added to the planted logit
  double label_std = 1.5;      // spread of the label histogram, in score units
  bool zero_features = false;  // test hook: all node features forced to 0
};

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// max over nodes of channel 0 plus half the mean of channel 1.
inline double planted_logit(const Tensor<float>& nodes) {
  double mx = -INFINITY, mean1 = 0;
  for (std::size_t r = 0; r < nodes.rows(); ++r) {
    mx = std::max(mx, static_cast<double>(nodes(r, 0)));
    mean1 += nodes(r, 1);
  }
  return mx + 0.5 * mean1 / static_cast<double>(nodes.rows());
}

inline double planted_score(double logit) { return 1.0 + 9.0 * logistic(logit); }

// Normal density around `score` integrated over each unit-wide bin centered on
// 1..10, renormalized to unit mass.
inline ScoreHistogram discretized_normal_histogram(double score, double std_dev) {
  auto cdf = [&](double x) { return 0.5 * std::erfc(-(x - score) / (std_dev * std::sqrt(2.0))); };
  std::array<double, kScoreBins> w{};
  for (std::size_t i = 0; i < kScoreBins; ++i) {
    const double center = static_cast<double>(i + 1);
    w[i] = cdf(center + 0.5) - cdf(center - 0.5);
  }
  return ScoreHistogram::normalized(w);
}

inline std::vector<FeatureGraph> synth_generate(std::uint64_t seed, std::size_t count, const SynthConfig& cfg) {
  if (count < 1) throw ValueError("synth: count must be at least 1");
  if (cfg.dim < 2) throw ValueError("synth: D must be at least 2");
  if (cfg.grid_w_min < 1 || cfg.grid_h_min < 1 || cfg.grid_w_min > cfg.grid_w_max || cfg.grid_h_min > cfg.grid_h_max)
    throw ValueError("synth: degenerate grid range");
  if (!(cfg.noise >= 0) || !(cfg.label_std > 0)) throw ValueError("synth: noise must be >= 0 and label_std > 0");

  std::vector<FeatureGraph> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    // Per-graph stream so graph i does not depend on `count`.
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i)};
    std::mt19937_64 rng(seq);
    std::uniform_int_distribution<std::size_t> wdist(cfg.grid_w_min, cfg.grid_w_max);
    std::uniform_int_distribution<std::size_t> hdist(cfg.grid_h_min, cfg.grid_h_max);
    std::normal_distribution<double> normal(0.0, 1.0);

    FeatureGraph g;
    char id[48];
    std::snprintf(id, sizeof id, "synth_%06zu", i);
    g.id = id;
    g.grid_w = wdist(rng);
    g.grid_h = hdist(rng);
    g.nodes = Tensor<float>::matrix(g.grid_w * g.grid_h, cfg.dim);
    if (!cfg.zero_features)
      for (auto& v : g.nodes.data()) v = static_cast<float>(normal(rng));
    double z = planted_logit(g.nodes);
    if (cfg.noise > 0) z += cfg.noise * normal(rng);
    g.label = discretized_normal_histogram(planted_score(z), cfg.label_std);
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace gatiaa
