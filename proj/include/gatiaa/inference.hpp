#pragma once

#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include "gatiaa/metrics.hpp"
#include "gatiaa/model.hpp"

namespace gatiaa {

// Worker count from GATIAA_THREADS, else the hardware concurrency; at least 1.
inline std::size_t worker_threads() {
  if (const char* env = std::getenv("GATIAA_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

template <typename T>
ScorePrediction to_prediction(const Tensor<T>& out, std::size_t row) {
  ScorePrediction p;
  if (out.cols() == 1) {
    p.score = static_cast<double>(out(row, 0));
    return p;
  }
  std::array<double, kScoreBins> d{};
  for (std::size_t b = 0; b < kScoreBins; ++b) d[b] = static_cast<double>(out(row, b));
  p.dist = d;
  double s = 0;
  for (std::size_t b = 0; b < kScoreBins; ++b) s += static_cast<double>(b + 1) * d[b];
  p.score = s;
  return p;
}

// Plain eval-mode forward of a single graph.
template <typename T>
ScorePrediction predict(Model<T>& model, const FeatureGraph& g) {
  return to_prediction(model.predict(batch({g})), 0);
}

// Eval-mode forward on all eight corner-crop/flip views, averaged bin-wise
// and renormalized (scalar heads average the score).
template <typename T>
ScorePrediction predict_augmented(Model<T>& model, const FeatureGraph& g) {
  std::vector<FeatureGraph> views;
  for (const auto& policy : all_augment_policies()) views.push_back(augment(g, policy));
  const Tensor<T> out = model.predict(batch(views));
  ScorePrediction p;
  if (out.cols() == 1) {
    for (std::size_t r = 0; r < out.rows(); ++r) p.score += static_cast<double>(out(r, 0));
    p.score /= static_cast<double>(out.rows());
    return p;
  }
  std::array<double, kScoreBins> d{};
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t b = 0; b < kScoreBins; ++b) d[b] += static_cast<double>(out(r, b));
  double total = 0;
  for (double v : d) total += v;
  if (total > 0)
    for (auto& v : d) v /= total;
  p.dist = d;
  for (std::size_t b = 0; b < kScoreBins; ++b) p.score += static_cast<double>(b + 1) * d[b];
  return p;
}

// Augmented predictions for every graph. Eval-mode forwards only read the
// model, so shards run on separate threads; results are placed by index and
// do not depend on the thread count.
template <typename T>
std::vector<ScorePrediction> predict_all(Model<T>& model, const std::vector<FeatureGraph>& graphs,
                                         std::size_t threads = 1, bool augmented = true) {
  std::vector<ScorePrediction> out(graphs.size());
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < graphs.size(); i += stride)
      out[i] = augmented ? predict_augmented(model, graphs[i]) : predict(model, graphs[i]);
  };
  threads = std::max<std::size_t>(1, std::min(threads, graphs.size()));
  if (threads == 1) {
    work(0, 1);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        work(t, threads);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

template <typename T>
EvalReport evaluate(Model<T>& model, const std::vector<FeatureGraph>& test, std::size_t threads = 1,
                    bool augmented = true) {
  if (test.empty()) throw ValueError("evaluate: empty test set");
  return evaluate_predictions(test, predict_all(model, test, threads, augmented));
}

}  // namespace gatiaa
