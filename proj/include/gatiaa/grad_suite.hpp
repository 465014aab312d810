#pragma once

#include <chrono>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gatiaa/grad_check.hpp"
#include "gatiaa/layers.hpp"
#include "gatiaa/model.hpp"
#include "gatiaa/training.hpp"

namespace gatiaa {

struct GradUnitReport {
  std::string unit;
  GradCheckResult result;
  double seconds = 0;
  bool passed = false;
};

struct GradSuiteOptions {
  double h = 1e-5;
  double tolerance = 1e-4;
  std::size_t max_coords = 48;
  std::uint64_t seed = 7;
  // Test hook: the named unit gets a backward pass that scales its output
  // gradient by 1.5, which the check must catch.
  std::string corrupt_unit;
};

namespace grad_suite_detail {

// Identity forward; backward scales the incoming gradient when `corrupt`.
inline Var<double> tap(const Var<double>& x, bool corrupt) {
  if (!corrupt) return x;
  const std::size_t ix = x.id();
  return x.tape().record("corrupt", x.value(), {x}, [ix](auto& s, const Tensor<double>& g) {
    if (!s.wants(ix)) return;
    auto& gx = s.at(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 1.5 * g[i];
  });
}

// Fixed random projection of the output to a scalar so no gradient entry is
// trivially zero by symmetry.
inline Var<double> project(Tape<double>& tape, const Var<double>& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor<double> w(out.shape());
  for (auto& v : w.data()) v = n(rng);
  return sum(multiply(out, tape.constant(std::move(w))));
}

inline GraphBatch mixed_batch(std::size_t dim, std::uint64_t seed,
                              const std::vector<std::pair<std::size_t, std::size_t>>& grids = {{2, 3}, {1, 1}, {3, 2}}) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::vector<FeatureGraph> gs;
  for (const auto& [w, h] : grids) {
    FeatureGraph g;
    g.id = "g" + std::to_string(gs.size());
    g.grid_w = w;
    g.grid_h = h;
    g.nodes = Tensor<float>::matrix(w * h, dim);
    for (auto& v : g.nodes.data()) v = n(rng);
    g.label = ScoreHistogram::normalized(std::array<double, kScoreBins>{1, 2, 3, 4, 5, 4, 3, 2, 1, 1});
    gs.push_back(std::move(g));
  }
  return batch(gs);
}

// Moves parameters off their initial values. Zero biases feeding a ReLU with
// an all-zero input row (a single-node graph after attention without self
// loops) would otherwise sit exactly on the kink.
inline void jitter(const std::vector<Parameter<double>*>& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.1);
  for (auto* p : params)
    for (auto& v : p->value.data()) v += n(rng);
}

inline Parameter<double> input_parameter(const GraphBatch& b) {
  return Parameter<double>("input", b.nodes.cast<double>());
}

}  // namespace grad_suite_detail

// Every unit under central differences in double precision: each layer on a
// batch that mixes graph sizes (including a single-node graph), then the full
// tiny three-layer GAT model with GATP readout.
inline std::vector<GradUnitReport> run_grad_suite(const GradSuiteOptions& opt = {}) {
  using namespace grad_suite_detail;
  constexpr std::size_t kDim = 6;
  const GraphBatch b = mixed_batch(kDim, opt.seed);
  const BatchLayout layout(b);
  std::vector<GradUnitReport> reports;

  auto run = [&](const std::string& unit, const std::function<Var<double>(Tape<double>&, bool)>& f,
                 const std::vector<Parameter<double>*>& params) {
    const bool corrupt = opt.corrupt_unit == unit;
    const auto t0 = std::chrono::steady_clock::now();
    GradUnitReport r;
    r.unit = unit;
    r.result = grad_check([&](Tape<double>& tape) { return f(tape, corrupt); }, params, opt.h, opt.max_coords,
                          opt.seed);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.passed = r.result.max_rel_error < opt.tolerance;
    reports.push_back(std::move(r));
  };

  std::mt19937_64 rng(opt.seed);
  {
    Parameter<double> x = input_parameter(b);
    Linear<double> lin("linear", kDim, 4, rng);
    std::vector<Parameter<double>*> ps{&x};
    lin.collect(ps);
    run("linear", [&](Tape<double>& t, bool c) { return project(t, tap(lin.forward(t, t.parameter(x)), c), 1); }, ps);
  }
  {
    Parameter<double> x = input_parameter(b);
    GcnLayer<double> gcn("gcn", kDim, 4, Aggregate::mean, rng);
    std::vector<Parameter<double>*> ps{&x};
    gcn.collect(ps);
    run("gcn", [&](Tape<double>& t, bool c) { return project(t, tap(gcn.forward(t, t.parameter(x), layout), c), 2); },
        ps);
  }
  {
    Parameter<double> x = input_parameter(b);
    GatLayer<double> gat("gat", kDim, 3, 4, 2, HeadCombine::concat, false, rng);
    std::vector<Parameter<double>*> ps{&x};
    gat.collect(ps);
    run("gat",
        [&](Tape<double>& t, bool c) { return project(t, tap(gat.forward(t, t.parameter(x), layout).nodes, c), 3); },
        ps);
  }
  {
    Parameter<double> x = input_parameter(b);
    run("graph_size_norm",
        [&](Tape<double>& t, bool c) { return project(t, tap(graph_size_norm(t.parameter(x), layout), c), 4); },
        {&x});
  }
  {
    Parameter<double> x = input_parameter(b);
    BatchNorm<double> bn("bn", kDim);
    std::normal_distribution<double> n(0.0, 0.5);
    for (auto& v : bn.gamma.value.data()) v = 1.0 + n(rng);
    for (auto& v : bn.beta.value.data()) v = n(rng);
    std::vector<Parameter<double>*> ps{&x};
    bn.collect(ps);
    run("batch_norm",
        [&](Tape<double>& t, bool c) { return project(t, tap(bn.forward(t, t.parameter(x), Mode::train), c), 5); },
        ps);
  }
  {
    Parameter<double> x = input_parameter(b);
    GatPool<double> pool("gatp", kDim, 2, rng);
    std::vector<Parameter<double>*> ps{&x};
    pool.collect(ps);
    run("gatp", [&](Tape<double>& t, bool c) { return project(t, tap(pool.forward(t, t.parameter(x), layout), c), 6); },
        ps);
  }
  {
    // Dropout disabled (eval mode) must be the identity, gradient included.
    Parameter<double> x = input_parameter(b);
    run("dropout_off",
        [&](Tape<double>& t, bool c) {
          std::mt19937_64 r(11);
          return project(t, tap(dropout(t.parameter(x), 0.5, Mode::eval, r), c), 7);
        },
        {&x});
  }
  {
    // Decoder stack on pooled vectors: dropout off, linear, relu, batch norm, linear, softmax.
    Parameter<double> x("pooled", Tensor<double>::matrix(4, kDim));
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& v : x.value.data()) v = n(rng);
    Linear<double> l1("decoder.linear1", kDim, 5, rng), l2("decoder.linear2", 5, kScoreBins, rng);
    BatchNorm<double> bn("decoder.bn", 5);
    std::vector<Parameter<double>*> ps{&x};
    l1.collect(ps);
    bn.collect(ps);
    l2.collect(ps);
    run("decoder",
        [&](Tape<double>& t, bool c) {
          std::mt19937_64 r(12);
          Var<double> h = dropout(t.parameter(x), 0.5, Mode::eval, r);
          h = bn.forward(t, relu(l1.forward(t, h)), Mode::train);
          return project(t, tap(row_softmax(l2.forward(t, h)), c), 8);
        },
        ps);
  }
  {
    ModelSpec s;
    s.variant = Variant::GAT3_GATP;
    s.d_in = kDim;
    s.d_enc = 8;
    s.d_att = 4;
    s.heads = 2;
    s.gat_layers = 3;
    s.d_dec = 5;
    s.drop_p = 0.0;
    Model<double> model(s, opt.seed);
    jitter(model.parameters(), opt.seed + 1);
    TrainConfig cfg;
    // Small graphs: GraphSizeNorm shrinks features by 1/N per layer, and on
    // large graphs the deepest attention gradients fall below what central
    // differences can resolve.
    const GraphBatch small = mixed_batch(kDim, opt.seed + 2, {{2, 1}, {1, 1}, {1, 2}, {2, 2}});
    run("model_gat3_gatp",
        [&](Tape<double>& t, bool c) {
          std::mt19937_64 r(13);
          Var<double> pred = tap(model.forward(t, small, Mode::train, r), c);
          return batch_loss(t, pred, small, cfg);
        },
        model.parameters());
  }
  return reports;
}

}  // namespace gatiaa
