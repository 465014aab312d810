#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gatiaa/autodiff.hpp"
#include "gatiaa/graph.hpp"

namespace gatiaa {

enum class Mode { train, eval };

// Row bookkeeping of a GraphBatch, detached from the node values so layers can
// run on any node matrix derived from the batch.
struct BatchLayout {
  std::vector<std::size_t> graph_index;
  std::vector<std::size_t> counts;
  std::vector<std::size_t> offsets;

  BatchLayout() = default;
  explicit BatchLayout(const GraphBatch& b) : graph_index(b.graph_index), counts(b.counts), offsets(b.offsets) {}

  std::size_t num_graphs() const noexcept { return counts.size(); }
  std::size_t num_rows() const noexcept { return graph_index.size(); }
};

template <typename T>
Tensor<T> uniform_init(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

// xW + b. Weight is (d_in, d_out), bias (1, d_out).
template <typename T>
struct Linear {
  Parameter<T> weight;
  Parameter<T> bias;
  bool has_bias = true;

  Linear() = default;
  Linear(const std::string& name, std::size_t d_in, std::size_t d_out, std::mt19937_64& rng, bool with_bias = true)
      : weight(name + ".weight", uniform_init<T>({d_in, d_out}, d_in, rng)),
        bias(name + ".bias", Tensor<T>::matrix(1, d_out)),
        has_bias(with_bias) {}

  std::size_t in_dim() const { return weight.value.rows(); }
  std::size_t out_dim() const { return weight.value.cols(); }

  Var<T> forward(Tape<T>& tape, const Var<T>& x) {
    if (x.value().rank() != 2 || x.cols() != in_dim())
      throw ShapeError("linear", x.shape(), weight.value.shape());
    Var<T> y = matmul(x, tape.parameter(weight));
    return has_bias ? add_row(y, tape.parameter(bias)) : y;
  }

  void collect(std::vector<Parameter<T>*>& out) {
    out.push_back(&weight);
    if (has_bias) out.push_back(&bias);
  }
};

enum class Aggregate { sum, mean };

// Plain message passing over the complete graph without self loops:
// v'_i = aggregate over j != i (same graph) of (W v_j + b).
template <typename T>
struct GcnLayer {
  Linear<T> transform;
  Aggregate aggregate = Aggregate::mean;

  GcnLayer() = default;
  GcnLayer(const std::string& name, std::size_t d_in, std::size_t d_out, Aggregate agg, std::mt19937_64& rng)
      : transform(name + ".linear", d_in, d_out, rng), aggregate(agg) {}

  // A node with no neighbours (single-node graph) gets the zero vector.
  Var<T> forward(Tape<T>& tape, const Var<T>& x, const BatchLayout& layout) {
    Var<T> h = transform.forward(tape, x);
    Var<T> totals = segment_sum(h, std::span<const std::size_t>(layout.graph_index), layout.num_graphs());
    Var<T> others = subtract(gather_rows(totals, std::span<const std::size_t>(layout.graph_index)), h);
    std::vector<T> f(layout.num_rows());
    for (std::size_t r = 0; r < f.size(); ++r) {
      const std::size_t n = layout.counts[layout.graph_index[r]];
      // n == 1 leaves `others` at h - h; force exact zeros.
      f[r] = n == 1 ? T(0) : (aggregate == Aggregate::mean ? T(1) / static_cast<T>(n - 1) : T(1));
    }
    return scale_rows(others, std::move(f));
  }

  void collect(std::vector<Parameter<T>*>& out) { transform.collect(out); }
};

enum class HeadCombine { concat, average };

inline std::vector<std::uint8_t> neighbour_mask(std::size_t n, bool self_loops) {
  std::vector<std::uint8_t> mask(n * n, 1);
  if (!self_loops)
    for (std::size_t i = 0; i < n; ++i) mask[i * n + i] = 0;
  return mask;
}

template <typename T>
struct GatOutput {
  Var<T> nodes;
  // alpha[graph][head] is the (n, n) attention matrix of that graph.
  std::vector<std::vector<Tensor<T>>> alpha;
};

// Multi-head graph attention over the complete graph of each batch member.
// Per head k: e_ij = LeakyReLU(a_k . [U_k v_i || U_k v_j]), alpha = softmax_j(e),
// head output sum_j alpha_ij W_k v_j. Heads are concatenated or averaged.
template <typename T>
struct GatLayer {
  struct Head {
    Parameter<T> value;      // W_k (d_in, d_head)
    Parameter<T> attention;  // U_k (d_in, d_att)
    Parameter<T> score;      // a_k (2 d_att, 1); first half scores the receiver, second the sender
  };

  std::vector<Head> heads;
  T leaky_slope = T(0.2);
  HeadCombine combine = HeadCombine::concat;
  bool self_loops = false;

  GatLayer() = default;
  GatLayer(const std::string& name, std::size_t d_in, std::size_t d_head, std::size_t d_att, std::size_t k,
           HeadCombine comb, bool loops, std::mt19937_64& rng)
      : combine(comb), self_loops(loops) {
    if (k < 1) throw ValueError("gat: head count must be at least 1");
    for (std::size_t h = 0; h < k; ++h) {
      const std::string p = name + ".head" + std::to_string(h);
      Head hd;
      hd.value = Parameter<T>(p + ".W", uniform_init<T>({d_in, d_head}, d_in, rng));
      hd.attention = Parameter<T>(p + ".U", uniform_init<T>({d_in, d_att}, d_in, rng));
      hd.score = Parameter<T>(p + ".a", uniform_init<T>({2 * d_att, 1}, 2 * d_att, rng));
      heads.push_back(std::move(hd));
    }
  }

  std::size_t in_dim() const { return heads.front().value.value.rows(); }
  std::size_t head_dim() const { return heads.front().value.value.cols(); }
  std::size_t att_dim() const { return heads.front().attention.value.cols(); }
  std::size_t out_dim() const { return combine == HeadCombine::concat ? heads.size() * head_dim() : head_dim(); }

  GatOutput<T> forward(Tape<T>& tape, const Var<T>& x, const BatchLayout& layout, bool keep_alpha = false) {
    if (x.value().rank() != 2 || x.cols() != in_dim())
      throw ShapeError("gat", x.shape(), heads.front().value.value.shape());
    const std::size_t d_att = att_dim();
    GatOutput<T> out;
    if (keep_alpha) out.alpha.assign(layout.num_graphs(), {});

    std::vector<Var<T>> head_outputs;
    for (auto& hd : heads) {
      Var<T> w = tape.parameter(hd.value);
      Var<T> u = tape.parameter(hd.attention);
      Var<T> a = tape.parameter(hd.score);
      // a . [U v_i || U v_j] = (U a_recv) . v_i + (U a_send) . v_j
      Var<T> recv = matmul(x, matmul(u, slice_rows(a, 0, d_att)));
      Var<T> send = matmul(x, matmul(u, slice_rows(a, d_att, d_att)));
      Var<T> values = matmul(x, w);

      std::vector<Var<T>> per_graph;
      for (std::size_t g = 0; g < layout.num_graphs(); ++g) {
        const std::size_t off = layout.offsets[g], n = layout.counts[g];
        Var<T> logits =
            leaky_relu(outer_add(slice_rows(recv, off, n), slice_rows(send, off, n)), leaky_slope);
        Var<T> alpha = masked_row_softmax(logits, neighbour_mask(n, self_loops));
        if (!alpha.value().all_finite()) throw ValueError("gat: non-finite attention weights");
        if (keep_alpha) out.alpha[g].push_back(alpha.value());
        per_graph.push_back(matmul(alpha, slice_rows(values, off, n)));
      }
      head_outputs.push_back(concat(per_graph, 0));
    }

    if (combine == HeadCombine::concat) {
      out.nodes = head_outputs.size() == 1 ? head_outputs.front() : concat(head_outputs, 1);
    } else {
      Var<T> acc = head_outputs.front();
      for (std::size_t k = 1; k < head_outputs.size(); ++k) acc = add(acc, head_outputs[k]);
      out.nodes = scale(acc, T(1) / static_cast<T>(head_outputs.size()));
    }
    return out;
  }

  void collect(std::vector<Parameter<T>*>& out) {
    for (auto& hd : heads) {
      out.push_back(&hd.value);
      out.push_back(&hd.attention);
      out.push_back(&hd.score);
    }
  }
};

// Soft-attention readout: per head, node weights are a softmax over the
// graph's nodes of gate(v_n); the pooled vector is the weighted node sum.
// Heads are averaged. Gates have no bias: a constant shift cancels in the softmax.
template <typename T>
struct GatPool {
  std::vector<Linear<T>> gates;

  GatPool() = default;
  GatPool(const std::string& name, std::size_t d_in, std::size_t k, std::mt19937_64& rng) {
    if (k < 1) throw ValueError("gatp: head count must be at least 1");
    for (std::size_t h = 0; h < k; ++h) gates.emplace_back(name + ".gate" + std::to_string(h), d_in, 1, rng, false);
  }

  Var<T> forward(Tape<T>& tape, const Var<T>& x, const BatchLayout& layout) {
    std::vector<Var<T>> node_slices;
    for (std::size_t g = 0; g < layout.num_graphs(); ++g)
      node_slices.push_back(slice_rows(x, layout.offsets[g], layout.counts[g]));
    Var<T> acc;
    for (auto& gate : gates) {
      Var<T> scores = gate.forward(tape, x);
      std::vector<Var<T>> pooled;
      for (std::size_t g = 0; g < layout.num_graphs(); ++g) {
        Var<T> weights = row_softmax(transpose(slice_rows(scores, layout.offsets[g], layout.counts[g])));
        pooled.push_back(matmul(weights, node_slices[g]));
      }
      Var<T> head = concat(pooled, 0);
      acc = acc.valid() ? add(acc, head) : head;
    }
    return gates.size() == 1 ? acc : scale(acc, T(1) / static_cast<T>(gates.size()));
  }

  void collect(std::vector<Parameter<T>*>& out) {
    for (auto& g : gates) g.collect(out);
  }
};

template <typename T>
Var<T> global_mean_pool(const Var<T>& x, const BatchLayout& layout) {
  return segment_mean(x, std::span<const std::size_t>(layout.graph_index), layout.num_graphs());
}

// Divides every node row of graph i by that graph's node count.
template <typename T>
Var<T> graph_size_norm(const Var<T>& x, const BatchLayout& layout) {
  std::vector<T> f(layout.num_rows());
  for (std::size_t r = 0; r < f.size(); ++r) f[r] = T(1) / static_cast<T>(layout.counts[layout.graph_index[r]]);
  return scale_rows(x, std::move(f));
}

// Batch normalization over all rows of the input (every node of every graph
// when applied to node matrices). Biased variance normalizes; the running
// variance tracks the unbiased estimate.
template <typename T>
struct BatchNorm {
  Parameter<T> gamma;
  Parameter<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T epsilon = T(1e-5);

  BatchNorm() = default;
  BatchNorm(const std::string& name, std::size_t dim)
      : gamma(name + ".gamma", Tensor<T>::matrix(1, dim, T(1))),
        beta(name + ".beta", Tensor<T>::matrix(1, dim)),
        running_mean(Tensor<T>::matrix(1, dim)),
        running_var(Tensor<T>::matrix(1, dim, T(1))) {}

  std::size_t dim() const { return gamma.value.cols(); }

  Var<T> forward(Tape<T>& tape, const Var<T>& x, Mode mode) {
    if (x.value().rank() != 2 || x.cols() != dim()) throw ShapeError("batch_norm", x.shape(), gamma.value.shape());
    const std::size_t m = x.rows();
    const std::vector<std::size_t> zeros(m, 0);
    const std::span<const std::size_t> all(zeros);
    Var<T> centered, inv_std;
    if (mode == Mode::train) {
      if (m < 2) throw ValueError("batch_norm: training needs at least 2 rows, got " + std::to_string(m));
      Var<T> mu = segment_mean(x, all, 1);
      centered = add_row(x, scale(mu, T(-1)));
      Var<T> var = segment_mean(multiply(centered, centered), all, 1);
      inv_std = exp(scale(log(add(var, tape.constant(Tensor<T>::matrix(1, dim(), epsilon)))), T(-0.5)));
      const T unbias = static_cast<T>(m) / static_cast<T>(m - 1);
      for (std::size_t j = 0; j < dim(); ++j) {
        running_mean[j] = (T(1) - momentum) * running_mean[j] + momentum * mu.value()[j];
        running_var[j] = (T(1) - momentum) * running_var[j] + momentum * var.value()[j] * unbias;
      }
    } else {
      Tensor<T> neg_mean = running_mean, inv = running_var;
      for (std::size_t j = 0; j < dim(); ++j) {
        neg_mean[j] = -neg_mean[j];
        inv[j] = T(1) / std::sqrt(inv[j] + epsilon);
      }
      centered = add_row(x, tape.constant(std::move(neg_mean)));
      inv_std = tape.constant(std::move(inv));
    }
    Var<T> normalized = multiply(centered, gather_rows(inv_std, all));
    Var<T> scaled = multiply(normalized, gather_rows(tape.parameter(gamma), all));
    return add_row(scaled, tape.parameter(beta));
  }

  void collect(std::vector<Parameter<T>*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

// Inverted dropout mask: each entry is 0 with probability p, else 1 / (1 - p).
template <typename T>
Tensor<T> dropout_mask(const Shape& shape, double p, std::mt19937_64& rng) {
  if (!(p >= 0.0) || !(p < 1.0)) throw ValueError("dropout: probability must be in [0, 1), got " + std::to_string(p));
  Tensor<T> mask(shape);
  std::bernoulli_distribution keep(1.0 - p);
  const T survivor = static_cast<T>(1.0 / (1.0 - p));
  for (auto& v : mask.data()) v = keep(rng) ? survivor : T(0);
  return mask;
}

template <typename T>
Var<T> dropout(const Var<T>& x, double p, Mode mode, std::mt19937_64& rng) {
  if (!(p >= 0.0) || !(p < 1.0)) throw ValueError("dropout: probability must be in [0, 1), got " + std::to_string(p));
  if (mode == Mode::eval || p == 0.0) return x;
  return multiply(x, x.tape().constant(dropout_mask<T>(x.shape(), p, rng)));
}

}  // namespace gatiaa
