#pragma once

#include <charconv>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gatiaa/layers.hpp"

namespace gatiaa {

enum class Variant { AvgPoolFC, AvgPoolED, GCN_GMP, GAT1_GMP, GAT1_GATP, GAT3_GATP };

inline constexpr Variant kAllVariants[] = {Variant::AvgPoolFC, Variant::AvgPoolED, Variant::GCN_GMP,
                                           Variant::GAT1_GMP,  Variant::GAT1_GATP, Variant::GAT3_GATP};

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::AvgPoolFC: return "AvgPoolFC";
    case Variant::AvgPoolED: return "AvgPoolED";
    case Variant::GCN_GMP: return "GCN_GMP";
    case Variant::GAT1_GMP: return "GAT1_GMP";
    case Variant::GAT1_GATP: return "GAT1_GATP";
    case Variant::GAT3_GATP: return "GAT3_GATP";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : kAllVariants)
    if (to_string(v) == s) return v;
  throw ConfigError("model.variant", "unknown variant '" + s + "'");
}

enum class FinalActivation { softmax, none };

struct ModelSpec {
  Variant variant = Variant::GAT3_GATP;
  std::size_t d_in = 16928;
  std::size_t d_enc = 2048;
  std::size_t d_att = 64;
  std::size_t heads = 16;
  std::size_t gat_layers = 3;
  std::size_t d_dec = 1024;
  std::size_t bins = 10;  // 10: score histogram; 1: scalar mean-score head
  double drop_p = 0.8;
  FinalActivation final_activation = FinalActivation::softmax;
  HeadCombine head_combine = HeadCombine::concat;
  bool self_loops = false;
  Aggregate gcn_aggregate = Aggregate::mean;
  double leaky_slope = 0.2;

  bool uses_graph_layers() const { return variant != Variant::AvgPoolFC && variant != Variant::AvgPoolED; }
  bool uses_gat() const { return variant == Variant::GAT1_GMP || variant == Variant::GAT1_GATP || variant == Variant::GAT3_GATP; }
  bool uses_gatp() const { return variant == Variant::GAT1_GATP || variant == Variant::GAT3_GATP; }
  bool uses_encoder() const { return variant != Variant::AvgPoolFC; }

  std::size_t message_passing_layers() const {
    switch (variant) {
      case Variant::AvgPoolFC:
      case Variant::AvgPoolED: return 0;
      case Variant::GCN_GMP:
      case Variant::GAT1_GMP:
      case Variant::GAT1_GATP: return 1;
      case Variant::GAT3_GATP: return gat_layers;
    }
    return 0;
  }

  // Per-head value width: concatenated heads keep the encoder width.
  std::size_t head_dim() const { return head_combine == HeadCombine::concat ? d_enc / heads : d_enc; }

  void validate() const {
    auto positive = [](const char* key, std::size_t v) {
      if (v < 1) throw ConfigError(key, "must be at least 1");
    };
    positive("model.dIn", d_in);
    positive("model.dEnc", d_enc);
    positive("model.dAtt", d_att);
    positive("model.K", heads);
    positive("model.dDec", d_dec);
    if (bins != 10 && bins != 1) throw ConfigError("model.bins", "must be 10 (histogram) or 1 (scalar score)");
    if (bins == 1 && final_activation == FinalActivation::softmax)
      throw ConfigError("model.finalActivation", "softmax needs a 10-bin head; use none with bins=1");
    if (variant == Variant::GAT3_GATP && gat_layers < 1) throw ConfigError("model.gatLayers", "must be at least 1");
    if (uses_gat() && head_combine == HeadCombine::concat && d_enc % heads != 0)
      throw ConfigError("model.K", "dEnc must be divisible by K when heads are concatenated");
    if (!(drop_p >= 0.0 && drop_p < 1.0)) throw ConfigError("model.dropP", "must be in [0, 1)");
    if (!(leaky_slope >= 0.0)) throw ConfigError("model.leakySlope", "must be nonnegative");
  }

  // Canonical key=value form, one per line, sorted by key.
  std::map<std::string, std::string> to_map() const {
    std::map<std::string, std::string> m;
    m["model.variant"] = to_string(variant);
    m["model.dIn"] = std::to_string(d_in);
    m["model.dEnc"] = std::to_string(d_enc);
    m["model.dAtt"] = std::to_string(d_att);
    m["model.K"] = std::to_string(heads);
    m["model.gatLayers"] = std::to_string(gat_layers);
    m["model.dDec"] = std::to_string(d_dec);
    m["model.bins"] = std::to_string(bins);
    m["model.dropP"] = format_double(drop_p);
    m["model.finalActivation"] = final_activation == FinalActivation::softmax ? "softmax" : "none";
    m["model.headCombine"] = head_combine == HeadCombine::concat ? "concat" : "average";
    m["model.selfLoops"] = self_loops ? "true" : "false";
    m["model.gcnAggregate"] = gcn_aggregate == Aggregate::mean ? "mean" : "sum";
    m["model.leakySlope"] = format_double(leaky_slope);
    return m;
  }

  // Applies one `model.*` key. Returns false if the key is not a model key.
  bool set(const std::string& key, const std::string& value) {
    auto as_size = [&](std::size_t& dst) { dst = parse_size(key, value); };
    if (key == "model.variant") variant = parse_variant(value);
    else if (key == "model.dIn") as_size(d_in);
    else if (key == "model.dEnc") as_size(d_enc);
    else if (key == "model.dAtt") as_size(d_att);
    else if (key == "model.K") as_size(heads);
    else if (key == "model.gatLayers") as_size(gat_layers);
    else if (key == "model.dDec") as_size(d_dec);
    else if (key == "model.bins") as_size(bins);
    else if (key == "model.dropP") drop_p = parse_double(key, value);
    else if (key == "model.leakySlope") leaky_slope = parse_double(key, value);
    else if (key == "model.finalActivation") {
      if (value == "softmax") final_activation = FinalActivation::softmax;
      else if (value == "none") final_activation = FinalActivation::none;
      else throw ConfigError(key, "expected softmax or none");
    } else if (key == "model.headCombine") {
      if (value == "concat") head_combine = HeadCombine::concat;
      else if (value == "average") head_combine = HeadCombine::average;
      else throw ConfigError(key, "expected concat or average");
    } else if (key == "model.selfLoops") self_loops = parse_bool(key, value);
    else if (key == "model.gcnAggregate") {
      if (value == "mean") gcn_aggregate = Aggregate::mean;
      else if (value == "sum") gcn_aggregate = Aggregate::sum;
      else throw ConfigError(key, "expected mean or sum");
    } else return false;
    return true;
  }

  // Shortest text that parses back to exactly `v`.
  static std::string format_double(double v) {
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  }
  static std::size_t parse_size(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    unsigned long long out = 0;
    try {
      out = std::stoull(v, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != v.size() || v.front() == '-') throw ConfigError(key, "expected a nonnegative integer, got '" + v + "'");
    return static_cast<std::size_t>(out);
  }
  static double parse_double(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double out = 0;
    try {
      out = std::stod(v, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != v.size()) throw ConfigError(key, "expected a number, got '" + v + "'");
    return out;
  }
  static bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key, "expected true or false");
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Closed-form parameter count of the stack build_model creates for `spec`.
inline std::size_t parameter_count(const ModelSpec& s) {
  const std::size_t out = s.bins;
  if (s.variant == Variant::AvgPoolFC) return s.d_in * out + out;
  std::size_t n = s.d_in * s.d_enc + s.d_enc + 2 * s.d_enc;         // encoder linear + batch norm
  n += s.d_enc * s.d_dec + s.d_dec + 2 * s.d_dec + s.d_dec * out + out;  // decoder
  const std::size_t layers = s.message_passing_layers();
  if (s.variant == Variant::GCN_GMP) n += layers * (s.d_enc * s.d_enc + s.d_enc);
  if (s.uses_gat()) n += layers * s.heads * (s.d_enc * s.head_dim() + s.d_enc * s.d_att + 2 * s.d_att);
  if (s.uses_gatp()) n += s.heads * s.d_enc;
  return n;
}

// Encoder -> message passing blocks -> readout -> decoder, with blocks present
// or absent per variant:
//   AvgPoolFC:  mean pool -> Linear(dIn, bins)
//   AvgPoolED:  mean pool -> encoder -> decoder
//   GCN_GMP:    encoder -> 1 x [dropout, GCN, ReLU, GraphSizeNorm] -> mean pool -> decoder
//   GAT1_GMP:   encoder -> 1 x [dropout, GAT, ReLU, GraphSizeNorm] -> mean pool -> decoder
//   GAT1_GATP:  as GAT1_GMP with attention readout
//   GAT3_GATP:  gatLayers x GAT blocks with attention readout
// encoder = [Linear(dIn, dEnc), ReLU, BatchNorm]
// decoder = [Dropout, Linear(dEnc, dDec), ReLU, BatchNorm, Linear(dDec, bins), final activation]
template <typename T>
class Model {
 public:
  Model() = default;

  Model(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    std::mt19937_64 rng(seed);
    if (spec_.variant == Variant::AvgPoolFC) {
      head_ = Linear<T>("head", spec_.d_in, spec_.bins, rng);
      return;
    }
    enc_linear_ = Linear<T>("encoder.linear", spec_.d_in, spec_.d_enc, rng);
    enc_norm_ = BatchNorm<T>("encoder.bn", spec_.d_enc);
    for (std::size_t l = 0; l < spec_.message_passing_layers(); ++l) {
      const std::string name = "mp" + std::to_string(l);
      if (spec_.variant == Variant::GCN_GMP)
        gcn_.emplace_back(name + ".gcn", spec_.d_enc, spec_.d_enc, spec_.gcn_aggregate, rng);
      else
        gat_.emplace_back(name + ".gat", spec_.d_enc, spec_.head_dim(), spec_.d_att, spec_.heads, spec_.head_combine,
                          spec_.self_loops, rng);
    }
    for (auto& g : gat_) g.leaky_slope = static_cast<T>(spec_.leaky_slope);
    if (spec_.uses_gatp()) pool_ = GatPool<T>("readout", spec_.d_enc, spec_.heads, rng);
    dec_linear1_ = Linear<T>("decoder.linear1", spec_.d_enc, spec_.d_dec, rng);
    dec_norm_ = BatchNorm<T>("decoder.bn", spec_.d_dec);
    dec_linear2_ = Linear<T>("decoder.linear2", spec_.d_dec, spec_.bins, rng);
  }

  const ModelSpec& spec() const noexcept { return spec_; }

  // Returns (graphs, bins) predictions. `rng` drives dropout in train mode.
  Var<T> forward(Tape<T>& tape, const GraphBatch& batch, Mode mode, std::mt19937_64& rng) {
    if (batch.dim() != spec_.d_in)
      throw ShapeError("model.forward", "batch width " + std::to_string(batch.dim()) + " does not match dIn " +
                                            std::to_string(spec_.d_in));
    const BatchLayout layout(batch);
    Var<T> x = tape.constant(batch.nodes.template cast<T>());

    if (spec_.variant == Variant::AvgPoolFC) return finish(head_.forward(tape, global_mean_pool(x, layout)));

    Var<T> h;
    if (!spec_.uses_graph_layers()) {
      h = encode(tape, global_mean_pool(x, layout), mode);
    } else {
      h = encode(tape, x, mode);
      for (std::size_t l = 0; l < spec_.message_passing_layers(); ++l) {
        h = dropout(h, spec_.drop_p, mode, rng);
        h = spec_.variant == Variant::GCN_GMP ? gcn_[l].forward(tape, h, layout) : gat_[l].forward(tape, h, layout).nodes;
        h = graph_size_norm(relu(h), layout);
      }
      h = spec_.uses_gatp() ? pool_.forward(tape, h, layout) : global_mean_pool(h, layout);
    }
    h = dropout(h, spec_.drop_p, mode, rng);
    h = dec_norm_.forward(tape, relu(dec_linear1_.forward(tape, h)), mode);
    return finish(dec_linear2_.forward(tape, h));
  }

  // Inference helper: eval-mode forward returning plain values.
  Tensor<T> predict(const GraphBatch& batch) {
    Tape<T> tape;
    std::mt19937_64 unused(0);
    return forward(tape, batch, Mode::eval, unused).value();
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    if (spec_.variant == Variant::AvgPoolFC) {
      head_.collect(out);
      return out;
    }
    enc_linear_.collect(out);
    enc_norm_.collect(out);
    for (auto& g : gcn_) g.collect(out);
    for (auto& g : gat_) g.collect(out);
    if (spec_.uses_gatp()) pool_.collect(out);
    dec_linear1_.collect(out);
    dec_norm_.collect(out);
    dec_linear2_.collect(out);
    return out;
  }

  // Non-trainable state saved alongside parameters (batch-norm running stats).
  std::vector<std::pair<std::string, Tensor<T>*>> buffers() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    if (spec_.variant == Variant::AvgPoolFC) return out;
    out.emplace_back("encoder.bn.running_mean", &enc_norm_.running_mean);
    out.emplace_back("encoder.bn.running_var", &enc_norm_.running_var);
    out.emplace_back("decoder.bn.running_mean", &dec_norm_.running_mean);
    out.emplace_back("decoder.bn.running_var", &dec_norm_.running_var);
    return out;
  }

  std::size_t num_parameters() {
    std::size_t n = 0;
    for (auto* p : parameters()) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  std::vector<GatLayer<T>>& gat_layers() { return gat_; }
  std::vector<GcnLayer<T>>& gcn_layers() { return gcn_; }

 private:
  Var<T> encode(Tape<T>& tape, const Var<T>& x, Mode mode) {
    return enc_norm_.forward(tape, relu(enc_linear_.forward(tape, x)), mode);
  }

  Var<T> finish(const Var<T>& logits) {
    return spec_.final_activation == FinalActivation::softmax ? row_softmax(logits) : logits;
  }

  ModelSpec spec_;
  Linear<T> head_;
  Linear<T> enc_linear_;
  BatchNorm<T> enc_norm_;
  std::vector<GcnLayer<T>> gcn_;
  std::vector<GatLayer<T>> gat_;
  GatPool<T> pool_;
  Linear<T> dec_linear1_;
  BatchNorm<T> dec_norm_;
  Linear<T> dec_linear2_;
};

template <typename T>
Model<T> build_model(const ModelSpec& spec, std::uint64_t seed) {
  return Model<T>(spec, seed);
}

}  // namespace gatiaa
