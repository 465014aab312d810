#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gatiaa/error.hpp"
#include "gatiaa/tensor.hpp"

namespace gatiaa {

inline constexpr std::size_t kScoreBins = 10;

// Normalized 10-bin rating histogram; bin i (0-based) holds score i + 1.
class ScoreHistogram {
 public:
  using Bins = std::array<float, kScoreBins>;

  ScoreHistogram() { bins_.fill(1.0f / kScoreBins); }

  // Validates nonnegativity and unit mass (within 1e-6).
  static ScoreHistogram from_bins(const Bins& bins) {
    double total = 0;
    for (float b : bins) {
      if (!(b >= 0.0f) || !std::isfinite(b)) throw ValueError("score histogram: bins must be finite and nonnegative");
      total += b;
    }
    if (std::abs(total - 1.0) > 1e-6)
      throw ValueError("score histogram: bins sum to " + std::to_string(total) + ", expected 1");
    ScoreHistogram h;
    h.bins_ = bins;
    return h;
  }

  // Rescales nonnegative weights to unit mass.
  template <typename Range>
  static ScoreHistogram normalized(const Range& weights) {
    double total = 0;
    std::size_t i = 0;
    for (double w : weights) {
      if (i >= kScoreBins) throw ValueError("score histogram: expected 10 bins");
      if (!(w >= 0) || !std::isfinite(w)) throw ValueError("score histogram: weights must be finite and nonnegative");
      total += w;
      ++i;
    }
    if (i != kScoreBins) throw ValueError("score histogram: expected 10 bins");
    if (!(total > 0)) throw ValueError("score histogram: weights sum to zero");
    ScoreHistogram h;
    i = 0;
    for (double w : weights) h.bins_[i++] = static_cast<float>(w / total);
    return h;
  }

  const Bins& bins() const noexcept { return bins_; }
  float operator[](std::size_t i) const { return bins_[i]; }

  friend bool operator==(const ScoreHistogram&, const ScoreHistogram&) = default;

 private:
  Bins bins_{};
};

// Raw CNN activation block of shape (depth, width, height), stored C-order:
// element (c, x, y) lives at (c * width + x) * height + y.
struct FeatureMap {
  std::size_t depth = 0;
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> data;

  FeatureMap() = default;
  FeatureMap(std::size_t d, std::size_t w, std::size_t h, float fill = 0.0f)
      : depth(d), width(w), height(h), data(d * w * h, fill) {}
  FeatureMap(std::size_t d, std::size_t w, std::size_t h, std::vector<float> values)
      : depth(d), width(w), height(h), data(std::move(values)) {
    if (data.size() != d * w * h)
      throw ShapeError("feature_map", "shape (" + std::to_string(d) + "," + std::to_string(w) + "," +
                                          std::to_string(h) + ") does not hold " + std::to_string(data.size()) +
                                          " values");
  }

  float& at(std::size_t c, std::size_t x, std::size_t y) { return data[(c * width + x) * height + y]; }
  float at(std::size_t c, std::size_t x, std::size_t y) const { return data[(c * width + x) * height + y]; }
};

// One image as a complete graph over the cells of a width x height grid.
// Row r of `nodes` is grid cell (row r / width, column r % width). Edges are
// implicit: every node is adjacent to every other node, no self loops.
struct FeatureGraph {
  std::string id;
  std::size_t grid_w = 0;
  std::size_t grid_h = 0;
  Tensor<float> nodes;  // (grid_w * grid_h, D)
  std::optional<ScoreHistogram> label;

  std::size_t num_nodes() const { return nodes.rows(); }
  std::size_t dim() const { return nodes.cols(); }

  void validate() const {
    if (grid_w == 0 || grid_h == 0) throw ValueError("feature graph '" + id + "': empty grid");
    if (nodes.rank() != 2 || nodes.rows() != grid_w * grid_h)
      throw ShapeError("feature graph '" + id + "'", "node matrix " + shape_string(nodes.shape()) +
                                                         " does not match grid " + std::to_string(grid_w) + "x" +
                                                         std::to_string(grid_h));
    if (!nodes.all_finite()) throw ValueError("feature graph '" + id + "': non-finite node value");
  }

  friend bool operator==(const FeatureGraph&, const FeatureGraph&) = default;
};

inline std::size_t edge_count(const FeatureGraph& g) {
  const std::size_t n = g.num_nodes();
  return n * (n - 1) / 2;
}

// Bilinear resize with corner-aligned sampling: output coordinate i maps to
// input coordinate i * (in - 1) / (out - 1), and a single output sample reads
// input coordinate 0.
inline FeatureMap resize_map(const FeatureMap& map, std::size_t target_w, std::size_t target_h) {
  if (target_w < 1 || target_h < 1) throw ValueError("resize_map: target dimensions must be at least 1");
  if (map.depth < 1 || map.width < 1 || map.height < 1) throw ValueError("resize_map: input dimensions must be at least 1");
  if (target_w == map.width && target_h == map.height) return map;

  struct Tap {
    std::size_t lo, hi;
    double t;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> res(out);
    for (std::size_t i = 0; i < out; ++i) {
      const double pos = out == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
      std::size_t lo = static_cast<std::size_t>(std::floor(pos));
      if (lo > in - 1) lo = in - 1;
      const std::size_t hi = std::min(lo + 1, in - 1);
      res[i] = {lo, hi, pos - static_cast<double>(lo)};
    }
    return res;
  };
  const auto tx = taps(map.width, target_w);
  const auto ty = taps(map.height, target_h);

  FeatureMap out(map.depth, target_w, target_h);
  for (std::size_t c = 0; c < map.depth; ++c) {
    for (std::size_t x = 0; x < target_w; ++x) {
      for (std::size_t y = 0; y < target_h; ++y) {
        const auto& a = tx[x];
        const auto& b = ty[y];
        const double v00 = map.at(c, a.lo, b.lo), v01 = map.at(c, a.lo, b.hi);
        const double v10 = map.at(c, a.hi, b.lo), v11 = map.at(c, a.hi, b.hi);
        const double top = v00 + a.t * (v10 - v00);
        const double bot = v01 + a.t * (v11 - v01);
        out.at(c, x, y) = static_cast<float>(top + b.t * (bot - top));
      }
    }
  }
  return out;
}

// Resizes every map to the grid of the last one, concatenates along depth and
// emits one node per grid cell.
inline FeatureGraph build_feature_graph(const std::vector<FeatureMap>& maps, std::optional<ScoreHistogram> label = {},
                                        std::string id = {}) {
  if (maps.empty()) throw ValueError("build_feature_graph: no feature maps");
  const std::size_t w = maps.back().width, h = maps.back().height;
  std::size_t total_depth = 0;
  for (const auto& m : maps) total_depth += m.depth;

  FeatureGraph g;
  g.id = std::move(id);
  g.grid_w = w;
  g.grid_h = h;
  g.label = std::move(label);
  g.nodes = Tensor<float>::matrix(w * h, total_depth);
  std::size_t offset = 0;
  for (const auto& m : maps) {
    const FeatureMap resized = resize_map(m, w, h);
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t col = 0; col < w; ++col)
        for (std::size_t c = 0; c < resized.depth; ++c) g.nodes(r * w + col, offset + c) = resized.at(c, col, r);
    offset += m.depth;
  }
  g.validate();
  return g;
}

struct AugmentPolicy {
  int corner = 0;  // 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right
  bool flip = false;

  friend bool operator==(const AugmentPolicy&, const AugmentPolicy&) = default;
};

inline constexpr double kCropAreaFraction = 0.85;

// All eight corner/flip combinations in a fixed order.
inline std::array<AugmentPolicy, 8> all_augment_policies() {
  std::array<AugmentPolicy, 8> out{};
  for (int i = 0; i < 8; ++i) out[i] = {i / 2, (i % 2) == 1};
  return out;
}

// Crop extent along one axis: floor(n * sqrt(0.85)), at least 1.
inline std::size_t crop_extent(std::size_t n) {
  const auto c = static_cast<std::size_t>(std::floor(static_cast<double>(n) * std::sqrt(kCropAreaFraction)));
  return c < 1 ? 1 : c;
}

// Corner crop covering 85% of the grid area at the original aspect ratio,
// optionally mirrored left-right. Only node rows move; D and the label are kept.
inline FeatureGraph augment(const FeatureGraph& g, AugmentPolicy policy) {
  if (policy.corner < 0 || policy.corner > 3)
    throw ValueError("augment: corner index " + std::to_string(policy.corner) + " not in 0..3");
  const std::size_t cw = crop_extent(g.grid_w), ch = crop_extent(g.grid_h);
  const std::size_t col0 = (policy.corner == 1 || policy.corner == 3) ? g.grid_w - cw : 0;
  const std::size_t row0 = (policy.corner == 2 || policy.corner == 3) ? g.grid_h - ch : 0;
  const std::size_t d = g.dim();

  FeatureGraph out;
  out.id = g.id;
  out.grid_w = cw;
  out.grid_h = ch;
  out.label = g.label;
  out.nodes = Tensor<float>::matrix(cw * ch, d);
  for (std::size_t r = 0; r < ch; ++r) {
    for (std::size_t c = 0; c < cw; ++c) {
      const std::size_t src_col = col0 + (policy.flip ? cw - 1 - c : c);
      const auto src = g.nodes.row((row0 + r) * g.grid_w + src_col);
      std::copy(src.begin(), src.end(), out.nodes.row(r * cw + c).begin());
    }
  }
  return out;
}

// Left-right mirror of the full grid (no crop).
inline FeatureGraph flip_columns(const FeatureGraph& g) {
  FeatureGraph out = g;
  for (std::size_t r = 0; r < g.grid_h; ++r)
    for (std::size_t c = 0; c < g.grid_w; ++c) {
      const auto src = g.nodes.row(r * g.grid_w + (g.grid_w - 1 - c));
      std::copy(src.begin(), src.end(), out.nodes.row(r * g.grid_w + c).begin());
    }
  return out;
}

// Several graphs stacked row-wise. `graph_index[r]` names the graph that owns
// node row r; rows of graph i occupy [offsets[i], offsets[i] + counts[i]).
struct GraphBatch {
  Tensor<float> nodes;
  std::vector<std::size_t> graph_index;
  std::vector<std::size_t> counts;
  std::vector<std::size_t> offsets;
  std::vector<std::optional<ScoreHistogram>> labels;
  std::vector<std::string> ids;
  std::vector<std::pair<std::size_t, std::size_t>> grids;

  std::size_t num_graphs() const noexcept { return counts.size(); }
  std::size_t num_rows() const noexcept { return graph_index.size(); }
  std::size_t dim() const { return nodes.cols(); }
};

inline GraphBatch batch(const std::vector<FeatureGraph>& graphs) {
  if (graphs.empty()) throw ValueError("batch: empty graph list");
  const std::size_t d = graphs.front().dim();
  std::size_t total = 0;
  for (const auto& g : graphs) {
    if (g.dim() != d)
      throw ShapeError("batch", "graph '" + g.id + "' has dimension " + std::to_string(g.dim()) + ", expected " +
                                    std::to_string(d));
    total += g.num_nodes();
  }
  GraphBatch b;
  b.nodes = Tensor<float>::matrix(total, d);
  b.graph_index.reserve(total);
  std::size_t row = 0;
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    const auto& g = graphs[i];
    std::copy(g.nodes.data().begin(), g.nodes.data().end(), b.nodes.data().begin() + row * d);
    b.offsets.push_back(row);
    b.counts.push_back(g.num_nodes());
    b.graph_index.insert(b.graph_index.end(), g.num_nodes(), i);
    b.labels.push_back(g.label);
    b.ids.push_back(g.id);
    b.grids.emplace_back(g.grid_w, g.grid_h);
    row += g.num_nodes();
  }
  return b;
}

inline std::vector<FeatureGraph> unbatch(const GraphBatch& b) {
  std::vector<FeatureGraph> out;
  const std::size_t d = b.dim();
  for (std::size_t i = 0; i < b.num_graphs(); ++i) {
    FeatureGraph g;
    g.id = b.ids[i];
    g.grid_w = b.grids[i].first;
    g.grid_h = b.grids[i].second;
    g.label = b.labels[i];
    const auto src = b.nodes.data().subspan(b.offsets[i] * d, b.counts[i] * d);
    g.nodes = Tensor<float>({b.counts[i], d}, std::vector<float>(src.begin(), src.end()));
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace gatiaa
