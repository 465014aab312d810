#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <type_traits>
#include <string>
#include <vector>

#include "gatiaa/checkpoint.hpp"
#include "gatiaa/inference.hpp"

namespace gatiaa {

enum class LossKind { mse_histogram, bce_binary };

struct TrainConfig {
  double lr0 = 1e-4;
  double lambda = 2.5;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon_adam = 1e-8;
  LossKind loss = LossKind::mse_histogram;
  std::uint64_t seed = 0;
  std::string checkpoint_dir;
  std::size_t threads = 1;  // evaluation workers
  // Random corner/flip view per training graph and 8-view averaging at
  // validation. Off trains and validates on whole graphs.
  bool augment = true;

  void validate() const {
    if (!(lr0 > 0)) throw ConfigError("train.lr0", "must be positive");
    if (!(lambda >= 0)) throw ConfigError("train.lambda", "must be nonnegative");
    if (epochs < 1) throw ConfigError("train.epochs", "must be at least 1");
    if (batch_size < 1) throw ConfigError("train.batchSize", "must be at least 1");
    if (!(beta1 >= 0 && beta1 < 1)) throw ConfigError("train.beta1", "must be in [0, 1)");
    if (!(beta2 >= 0 && beta2 < 1)) throw ConfigError("train.beta2", "must be in [0, 1)");
    if (!(epsilon_adam > 0)) throw ConfigError("train.epsilonAdam", "must be positive");
    if (threads < 1) throw ConfigError("train.threads", "must be at least 1");
  }

  std::map<std::string, std::string> to_map() const {
    std::map<std::string, std::string> m;
    m["train.lr0"] = ModelSpec::format_double(lr0);
    m["train.lambda"] = ModelSpec::format_double(lambda);
    m["train.epochs"] = std::to_string(epochs);
    m["train.batchSize"] = std::to_string(batch_size);
    m["train.beta1"] = ModelSpec::format_double(beta1);
    m["train.beta2"] = ModelSpec::format_double(beta2);
    m["train.epsilonAdam"] = ModelSpec::format_double(epsilon_adam);
    m["train.loss"] = loss == LossKind::mse_histogram ? "mseHistogram" : "bceBinary";
    m["train.seed"] = std::to_string(seed);
    m["train.checkpointDir"] = checkpoint_dir;
    m["train.threads"] = std::to_string(threads);
    m["train.augment"] = augment ? "true" : "false";
    return m;
  }

  bool set(const std::string& key, const std::string& value) {
    if (key == "train.lr0") lr0 = ModelSpec::parse_double(key, value);
    else if (key == "train.lambda") lambda = ModelSpec::parse_double(key, value);
    else if (key == "train.epochs") epochs = ModelSpec::parse_size(key, value);
    else if (key == "train.batchSize") batch_size = ModelSpec::parse_size(key, value);
    else if (key == "train.beta1") beta1 = ModelSpec::parse_double(key, value);
    else if (key == "train.beta2") beta2 = ModelSpec::parse_double(key, value);
    else if (key == "train.epsilonAdam") epsilon_adam = ModelSpec::parse_double(key, value);
    else if (key == "train.seed") seed = ModelSpec::parse_size(key, value);
    else if (key == "train.checkpointDir") checkpoint_dir = value;
    else if (key == "train.threads") threads = ModelSpec::parse_size(key, value);
    else if (key == "train.augment") augment = ModelSpec::parse_bool(key, value);
    else if (key == "train.loss") {
      if (value == "mseHistogram") loss = LossKind::mse_histogram;
      else if (value == "bceBinary") loss = LossKind::bce_binary;
      else throw ConfigError(key, "expected mseHistogram or bceBinary");
    } else return false;
    return true;
  }
};

// ---------------------------------------------------------------------------
// Losses

// Mean over batch and bins of the squared difference.
template <typename T>
Var<T> mse_histogram_loss(const Var<T>& pred, const Var<T>& target) {
  if (pred.shape() != target.shape()) throw ShapeError("mse_histogram_loss", pred.shape(), target.shape());
  Var<T> diff = subtract(pred, target);
  return mean(multiply(diff, diff));
}

// P(score >= 5) read off a predicted histogram: logistic(mean score - 5).
template <typename T>
Var<T> histogram_good_probability(const Var<T>& dist) {
  Tape<T>& tape = dist.tape();
  Tensor<T> centers = Tensor<T>::matrix(dist.cols(), 1);
  for (std::size_t b = 0; b < dist.cols(); ++b) centers[b] = static_cast<T>(b + 1);
  Var<T> score = dist.cols() == 1 ? dist : matmul(dist, tape.constant(std::move(centers)));
  Var<T> shifted = add(score, tape.constant(Tensor<T>::matrix(score.rows(), 1, T(-5))));
  // logistic(z) = exp(-log(1 + exp(-z)))
  Var<T> one_plus = add(exp(scale(shifted, T(-1))), tape.constant(Tensor<T>::matrix(score.rows(), 1, T(1))));
  return exp(scale(log(one_plus), T(-1)));
}

// Mean binary cross-entropy of probabilities `prob` (B, 1) against labels in
// {0, 1}; log arguments are clamped below at 1e-7.
template <typename T>
Var<T> bce_binary_loss(const Var<T>& prob, const std::vector<double>& labels) {
  if (prob.value().rank() != 2 || prob.cols() != 1 || prob.rows() != labels.size())
    throw ShapeError("bce_binary_loss", prob.shape(), Shape{labels.size(), 1});
  Tape<T>& tape = prob.tape();
  Tensor<T> y = Tensor<T>::matrix(labels.size(), 1), not_y = y;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0.0 && labels[i] != 1.0) throw ValueError("bce_binary_loss: labels must be 0 or 1");
    y[i] = static_cast<T>(labels[i]);
    not_y[i] = T(1) - y[i];
  }
  const T floor = static_cast<T>(1e-7);
  Var<T> ones = tape.constant(Tensor<T>::matrix(labels.size(), 1, T(1)));
  Var<T> log_p = log(clamp_min(prob, floor));
  Var<T> log_q = log(clamp_min(subtract(ones, prob), floor));
  Var<T> ll = add(multiply(tape.constant(std::move(y)), log_p), multiply(tape.constant(std::move(not_y)), log_q));
  return scale(mean(ll), T(-1));
}

// ---------------------------------------------------------------------------
// Schedule and optimizer

// lr0 * (1 - e / E)^lambda for 0 <= e <= E.
inline double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  if (epoch > cfg.epochs) throw ValueError("lr_at: epoch " + std::to_string(epoch) + " beyond " + std::to_string(cfg.epochs));
  const double frac = 1.0 - static_cast<double>(epoch) / static_cast<double>(cfg.epochs);
  return cfg.lr0 * std::pow(frac, cfg.lambda);
}

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::size_t step = 0;
};

// Adam with bias correction. Refuses (throws, nothing modified) if any
// gradient is non-finite.
template <typename T>
void adam_step(AdamState<T>& state, const std::vector<Parameter<T>*>& params, double lr, const TrainConfig& cfg) {
  for (auto* p : params)
    if (!p->grad.all_finite()) throw ValueError("adam_step: non-finite gradient in '" + p->name + "'");
  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step", "optimizer state does not match parameter list");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.shape() != p.value.shape()) throw ShapeError("adam_step", m.shape(), p.value.shape());
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const T g = p.grad[i];
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      const double mhat = static_cast<double>(m[i]) / c1;
      const double vhat = static_cast<double>(v[i]) / c2;
      p.value[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + cfg.epsilon_adam));
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0;
  double train_loss = 0;
  std::optional<double> val_plcc;
  std::optional<double> val_srcc;
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t steps = 0;
  std::optional<double> best_val_plcc;
};

struct TrainHooks {
  std::function<void(const EpochLog&)> on_epoch;
  std::size_t start_epoch = 0;  // resume point; the schedule continues from here
};

inline std::string format_log_row(const EpochLog& e) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%s,%s", e.epoch, e.lr, e.train_loss, format_metric(e.val_plcc).c_str(),
                format_metric(e.val_srcc).c_str());
  return buf;
}

inline constexpr const char* kEpochLogHeader = "epoch,lr,train_loss,val_plcc,val_srcc";

// Loss of one prepared batch under `cfg.loss`. Histogram heads regress the
// label histogram; scalar heads regress the label's mean score.
template <typename T>
Var<T> batch_loss(Tape<T>& tape, const Var<T>& pred, const GraphBatch& b, const TrainConfig& cfg) {
  if (cfg.loss == LossKind::bce_binary) {
    std::vector<double> labels;
    for (const auto& l : b.labels) labels.push_back(mean_score(*l) >= 5.0 ? 1.0 : 0.0);
    return bce_binary_loss(histogram_good_probability(pred), labels);
  }
  Tensor<T> target = Tensor<T>::matrix(b.num_graphs(), pred.cols());
  for (std::size_t i = 0; i < b.num_graphs(); ++i) {
    if (pred.cols() == 1) target(i, 0) = static_cast<T>(mean_score(*b.labels[i]));
    else
      for (std::size_t k = 0; k < kScoreBins; ++k) target(i, k) = static_cast<T>((*b.labels[i])[k]);
  }
  return mse_histogram_loss(pred, tape.constant(std::move(target)));
}

template <typename T>
std::map<std::string, std::string> optimizer_meta(const AdamState<T>& s, std::size_t epoch, const std::optional<double>& val) {
  return {{"checkpoint.epoch", std::to_string(epoch)},
          {"checkpoint.valPlcc", format_metric(val)},
          {"optim.step", std::to_string(s.step)}};
}

template <typename T>
Checkpoint training_checkpoint(Model<T>& model, const AdamState<T>& opt, std::size_t epoch,
                               const std::optional<double>& val) {
  Checkpoint ck = make_checkpoint(model, optimizer_meta(opt, epoch, val));
  auto params = model.parameters();
  for (std::size_t k = 0; k < opt.m.size(); ++k) {
    ck.tensors.emplace_back("adam.m/" + params[k]->name, opt.m[k].template cast<float>());
    ck.tensors.emplace_back("adam.v/" + params[k]->name, opt.v[k].template cast<float>());
  }
  return ck;
}

template <typename T>
AdamState<T> optimizer_from_checkpoint(const Checkpoint& ck, Model<T>& model) {
  AdamState<T> s;
  auto it = ck.meta.find("optim.step");
  if (it == ck.meta.end()) return s;
  s.step = ModelSpec::parse_size("optim.step", it->second);
  for (auto* p : model.parameters()) {
    const auto* m = ck.find("adam.m/" + p->name);
    const auto* v = ck.find("adam.v/" + p->name);
    if (!m || !v) return AdamState<T>{};
    s.m.push_back(m->template cast<T>());
    s.v.push_back(v->template cast<T>());
  }
  return s;
}

// Mini-batch training with one random corner/flip view per graph per step.
// Epochs run from hooks.start_epoch to cfg.epochs - 1 with lr_at(epoch).
// With a checkpoint directory, writes epoch_<e>.ckpt, last.ckpt, best.ckpt and
// train_log.csv there.
template <typename T>
TrainResult train(Model<T>& model, const std::vector<FeatureGraph>& train_set, const std::vector<FeatureGraph>& val_set,
                  const TrainConfig& cfg, std::type_identity_t<AdamState<T>>* optimizer = nullptr,
                  const TrainHooks& hooks = {}) {
  cfg.validate();
  if (train_set.empty()) throw ValueError("train: empty training set");
  for (const auto& g : train_set)
    if (!g.label) throw ValueError("train: graph '" + g.id + "' has no label");
  for (const auto& g : val_set)
    if (!g.label) throw ValueError("train: validation graph '" + g.id + "' has no label");
  if (cfg.loss == LossKind::bce_binary && model.spec().final_activation != FinalActivation::softmax &&
      model.spec().bins != 1)
    throw ConfigError("train.loss", "bceBinary needs a softmax histogram head or a scalar head");

  AdamState<T> local;
  AdamState<T>& opt = optimizer ? *optimizer : local;
  const auto params = model.parameters();
  const std::array<AugmentPolicy, 8> policies = all_augment_policies();

  std::filesystem::path dir;
  std::ofstream log_file;
  if (!cfg.checkpoint_dir.empty()) {
    dir = cfg.checkpoint_dir;
    std::filesystem::create_directories(dir);
    const auto log_path = dir / "train_log.csv";
    // A resumed run keeps the rows of the epochs before its start point.
    std::vector<std::string> kept;
    if (hooks.start_epoch > 0 && std::filesystem::exists(log_path)) {
      std::ifstream in(log_path);
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line))
        if (!line.empty() && std::stoull(line) < hooks.start_epoch) kept.push_back(line);
    }
    log_file.open(log_path, std::ios::trunc);
    if (!log_file) throw IoError("cannot open '" + log_path.string() + "' for writing");
    log_file << kEpochLogHeader << '\n';
    for (const auto& row : kept) log_file << row << '\n';
  }

  TrainResult result;
  for (std::size_t epoch = hooks.start_epoch; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    // Each epoch owns its RNG stream so a resumed run sees the same shuffles.
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);

    std::uniform_int_distribution<std::size_t> pick(0, policies.size() - 1);
    double loss_sum = 0;
    std::size_t loss_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      // Batch norm over graphs needs two rows; a trailing singleton is skipped.
      if (end - start < 2 && model.spec().uses_encoder()) continue;
      std::vector<FeatureGraph> views;
      for (std::size_t i = start; i < end; ++i) {
        const AugmentPolicy policy = policies[pick(rng)];
        views.push_back(cfg.augment ? augment(train_set[order[i]], policy) : train_set[order[i]]);
      }
      const GraphBatch b = batch(views);

      Tape<T> tape;
      Var<T> pred = model.forward(tape, b, Mode::train, rng);
      Var<T> loss = batch_loss(tape, pred, b, cfg);
      tape.backward(loss);
      model.zero_grad();
      tape.accumulate_parameter_grads();
      adam_step(opt, params, lr, cfg);
      ++result.steps;
      loss_sum += static_cast<double>(loss.value()[0]);
      ++loss_batches;
    }

    EpochLog row;
    row.epoch = epoch;
    row.lr = lr;
    row.train_loss = loss_batches ? loss_sum / static_cast<double>(loss_batches) : 0.0;
    if (!val_set.empty()) {
      const EvalReport rep = evaluate(model, val_set, cfg.threads, cfg.augment);
      row.val_plcc = rep.plcc;
      row.val_srcc = rep.srcc;
    }
    result.log.push_back(row);
    const bool improved =
        row.val_plcc && (!result.best_val_plcc || *row.val_plcc > *result.best_val_plcc);
    if (improved) result.best_val_plcc = row.val_plcc;

    if (!dir.empty()) {
      log_file << format_log_row(row) << '\n';
      log_file.flush();
      const Checkpoint ck = training_checkpoint(model, opt, epoch + 1, row.val_plcc);
      checkpoint_save(ck, dir / ("epoch_" + std::to_string(epoch) + ".ckpt"));
      checkpoint_save(ck, dir / "last.ckpt");
      if (improved || (!result.best_val_plcc && epoch == hooks.start_epoch)) checkpoint_save(ck, dir / "best.ckpt");
    }
    if (hooks.on_epoch) hooks.on_epoch(row);
  }
  return result;
}

}  // namespace gatiaa
