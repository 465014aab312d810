#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gatiaa/afg.hpp"
#include "gatiaa/checkpoint.hpp"
#include "gatiaa/config.hpp"
#include "gatiaa/grad_suite.hpp"
#include "gatiaa/inference.hpp"
#include "gatiaa/metrics.hpp"
#include "gatiaa/synth.hpp"
#include "gatiaa/training.hpp"

namespace gatiaa {

inline constexpr int kExitOk = 0;
inline constexpr int kExitVerificationFailed = 1;
inline constexpr int kExitUsage = 2;

struct DataSplits {
  std::vector<FeatureGraph> train;
  std::vector<FeatureGraph> val;
  std::vector<FeatureGraph> test;
};

// Manifest splits when data.manifest is set, otherwise synth.* graphs split by id hash.
inline DataSplits load_data(const RunConfig& cfg) {
  DataSplits d;
  if (!cfg.data_manifest.empty()) {
    const auto entries = read_manifest(cfg.data_manifest);
    d.train = load_split(entries, Split::train);
    d.val = load_split(entries, Split::val);
    d.test = load_split(entries, Split::test);
    return d;
  }
  for (auto& g : synth_generate(cfg.synth_seed, cfg.synth_count, cfg.synth)) {
    switch (split_for_id(g.id)) {
      case Split::train: d.train.push_back(std::move(g)); break;
      case Split::val: d.val.push_back(std::move(g)); break;
      case Split::test: d.test.push_back(std::move(g)); break;
    }
  }
  return d;
}

// Evaluation workers: serial in deterministic mode, capped by GATIAA_THREADS.
inline std::size_t effective_threads(const RunConfig& cfg) {
  if (cfg.deterministic) return 1;
  std::size_t n = cfg.train.threads;
  if (std::getenv("GATIAA_THREADS")) n = std::min(n, worker_threads());
  return std::max<std::size_t>(1, n);
}

inline std::filesystem::path prepare_out_dir(const RunConfig& cfg) {
  const std::filesystem::path dir = cfg.out;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw IoError("cannot create output directory '" + dir.string() + "'");
  return dir;
}

inline void echo_config(const RunConfig& cfg, std::ostream& log, const std::filesystem::path& out_dir = {}) {
  log << "# effective configuration\n";
  cfg.echo(log);
  if (out_dir.empty()) return;
  std::ofstream f(out_dir / "config.txt", std::ios::trunc);
  if (!f) throw IoError("cannot write '" + (out_dir / "config.txt").string() + "'");
  cfg.echo(f);
}

// ---------------------------------------------------------------------------
// synth

inline int cmd_synth(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const auto dir = prepare_out_dir(cfg);
  echo_config(cfg, log, dir);
  const auto graphs = synth_generate(cfg.synth_seed, cfg.synth_count, cfg.synth);
  std::filesystem::create_directories(dir / "graphs");
  std::vector<ManifestEntry> entries;
  std::size_t counts[3] = {};
  for (const auto& g : graphs) {
    const std::filesystem::path rel = std::filesystem::path("graphs") / (g.id + ".afg");
    afg_write(g, dir / rel);
    const Split s = split_for_id(g.id);
    ++counts[static_cast<int>(s)];
    entries.push_back({g.id, rel, s});
  }
  write_manifest(entries, dir / "manifest.csv");
  log << "wrote " << graphs.size() << " graphs (train " << counts[0] << ", val " << counts[1] << ", test "
      << counts[2] << ") to " << dir.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// build-graph

// Raw little-endian float32 block in (d, w, h) order, described by a JSON
// sidecar {"d": .., "w": .., "h": ..} next to it (same name, .json extension).
inline FeatureMap read_feature_map(const std::filesystem::path& path) {
  std::filesystem::path sidecar = path;
  sidecar.replace_extension(".json");
  std::ifstream js(sidecar);
  if (!js) throw IoError("cannot open sidecar '" + sidecar.string() + "'");
  nlohmann::json j;
  try {
    js >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValueError("sidecar '" + sidecar.string() + "': " + e.what());
  }
  std::size_t dims[3] = {};
  const char* keys[3] = {"d", "w", "h"};
  for (int k = 0; k < 3; ++k) {
    if (!j.is_object() || !j.contains(keys[k]) || !j[keys[k]].is_number_unsigned() || j[keys[k]].get<std::size_t>() == 0)
      throw ValueError("sidecar '" + sidecar.string() + "': field '" + keys[k] + "' must be a positive integer");
    dims[k] = j[keys[k]].get<std::size_t>();
  }
  const auto bytes = io::read_file(path);
  const std::size_t expected = dims[0] * dims[1] * dims[2] * sizeof(float);
  if (bytes.size() != expected)
    throw ShapeError("feature map '" + path.string() + "'",
                     "sidecar says " + std::to_string(expected) + " bytes, file has " + std::to_string(bytes.size()));
  io::ByteReader r(bytes);
  std::vector<float> values(dims[0] * dims[1] * dims[2]);
  for (auto& v : values) v = r.f32("feature value");
  return FeatureMap(dims[0], dims[1], dims[2], std::move(values));
}

inline int cmd_build_graph(const std::vector<std::filesystem::path>& inputs, const std::filesystem::path& out,
                           std::optional<ScoreHistogram> label, std::string id, std::ostream& log) {
  if (inputs.empty()) throw ConfigError("", "build-graph needs at least one feature map");
  std::vector<FeatureMap> maps;
  for (const auto& p : inputs) maps.push_back(read_feature_map(p));
  if (id.empty()) id = out.stem().string();
  const FeatureGraph g = build_feature_graph(maps, std::move(label), id);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  afg_write(g, out);
  log << "wrote " << out.string() << ": N=" << g.num_nodes() << " D=" << g.dim() << " grid " << g.grid_w << 'x'
      << g.grid_h << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

inline int cmd_train(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const auto dir = prepare_out_dir(cfg);
  echo_config(cfg, log, dir);
  const DataSplits data = load_data(cfg);
  if (data.train.empty()) throw ValueError("train: the training split is empty");

  TrainConfig tc = cfg.train;
  tc.threads = effective_threads(cfg);
  if (tc.checkpoint_dir.empty()) tc.checkpoint_dir = dir.string();

  Model<float> model;
  AdamState<float> opt;
  TrainHooks hooks;
  if (!cfg.resume.empty()) {
    const Checkpoint ck = checkpoint_load(cfg.resume);
    if (!(ck.spec == cfg.model)) throw ConfigError("run.resume", "checkpoint model spec differs from the configured model");
    model = model_from_checkpoint<float>(ck);
    opt = optimizer_from_checkpoint(ck, model);
    const auto it = ck.meta.find("checkpoint.epoch");
    if (it == ck.meta.end()) throw ConfigError("run.resume", "checkpoint has no training state");
    hooks.start_epoch = ModelSpec::parse_size("checkpoint.epoch", it->second);
    log << "resuming at epoch " << hooks.start_epoch << " from " << cfg.resume << '\n';
  } else {
    model = Model<float>(cfg.model, cfg.train.seed);
  }
  if (hooks.start_epoch >= tc.epochs) {
    log << "nothing to do: checkpoint already covers " << tc.epochs << " epochs\n";
    return kExitOk;
  }

  log << "graphs: train " << data.train.size() << ", val " << data.val.size() << "; parameters "
      << model.num_parameters() << '\n';
  log << kEpochLogHeader << '\n';
  hooks.on_epoch = [&log](const EpochLog& e) { log << format_log_row(e) << std::endl; };
  const TrainResult res = train(model, data.train, data.val, tc, &opt, hooks);
  log << "done: " << res.steps << " steps, best val plcc " << format_metric(res.best_val_plcc) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

inline void write_report(const EvalReport& rep, const std::filesystem::path& dir) {
  std::ofstream m(dir / "metrics.csv", std::ios::trunc), d(dir / "distributions.csv", std::ios::trunc);
  if (!m || !d) throw IoError("cannot write reports into '" + dir.string() + "'");
  write_metrics_csv(m, rep);
  write_distribution_csv(d, rep);
}

inline int cmd_eval(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const auto dir = prepare_out_dir(cfg);
  echo_config(cfg, log, dir);
  const DataSplits data = load_data(cfg);
  if (data.test.empty()) throw ValueError("eval: the test split is empty");

  std::vector<ScorePrediction> preds;
  if (cfg.eval_oracle) {
    for (const auto& g : data.test) {
      if (!g.label) throw ValueError("eval: graph '" + g.id + "' has no label");
      ScorePrediction p;
      std::array<double, kScoreBins> dist{};
      for (std::size_t b = 0; b < kScoreBins; ++b) dist[b] = (*g.label)[b];
      p.dist = dist;
      p.score = mean_score(dist);
      preds.push_back(p);
    }
  } else {
    if (cfg.eval_checkpoint.empty()) throw ConfigError("eval.checkpoint", "required unless eval.oracle=true");
    Model<float> model = model_from_checkpoint<float>(checkpoint_load(cfg.eval_checkpoint));
    preds = predict_all(model, data.test, effective_threads(cfg), cfg.eval_augment);
  }
  const EvalReport rep = evaluate_predictions(data.test, preds);
  write_report(rep, dir);
  log << "test graphs " << rep.count << ": plcc " << format_metric(rep.plcc) << ", srcc " << format_metric(rep.srcc)
      << ", acc " << format_metric(rep.threshold.acc) << ", balanced acc " << format_metric(rep.threshold.balanced_acc)
      << '\n';
  if (!rep.correlation_error.empty()) log << "warning: " << rep.correlation_error << '\n';
  if (rep.threshold.class_missing) log << "warning: only one class present at threshold 5\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// ablate

struct AblationRow {
  Variant variant;
  std::optional<double> plcc;
  std::optional<double> srcc;
};

// Trains each configured variant with the shared seed and budget, then scores
// the test split.
inline std::vector<AblationRow> run_ablation(const RunConfig& cfg, const DataSplits& data, std::ostream& log) {
  std::vector<AblationRow> rows;
  for (Variant v : cfg.ablate_variants) {
    ModelSpec spec = cfg.model;
    spec.variant = v;
    Model<float> model(spec, cfg.train.seed);
    TrainConfig tc = cfg.train;
    tc.threads = effective_threads(cfg);
    tc.checkpoint_dir.clear();
    const auto t0 = std::chrono::steady_clock::now();
    train(model, data.train, data.val, tc);
    const EvalReport rep = evaluate(model, data.test, tc.threads, cfg.eval_augment);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log << to_string(v) << ": plcc " << format_metric(rep.plcc) << ", srcc " << format_metric(rep.srcc) << " ("
        << static_cast<int>(secs + 0.5) << " s)" << std::endl;
    rows.push_back({v, rep.plcc, rep.srcc});
  }
  return rows;
}

inline void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "variant,plcc,srcc\n";
  for (const auto& r : rows) os << to_string(r.variant) << ',' << format_metric(r.plcc) << ',' << format_metric(r.srcc) << '\n';
}

inline int cmd_ablate(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const auto dir = prepare_out_dir(cfg);
  echo_config(cfg, log, dir);
  const DataSplits data = load_data(cfg);
  if (data.train.empty() || data.test.empty()) throw ValueError("ablate: train and test splits must be nonempty");
  const auto rows = run_ablation(cfg, data, log);
  std::ofstream f(dir / "ablation.csv", std::ios::trunc);
  if (!f) throw IoError("cannot write '" + (dir / "ablation.csv").string() + "'");
  write_ablation_csv(f, rows);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck

inline int cmd_gradcheck(const RunConfig& cfg, std::ostream& log) {
  GradSuiteOptions opt;
  opt.corrupt_unit = cfg.gradcheck_corrupt;
  const auto t0 = std::chrono::steady_clock::now();
  const auto reports = run_grad_suite(opt);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!opt.corrupt_unit.empty() &&
      std::none_of(reports.begin(), reports.end(), [&](const auto& r) { return r.unit == opt.corrupt_unit; }))
    throw ConfigError("gradcheck.corrupt", "unknown unit '" + opt.corrupt_unit + "'");
  bool ok = true;
  for (const auto& r : reports) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%-16s max_rel_error %.3e over %zu coords  %s", r.unit.c_str(),
                  r.result.max_rel_error, r.result.coordinates, r.passed ? "ok" : "FAILED");
    log << buf;
    if (!r.passed) log << " (worst " << r.result.worst_parameter << '[' << r.result.worst_index << "])";
    log << '\n';
    ok = ok && r.passed;
  }
  char buf[80];
  std::snprintf(buf, sizeof buf, "tolerance %.0e, %.2f s", opt.tolerance, secs);
  log << buf << '\n';
  return ok ? kExitOk : kExitVerificationFailed;
}

}  // namespace gatiaa
