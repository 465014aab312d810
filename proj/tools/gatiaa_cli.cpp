// gatiaa command-line entry point: synth, build-graph, train, eval, ablate, gradcheck.

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gatiaa/commands.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string out;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "key=value config file");
  cmd->add_option("--seed", f.seed, "seed for synthetic data and training");
  cmd->add_flag("--deterministic", f.deterministic, "serial execution");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--set", f.sets, "override one key (key=value), repeatable")->take_all();
}

// File first, then --set, then dedicated flags.
gatiaa::RunConfig resolve(const CommonFlags& f) {
  gatiaa::RunConfig cfg;
  if (!f.config.empty()) cfg.load_file(f.config);
  for (const auto& s : f.sets) cfg.set_assignment(s);
  if (f.seed) cfg.set_seed(*f.seed);
  if (f.deterministic) cfg.deterministic = true;
  if (!f.out.empty()) cfg.out = f.out;
  return cfg;
}

std::optional<gatiaa::ScoreHistogram> parse_label(const std::string& text) {
  if (text.empty()) return std::nullopt;
  std::vector<double> w;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    w.push_back(gatiaa::ModelSpec::parse_double("--label", gatiaa::RunConfig::trim(item)));
  return gatiaa::ScoreHistogram::normalized(w);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-attention aesthetic scoring on feature graphs"};
  app.require_subcommand(1);

  CommonFlags common;
  std::optional<std::size_t> count;
  std::vector<std::string> maps;
  std::string graph_out, label, graph_id, resume, checkpoint, corrupt;
  bool oracle = false;

  auto* synth = app.add_subcommand("synth", "write planted-signal AFG files and manifest.csv");
  add_common(synth, common);
  synth->add_option("--count", count, "number of graphs");

  auto* build = app.add_subcommand("build-graph", "build one AFG file from raw feature maps");
  build->add_option("maps", maps, "float32 feature maps, each with a .json sidecar {d,w,h}")->required();
  build->add_option("--out", graph_out, "output AFG path")->required();
  build->add_option("--label", label, "10 comma-separated histogram weights");
  build->add_option("--id", graph_id, "graph id (default: output file stem)");

  auto* train = app.add_subcommand("train", "train a model; writes checkpoints and train_log.csv");
  add_common(train, common);
  train->add_option("--resume", resume, "continue from a training checkpoint");

  auto* eval = app.add_subcommand("eval", "score the test split; writes metrics.csv and distributions.csv");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "model checkpoint");
  eval->add_flag("--oracle", oracle, "replay labels as predictions");

  auto* ablate = app.add_subcommand("ablate", "train every variant; writes ablation.csv");
  add_common(ablate, common);

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  add_common(gradcheck, common);
  gradcheck->add_option("--corrupt", corrupt, "test hook: corrupt the backward pass of one unit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return gatiaa::kExitUsage;
  }

  try {
    if (build->parsed()) {
      std::vector<std::filesystem::path> paths(maps.begin(), maps.end());
      return gatiaa::cmd_build_graph(paths, graph_out, parse_label(label), graph_id, std::cout);
    }
    gatiaa::RunConfig cfg = resolve(common);
    if (synth->parsed()) {
      if (count) cfg.synth_count = *count;
      return gatiaa::cmd_synth(cfg, std::cout);
    }
    if (train->parsed()) {
      if (!resume.empty()) cfg.resume = resume;
      return gatiaa::cmd_train(cfg, std::cout);
    }
    if (eval->parsed()) {
      if (!checkpoint.empty()) cfg.eval_checkpoint = checkpoint;
      if (oracle) cfg.eval_oracle = true;
      return gatiaa::cmd_eval(cfg, std::cout);
    }
    if (ablate->parsed()) return gatiaa::cmd_ablate(cfg, std::cout);
    if (gradcheck->parsed()) {
      if (!corrupt.empty()) cfg.gradcheck_corrupt = corrupt;
      return gatiaa::cmd_gradcheck(cfg, std::cout);
    }
  } catch (const gatiaa::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return gatiaa::kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return gatiaa::kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return gatiaa::kExitVerificationFailed;
  }
  return gatiaa::kExitUsage;
}
