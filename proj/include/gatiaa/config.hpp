#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gatiaa/error.hpp"
#include "gatiaa/model.hpp"
#include "gatiaa/synth.hpp"
#include "gatiaa/training.hpp"

namespace gatiaa {

// Everything a command can be configured with, addressable as dotted keys:
// model.*, train.*, synth.*, data.*, eval.*, ablate.*, gradcheck.*, run.*.
struct RunConfig {
  ModelSpec model;
  TrainConfig train;

  SynthConfig synth;
  std::size_t synth_count = 2000;
  std::uint64_t synth_seed = 0;

  // Empty: graphs are generated in memory from synth.* and split by id hash.
  std::string data_manifest;

  std::string eval_checkpoint;
  bool eval_augment = true;
  bool eval_oracle = false;  // predictions := labels

  std::vector<Variant> ablate_variants{std::begin(kAllVariants), std::end(kAllVariants)};

  std::string gradcheck_corrupt;

  std::string out = ".";
  bool deterministic = false;
  std::string resume;

  RunConfig() { model.variant = Variant::GAT3_GATP; }

  // Applies one key; unknown keys are rejected.
  void set(const std::string& key, const std::string& value) {
    if (key.rfind("model.", 0) == 0) {
      if (!model.set(key, value)) throw ConfigError(key, "unknown configuration key");
      return;
    }
    if (key.rfind("train.", 0) == 0) {
      if (!train.set(key, value)) throw ConfigError(key, "unknown configuration key");
      return;
    }
    if (key == "synth.count") synth_count = ModelSpec::parse_size(key, value);
    else if (key == "synth.seed") synth_seed = ModelSpec::parse_size(key, value);
    else if (key == "synth.dim") synth.dim = ModelSpec::parse_size(key, value);
    else if (key == "synth.gridWMin") synth.grid_w_min = ModelSpec::parse_size(key, value);
    else if (key == "synth.gridWMax") synth.grid_w_max = ModelSpec::parse_size(key, value);
    else if (key == "synth.gridHMin") synth.grid_h_min = ModelSpec::parse_size(key, value);
    else if (key == "synth.gridHMax") synth.grid_h_max = ModelSpec::parse_size(key, value);
    else if (key == "synth.noise") synth.noise = ModelSpec::parse_double(key, value);
    else if (key == "synth.labelStd") synth.label_std = ModelSpec::parse_double(key, value);
    else if (key == "data.manifest") data_manifest = value;
    else if (key == "eval.checkpoint") eval_checkpoint = value;
    else if (key == "eval.augment") eval_augment = ModelSpec::parse_bool(key, value);
    else if (key == "eval.oracle") eval_oracle = ModelSpec::parse_bool(key, value);
    else if (key == "ablate.variants") ablate_variants = parse_variant_list(key, value);
    else if (key == "gradcheck.corrupt") gradcheck_corrupt = value;
    else if (key == "run.out") out = value;
    else if (key == "run.deterministic") deterministic = ModelSpec::parse_bool(key, value);
    else if (key == "run.resume") resume = value;
    else throw ConfigError(key, "unknown configuration key");
  }

  // `key=value` as given on the command line.
  void set_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("", "expected key=value, got '" + assignment + "'");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  }

  // Flat key=value text; `#` starts a comment, blank lines are ignored.
  void load(std::istream& in, const std::string& source) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("", source + " line " + std::to_string(lineno) + ": expected key=value");
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  void load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path.string() + "'");
    load(in, path.string());
  }

  void set_seed(std::uint64_t seed) {
    train.seed = seed;
    synth_seed = seed;
  }

  std::map<std::string, std::string> to_map() const {
    auto m = model.to_map();
    m.merge(train.to_map());
    m["synth.count"] = std::to_string(synth_count);
    m["synth.seed"] = std::to_string(synth_seed);
    m["synth.dim"] = std::to_string(synth.dim);
    m["synth.gridWMin"] = std::to_string(synth.grid_w_min);
    m["synth.gridWMax"] = std::to_string(synth.grid_w_max);
    m["synth.gridHMin"] = std::to_string(synth.grid_h_min);
    m["synth.gridHMax"] = std::to_string(synth.grid_h_max);
    m["synth.noise"] = ModelSpec::format_double(synth.noise);
    m["synth.labelStd"] = ModelSpec::format_double(synth.label_std);
    m["data.manifest"] = data_manifest;
    m["eval.checkpoint"] = eval_checkpoint;
    m["eval.augment"] = eval_augment ? "true" : "false";
    m["eval.oracle"] = eval_oracle ? "true" : "false";
    std::string variants;
    for (auto v : ablate_variants) variants += (variants.empty() ? "" : ",") + to_string(v);
    m["ablate.variants"] = variants;
    m["gradcheck.corrupt"] = gradcheck_corrupt;
    m["run.out"] = out;
    m["run.deterministic"] = deterministic ? "true" : "false";
    m["run.resume"] = resume;
    return m;
  }

  // The effective configuration, sorted, in the same format `load` reads.
  void echo(std::ostream& os) const {
    for (const auto& [k, v] : to_map()) os << k << '=' << v << '\n';
  }

  void validate() const {
    model.validate();
    train.validate();
    if (synth_count < 1) throw ConfigError("synth.count", "must be at least 1");
    if (ablate_variants.empty()) throw ConfigError("ablate.variants", "must name at least one variant");
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

 private:
  static std::vector<Variant> parse_variant_list(const std::string& key, const std::string& value) {
    std::vector<Variant> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      try {
        out.push_back(parse_variant(item));
      } catch (const Error& e) {
        throw ConfigError(key, e.what());
      }
    }
    return out;
  }
};

}  // namespace gatiaa
