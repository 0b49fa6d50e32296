// ista: run one pipeline stage, or all of them, from a config file.
//
//   ista --config run.cfg fit-codebook
//   ista --config run.cfg encode --in descs/ --out raw/
//   ista --config run.cfg query --query img042 --top 20
//   ista oracle-check --trials 50

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ista/config.hpp"
#include "ista/pipeline.hpp"

namespace {

void add_path(CLI::App* cmd, const std::string& flag, std::optional<std::filesystem::path>& dst,
              const std::string& help) {
  cmd->add_option_function<std::string>(
      flag, [&dst](const std::string& v) { dst = v; }, help);
}

}  // namespace

int main(int argc, char** argv) {
  using namespace ista;

  CLI::App app{"Spatial tensor aggregation signatures for image retrieval"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "key = value config file");
  app.add_option("--seed", seed, "overrides the config seed");
  app.add_option("--threads", threads, "worker thread cap");
  app.add_option("--set", overrides, "extra key=value assignment (repeatable)");

  pipeline::StageIo io;
  const std::map<std::string_view, std::string> about = {
      {"fit-codebook", "k-means codebook on the training corpus"},
      {"fit-stats", "accumulate per-pair statistics on the training corpus"},
      {"fit-basis", "factor pair means into per-pair bases"},
      {"encode", "raw signatures for the database (and reduction corpus)"},
      {"fit-block-reduction", "per-block Gram projections"},
      {"fit-full-reduction", "final projection, optionally whitened"},
      {"reduce", "normalize and project raw signatures"},
      {"combine", "sum resolutions per image"},
      {"index", "pack signatures into one index file"},
      {"query", "rank the index against one image"},
      {"evaluate", "mAP over the ground truth"},
      {"oracle-check", "compare the encoder with the brute-force kernel"},
  };
  for (std::string_view name : pipeline::kStages) {
    auto* cmd = app.add_subcommand(std::string(name), about.at(name));
    add_path(cmd, "--in", io.in, "input file or directory");
    add_path(cmd, "--out", io.out, "output file or directory");
    add_path(cmd, "--codebook", io.codebook, "codebook file");
    add_path(cmd, "--stats", io.stats, "pair statistics file");
    add_path(cmd, "--pairmodel", io.pairmodel, "pair basis file");
    add_path(cmd, "--redmodel", io.redmodel, "reduction model file");
    add_path(cmd, "--index", io.index, "signature index file");
    add_path(cmd, "--ground-truth", io.ground_truth, "ground truth file");
    if (name == "query") {
      cmd->add_option("--query", io.query, "indexed image id or .sig file")->required();
      cmd->add_option("--top", io.top, "keep the first K hits (0 = all)");
    }
    if (name == "oracle-check") cmd->add_option("--trials", io.trials, "random instances");
  }
  app.add_subcommand("run", "every stage from fit-codebook to index, then evaluate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 3;
  }

  PipelineConfig cfg;
  try {
    if (!config_path.empty()) cfg = load_config(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      set_config_value(cfg, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
    }
    if (seed) cfg.seed = *seed;
    if (threads) cfg.threads = *threads;
    cfg.validate();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return pipeline::exit_code_for(e);
  }

  const pipeline::Streams streams{std::cout, std::cerr};
  const std::string stage = app.get_subcommands().front()->get_name();
  if (stage == "run") return pipeline::run_all(cfg, streams);
  return pipeline::run_stage(stage, cfg, io, streams);
}
