// polymine: command-line driver for the mining pipeline. `run` executes every
// stage configured in a pipeline config in canonical order; each stage also
// has a standalone subcommand for iterating on a single step. Data errors
// print one machine-readable JSON object to stderr and exit 1; usage errors
// exit 2.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "polymine/errors.hpp"
#include "polymine/io.hpp"
#include "polymine/pipeline.hpp"

namespace {

struct CliArgs {
  std::string config_path;
  std::string out_override;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::size_t> k;
  std::optional<double> threshold;
};

void print_stage_line(const polymine::StageResult& res) {
  std::cout << res.name << ":";
  for (const std::string& a : res.artifacts) std::cout << " " << a;
  if (res.manifest.contains("counts")) std::cout << " " << res.manifest["counts"].dump();
  std::cout << "\n";
}

int run_whole_pipeline(const CliArgs& args) {
  polymine::PipelineConfig cfg = polymine::load_pipeline_config(args.config_path);
  std::vector<polymine::StageResult> results =
      polymine::run_pipeline(cfg, args.seed, args.workers);
  for (const polymine::StageResult& res : results) print_stage_line(res);
  return 0;
}

// The config for a single stage is either a full pipeline config (the stage's
// entry is picked out, and the top-level seed and workers apply) or a bare
// JSON object holding just this stage's parameters.
int run_single_stage(const std::string& name, const CliArgs& args) {
  using polymine::ConfigError;
  nlohmann::json doc = nlohmann::json::parse(polymine::read_file(args.config_path), nullptr, false);
  if (doc.is_discarded()) throw polymine::ParseFailure(args.config_path + ": bad JSON");
  if (!doc.is_object()) throw ConfigError(args.config_path + ": config must be a JSON object");

  nlohmann::json params;
  std::uint64_t seed = 0;
  std::optional<std::size_t> config_workers;
  if (doc.contains("stages")) {
    polymine::PipelineConfig cfg = polymine::load_pipeline_config(args.config_path);
    if (!cfg.stages.contains(name))
      throw ConfigError(args.config_path + ": no parameters for stage '" + name + "'");
    params = cfg.stages[name];
    seed = cfg.seed;
    config_workers = cfg.workers;
  } else {
    params = doc;
  }
  if (args.seed) seed = *args.seed;
  if (!args.out_override.empty()) params["out"] = args.out_override;
  if (args.k) params["k"] = *args.k;
  if (args.threshold) params["threshold"] = *args.threshold;

  polymine::StageContext ctx;
  ctx.base = std::filesystem::absolute(std::filesystem::path(args.config_path)).parent_path();
  ctx.root_seed = seed;
  ctx.workers = polymine::resolve_workers(args.workers, config_workers);

  polymine::PipelineConfig one;
  one.base = ctx.base;
  one.seed = seed;
  one.stages = nlohmann::json::object();
  one.stages[name] = params;
  polymine::validate_inputs(one, ctx);

  // Same stale-marker discipline as the full run: the manifest disappears
  // before the stage executes and reappears only after a complete write.
  if (params.contains("out")) {
    std::error_code ec;
    std::filesystem::remove(polymine::manifest_path_for(polymine::detail::resolve_path(
                                ctx, params["out"].get<std::string>())),
                            ec);
  }
  auto t0 = std::chrono::steady_clock::now();
  polymine::StageResult res = polymine::run_stage(name, params, ctx);
  auto t1 = std::chrono::steady_clock::now();
  res.manifest["wall_time_s"] = std::chrono::duration<double>(t1 - t0).count();
  res.manifest["base_dir"] = ctx.base.string();
  if (!res.artifacts.empty())
    polymine::atomic_write_file(polymine::manifest_path_for(res.artifacts.front()),
                                res.manifest.dump(2) + "\n");
  print_stage_line(res);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deterministic margin-based mining pipeline"};
  app.require_subcommand(1);

  CliArgs args;
  auto add_common = [&](CLI::App* sub, bool with_out) {
    sub->add_option("--config", args.config_path,
                    "pipeline config, or a bare JSON object of stage parameters")
        ->required();
    sub->add_option("--seed", args.seed, "root seed override");
    sub->add_option("--workers", args.workers,
                    "worker count (the POLYMINE_WORKERS env var takes precedence)");
    if (with_out) sub->add_option("--out", args.out_override, "artifact path override");
  };

  add_common(app.add_subcommand("run", "run every configured stage in canonical order"), false);

  const std::vector<std::pair<const char*, const char*>> stages = {
      {"lid-fit", "fit per-language acceptance thresholds from labelled dev scores"},
      {"lid-apply", "split segments into accepted/rejected by calibrated thresholds"},
      {"segment", "expand VAD units into merged segment candidates"},
      {"mine", "mine aligned pairs between two embedding stores"},
      {"resolve-overlaps", "drop lower-weight overlapping segments per recording"},
      {"filter", "apply corpus filter rules and write verdicts"},
      {"etox", "count lexicon matches and flag added toxicity"},
      {"blaser-score", "score items with the quality regressor"},
      {"blaser-train", "train the quality regressor"},
      {"eval-xsim", "cross-lingual retrieval error between two embedding stores"},
      {"eval-chrf", "character F-score over a hypothesis/reference corpus"},
      {"eval-robustness", "per-group score dispersion report"},
      {"eval-bias", "grouped-score delta report"},
  };
  for (const auto& [name, help] : stages) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_common(sub, true);
    if (std::string(name) == "mine") {
      sub->add_option("--k", args.k, "neighbours per side");
      sub->add_option("--threshold", args.threshold, "margin acceptance threshold");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const std::string name = app.get_subcommands().front()->get_name();
    return name == "run" ? run_whole_pipeline(args) : run_single_stage(name, args);
  } catch (const polymine::Error& e) {
    std::cerr << nlohmann::json{{"error", e.kind}, {"message", e.what()}}.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", "Internal"}, {"message", e.what()}}.dump() << "\n";
    return 1;
  }
}
