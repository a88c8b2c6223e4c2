// End-to-end tests for the stage pipeline: a full fixture corpus through all
// fourteen stages, byte-identical reruns across worker counts, zero-count
// behaviour on an empty corpus, up-front input validation, stage-named
// failures with stale-artifact semantics, and manifest replay.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "polymine/errors.hpp"
#include "polymine/io.hpp"
#include "polymine/lid.hpp"
#include "polymine/mining.hpp"
#include "polymine/pipeline.hpp"
#include "polymine/rng.hpp"

#include "pipeline_fixture.hpp"
#include "test_util.hpp"

using namespace polymine;
using fixture::build_full_fixture;
using fixture::speech_segment;
using fixture::text_segment;
using fixture::write_lexicon_files;
using testutil::TempDir;

namespace {

nlohmann::json parse_file(const std::string& path) {
  return nlohmann::json::parse(read_file(path));
}

}  // namespace

TEST_CASE("the canonical stage order is fixed") {
  REQUIRE(stage_order().size() == 14);
  CHECK(stage_order().front() == "lid-fit");
  CHECK(stage_order()[3] == "mine");
  CHECK(stage_order().back() == "eval-bias");
}

TEST_CASE("a full corpus runs through every stage deterministically") {
  ::unsetenv("POLYMINE_WORKERS");
  TempDir dir("pipe-e2e");
  std::string cfg_path = build_full_fixture(dir);
  PipelineConfig cfg = load_pipeline_config(cfg_path);
  std::vector<StageResult> res = run_pipeline(cfg, std::nullopt, std::nullopt);
  REQUIRE(res.size() == 14);

  std::map<std::string, std::string> hashes;
  for (const StageResult& r : res) {
    REQUIRE_FALSE(r.artifacts.empty());
    for (const std::string& a : r.artifacts) {
      REQUIRE(std::filesystem::exists(a));
      hashes[a] = sha256_file(a);
    }
    CHECK(std::filesystem::exists(manifest_path_for(r.artifacts.front())));
  }

  auto counts_of = [&](const std::string& stage) {
    for (const StageResult& r : res)
      if (r.name == stage) return r.manifest.at("counts");
    FAIL("no stage named " + stage);
    return nlohmann::json();
  };

  CHECK(counts_of("lid-fit")["languages"] == 2);
  nlohmann::json lid = counts_of("lid-apply");
  CHECK(lid["input"] == 10);
  CHECK(lid["accepted"].get<int>() + lid["rejected"].get<int>() == 10);
  CHECK(counts_of("segment")["candidates"] == 16);  // 4+3+2+1 and 3+2+1 runs

  // Mining must recover every aligned row pair; the overlap stage's spans
  // never conflict, so nothing is dropped there.
  std::size_t mined = counts_of("mine")["pairs"].get<std::size_t>();
  CHECK(mined >= 12);
  CHECK(counts_of("resolve-overlaps")["kept_pairs"].get<std::size_t>() == mined);
  std::vector<MinedPair> resolved = read_pairs(dir.file("out/resolved.tsv"));
  REQUIRE(resolved.size() == mined);
  std::set<std::string> join_ids;
  for (const MinedPair& p : resolved) join_ids.insert(p.src_id + "::" + p.tgt_id);
  for (int i = 0; i < 12; ++i)
    CHECK(join_ids.count("s" + std::to_string(i) + "::t" + std::to_string(i)) == 1);

  nlohmann::json fc = counts_of("filter");
  CHECK(fc["items"] == 12);
  CHECK(fc["dropped"] == 1);  // the oversized item 5

  // The export stage drops exactly the pairs whose verdict said "0".
  std::size_t dropped_pairs = join_ids.count("s5::t5");
  nlohmann::json ec = counts_of("export");
  CHECK(ec["input_pairs"].get<std::size_t>() == resolved.size());
  CHECK(ec["exported_pairs"].get<std::size_t>() == resolved.size() - dropped_pairs);

  CHECK(counts_of("etox")["flagged"] == 1);

  // Report artifacts carry the hand-computable numbers.
  CHECK(parse_file(dir.file("out/xsim.json"))["xsim"].get<double>() == 0.0);
  CHECK(parse_file(dir.file("out/bias.json"))["delta_percent"].get<double>() ==
        Catch::Approx(10.888889).margin(1e-4));
  CHECK(parse_file(dir.file("out/chrf.json"))["mean_chrf"].get<double>() ==
        Catch::Approx((100.0 + 219500.0 / 5049.0) / 3.0).margin(1e-9));
  nlohmann::json rob = parse_file(dir.file("out/robustness.json"));
  CHECK(rob["chrf_ms"].get<double>() == Catch::Approx(30.0).margin(1e-12));
  CHECK(rob["coefvar_ms"].get<double>() ==
        Catch::Approx(std::sqrt(200.0) / 50.0).margin(1e-12));

  auto score_lines = split_lines(read_file(dir.file("out/scores.tsv")));
  REQUIRE(score_lines.size() == 6);
  CHECK(score_lines[0] == "id\tscore");

  // Rerunning — with any worker count — reproduces every artifact bytewise.
  run_pipeline(cfg, std::nullopt, std::nullopt);
  for (const auto& [a, h] : hashes) CHECK(sha256_file(a) == h);
  run_pipeline(cfg, std::nullopt, 4);
  for (const auto& [a, h] : hashes) CHECK(sha256_file(a) == h);
}

TEST_CASE("an empty corpus flows through with zero-count artifacts") {
  ::unsetenv("POLYMINE_WORKERS");
  TempDir dir("pipe-empty");

  atomic_write_file(dir.file("dev.tsv"), std::string(kDevHeader) + "\n");
  atomic_write_file(dir.file("segments.jsonl"), "");
  atomic_write_file(dir.file("vad.jsonl"), "");
  EmbeddingMatrix empty;
  empty.dim = 8;
  empty.count = 0;
  write_embeddings(empty, dir.file("src.emb"));
  write_embeddings(empty, dir.file("tgt.emb"));
  atomic_write_file(dir.file("src.ids"), "");
  atomic_write_file(dir.file("tgt.ids"), "");
  atomic_write_file(dir.file("filter_items.jsonl"), "");
  write_lexicon_files(dir, "src_list.txt", "src_sidecar.json");
  write_lexicon_files(dir, "out_list.txt", "out_sidecar.json");
  atomic_write_file(dir.file("etox_items.jsonl"), "");
  atomic_write_file(dir.file("score_items.jsonl"), "");
  atomic_write_file(dir.file("chrf_corpus.tsv"), "id\thypothesis\treference\n");
  atomic_write_file(dir.file("robust_corpus.tsv"), "id\tgroup_key\tscore\n");

  nlohmann::json cfg;
  cfg["seed"] = 1;
  nlohmann::json& st = cfg["stages"];
  st["lid-fit"] = {{"dev", "dev.tsv"}, {"out", "out/calibration.json"}};
  st["lid-apply"] = {{"segments", "segments.jsonl"},
                     {"calibration", "out/calibration.json"},
                     {"out", "out/accepted.jsonl"},
                     {"rejected_out", "out/rejected.jsonl"}};
  st["segment"] = {{"vad_units", "vad.jsonl"}, {"out", "out/candidates.jsonl"}};
  st["mine"] = {{"src_emb", "src.emb"},
                {"src_ids", "src.ids"},
                {"tgt_emb", "tgt.emb"},
                {"tgt_ids", "tgt.ids"},
                {"out", "out/pairs.tsv"}};
  st["resolve-overlaps"] = {{"pairs", "out/pairs.tsv"},
                            {"segments", "segments.jsonl"},
                            {"out", "out/resolved.tsv"}};
  st["filter"] = {{"items", "filter_items.jsonl"}, {"out", "out/verdicts.tsv"}};
  st["export"] = {{"pairs", "out/resolved.tsv"},
                  {"verdicts", "out/verdicts.tsv"},
                  {"out", "out/exported.tsv"}};
  st["etox"] = {{"items", "etox_items.jsonl"},   {"src_list", "src_list.txt"},
                {"src_sidecar", "src_sidecar.json"}, {"out_list", "out_list.txt"},
                {"out_sidecar", "out_sidecar.json"}, {"out", "out/etox.json"}};
  st["blaser-score"] = {{"items", "score_items.jsonl"},
                        {"mode", "unsupervised"},
                        {"out", "out/scores.tsv"}};
  st["eval-xsim"] = {{"src_emb", "src.emb"}, {"tgt_emb", "tgt.emb"}, {"out", "out/xsim.json"}};
  st["eval-chrf"] = {{"corpus", "chrf_corpus.tsv"}, {"out", "out/chrf.json"}};
  st["eval-robustness"] = {{"corpus", "robust_corpus.tsv"}, {"out", "out/robustness.json"}};
  atomic_write_file(dir.file("config.json"), cfg.dump(2) + "\n");

  PipelineConfig pc = load_pipeline_config(dir.file("config.json"));
  std::vector<StageResult> res = run_pipeline(pc, std::nullopt, std::nullopt);
  REQUIRE(res.size() == 12);
  for (const StageResult& r : res) {
    INFO("stage " << r.name);
    for (const std::string& a : r.artifacts) REQUIRE(std::filesystem::exists(a));
    const nlohmann::json& counts = r.manifest.at("counts");
    for (const auto& [key, value] : counts.items()) {
      if (value.is_number_integer()) CHECK(value.get<std::int64_t>() == 0);
    }
  }
  CHECK(read_pairs(dir.file("out/pairs.tsv")).empty());
  CHECK(parse_file(dir.file("out/xsim.json"))["pairs"] == 0);
  CHECK(parse_file(dir.file("out/etox.json"))["rate"] == 0.0);
  CHECK(read_file(dir.file("out/scores.tsv")) == "id\tscore\n");
}

TEST_CASE("a missing input path fails validation before any stage runs") {
  TempDir dir("pipe-missing");
  atomic_write_file(dir.file("dev.tsv"), std::string(kDevHeader) + "\nspa\t0.900000\t1\n");
  nlohmann::json cfg;
  nlohmann::json& st = cfg["stages"];
  st["lid-fit"] = {{"dev", "dev.tsv"}, {"out", "out/calibration.json"}};
  st["mine"] = {{"src_emb", "missing.emb"},
                {"src_ids", "missing.ids"},
                {"tgt_emb", "missing.emb"},
                {"tgt_ids", "missing.ids"},
                {"out", "out/pairs.tsv"}};
  atomic_write_file(dir.file("config.json"), cfg.dump() + "\n");

  PipelineConfig pc = load_pipeline_config(dir.file("config.json"));
  try {
    run_pipeline(pc, std::nullopt, std::nullopt);
    FAIL("expected a validation error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("does not exist") != std::string::npos);
  }
  // Validation happens before execution: even the valid first stage did not run.
  CHECK_FALSE(std::filesystem::exists(dir.file("out/calibration.json")));
}

TEST_CASE("a failing stage is named and leaves its old artifact stale") {
  TempDir dir("pipe-fail");
  nlohmann::json good;
  good["stages"]["eval-bias"] = {{"masc", 49.9}, {"fem", 45.0}, {"out", "out/bias.json"}};
  atomic_write_file(dir.file("config.json"), good.dump() + "\n");
  PipelineConfig pc = load_pipeline_config(dir.file("config.json"));
  std::vector<StageResult> res = run_pipeline(pc, std::nullopt, std::nullopt);
  std::string artifact = res.at(0).artifacts.at(0);
  REQUIRE(std::filesystem::exists(manifest_path_for(artifact)));

  // Seed override is recorded in the manifest.
  std::vector<StageResult> res99 = run_pipeline(pc, 99, std::nullopt);
  CHECK(res99.at(0).manifest.at("root_seed") == 99);

  nlohmann::json bad = good;
  bad["stages"]["eval-bias"]["masc"] = 0.0;
  atomic_write_file(dir.file("config.json"), bad.dump() + "\n");
  PipelineConfig pc_bad = load_pipeline_config(dir.file("config.json"));
  try {
    run_pipeline(pc_bad, std::nullopt, std::nullopt);
    FAIL("expected the bias stage to fail");
  } catch (const Error& e) {
    CHECK(e.kind == "NonPositiveDenominator");
    CHECK(std::string(e.what()).find("stage 'eval-bias'") != std::string::npos);
  }
  // The old artifact survives but its manifest is gone: the stale marker.
  CHECK(std::filesystem::exists(artifact));
  CHECK_FALSE(std::filesystem::exists(manifest_path_for(artifact)));
}

TEST_CASE("manifests replay their stage and detect drift") {
  TempDir dir("pipe-replay");
  std::string corpus =
      "id\thypothesis\treference\n"
      "c0\tthe cat sat\tthe cat sat\n"
      "c1\tcat\tcat sat\n";
  atomic_write_file(dir.file("corpus.tsv"), corpus);
  nlohmann::json cfg;
  cfg["stages"]["eval-chrf"] = {{"corpus", "corpus.tsv"}, {"out", "out/chrf.json"}};
  atomic_write_file(dir.file("config.json"), cfg.dump() + "\n");

  PipelineConfig pc = load_pipeline_config(dir.file("config.json"));
  std::vector<StageResult> res = run_pipeline(pc, std::nullopt, std::nullopt);
  std::string artifact = res.at(0).artifacts.at(0);
  std::string mpath = manifest_path_for(artifact);

  ReplayResult ok = replay(mpath);
  CHECK(ok.reproduced);
  CHECK(ok.mismatched.empty());

  // A vandalized artifact is rebuilt in place and matches again.
  atomic_write_file(artifact, "junk");
  CHECK(replay(mpath).reproduced);
  nlohmann::json manifest = parse_file(mpath);
  CHECK(manifest.at("artifacts").at(artifact).get<std::string>() == sha256_file(artifact));

  // A tampered recorded hash is reported as a mismatch.
  manifest["artifacts"][artifact] = std::string(64, '0');
  atomic_write_file(mpath, manifest.dump(2) + "\n");
  ReplayResult drift = replay(mpath);
  CHECK_FALSE(drift.reproduced);
  REQUIRE(drift.mismatched.size() == 1);
  CHECK(drift.mismatched[0] == artifact);

  // A changed input refuses to replay at all.
  atomic_write_file(dir.file("corpus.tsv"), corpus + "c2\textra\trow\n");
  REQUIRE_THROWS_AS(replay(mpath), ConfigError);
}

TEST_CASE("worker resolution honors env, flag, config, default in that order") {
  ::unsetenv("POLYMINE_WORKERS");
  CHECK(resolve_workers(std::nullopt, std::nullopt) == 1);
  CHECK(resolve_workers(std::nullopt, 5) == 5);
  CHECK(resolve_workers(2, 5) == 2);

  ::setenv("POLYMINE_WORKERS", "3", 1);
  CHECK(resolve_workers(2, 5) == 3);
  ::setenv("POLYMINE_WORKERS", "abc", 1);
  CHECK_THROWS_AS(resolve_workers(2, 5), ConfigError);
  ::setenv("POLYMINE_WORKERS", "0", 1);
  CHECK_THROWS_AS(resolve_workers(std::nullopt, std::nullopt), ConfigError);
  ::unsetenv("POLYMINE_WORKERS");
}

TEST_CASE("pipeline configs are validated on load") {
  TempDir dir("pipe-cfg");

  atomic_write_file(dir.file("bad.json"), "{nope");
  REQUIRE_THROWS_AS(load_pipeline_config(dir.file("bad.json")), ParseFailure);

  atomic_write_file(dir.file("unknown.json"), R"({"stages": {"transmogrify": {}}})");
  REQUIRE_THROWS_AS(load_pipeline_config(dir.file("unknown.json")), ConfigError);

  atomic_write_file(dir.file("array.json"), R"({"stages": []})");
  REQUIRE_THROWS_AS(load_pipeline_config(dir.file("array.json")), ConfigError);

  atomic_write_file(dir.file("scalar.json"), R"({"stages": {"mine": 3}})");
  REQUIRE_THROWS_AS(load_pipeline_config(dir.file("scalar.json")), ConfigError);

  atomic_write_file(dir.file("minimal.json"), R"({"stages": {}})");
  PipelineConfig minimal = load_pipeline_config(dir.file("minimal.json"));
  CHECK(minimal.seed == 0);
  CHECK_FALSE(minimal.workers.has_value());
  CHECK(run_pipeline(minimal, std::nullopt, std::nullopt).empty());

  // A configured stage missing a required path key fails validation by name.
  atomic_write_file(dir.file("nopath.json"), R"({"stages": {"lid-fit": {"out": "o.json"}}})");
  PipelineConfig nopath = load_pipeline_config(dir.file("nopath.json"));
  try {
    run_pipeline(nopath, std::nullopt, std::nullopt);
    FAIL("expected missing-path error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("'dev'") != std::string::npos);
  }
}
