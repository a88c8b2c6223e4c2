#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "polymine/blaser.hpp"
#include "polymine/chrf.hpp"
#include "polymine/embedding.hpp"
#include "polymine/errors.hpp"
#include "polymine/filters.hpp"
#include "polymine/io.hpp"
#include "polymine/lid.hpp"
#include "polymine/metrics.hpp"
#include "polymine/mining.hpp"
#include "polymine/rng.hpp"
#include "polymine/toxicity.hpp"

namespace polymine {

// Fixed linear stage order. A config may name any subset; configured stages
// always execute in this sequence regardless of their order in the file.
inline const std::vector<std::string>& stage_order() {
  static const std::vector<std::string> order = {
      "lid-fit",      "lid-apply",    "segment",   "mine",
      "resolve-overlaps", "filter",   "export",    "etox",
      "blaser-train", "blaser-score", "eval-xsim", "eval-chrf",
      "eval-robustness", "eval-bias"};
  return order;
}

struct StageContext {
  std::filesystem::path base;  // directory all relative paths resolve against
  std::uint64_t root_seed = 0;
  std::size_t workers = 1;
};

struct StageResult {
  std::string name;
  nlohmann::json manifest;            // everything except wall_time_s
  std::vector<std::string> artifacts; // resolved paths written
};

// Worker-count precedence: POLYMINE_WORKERS env var, then the command-line
// flag, then the config file, then 1.
inline std::size_t resolve_workers(std::optional<std::size_t> flag,
                                   std::optional<std::size_t> config) {
  if (const char* env = std::getenv("POLYMINE_WORKERS")) {
    char* end = nullptr;
    unsigned long v = std::strtoul(env, &end, 10);
    if (end && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
    throw ConfigError("POLYMINE_WORKERS must be a positive integer, got '" + std::string(env) +
                      "'");
  }
  if (flag) return *flag;
  if (config) return *config;
  return 1;
}

namespace detail {

inline std::string resolve_path(const StageContext& ctx, const std::string& p) {
  std::filesystem::path fp(p);
  if (fp.is_absolute()) return fp.string();
  return (ctx.base / fp).lexically_normal().string();
}

inline std::string require_str(const nlohmann::json& params, const char* key,
                               const std::string& stage) {
  if (!params.contains(key) || !params[key].is_string())
    throw ConfigError("stage '" + stage + "' needs string parameter '" + key + "'");
  return params[key].get<std::string>();
}

// Parameter keys naming input files, per stage; keys marked optional are
// validated only when present.
struct PathKey {
  const char* key;
  bool required;
};

inline const std::map<std::string, std::vector<PathKey>>& input_path_keys() {
  static const std::map<std::string, std::vector<PathKey>> keys = {
      {"lid-fit", {{"dev", true}}},
      {"lid-apply", {{"segments", true}, {"calibration", true}}},
      {"segment", {{"vad_units", true}}},
      {"mine", {{"src_emb", true}, {"src_ids", true}, {"tgt_emb", true}, {"tgt_ids", true}}},
      {"resolve-overlaps", {{"pairs", true}, {"segments", true}}},
      {"filter", {{"items", true}}},
      {"export", {{"pairs", true}, {"verdicts", false}}},
      {"etox",
       {{"items", true},
        {"src_list", true},
        {"src_sidecar", true},
        {"out_list", true},
        {"out_sidecar", true}}},
      {"blaser-train", {{"train", true}}},
      {"blaser-score", {{"items", true}, {"model", false}}},
      {"eval-xsim", {{"src_emb", true}, {"tgt_emb", true}, {"gold", false}}},
      {"eval-chrf", {{"corpus", true}}},
      {"eval-robustness", {{"corpus", true}}},
      {"eval-bias", {}},
  };
  return keys;
}

inline nlohmann::json hash_inputs(const StageContext& ctx, const std::string& stage,
                                  const nlohmann::json& params) {
  nlohmann::json inputs = nlohmann::json::object();
  auto it = input_path_keys().find(stage);
  if (it == input_path_keys().end()) return inputs;
  for (const PathKey& pk : it->second) {
    if (!params.contains(pk.key)) continue;
    std::string rel = params[pk.key].get<std::string>();
    inputs[rel] = sha256_file(resolve_path(ctx, rel));
  }
  return inputs;
}

inline std::string out_path(const StageContext& ctx, const nlohmann::json& params,
                            const std::string& stage) {
  return resolve_path(ctx, require_str(params, "out", stage));
}

inline std::vector<nlohmann::json> read_jsonl(const std::string& path) {
  std::vector<nlohmann::json> rows;
  for (std::string_view line : split_lines(read_file(path))) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseFailure(path + ": bad JSON line");
    rows.push_back(std::move(j));
  }
  return rows;
}

// TSV with a mandatory header row; returns the data rows split on tabs.
inline std::vector<std::vector<std::string>> read_tsv(const std::string& path,
                                                      const std::string& header) {
  std::string text = read_file(path);
  auto lines = split_lines(text);
  if (lines.empty() || lines[0] != header)
    throw ParseFailure(path + ": expected header '" + header + "'");
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    std::vector<std::string> cells;
    for (std::string_view c : split_tabs(lines[i])) cells.emplace_back(c);
    rows.push_back(std::move(cells));
  }
  return rows;
}

inline double to_double(const std::string& s, const std::string& origin) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ParseFailure(origin + ": bad number '" + s + "'");
  }
}

inline EmbeddingMatrix load_normalized(const std::string& path) {
  return normalize(load_embeddings(path));
}

inline std::vector<double> json_vector(const nlohmann::json& j, const std::string& origin) {
  if (!j.is_array()) throw ParseFailure(origin + ": expected a number array");
  std::vector<double> v;
  v.reserve(j.size());
  for (const nlohmann::json& x : j) {
    if (!x.is_number()) throw ParseFailure(origin + ": expected a number array");
    v.push_back(x.get<double>());
  }
  return v;
}

// Renormalize a raw vector to unit length so feature builders accept it.
inline std::vector<double> unit(std::vector<double> v, const std::string& origin) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  double n = std::sqrt(ss);
  if (n == 0.0) throw ZeroNormRow(origin + ": zero-norm vector");
  for (double& x : v) x /= n;
  return v;
}

}  // namespace detail

// --- individual stages ------------------------------------------------------

inline StageResult run_stage(const std::string& name, const nlohmann::json& params,
                             const StageContext& ctx) {
  using nlohmann::json;
  namespace d = detail;
  StageResult res;
  res.name = name;
  json& manifest = res.manifest;
  manifest["stage"] = name;
  manifest["config"] = params;
  manifest["root_seed"] = ctx.root_seed;
  manifest["workers"] = ctx.workers;
  manifest["inputs"] = d::hash_inputs(ctx, name, params);
  const std::uint64_t stage_seed = derive_seed(ctx.root_seed, name);
  manifest["stage_seed"] = stage_seed;
  json counts = json::object();

  auto finish = [&](const std::string& artifact_path, const std::string& content) {
    atomic_write_file(artifact_path, content);
    res.artifacts.push_back(artifact_path);
  };

  if (name == "lid-fit") {
    std::string dev_path = d::resolve_path(ctx, d::require_str(params, "dev", name));
    std::vector<LidSample> dev = parse_dev_tsv(read_file(dev_path), dev_path);
    std::map<std::string, LidCalibration> cal = fit(dev);
    counts["samples"] = dev.size();
    counts["languages"] = cal.size();
    std::size_t fallbacks = 0;
    for (const auto& [lang, c] : cal)
      if (c.fallback) ++fallbacks;
    counts["fallbacks"] = fallbacks;
    finish(d::out_path(ctx, params, name), calibration_to_json(cal).dump(2) + "\n");
  } else if (name == "lid-apply") {
    std::string seg_path = d::resolve_path(ctx, d::require_str(params, "segments", name));
    std::string cal_path = d::resolve_path(ctx, d::require_str(params, "calibration", name));
    std::vector<SegmentRecord> records = load_segments_jsonl(seg_path);
    json cal_json = json::parse(read_file(cal_path), nullptr, false);
    if (cal_json.is_discarded()) throw ParseFailure(cal_path + ": bad JSON");
    std::map<std::string, LidCalibration> cal = calibration_from_json(cal_json);
    LidApplyResult applied = polymine::apply(records, cal);
    counts["input"] = records.size();
    counts["accepted"] = applied.accepted.size();
    counts["rejected"] = applied.rejected.size();
    manifest["warnings"] = applied.warnings;
    std::string out;
    for (const SegmentRecord& r : applied.accepted) out += segment_to_json(r).dump() + "\n";
    finish(d::out_path(ctx, params, name), out);
    if (params.contains("rejected_out")) {
      std::string rej;
      for (const SegmentRecord& r : applied.rejected) rej += segment_to_json(r).dump() + "\n";
      finish(d::resolve_path(ctx, params["rejected_out"].get<std::string>()), rej);
    }
  } else if (name == "segment") {
    std::string vad_path = d::resolve_path(ctx, d::require_str(params, "vad_units", name));
    std::size_t max_merge = params.value("max_merge", 8u);
    std::vector<SegmentRecord> units = load_segments_jsonl(vad_path);
    // Units may span several recordings; candidates are generated per
    // recording, in first-appearance order.
    std::vector<std::string> uri_order;
    std::map<std::string, std::vector<SegmentRecord>> by_uri;
    for (const SegmentRecord& u : units) {
      if (!u.audio_uri) throw MissingSpan("VAD unit " + u.id + " has no audio_uri");
      if (by_uri.find(*u.audio_uri) == by_uri.end()) uri_order.push_back(*u.audio_uri);
      by_uri[*u.audio_uri].push_back(u);
    }
    std::string out;
    std::size_t n_cands = 0;
    for (const std::string& uri : uri_order) {
      std::vector<SegmentRecord> cands = make_overlapping_candidates(by_uri[uri], max_merge);
      n_cands += cands.size();
      for (const SegmentRecord& c : cands) out += segment_to_json(c).dump() + "\n";
    }
    counts["units"] = units.size();
    counts["recordings"] = uri_order.size();
    counts["candidates"] = n_cands;
    finish(d::out_path(ctx, params, name), out);
  } else if (name == "mine") {
    std::string src_emb_path = d::resolve_path(ctx, d::require_str(params, "src_emb", name));
    std::string src_ids_path = d::resolve_path(ctx, d::require_str(params, "src_ids", name));
    std::string tgt_emb_path = d::resolve_path(ctx, d::require_str(params, "tgt_emb", name));
    std::string tgt_ids_path = d::resolve_path(ctx, d::require_str(params, "tgt_ids", name));
    MiningConfig cfg;
    cfg.k = params.value("k", cfg.k);
    cfg.threshold = params.value("threshold", cfg.threshold);
    std::string margin = params.value("margin", std::string("ratio"));
    if (margin == "ratio")
      cfg.margin_kind = MarginKind::ratio;
    else if (margin == "difference")
      cfg.margin_kind = MarginKind::difference;
    else
      throw ConfigError("mine: margin must be 'ratio' or 'difference'");
    if (params.contains("max_alignments"))
      cfg.max_alignments_per_segment = params["max_alignments"].get<std::size_t>();
    cfg.ivf_cells = params.value("ivf_cells", 0u);
    cfg.ivf_probe = params.value("ivf_probe", 0u);
    std::string index = params.value("index", std::string("exact"));
    IndexMode mode;
    if (index == "exact")
      mode = IndexMode::exact;
    else if (index == "ivf")
      mode = IndexMode::ivf;
    else
      throw ConfigError("mine: index must be 'exact' or 'ivf'");
    EmbeddingMatrix src_m = load_embeddings(src_emb_path);
    EmbeddingMatrix tgt_m = load_embeddings(tgt_emb_path);
    counts["src_rows"] = src_m.count;
    counts["tgt_rows"] = tgt_m.count;
    std::string out_file = d::out_path(ctx, params, name);
    if (src_m.count == 0 || tgt_m.count == 0) {
      counts["pairs"] = 0;  // an empty corpus mines an empty (header-only) table
      finish(out_file, std::string(kPairHeader) + "\n");
    } else {
      Store src = make_store(normalize(std::move(src_m)), load_id_order(src_ids_path));
      const bool self = src_emb_path == tgt_emb_path && src_ids_path == tgt_ids_path;
      std::vector<MinedPair> pairs;
      if (self) {
        pairs = mine(src, src, cfg, mode, stage_seed, ctx.workers);
      } else {
        Store tgt = make_store(normalize(std::move(tgt_m)), load_id_order(tgt_ids_path));
        pairs = mine(src, tgt, cfg, mode, stage_seed, ctx.workers);
      }
      counts["pairs"] = pairs.size();
      finish(out_file, serialize_pairs(pairs));
    }
  } else if (name == "resolve-overlaps") {
    std::string pairs_path = d::resolve_path(ctx, d::require_str(params, "pairs", name));
    std::string seg_path = d::resolve_path(ctx, d::require_str(params, "segments", name));
    std::vector<MinedPair> pairs = read_pairs(pairs_path);
    std::unordered_map<std::string, SegmentRecord> segs;
    for (SegmentRecord& r : load_segments_jsonl(seg_path)) segs.emplace(r.id, std::move(r));
    std::vector<MinedPair> kept = resolve_overlaps(pairs, segs);
    counts["input_pairs"] = pairs.size();
    counts["kept_pairs"] = kept.size();
    counts["dropped_pairs"] = pairs.size() - kept.size();
    finish(d::out_path(ctx, params, name), serialize_pairs(kept));
  } else if (name == "filter") {
    std::string items_path = d::resolve_path(ctx, d::require_str(params, "items", name));
    FilterConfig cfg;
    cfg.max_subwords_human = params.value("max_subwords_human", cfg.max_subwords_human);
    cfg.max_subwords_pooled = params.value("max_subwords_pooled", cfg.max_subwords_pooled);
    cfg.max_subwords_per_sec = params.value("max_subwords_per_sec", cfg.max_subwords_per_sec);
    cfg.min_utt_s = params.value("min_utt_s", cfg.min_utt_s);
    cfg.max_utt_s = params.value("max_utt_s", cfg.max_utt_s);
    cfg.max_emoji_frac = params.value("max_emoji_frac", cfg.max_emoji_frac);
    cfg.max_punct_frac = params.value("max_punct_frac", cfg.max_punct_frac);
    cfg.max_space_frac = params.value("max_space_frac", cfg.max_space_frac);
    cfg.toxicity_imbalance_max = params.value("toxicity_imbalance_max", cfg.toxicity_imbalance_max);
    cfg.t2u_max_sec_per_token = params.value("t2u_max_sec_per_token", cfg.t2u_max_sec_per_token);
    std::vector<FilterVerdict> verdicts;
    std::size_t kept = 0;
    for (const json& row : d::read_jsonl(items_path)) {
      FilterVerdict v = filter_pair(filter_input_from_json(row), cfg);
      kept += v.kept ? 1 : 0;
      verdicts.push_back(std::move(v));
    }
    counts["items"] = verdicts.size();
    counts["kept"] = kept;
    counts["dropped"] = verdicts.size() - kept;
    finish(d::out_path(ctx, params, name), serialize_verdicts(verdicts));
  } else if (name == "export") {
    std::string pairs_path = d::resolve_path(ctx, d::require_str(params, "pairs", name));
    std::vector<MinedPair> pairs = read_pairs(pairs_path);
    std::vector<MinedPair> out_pairs;
    if (params.contains("verdicts")) {
      // Verdict pair ids use the `src::tgt` join convention.
      std::string v_path = d::resolve_path(ctx, params["verdicts"].get<std::string>());
      std::unordered_map<std::string, bool> kept_by_id;
      for (const std::vector<std::string>& row :
           d::read_tsv(v_path, "pair_id\tkept\tfailed_rules")) {
        if (row.size() < 2) throw ParseFailure(v_path + ": short verdict row");
        kept_by_id[row[0]] = row[1] == "1";
      }
      for (const MinedPair& p : pairs) {
        auto it = kept_by_id.find(p.src_id + "::" + p.tgt_id);
        if (it == kept_by_id.end() || it->second) out_pairs.push_back(p);
      }
    } else {
      out_pairs = pairs;
    }
    counts["input_pairs"] = pairs.size();
    counts["exported_pairs"] = out_pairs.size();
    finish(d::out_path(ctx, params, name), serialize_pairs(out_pairs));
  } else if (name == "etox") {
    std::string items_path = d::resolve_path(ctx, d::require_str(params, "items", name));
    ToxicityLexicon lex_src =
        load_lexicon(d::resolve_path(ctx, d::require_str(params, "src_list", name)),
                     d::resolve_path(ctx, d::require_str(params, "src_sidecar", name)));
    ToxicityLexicon lex_out =
        load_lexicon(d::resolve_path(ctx, d::require_str(params, "out_list", name)),
                     d::resolve_path(ctx, d::require_str(params, "out_sidecar", name)));
    std::vector<std::string> ids;
    std::vector<std::pair<std::string, std::string>> items;
    for (const json& row : d::read_jsonl(items_path)) {
      if (!row.contains("id") || !row.contains("src_text") || !row.contains("out_text"))
        throw ParseFailure(items_path + ": rows need id/src_text/out_text");
      ids.push_back(row["id"].get<std::string>());
      items.emplace_back(row["src_text"].get<std::string>(), row["out_text"].get<std::string>());
    }
    json report;
    report["items"] = json::array();
    if (items.empty()) {
      report["flagged"] = 0;
      report["rate"] = 0.0;
    } else {
      CorpusToxicity tox = corpus_rate(items, lex_src, lex_out);
      report["flagged"] = tox.flagged;
      report["rate"] = tox.rate;
      for (std::size_t i = 0; i < items.size(); ++i) {
        json item;
        item["id"] = ids[i];
        item["src"] = report_to_json(tox.per_item[i].first);
        item["out"] = report_to_json(tox.per_item[i].second);
        item["added_toxicity"] = added_toxicity(tox.per_item[i].first, tox.per_item[i].second);
        report["items"].push_back(std::move(item));
      }
    }
    counts["items"] = items.size();
    counts["flagged"] = report["flagged"];
    finish(d::out_path(ctx, params, name), report.dump(2) + "\n");
  } else if (name == "blaser-train") {
    std::string train_path = d::resolve_path(ctx, d::require_str(params, "train", name));
    std::string mode = params.value("mode", std::string("supervised"));
    if (mode != "supervised" && mode != "qe")
      throw ConfigError("blaser-train: mode must be 'supervised' or 'qe'");
    std::vector<TrainExample> examples;
    for (const json& row : d::read_jsonl(train_path)) {
      TrainExample e;
      std::vector<double> src = d::unit(d::json_vector(row.at("src"), train_path), train_path);
      std::vector<double> mt = d::unit(d::json_vector(row.at("mt"), train_path), train_path);
      if (mode == "supervised") {
        std::vector<double> ref = d::unit(d::json_vector(row.at("ref"), train_path), train_path);
        e.features = features_supervised(src, mt, ref);
      } else {
        e.features = features_qe(src, mt);
      }
      e.label = row.at("label").get<double>();
      examples.push_back(std::move(e));
    }
    if (examples.empty()) throw EmptyInput("blaser-train: no training rows in " + train_path);
    TrainHyper hyper;
    hyper.dropout = params.value("dropout", hyper.dropout);
    hyper.weight_decay = params.value("weight_decay", hyper.weight_decay);
    hyper.batch = params.value("batch", hyper.batch);
    hyper.epochs = params.value("epochs", hyper.epochs);
    hyper.lr0 = params.value("lr0", hyper.lr0);
    hyper.seed = stage_seed;
    std::vector<std::size_t> dims = {examples[0].features.size(),
                                     params.value("hidden1", 64u),
                                     params.value("hidden2", 32u), 1};
    BlaserModel model = init_model(dims, stage_seed);
    std::vector<double> trace = train(model, examples, hyper);
    counts["examples"] = examples.size();
    counts["epochs"] = hyper.epochs;
    counts["final_loss"] = trace.empty() ? 0.0 : trace.back();
    finish(d::out_path(ctx, params, name), model_to_json(model).dump(2) + "\n");
  } else if (name == "blaser-score") {
    std::string items_path = d::resolve_path(ctx, d::require_str(params, "items", name));
    std::string mode = params.value("mode", std::string("unsupervised"));
    std::optional<BlaserModel> model;
    if (mode == "supervised" || mode == "qe") {
      std::string model_path = d::resolve_path(ctx, d::require_str(params, "model", name));
      json mj = json::parse(read_file(model_path), nullptr, false);
      if (mj.is_discarded()) throw ParseFailure(model_path + ": bad JSON");
      model = model_from_json(mj);
    } else if (mode != "unsupervised") {
      throw ConfigError("blaser-score: mode must be unsupervised, supervised, or qe");
    }
    std::string out = "id\tscore\n";
    std::size_t n = 0;
    for (const json& row : d::read_jsonl(items_path)) {
      std::string id = row.at("id").get<std::string>();
      std::vector<double> src = d::unit(d::json_vector(row.at("src"), items_path), items_path);
      std::vector<double> mt = d::unit(d::json_vector(row.at("mt"), items_path), items_path);
      double score = 0.0;
      if (mode == "unsupervised") {
        std::vector<double> ref = d::unit(d::json_vector(row.at("ref"), items_path), items_path);
        score = score_unsupervised(src, mt, ref);
      } else if (mode == "supervised") {
        std::vector<double> ref = d::unit(d::json_vector(row.at("ref"), items_path), items_path);
        score = score_supervised(*model, features_supervised(src, mt, ref));
      } else {
        score = score_supervised(*model, features_qe(src, mt));
      }
      out += id + "\t" + format_fixed(score) + "\n";
      ++n;
    }
    counts["items"] = n;
    finish(d::out_path(ctx, params, name), out);
  } else if (name == "eval-xsim") {
    EmbeddingMatrix src =
        d::load_normalized(d::resolve_path(ctx, d::require_str(params, "src_emb", name)));
    EmbeddingMatrix tgt =
        d::load_normalized(d::resolve_path(ctx, d::require_str(params, "tgt_emb", name)));
    XsimConfig cfg;
    cfg.workers = ctx.workers;
    std::string mode = params.value("mode", std::string("cosine"));
    if (mode == "cosine")
      cfg.mode = XsimMode::cosine;
    else if (mode == "margin")
      cfg.mode = XsimMode::margin;
    else
      throw ConfigError("eval-xsim: mode must be 'cosine' or 'margin'");
    cfg.margin_k = params.value("margin_k", cfg.margin_k);
    std::vector<std::size_t> gold(src.count);
    if (params.contains("gold")) {
      std::string gold_path = d::resolve_path(ctx, params["gold"].get<std::string>());
      std::vector<std::vector<std::string>> rows = d::read_tsv(gold_path, "src_row\ttgt_row");
      if (rows.size() != src.count) throw CountMismatch(gold_path + ": row count mismatch");
      for (const std::vector<std::string>& r : rows) {
        if (r.size() != 2) throw ParseFailure(gold_path + ": expected 2 columns");
        gold[std::stoull(r[0])] = std::stoull(r[1]);
      }
    } else {
      std::iota(gold.begin(), gold.end(), 0);  // row-aligned corpora
    }
    double err = xsim(src, tgt, gold, cfg);
    json report;
    report["xsim"] = err;
    report["mode"] = mode;
    report["margin_k"] = cfg.margin_k;
    report["pairs"] = src.count;
    counts["pairs"] = src.count;
    finish(d::out_path(ctx, params, name), report.dump(2) + "\n");
  } else if (name == "eval-chrf") {
    std::string corpus_path = d::resolve_path(ctx, d::require_str(params, "corpus", name));
    ChrfConfig cfg;
    cfg.char_order = params.value("char_order", cfg.char_order);
    cfg.word_order = params.value("word_order", cfg.word_order);
    cfg.beta = params.value("beta", cfg.beta);
    cfg.lowercase = params.value("lowercase", cfg.lowercase);
    std::vector<std::vector<std::string>> rows =
        d::read_tsv(corpus_path, "id\thypothesis\treference");
    json items = json::array();
    double sum = 0.0;
    for (const std::vector<std::string>& r : rows) {
      if (r.size() != 3) throw ParseFailure(corpus_path + ": expected 3 columns");
      double score = chrf(r[1], r[2], cfg);
      sum += score;
      items.push_back({{"id", r[0]}, {"chrf", score}});
    }
    json report;
    report["mean_chrf"] = rows.empty() ? 0.0 : sum / static_cast<double>(rows.size());
    report["char_order"] = cfg.char_order;
    report["word_order"] = cfg.word_order;
    report["beta"] = cfg.beta;
    report["items"] = std::move(items);
    counts["items"] = rows.size();
    finish(d::out_path(ctx, params, name), report.dump(2) + "\n");
  } else if (name == "eval-robustness") {
    std::string corpus_path = d::resolve_path(ctx, d::require_str(params, "corpus", name));
    bool population_sd = params.value("population_sd", false);
    std::vector<std::vector<std::string>> rows = d::read_tsv(corpus_path, "id\tgroup_key\tscore");
    std::vector<std::string> key_order;
    std::map<std::string, std::vector<double>> by_key;
    for (const std::vector<std::string>& r : rows) {
      if (r.size() != 3) throw ParseFailure(corpus_path + ": expected 3 columns");
      if (by_key.find(r[1]) == by_key.end()) key_order.push_back(r[1]);
      by_key[r[1]].push_back(d::to_double(r[2], corpus_path));
    }
    json report;
    if (key_order.empty()) {
      report["chrf_ms"] = 0.0;
      report["coefvar_ms"] = 0.0;
      report["groups"] = json::array();
    } else {
      std::vector<GroupScores> groups;
      for (const std::string& k : key_order) groups.push_back({k, by_key[k]});
      RobustnessReport rep = robustness(groups, population_sd);
      report["chrf_ms"] = rep.chrf_ms;
      report["coefvar_ms"] = rep.coefvar_ms;
      json garr = json::array();
      for (const GroupScores& g : groups) {
        double mean = 0.0;
        for (double s : g.scores) mean += s;
        mean /= static_cast<double>(g.scores.size());
        json gj;
        gj["key"] = g.key;
        gj["mean"] = mean;
        gj["size"] = g.scores.size();
        garr.push_back(std::move(gj));
      }
      report["groups"] = std::move(garr);
    }
    report["population_sd"] = population_sd;
    counts["rows"] = rows.size();
    counts["groups"] = key_order.size();
    finish(d::out_path(ctx, params, name), report.dump(2) + "\n");
  } else if (name == "eval-bias") {
    if (!params.contains("masc") || !params.contains("fem"))
      throw ConfigError("eval-bias needs numeric parameters 'masc' and 'fem'");
    double masc = params["masc"].get<double>();
    double fem = params["fem"].get<double>();
    double delta = gender_delta(masc, fem);
    json report;
    report["masc"] = masc;
    report["fem"] = fem;
    report["delta"] = delta;
    report["delta_percent"] = delta * 100.0;
    counts["pairs"] = 1;
    finish(d::out_path(ctx, params, name), report.dump(2) + "\n");
  } else {
    throw ConfigError("unknown stage '" + name + "'");
  }

  manifest["counts"] = std::move(counts);
  nlohmann::json arts = nlohmann::json::object();
  for (const std::string& a : res.artifacts) arts[a] = sha256_file(a);
  manifest["artifacts"] = std::move(arts);
  return res;
}

// --- whole-pipeline driver --------------------------------------------------

struct PipelineConfig {
  std::filesystem::path base;
  std::uint64_t seed = 0;
  std::optional<std::size_t> workers;
  nlohmann::json stages;  // name -> params
};

inline PipelineConfig load_pipeline_config(const std::string& config_path) {
  nlohmann::json j = nlohmann::json::parse(read_file(config_path), nullptr, false);
  if (j.is_discarded()) throw ParseFailure(config_path + ": bad JSON");
  if (!j.is_object()) throw ConfigError(config_path + ": config must be a JSON object");
  PipelineConfig cfg;
  cfg.base = std::filesystem::absolute(std::filesystem::path(config_path)).parent_path();
  cfg.seed = j.value("seed", 0ull);
  if (j.contains("workers")) cfg.workers = j["workers"].get<std::size_t>();
  cfg.stages = j.value("stages", nlohmann::json::object());
  if (!cfg.stages.is_object()) throw ConfigError(config_path + ": 'stages' must be an object");
  for (const auto& [name, params] : cfg.stages.items()) {
    if (std::find(stage_order().begin(), stage_order().end(), name) == stage_order().end())
      throw ConfigError(config_path + ": unknown stage '" + name + "'");
    if (!params.is_object()) throw ConfigError("stage '" + name + "' params must be an object");
  }
  return cfg;
}

// Every input path referenced by any configured stage must exist before the
// first stage runs; later stages' outputs count as satisfied when an earlier
// stage in the run declares them as its `out`.
inline void validate_inputs(const PipelineConfig& cfg, const StageContext& ctx) {
  std::vector<std::string> produced;
  for (const std::string& name : stage_order()) {
    if (!cfg.stages.contains(name)) continue;
    const nlohmann::json& params = cfg.stages[name];
    auto it = detail::input_path_keys().find(name);
    if (it != detail::input_path_keys().end()) {
      for (const detail::PathKey& pk : it->second) {
        if (!params.contains(pk.key)) {
          if (pk.required)
            throw ConfigError("stage '" + name + "' is missing required path '" + pk.key + "'");
          continue;
        }
        std::string resolved = detail::resolve_path(ctx, params[pk.key].get<std::string>());
        bool exists = std::filesystem::exists(resolved);
        bool pending =
            std::find(produced.begin(), produced.end(), resolved) != produced.end();
        if (!exists && !pending)
          throw ConfigError("stage '" + name + "': input path does not exist: " + resolved);
      }
    }
    if (params.contains("out"))
      produced.push_back(detail::resolve_path(ctx, params["out"].get<std::string>()));
    if (params.contains("rejected_out"))
      produced.push_back(detail::resolve_path(ctx, params["rejected_out"].get<std::string>()));
  }
}

inline std::string manifest_path_for(const std::string& artifact_path) {
  return artifact_path + ".manifest.json";
}

// Run every configured stage in canonical order. Manifests for the stages
// about to run are deleted first, so a crash leaves the artifact without a
// manifest — the "stale" marker. Artifacts are byte-deterministic; manifests
// carry a wall_time_s field and are excluded from byte-identity comparisons.
inline std::vector<StageResult> run_pipeline(const PipelineConfig& cfg,
                                             std::optional<std::uint64_t> seed_override,
                                             std::optional<std::size_t> workers_flag) {
  StageContext ctx;
  ctx.base = cfg.base;
  ctx.root_seed = seed_override.value_or(cfg.seed);
  ctx.workers = resolve_workers(workers_flag, cfg.workers);
  validate_inputs(cfg, ctx);
  for (const std::string& name : stage_order()) {
    if (!cfg.stages.contains(name)) continue;
    const nlohmann::json& params = cfg.stages[name];
    if (params.contains("out")) {
      std::error_code ec;
      std::filesystem::remove(
          manifest_path_for(detail::resolve_path(ctx, params["out"].get<std::string>())), ec);
    }
  }
  std::vector<StageResult> results;
  for (const std::string& name : stage_order()) {
    if (!cfg.stages.contains(name)) continue;
    auto t0 = std::chrono::steady_clock::now();
    StageResult res;
    try {
      res = run_stage(name, cfg.stages[name], ctx);
    } catch (const Error& e) {
      // Name the first failing stage, preserving the machine-readable kind.
      throw Error(e.kind, "stage '" + name + "': " + e.what());
    }
    auto t1 = std::chrono::steady_clock::now();
    res.manifest["wall_time_s"] = std::chrono::duration<double>(t1 - t0).count();
    res.manifest["base_dir"] = ctx.base.string();
    if (!res.artifacts.empty())
      atomic_write_file(manifest_path_for(res.artifacts.front()),
                        res.manifest.dump(2) + "\n");
    results.push_back(std::move(res));
  }
  return results;
}

struct ReplayResult {
  bool reproduced = true;
  std::vector<std::string> mismatched;  // artifact paths whose hash changed
};

// Re-derive one stage's artifact from its manifest. Inputs must still match
// the recorded hashes; the artifact is rebuilt in place and compared.
inline ReplayResult replay(const std::string& manifest_path) {
  nlohmann::json m = nlohmann::json::parse(read_file(manifest_path), nullptr, false);
  if (m.is_discarded()) throw ParseFailure(manifest_path + ": bad JSON");
  StageContext ctx;
  ctx.base = m.at("base_dir").get<std::string>();
  ctx.root_seed = m.at("root_seed").get<std::uint64_t>();
  ctx.workers = m.at("workers").get<std::size_t>();
  for (const auto& [rel, hash] : m.at("inputs").items()) {
    std::string resolved = detail::resolve_path(ctx, rel);
    if (!std::filesystem::exists(resolved))
      throw ConfigError("replay: input no longer exists: " + resolved);
    if (sha256_file(resolved) != hash.get<std::string>())
      throw ConfigError("replay: input changed since the manifest was written: " + resolved);
  }
  nlohmann::json expected = m.at("artifacts");
  StageResult res = run_stage(m.at("stage").get<std::string>(), m.at("config"), ctx);
  ReplayResult out;
  for (const std::string& a : res.artifacts) {
    std::string now = sha256_file(a);
    if (!expected.contains(a) || expected[a].get<std::string>() != now) {
      out.reproduced = false;
      out.mismatched.push_back(a);
    }
  }
  return out;
}

}  // namespace polymine
