// A small but complete pipeline corpus shared by the end-to-end tests and the
// acceptance gate. The builder is deterministic: the same bytes are written
// regardless of the directory, so two fixtures built in different places must
// produce byte-identical artifacts when run with the same seed.

#pragma once

#include <algorithm>
#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "polymine/embedding.hpp"
#include "polymine/io.hpp"
#include "polymine/lid.hpp"
#include "polymine/rng.hpp"

#include "test_util.hpp"

namespace fixture {

inline nlohmann::json text_segment(const std::string& id, const char* lang,
                                   const std::string& text, double lid_score) {
  nlohmann::json j;
  j["id"] = id;
  j["lang"] = lang;
  j["modality"] = "text";
  j["text"] = text;
  j["lid_score"] = lid_score;
  return j;
}

inline nlohmann::json speech_segment(const std::string& id, const char* lang, const char* uri,
                                     std::int64_t start_ms, std::int64_t end_ms) {
  nlohmann::json j;
  j["id"] = id;
  j["lang"] = lang;
  j["modality"] = "speech";
  j["audio_uri"] = uri;
  j["start_ms"] = start_ms;
  j["end_ms"] = end_ms;
  return j;
}

inline void write_lexicon_files(const testutil::TempDir& dir, const std::string& list_name,
                                const std::string& sidecar_name) {
  polymine::atomic_write_file(dir.file(list_name), "merda\n");
  polymine::atomic_write_file(dir.file(sidecar_name),
                              "{\"lang\": \"spa\", \"match_mode\": \"word_boundary\"}\n");
}

// Writes a corpus touching every stage and returns the config path. All paths
// in the config are relative so a run also exercises base-directory
// resolution.
inline std::string build_full_fixture(const testutil::TempDir& dir) {
  using namespace polymine;

  // Language-identification dev scores: two languages, two score bands each.
  Rng rng(9001);
  std::string dev = std::string(kDevHeader) + "\n";
  for (const char* lang : {"spa", "fra"}) {
    for (int i = 0; i < 45; ++i)
      dev += std::string(lang) + "\t" +
             format_fixed(std::clamp(0.85 + 0.07 * rng.gaussian(), 0.01, 0.99)) + "\t1\n";
    for (int i = 0; i < 15; ++i)
      dev += std::string(lang) + "\t" +
             format_fixed(std::clamp(0.55 + 0.12 * rng.gaussian(), 0.01, 0.99)) + "\t0\n";
  }
  atomic_write_file(dir.file("dev.tsv"), dev);

  std::string segments;
  for (int i = 0; i < 10; ++i)
    segments += text_segment("seg" + std::to_string(i), i % 2 ? "fra" : "spa",
                             "frase numero " + std::to_string(i), 0.95 - 0.08 * i)
                    .dump() +
                "\n";
  atomic_write_file(dir.file("segments.jsonl"), segments);

  // Two recordings of contiguous VAD units: 4 + 3 units.
  std::string vad;
  const std::int64_t rec1[] = {0, 400, 800, 1200, 1500};
  for (int i = 0; i < 4; ++i)
    vad += speech_segment("u" + std::to_string(i), "spa", "rec1.wav", rec1[i], rec1[i + 1]).dump() +
           "\n";
  const std::int64_t rec2[] = {0, 300, 600, 1000};
  for (int i = 0; i < 3; ++i)
    vad += speech_segment("v" + std::to_string(i), "spa", "rec2.wav", rec2[i], rec2[i + 1]).dump() +
           "\n";
  atomic_write_file(dir.file("vad.jsonl"), vad);

  // Source and target embeddings share rows, so row i aligns with row i.
  EmbeddingMatrix emb = testutil::random_unit_rows(12, 8, 777);
  write_embeddings(emb, dir.file("src.emb"));
  write_embeddings(emb, dir.file("tgt.emb"));
  std::string sids, tids;
  for (int i = 0; i < 12; ++i) {
    sids += "s" + std::to_string(i) + "\n";
    tids += "t" + std::to_string(i) + "\n";
  }
  atomic_write_file(dir.file("src.ids"), sids);
  atomic_write_file(dir.file("tgt.ids"), tids);

  // Overlap-resolution metadata: non-conflicting spans, one parent recording.
  std::string rsegs;
  for (int i = 0; i < 12; ++i) {
    nlohmann::json j = speech_segment("s" + std::to_string(i), "spa", "par.wav", i * 100,
                                      i * 100 + 90);
    j["parent_id"] = "par";
    rsegs += j.dump() + "\n";
  }
  atomic_write_file(dir.file("resolve_segments.jsonl"), rsegs);

  // Filter items keyed by the pair join id; item 5 exceeds the pooled cap.
  std::string items;
  for (int i = 0; i < 12; ++i) {
    nlohmann::json j;
    j["pair_id"] = "s" + std::to_string(i) + "::t" + std::to_string(i);
    j["stage"] = "pooled";
    j["text"] = "texto limpio numero " + std::to_string(i);
    j["audio_duration_s"] = 5.0;
    j["subword_count"] = (i == 5) ? 300 : 20;
    j["src_toxic_count"] = 0;
    j["tgt_toxic_count"] = 0;
    items += j.dump() + "\n";
  }
  atomic_write_file(dir.file("filter_items.jsonl"), items);

  // Toxicity evaluation: exactly one item adds toxicity.
  write_lexicon_files(dir, "src_list.txt", "src_sidecar.json");
  write_lexicon_files(dir, "out_list.txt", "out_sidecar.json");
  std::string etox;
  nlohmann::json e0;
  e0["id"] = "e0";
  e0["src_text"] = "todo bien";
  e0["out_text"] = "que merda";
  nlohmann::json e1;
  e1["id"] = "e1";
  e1["src_text"] = "hola";
  e1["out_text"] = "bonjour";
  nlohmann::json e2;
  e2["id"] = "e2";
  e2["src_text"] = "merda total";
  e2["out_text"] = "merda totale";
  etox = e0.dump() + "\n" + e1.dump() + "\n" + e2.dump() + "\n";
  atomic_write_file(dir.file("etox_items.jsonl"), etox);

  // Quality-regressor training and scoring rows.
  Rng brng(31337);
  std::string train, score_items;
  for (int i = 0; i < 40; ++i) {
    nlohmann::json j;
    j["src"] = testutil::random_unit_vec(4, brng);
    j["mt"] = testutil::random_unit_vec(4, brng);
    j["ref"] = testutil::random_unit_vec(4, brng);
    j["label"] = 1.0 + 4.0 * brng.uniform();
    train += j.dump() + "\n";
  }
  atomic_write_file(dir.file("train.jsonl"), train);
  for (int i = 0; i < 5; ++i) {
    nlohmann::json j;
    j["id"] = "q" + std::to_string(i);
    j["src"] = testutil::random_unit_vec(4, brng);
    j["mt"] = testutil::random_unit_vec(4, brng);
    j["ref"] = testutil::random_unit_vec(4, brng);
    score_items += j.dump() + "\n";
  }
  atomic_write_file(dir.file("score_items.jsonl"), score_items);

  atomic_write_file(dir.file("chrf_corpus.tsv"),
                    "id\thypothesis\treference\n"
                    "c0\tsame text here\tsame text here\n"
                    "c1\tcat\tcat sat\n"
                    "c2\taaaa\tzzzz\n");
  atomic_write_file(dir.file("robust_corpus.tsv"),
                    "id\tgroup_key\tscore\n"
                    "r0\tg1\t40.0\n"
                    "r1\tg1\t60.0\n"
                    "r2\tg2\t10.0\n");

  nlohmann::json cfg;
  cfg["seed"] = 4242;
  nlohmann::json& st = cfg["stages"];
  st["lid-fit"] = {{"dev", "dev.tsv"}, {"out", "out/calibration.json"}};
  st["lid-apply"] = {{"segments", "segments.jsonl"},
                     {"calibration", "out/calibration.json"},
                     {"out", "out/accepted.jsonl"},
                     {"rejected_out", "out/rejected.jsonl"}};
  st["segment"] = {{"vad_units", "vad.jsonl"}, {"max_merge", 8}, {"out", "out/candidates.jsonl"}};
  st["mine"] = {{"src_emb", "src.emb"}, {"src_ids", "src.ids"}, {"tgt_emb", "tgt.emb"},
                {"tgt_ids", "tgt.ids"}, {"k", 4},           {"threshold", 1.05},
                {"out", "out/pairs.tsv"}};
  st["resolve-overlaps"] = {{"pairs", "out/pairs.tsv"},
                            {"segments", "resolve_segments.jsonl"},
                            {"out", "out/resolved.tsv"}};
  st["filter"] = {{"items", "filter_items.jsonl"}, {"out", "out/verdicts.tsv"}};
  st["export"] = {{"pairs", "out/resolved.tsv"},
                  {"verdicts", "out/verdicts.tsv"},
                  {"out", "out/exported.tsv"}};
  st["etox"] = {{"items", "etox_items.jsonl"},   {"src_list", "src_list.txt"},
                {"src_sidecar", "src_sidecar.json"}, {"out_list", "out_list.txt"},
                {"out_sidecar", "out_sidecar.json"}, {"out", "out/etox.json"}};
  st["blaser-train"] = {{"train", "train.jsonl"}, {"mode", "supervised"}, {"hidden1", 8},
                        {"hidden2", 4},           {"epochs", 5},          {"batch", 8},
                        {"lr0", 0.01},            {"dropout", 0.0},       {"out", "out/model.json"}};
  st["blaser-score"] = {{"items", "score_items.jsonl"},
                        {"mode", "supervised"},
                        {"model", "out/model.json"},
                        {"out", "out/scores.tsv"}};
  st["eval-xsim"] = {{"src_emb", "src.emb"}, {"tgt_emb", "tgt.emb"}, {"out", "out/xsim.json"}};
  st["eval-chrf"] = {{"corpus", "chrf_corpus.tsv"}, {"out", "out/chrf.json"}};
  st["eval-robustness"] = {{"corpus", "robust_corpus.tsv"}, {"out", "out/robustness.json"}};
  st["eval-bias"] = {{"masc", 49.9}, {"fem", 45.0}, {"out", "out/bias.json"}};

  std::string cfg_path = dir.file("config.json");
  atomic_write_file(cfg_path, cfg.dump(2) + "\n");
  return cfg_path;
}

}  // namespace fixture
