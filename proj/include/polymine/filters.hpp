#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "polymine/errors.hpp"
#include "polymine/text.hpp"

namespace polymine {

// Cleaning thresholds for paired speech/text corpora. A pair fails a rule
// only when it is strictly beyond the bound; sitting exactly on a bound is
// fine (e.g. a 0.1 s utterance or 5.0 subwords per second both pass).
struct FilterConfig {
  int max_subwords_human = 100;
  int max_subwords_pooled = 250;
  double max_subwords_per_sec = 5.0;
  double min_utt_s = 0.1;
  double max_utt_s = 50.0;
  double max_emoji_frac = 0.20;
  double max_punct_frac = 0.50;
  double max_space_frac = 0.50;
  int toxicity_imbalance_max = 1;
  double t2u_max_sec_per_token = 0.5;
};

enum class FilterStage { human_labeled, pooled, t2u };

inline std::string to_string(FilterStage s) {
  switch (s) {
    case FilterStage::human_labeled: return "human_labeled";
    case FilterStage::pooled: return "pooled";
    default: return "t2u";
  }
}

inline FilterStage filter_stage_from_string(const std::string& s) {
  if (s == "human_labeled") return FilterStage::human_labeled;
  if (s == "pooled") return FilterStage::pooled;
  if (s == "t2u") return FilterStage::t2u;
  throw ParseFailure("unknown filter stage '" + s + "'");
}

// One candidate pair as seen by the filter. Subword counts come from the
// caller (the real tokenizer is external); missing fields are only an error
// if the selected stage's rules need them.
struct FilterInput {
  std::string pair_id;
  std::optional<double> audio_duration_s;
  std::optional<int> subword_count;
  std::optional<std::string> text;
  std::optional<int> src_toxic_count;
  std::optional<int> tgt_toxic_count;
  FilterStage stage = FilterStage::pooled;
};

struct FilterVerdict {
  std::string pair_id;
  bool kept = true;
  std::vector<std::string> failed_rules;
};

struct CharClassFractions {
  double emoji_frac = 0.0;
  double punct_frac = 0.0;
  double space_frac = 0.0;
};

// Fractions of Unicode scalar values falling in each class, over the total
// scalar count. Empty text is all zeros.
inline CharClassFractions char_class_fractions(std::string_view text) {
  std::u32string cps = utf8_decode(text);
  CharClassFractions f;
  if (cps.empty()) return f;
  std::size_t emoji = 0, punct = 0, space = 0;
  for (char32_t cp : cps) {
    if (is_emoji(cp)) ++emoji;
    if (is_punct(cp)) ++punct;
    if (is_space(cp)) ++space;
  }
  double n = static_cast<double>(cps.size());
  f.emoji_frac = emoji / n;
  f.punct_frac = punct / n;
  f.space_frac = space / n;
  return f;
}

// Default inventory of annotation tags to strip from transcripts.
inline const std::vector<std::string>& default_special_tokens() {
  static const std::vector<std::string> tags = {"<silence>", "<no-speech>", "<noise>", "<music>",
                                                "<laughter>"};
  return tags;
}

// Remove listed tags, collapse whitespace runs to single spaces, trim.
inline std::string strip_special_tokens(std::string_view text,
                                        const std::vector<std::string>& tags = default_special_tokens()) {
  std::string s(text);
  for (const std::string& tag : tags) {
    if (tag.empty()) continue;
    std::size_t pos = 0;
    while ((pos = s.find(tag, pos)) != std::string::npos) s.erase(pos, tag.size());
  }
  return collapse_whitespace(s);
}

namespace detail {
inline double require(const std::optional<double>& v, const std::string& pair_id,
                      const char* field) {
  if (!v) throw MissingField("pair " + pair_id + " lacks " + field);
  return *v;
}
inline int require(const std::optional<int>& v, const std::string& pair_id, const char* field) {
  if (!v) throw MissingField("pair " + pair_id + " lacks " + field);
  return *v;
}
inline const std::string& require(const std::optional<std::string>& v, const std::string& pair_id,
                                  const char* field) {
  if (!v) throw MissingField("pair " + pair_id + " lacks " + field);
  return *v;
}
}  // namespace detail

// Evaluate the rules belonging to the pair's stage and name every failed one,
// so each rejection is auditable. Stages:
//   human_labeled: subword cap, subwords-per-second rate cap
//   pooled:        duration window, subword cap, emoji/punct/space fraction
//                  caps, source/target toxicity imbalance
//   t2u:           seconds-per-token cap
inline FilterVerdict filter_pair(const FilterInput& in, const FilterConfig& cfg) {
  FilterVerdict v;
  v.pair_id = in.pair_id;
  auto fail = [&](const char* rule) { v.failed_rules.emplace_back(rule); };
  switch (in.stage) {
    case FilterStage::human_labeled: {
      int subwords = detail::require(in.subword_count, in.pair_id, "subword_count");
      double dur = detail::require(in.audio_duration_s, in.pair_id, "audio_duration_s");
      if (subwords > cfg.max_subwords_human) fail("max_subwords_human");
      double rate = dur > 0.0 ? subwords / dur : std::numeric_limits<double>::infinity();
      if (rate > cfg.max_subwords_per_sec) fail("subwords_per_sec");
      break;
    }
    case FilterStage::pooled: {
      double dur = detail::require(in.audio_duration_s, in.pair_id, "audio_duration_s");
      int subwords = detail::require(in.subword_count, in.pair_id, "subword_count");
      const std::string& text = detail::require(in.text, in.pair_id, "text");
      int src_tox = detail::require(in.src_toxic_count, in.pair_id, "src_toxic_count");
      int tgt_tox = detail::require(in.tgt_toxic_count, in.pair_id, "tgt_toxic_count");
      if (dur < cfg.min_utt_s) fail("min_duration");
      if (dur > cfg.max_utt_s) fail("max_duration");
      if (subwords > cfg.max_subwords_pooled) fail("max_subwords_pooled");
      CharClassFractions f = char_class_fractions(text);
      if (f.emoji_frac > cfg.max_emoji_frac) fail("emoji_frac");
      if (f.punct_frac > cfg.max_punct_frac) fail("punct_frac");
      if (f.space_frac > cfg.max_space_frac) fail("space_frac");
      if (std::abs(src_tox - tgt_tox) > cfg.toxicity_imbalance_max) fail("toxicity_imbalance");
      break;
    }
    case FilterStage::t2u: {
      double dur = detail::require(in.audio_duration_s, in.pair_id, "audio_duration_s");
      int tokens = detail::require(in.subword_count, in.pair_id, "subword_count");
      double sec_per_token =
          tokens > 0 ? dur / tokens : std::numeric_limits<double>::infinity();
      if (sec_per_token > cfg.t2u_max_sec_per_token) fail("t2u_sec_per_token");
      break;
    }
  }
  v.kept = v.failed_rules.empty();
  return v;
}

// Whitespace token counter: the clearly-approximate stand-in for a real
// subword tokenizer, for fixtures and smoke runs only.
inline int approx_subword_count(std::string_view text) {
  return static_cast<int>(split_whitespace(text).size());
}

// --- I/O --------------------------------------------------------------------

inline FilterInput filter_input_from_json(const nlohmann::json& j) {
  FilterInput in;
  try {
    in.pair_id = j.at("pair_id").get<std::string>();
    in.stage = filter_stage_from_string(j.at("stage").get<std::string>());
    if (j.contains("audio_duration_s")) in.audio_duration_s = j.at("audio_duration_s").get<double>();
    if (j.contains("subword_count")) in.subword_count = j.at("subword_count").get<int>();
    if (j.contains("text")) in.text = j.at("text").get<std::string>();
    if (j.contains("src_toxic_count")) in.src_toxic_count = j.at("src_toxic_count").get<int>();
    if (j.contains("tgt_toxic_count")) in.tgt_toxic_count = j.at("tgt_toxic_count").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseFailure(std::string("filter input: ") + e.what());
  }
  return in;
}

inline std::string serialize_verdicts(const std::vector<FilterVerdict>& verdicts) {
  std::string out = "pair_id\tkept\tfailed_rules\n";
  for (const FilterVerdict& v : verdicts) {
    out += v.pair_id;
    out += v.kept ? "\t1\t" : "\t0\t";
    for (std::size_t i = 0; i < v.failed_rules.size(); ++i) {
      if (i) out.push_back(',');
      out += v.failed_rules[i];
    }
    out.push_back('\n');
  }
  return out;
}

}  // namespace polymine
