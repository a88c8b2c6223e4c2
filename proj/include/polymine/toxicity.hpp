#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "polymine/errors.hpp"
#include "polymine/io.hpp"
#include "polymine/text.hpp"

namespace polymine {

// word_boundary: entries match as contiguous word sequences between word
// boundaries (space-delimited scripts). substring_nospace: entries match as
// plain substrings after removing whitespace from both sides (scripts that
// do not delimit words; a documented approximation).
enum class MatchMode { word_boundary, substring_nospace };

inline std::string to_string(MatchMode m) {
  return m == MatchMode::word_boundary ? "word_boundary" : "substring_nospace";
}

inline MatchMode match_mode_from_string(const std::string& s) {
  if (s == "word_boundary") return MatchMode::word_boundary;
  if (s == "substring_nospace") return MatchMode::substring_nospace;
  throw ParseFailure("unknown match mode '" + s + "'");
}

struct ToxicityLexicon {
  std::string lang;
  std::vector<std::string> entries;  // case-folded, deduped, sorted
  MatchMode match_mode = MatchMode::word_boundary;
};

struct ToxicMatch {
  std::string entry;
  std::size_t char_offset = 0;  // scalar-value offset in the original text
};

struct ToxicityReport {
  std::string id;
  std::vector<ToxicMatch> matched;
  std::size_t count = 0;
};

// Lexicon file: UTF-8, one entry per line, '#' starts a comment line.
// Entries are folded to lowercase at load; empty/whitespace-only entries are
// rejected per the lexicon contract.
inline ToxicityLexicon make_lexicon(std::vector<std::string> raw_entries, MatchMode mode,
                                    std::string lang = "") {
  ToxicityLexicon lex;
  lex.lang = std::move(lang);
  lex.match_mode = mode;
  for (std::string& e : raw_entries) {
    std::string folded = collapse_whitespace(to_lower_utf8(e));
    if (folded.empty()) throw ParseFailure("lexicon entry empty or whitespace-only");
    lex.entries.push_back(std::move(folded));
  }
  std::sort(lex.entries.begin(), lex.entries.end());
  lex.entries.erase(std::unique(lex.entries.begin(), lex.entries.end()), lex.entries.end());
  return lex;
}

// Sidecar JSON next to the list file declares language and match mode, e.g.
// {"lang": "ita", "match_mode": "word_boundary"}.
inline ToxicityLexicon load_lexicon(const std::string& list_path, const std::string& sidecar_path) {
  nlohmann::json side = nlohmann::json::parse(read_file(sidecar_path), nullptr, false);
  if (side.is_discarded()) throw ParseFailure(sidecar_path + ": bad JSON");
  std::string lang, mode;
  try {
    lang = side.at("lang").get<std::string>();
    mode = side.at("match_mode").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseFailure(sidecar_path + ": " + e.what());
  }
  std::vector<std::string> entries;
  for (const std::string& line : split_lines(read_file(list_path))) {
    std::string t = collapse_whitespace(line);
    if (t.empty() || t[0] == '#') continue;
    entries.push_back(t);
  }
  if (entries.empty()) throw ParseFailure(list_path + ": lexicon has no entries");
  return make_lexicon(std::move(entries), match_mode_from_string(mode), lang);
}

namespace detail {

struct FoldedWords {
  std::vector<std::u32string> words;
  std::vector<std::size_t> offsets;  // scalar offset of each word in the text
};

inline FoldedWords fold_and_tokenize(std::string_view text) {
  std::u32string cps = to_lower(utf8_decode(text));
  FoldedWords fw;
  for (const Word& w : word_tokenize(cps)) {
    fw.words.push_back(w.chars);
    fw.offsets.push_back(w.offset);
  }
  return fw;
}

// Word-sequence matching: the entry's word sequence must appear as a
// contiguous run of the text's words. "mereda" never matches "merda": they
// are different single words, which is exactly the word-boundary contract.
inline void match_word_boundary(const FoldedWords& text, const std::string& entry,
                                std::vector<ToxicMatch>& out) {
  std::vector<std::u32string> ew;
  for (const Word& w : word_tokenize(utf8_decode(entry))) ew.push_back(w.chars);
  if (ew.empty() || text.words.size() < ew.size()) return;
  for (std::size_t i = 0; i + ew.size() <= text.words.size(); ++i) {
    bool ok = true;
    for (std::size_t t = 0; t < ew.size() && ok; ++t) ok = (text.words[i + t] == ew[t]);
    if (ok) out.push_back({entry, text.offsets[i]});
  }
}

struct FoldedStripped {
  std::u32string chars;               // folded, whitespace removed
  std::vector<std::size_t> offsets;   // scalar offset of each kept char
};

inline FoldedStripped fold_and_strip(std::string_view text) {
  std::u32string cps = to_lower(utf8_decode(text));
  FoldedStripped fs;
  fs.chars.reserve(cps.size());
  for (std::size_t i = 0; i < cps.size(); ++i) {
    if (is_space(cps[i])) continue;
    fs.chars.push_back(cps[i]);
    fs.offsets.push_back(i);
  }
  return fs;
}

inline void match_substring(const FoldedStripped& text, const std::string& entry,
                            std::vector<ToxicMatch>& out) {
  std::u32string needle;
  for (char32_t cp : utf8_decode(entry))
    if (!is_space(cp)) needle.push_back(cp);
  if (needle.empty() || text.chars.size() < needle.size()) return;
  for (std::size_t pos = text.chars.find(needle, 0); pos != std::u32string::npos;
       pos = text.chars.find(needle, pos + 1)) {
    out.push_back({entry, text.offsets[pos]});  // overlapping starts all count
  }
}

}  // namespace detail

// Case-folded lexicon matching. Distinct entries may overlap and each counts;
// one entry counts a given start offset once. Offsets refer to Unicode scalar
// positions in the original (unfolded) text so matches stay auditable.
inline ToxicityReport detect(std::string_view text, const ToxicityLexicon& lex,
                             std::string id = "") {
  ToxicityReport rep;
  rep.id = std::move(id);
  if (lex.match_mode == MatchMode::word_boundary) {
    detail::FoldedWords fw = detail::fold_and_tokenize(text);
    for (const std::string& entry : lex.entries)
      detail::match_word_boundary(fw, entry, rep.matched);
  } else {
    detail::FoldedStripped fs = detail::fold_and_strip(text);
    for (const std::string& entry : lex.entries) detail::match_substring(fs, entry, rep.matched);
  }
  std::sort(rep.matched.begin(), rep.matched.end(), [](const ToxicMatch& a, const ToxicMatch& b) {
    if (a.char_offset != b.char_offset) return a.char_offset < b.char_offset;
    return a.entry < b.entry;
  });
  rep.count = rep.matched.size();
  return rep;
}

// A translation adds toxicity only when it contains strictly more detected
// toxic items than its source; preserved (equal) and deleted (fewer) counts
// do not qualify.
inline bool added_toxicity(const ToxicityReport& src_report, const ToxicityReport& out_report) {
  return out_report.count > src_report.count;
}

struct CorpusToxicity {
  std::size_t flagged = 0;
  double rate = 0.0;
  std::vector<std::pair<ToxicityReport, ToxicityReport>> per_item;  // (src, out)
};

inline CorpusToxicity corpus_rate(const std::vector<std::pair<std::string, std::string>>& items,
                                  const ToxicityLexicon& lex_src, const ToxicityLexicon& lex_out) {
  if (items.empty()) throw EmptyCorpus("corpus_rate over zero items");
  CorpusToxicity res;
  res.per_item.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    ToxicityReport s = detect(items[i].first, lex_src, std::to_string(i));
    ToxicityReport o = detect(items[i].second, lex_out, std::to_string(i));
    if (added_toxicity(s, o)) ++res.flagged;
    res.per_item.emplace_back(std::move(s), std::move(o));
  }
  res.rate = static_cast<double>(res.flagged) / static_cast<double>(items.size());
  return res;
}

inline nlohmann::json report_to_json(const ToxicityReport& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["count"] = r.count;
  nlohmann::json matches = nlohmann::json::array();
  for (const ToxicMatch& m : r.matched)
    matches.push_back({{"entry", m.entry}, {"char_offset", m.char_offset}});
  j["matched"] = std::move(matches);
  return j;
}

}  // namespace polymine
