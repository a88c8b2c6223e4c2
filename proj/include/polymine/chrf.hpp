#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "polymine/text.hpp"

namespace polymine {

// Character-level F-score configuration. Defaults reproduce the common
// published signature: 6 character orders, beta=2 (recall-weighted), spaces
// stripped before character n-grams, effective-order averaging, mixed case.
// word_order 2 adds word n-grams on top (the "++" variant).
struct ChrfConfig {
  int char_order = 6;
  int word_order = 0;
  double beta = 2.0;
  bool remove_spaces_for_char_ngrams = true;
  bool effective_order = true;
  bool lowercase = false;
};

namespace detail {

// The 32 ASCII punctuation characters; word tokens get a single leading or
// trailing one split off (trailing wins) to match the reference scorer's
// tokenization. Deliberately ASCII-only, like the original.
inline bool is_ascii_punct(char32_t cp) {
  return (cp >= 0x21 && cp <= 0x2F) || (cp >= 0x3A && cp <= 0x40) ||
         (cp >= 0x5B && cp <= 0x60) || (cp >= 0x7B && cp <= 0x7E);
}

using NgramCounts = std::unordered_map<std::u32string, std::size_t>;

struct OrderStats {
  std::size_t hyp = 0, ref = 0, match = 0;
};

inline void count_char_ngrams(const std::u32string& chars, int order,
                              std::vector<NgramCounts>& out) {
  for (int n = 1; n <= order; ++n) {
    NgramCounts& counts = out.emplace_back();
    if (chars.size() < static_cast<std::size_t>(n)) continue;
    for (std::size_t i = 0; i + n <= chars.size(); ++i) ++counts[chars.substr(i, n)];
  }
}

inline std::vector<std::u32string> chrf_word_tokens(const std::u32string& text) {
  std::vector<std::u32string> raw;
  std::size_t i = 0;
  while (i < text.size()) {
    if (is_space(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    raw.push_back(text.substr(i, j - i));
    i = j;
  }
  std::vector<std::u32string> toks;
  toks.reserve(raw.size());
  for (const std::u32string& w : raw) {
    if (w.size() > 1 && is_ascii_punct(w.back())) {
      toks.push_back(w.substr(0, w.size() - 1));
      toks.push_back(w.substr(w.size() - 1));
    } else if (w.size() > 1 && is_ascii_punct(w.front())) {
      toks.push_back(w.substr(0, 1));
      toks.push_back(w.substr(1));
    } else {
      toks.push_back(w);
    }
  }
  return toks;
}

inline void count_word_ngrams(const std::vector<std::u32string>& toks, int order,
                              std::vector<NgramCounts>& out) {
  for (int n = 1; n <= order; ++n) {
    NgramCounts& counts = out.emplace_back();
    if (toks.size() < static_cast<std::size_t>(n)) continue;
    for (std::size_t i = 0; i + n <= toks.size(); ++i) {
      std::u32string key;
      for (int t = 0; t < n; ++t) {
        if (t) key.push_back(U'\x1F');  // unit separator, cannot occur in a token
        key += toks[i + t];
      }
      ++counts[key];
    }
  }
}

inline std::vector<NgramCounts> chrf_ngrams(std::string_view text, const ChrfConfig& cfg) {
  std::u32string cps = utf8_decode(text);
  if (cfg.lowercase)
    for (char32_t& cp : cps) cp = to_lower(cp);
  std::u32string chars;
  if (cfg.remove_spaces_for_char_ngrams) {
    chars.reserve(cps.size());
    for (char32_t cp : cps)
      if (!is_space(cp)) chars.push_back(cp);
  } else {
    chars = cps;
  }
  std::vector<NgramCounts> grams;
  grams.reserve(static_cast<std::size_t>(cfg.char_order + cfg.word_order));
  count_char_ngrams(chars, cfg.char_order, grams);
  if (cfg.word_order > 0) count_word_ngrams(chrf_word_tokens(cps), cfg.word_order, grams);
  return grams;
}

}  // namespace detail

// Sentence-level chrF / chrF++ in [0, 100]. Per order: clipped-match
// precision and recall combined as F_beta; the final score is the plain mean
// over all character and word orders. With effective_order, orders where
// either side has no n-grams at all are skipped instead of counted as zero.
inline double chrf(std::string_view hypothesis, std::string_view reference,
                   const ChrfConfig& cfg = {}) {
  std::vector<detail::NgramCounts> hyp = detail::chrf_ngrams(hypothesis, cfg);
  std::vector<detail::NgramCounts> ref = detail::chrf_ngrams(reference, cfg);
  const double factor = cfg.beta * cfg.beta;
  double total = 0.0;
  int orders = 0;
  for (std::size_t o = 0; o < hyp.size(); ++o) {
    std::size_t n_hyp = 0, n_ref = 0, match = 0;
    for (const auto& [g, c] : hyp[o]) n_hyp += c;
    for (const auto& [g, c] : ref[o]) n_ref += c;
    for (const auto& [g, c] : hyp[o]) {
      auto it = ref[o].find(g);
      if (it != ref[o].end()) match += std::min(c, it->second);
    }
    if (n_hyp == 0 || n_ref == 0) {
      if (!cfg.effective_order) ++orders;
      continue;
    }
    double prec = static_cast<double>(match) / static_cast<double>(n_hyp);
    double rec = static_cast<double>(match) / static_cast<double>(n_ref);
    double denom = factor * prec + rec;
    if (denom > 0.0) total += (1.0 + factor) * prec * rec / denom;
    ++orders;
  }
  return orders ? 100.0 * total / orders : 0.0;
}

}  // namespace polymine
