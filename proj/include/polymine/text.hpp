#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "polymine/unicode_tables.hpp"

namespace polymine {

// --- UTF-8 <-> codepoints ---------------------------------------------------

// Lenient decoder: malformed bytes decode to U+FFFD one byte at a time, so
// every input produces a deterministic codepoint sequence.
inline std::u32string utf8_decode(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    unsigned char b0 = s[i];
    char32_t cp = 0xFFFD;
    std::size_t len = 1;
    if (b0 < 0x80) {
      cp = b0;
    } else if ((b0 >> 5) == 0x6 && i + 1 < s.size()) {
      unsigned char b1 = s[i + 1];
      if ((b1 >> 6) == 0x2) {
        cp = (char32_t(b0 & 0x1F) << 6) | (b1 & 0x3F);
        len = 2;
        if (cp < 0x80) cp = 0xFFFD;  // overlong
      }
    } else if ((b0 >> 4) == 0xE && i + 2 < s.size()) {
      unsigned char b1 = s[i + 1], b2 = s[i + 2];
      if ((b1 >> 6) == 0x2 && (b2 >> 6) == 0x2) {
        cp = (char32_t(b0 & 0x0F) << 12) | (char32_t(b1 & 0x3F) << 6) | (b2 & 0x3F);
        len = 3;
        if (cp < 0x800 || (cp >= 0xD800 && cp <= 0xDFFF)) cp = 0xFFFD;
      }
    } else if ((b0 >> 3) == 0x1E && i + 3 < s.size()) {
      unsigned char b1 = s[i + 1], b2 = s[i + 2], b3 = s[i + 3];
      if ((b1 >> 6) == 0x2 && (b2 >> 6) == 0x2 && (b3 >> 6) == 0x2) {
        cp = (char32_t(b0 & 0x07) << 18) | (char32_t(b1 & 0x3F) << 12) |
             (char32_t(b2 & 0x3F) << 6) | (b3 & 0x3F);
        len = 4;
        if (cp < 0x10000 || cp > 0x10FFFF) cp = 0xFFFD;
      }
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

inline void utf8_append(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

inline std::string utf8_encode(const std::u32string& cps) {
  std::string out;
  out.reserve(cps.size());
  for (char32_t cp : cps) utf8_append(out, cp);
  return out;
}

// --- character classes ------------------------------------------------------

namespace detail {
template <std::size_t N>
inline bool in_ranges(const uni::CpRange (&table)[N], char32_t cp) {
  auto it = std::upper_bound(table, table + N, cp,
                             [](char32_t c, const uni::CpRange& r) { return c < r.lo; });
  return it != table && (it - 1)->hi >= cp;
}
}  // namespace detail

inline bool is_emoji(char32_t cp) { return detail::in_ranges(uni::kEmojiRanges, cp); }
inline bool is_punct(char32_t cp) { return detail::in_ranges(uni::kPunctRanges, cp); }
inline bool is_space(char32_t cp) { return detail::in_ranges(uni::kSpaceRanges, cp); }
// Letters, marks, digits: what counts as "inside a word" for boundary matching.
inline bool is_word_char(char32_t cp) { return detail::in_ranges(uni::kWordRanges, cp); }

// Simple (1:1) lowercase; codepoints without a single-codepoint lowering are
// returned unchanged, keeping offsets stable under folding.
inline char32_t to_lower(char32_t cp) {
  auto begin = std::begin(uni::kSimpleLower);
  auto end = std::end(uni::kSimpleLower);
  auto it = std::lower_bound(begin, end, cp,
                             [](const uni::CpPair& p, char32_t c) { return p.cp < c; });
  return (it != end && it->cp == cp) ? it->lower : cp;
}

inline std::u32string to_lower(const std::u32string& s) {
  std::u32string out(s);
  for (char32_t& cp : out) cp = to_lower(cp);
  return out;
}

inline std::string to_lower_utf8(std::string_view s) {
  return utf8_encode(to_lower(utf8_decode(s)));
}

// --- tokenization helpers ---------------------------------------------------

// Maximal runs of word characters, with the scalar (codepoint) offset of each
// run's first character.
struct Word {
  std::u32string chars;
  std::size_t offset = 0;  // codepoint index in the source text
};

inline std::vector<Word> word_tokenize(const std::u32string& text) {
  std::vector<Word> words;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_word_char(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && is_word_char(text[j])) ++j;
    words.push_back({text.substr(i, j - i), i});
    i = j;
  }
  return words;
}

// Whitespace-delimited fields of a UTF-8 string (any Unicode whitespace).
inline std::vector<std::string> split_whitespace(std::string_view s) {
  std::u32string cps = utf8_decode(s);
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < cps.size()) {
    if (is_space(cps[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < cps.size() && !is_space(cps[j])) ++j;
    out.push_back(utf8_encode(cps.substr(i, j - i)));
    i = j;
  }
  return out;
}

// Collapse whitespace runs to single spaces and trim the ends.
inline std::string collapse_whitespace(std::string_view s) {
  std::vector<std::string> parts = split_whitespace(s);
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.push_back(' ');
    out += parts[i];
  }
  return out;
}

}  // namespace polymine
