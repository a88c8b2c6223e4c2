#pragma once

#include <openssl/evp.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "polymine/errors.hpp"

namespace polymine {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path);
  return ss.str();
}

// All artifact writes go through here: write to a sibling temp file, then
// rename over the destination so readers never observe a partial artifact.
inline void atomic_write_file(const std::string& path, std::string_view content) {
  namespace fs = std::filesystem;
  fs::path dest(path);
  if (dest.has_parent_path()) fs::create_directories(dest.parent_path());
  fs::path tmp = dest;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, dest, ec);
  if (ec) throw IoError("rename " + tmp.string() + " -> " + path + ": " + ec.message());
}

// Split into lines; accepts LF and CRLF, drops a trailing empty line.
inline std::vector<std::string> split_lines(std::string_view s) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == '\n') {
      std::size_t end = i;
      if (end > start && s[end - 1] == '\r') --end;
      if (i < s.size() || end > start) lines.emplace_back(s.substr(start, end - start));
      start = i + 1;
    }
  }
  return lines;
}

inline std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == '\t') {
      fields.emplace_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return fields;
}

// Fixed-point float formatting for TSV artifacts. printf %.6f is locale-free
// here (we never touch setlocale) and identical across platforms for the
// doubles we emit, which the byte-identical-artifact contract relies on.
inline std::string format_fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

inline std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw IoError("sha256 digest failure");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

inline std::string sha256_file(const std::string& path) { return sha256_hex(read_file(path)); }

}  // namespace polymine
