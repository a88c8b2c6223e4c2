#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "polymine/errors.hpp"
#include "polymine/io.hpp"

namespace polymine {

// Dense row-major vector table. Storage is 32-bit float; all similarity math
// accumulates in double to keep large-dim dot products stable.
struct EmbeddingMatrix {
  std::uint32_t dim = 0;
  std::uint64_t count = 0;
  std::vector<float> data;  // count * dim
  bool normalized = false;

  const float* row(std::size_t i) const { return data.data() + i * dim; }
  float* row(std::size_t i) { return data.data() + i * dim; }
};

enum class Modality { speech, text };

inline std::string to_string(Modality m) { return m == Modality::speech ? "speech" : "text"; }

struct SegmentRecord {
  std::string id;
  std::string lang;
  Modality modality = Modality::text;
  std::optional<std::string> audio_uri;
  std::optional<std::int64_t> start_ms;
  std::optional<std::int64_t> end_ms;
  std::optional<std::string> text;
  std::optional<double> lid_score;
  std::optional<std::string> parent_id;

  double duration_s() const {
    return static_cast<double>(*end_ms - *start_ms) / 1000.0;
  }
};

// --- EMB1 binary format -----------------------------------------------------
// bytes 0-3 magic "EMB1" | 4-7 u32 LE dim | 8-15 u64 LE count
// | count*dim f32 LE row-major, no padding.

namespace detail {
inline std::uint32_t read_u32le(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}
inline std::uint64_t read_u64le(const unsigned char* p) {
  return std::uint64_t(read_u32le(p)) | std::uint64_t(read_u32le(p + 4)) << 32;
}
inline void append_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void append_u64le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
}  // namespace detail

inline EmbeddingMatrix load_embeddings(const std::string& path) {
  std::string bytes = read_file(path);
  if (bytes.size() < 16) throw BadMagic(path + ": truncated header (" + std::to_string(bytes.size()) + " bytes)");
  if (bytes.compare(0, 4, "EMB1") != 0) throw BadMagic(path + ": bad magic");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  EmbeddingMatrix m;
  m.dim = detail::read_u32le(p + 4);
  m.count = detail::read_u64le(p + 8);
  if (m.dim == 0) throw BadMagic(path + ": declared dim is 0");
  if (m.count > (std::uint64_t(1) << 40) / m.dim)
    throw DimMismatch(path + ": implausible payload size (count=" + std::to_string(m.count) + ")");
  std::uint64_t expect = m.count * std::uint64_t(m.dim) * 4;
  if (bytes.size() - 16 != expect)
    throw DimMismatch(path + ": payload is " + std::to_string(bytes.size() - 16) +
                      " bytes, header implies " + std::to_string(expect));
  m.data.resize(static_cast<std::size_t>(m.count) * m.dim);
  for (std::size_t i = 0; i < m.data.size(); ++i)
    m.data[i] = std::bit_cast<float>(detail::read_u32le(p + 16 + 4 * i));
  for (std::uint64_t r = 0; r < m.count; ++r) {
    const float* row = m.row(static_cast<std::size_t>(r));
    for (std::uint32_t c = 0; c < m.dim; ++c)
      if (!std::isfinite(row[c]))
        throw NonFiniteValue(path + ": non-finite value in row " + std::to_string(r));
  }
  return m;
}

inline std::string serialize_embeddings(const EmbeddingMatrix& m) {
  std::string out;
  out.reserve(16 + m.data.size() * 4);
  out += "EMB1";
  detail::append_u32le(out, m.dim);
  detail::append_u64le(out, m.count);
  for (float f : m.data) detail::append_u32le(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

inline void write_embeddings(const EmbeddingMatrix& m, const std::string& path) {
  atomic_write_file(path, serialize_embeddings(m));
}

// Unit-scale every row (L2). Idempotent: an already-normalized matrix is
// returned untouched, bit for bit. Zero rows are a hard error because
// dropping them would silently shift row indices under the mining stages.
inline EmbeddingMatrix normalize(EmbeddingMatrix m) {
  if (m.normalized) return m;
  for (std::uint64_t r = 0; r < m.count; ++r) {
    float* row = m.row(static_cast<std::size_t>(r));
    double sumsq = 0.0;
    for (std::uint32_t c = 0; c < m.dim; ++c) sumsq += double(row[c]) * row[c];
    double norm = std::sqrt(sumsq);
    if (norm == 0.0) throw ZeroNormRow("zero-norm row " + std::to_string(r));
    for (std::uint32_t c = 0; c < m.dim; ++c)
      row[c] = static_cast<float>(row[c] / norm);
  }
  m.normalized = true;
  return m;
}

// Dot product with double accumulation; the workhorse for all cosine math.
inline double dot(const float* a, const float* b, std::uint32_t dim) {
  double acc = 0.0;
  for (std::uint32_t i = 0; i < dim; ++i) acc += double(a[i]) * b[i];
  return acc;
}

// --- metadata ---------------------------------------------------------------

inline SegmentRecord segment_from_json(const nlohmann::json& j) {
  SegmentRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.lang = j.at("lang").get<std::string>();
    std::string mod = j.at("modality").get<std::string>();
    if (mod == "speech")
      r.modality = Modality::speech;
    else if (mod == "text")
      r.modality = Modality::text;
    else
      throw ParseFailure("record " + r.id + ": unknown modality '" + mod + "'");
    if (j.contains("audio_uri")) r.audio_uri = j.at("audio_uri").get<std::string>();
    if (j.contains("start_ms")) r.start_ms = j.at("start_ms").get<std::int64_t>();
    if (j.contains("end_ms")) r.end_ms = j.at("end_ms").get<std::int64_t>();
    if (j.contains("text")) r.text = j.at("text").get<std::string>();
    if (j.contains("lid_score")) r.lid_score = j.at("lid_score").get<double>();
    if (j.contains("parent_id")) r.parent_id = j.at("parent_id").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseFailure(std::string("segment record: ") + e.what());
  }
  if (r.modality == Modality::speech) {
    if (!r.audio_uri) throw ParseFailure("speech record " + r.id + " lacks audio_uri");
    if (!r.start_ms || !r.end_ms || *r.start_ms < 0 || *r.end_ms <= *r.start_ms)
      throw ParseFailure("speech record " + r.id + " needs 0 <= start_ms < end_ms");
  } else if (!r.text) {
    throw ParseFailure("text record " + r.id + " lacks text");
  }
  if (r.lid_score && (*r.lid_score < 0.0 || *r.lid_score > 1.0 || !std::isfinite(*r.lid_score)))
    throw ParseFailure("record " + r.id + ": lid_score outside [0,1]");
  return r;
}

inline nlohmann::json segment_to_json(const SegmentRecord& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["lang"] = r.lang;
  j["modality"] = to_string(r.modality);
  if (r.audio_uri) j["audio_uri"] = *r.audio_uri;
  if (r.start_ms) j["start_ms"] = *r.start_ms;
  if (r.end_ms) j["end_ms"] = *r.end_ms;
  if (r.text) j["text"] = *r.text;
  if (r.lid_score) j["lid_score"] = *r.lid_score;
  if (r.parent_id) j["parent_id"] = *r.parent_id;
  return j;
}

inline std::vector<SegmentRecord> load_segments_jsonl(const std::string& path) {
  std::vector<SegmentRecord> out;
  for (const std::string& line : split_lines(read_file(path))) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseFailure(path + ": bad JSON line: " + line.substr(0, 80));
    out.push_back(segment_from_json(j));
  }
  return out;
}

inline std::vector<std::string> load_id_order(const std::string& path) {
  return split_lines(read_file(path));
}

// --- joined store -----------------------------------------------------------

// Immutable after construction; safe for concurrent reads. `records` is empty
// when the store was built without metadata (mining needs only ids).
struct Store {
  EmbeddingMatrix emb;
  std::vector<std::string> ids;  // row -> id
  std::unordered_map<std::string, std::size_t> row_of;
  std::vector<SegmentRecord> records;  // row-aligned, may be empty

  bool has_metadata() const { return !records.empty(); }
};

inline Store make_store(EmbeddingMatrix m, std::vector<std::string> id_order) {
  if (id_order.size() != m.count)
    throw CountMismatch("id order has " + std::to_string(id_order.size()) + " ids, matrix has " +
                        std::to_string(m.count) + " rows");
  Store s;
  s.emb = std::move(m);
  s.ids = std::move(id_order);
  s.row_of.reserve(s.ids.size());
  for (std::size_t i = 0; i < s.ids.size(); ++i) {
    if (!s.row_of.emplace(s.ids[i], i).second) throw DuplicateId("duplicate id " + s.ids[i]);
  }
  return s;
}

namespace detail {
inline std::string join_ids(std::vector<std::string> ids, std::size_t limit = 20) {
  std::sort(ids.begin(), ids.end());
  std::string out;
  for (std::size_t i = 0; i < ids.size() && i < limit; ++i) {
    if (i) out += ", ";
    out += ids[i];
  }
  if (ids.size() > limit) out += ", ... (" + std::to_string(ids.size()) + " total)";
  return out;
}
}  // namespace detail

// Align metadata records with embedding rows. Mismatches in either direction
// are hard errors that name every offending id: silent drops would corrupt
// the row<->id correspondence everything downstream depends on.
inline Store join(const std::vector<SegmentRecord>& meta, EmbeddingMatrix m,
                  std::vector<std::string> id_order) {
  Store s = make_store(std::move(m), std::move(id_order));
  std::unordered_map<std::string, const SegmentRecord*> by_id;
  by_id.reserve(meta.size());
  for (const SegmentRecord& r : meta) {
    if (!by_id.emplace(r.id, &r).second) throw DuplicateId("duplicate metadata id " + r.id);
  }
  std::vector<std::string> missing_meta;
  for (const std::string& id : s.ids)
    if (!by_id.count(id)) missing_meta.push_back(id);
  if (!missing_meta.empty())
    throw MissingMetadata("no metadata for ids: " + detail::join_ids(std::move(missing_meta)));
  std::vector<std::string> missing_emb;
  for (const SegmentRecord& r : meta)
    if (!s.row_of.count(r.id)) missing_emb.push_back(r.id);
  if (!missing_emb.empty())
    throw MissingEmbedding("no embedding row for ids: " + detail::join_ids(std::move(missing_emb)));
  s.records.reserve(s.ids.size());
  for (const std::string& id : s.ids) s.records.push_back(*by_id.at(id));
  return s;
}

}  // namespace polymine
