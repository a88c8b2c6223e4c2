#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "polymine/embedding.hpp"
#include "polymine/errors.hpp"
#include "polymine/io.hpp"
#include "polymine/knn.hpp"
#include "polymine/rng.hpp"

namespace polymine {

enum class MarginKind { ratio, difference };
enum class Direction { forward, backward, both };
enum class IndexMode { exact, ivf };

inline std::string to_string(Direction d) {
  switch (d) {
    case Direction::forward: return "forward";
    case Direction::backward: return "backward";
    default: return "both";
  }
}

struct MinedPair {
  std::string src_id;
  std::string tgt_id;
  double cosine = 0.0;
  double margin = 0.0;
  Direction direction = Direction::forward;
};

struct MiningConfig {
  std::size_t k = 16;
  double threshold = 1.15;
  MarginKind margin_kind = MarginKind::ratio;
  std::optional<std::size_t> max_alignments_per_segment;
  // IVF overrides; 0 means "use the defaults derived from the corpus size".
  std::size_t ivf_cells = 0;
  std::size_t ivf_probe = 0;
};

// Margin criterion for a candidate pair: the pair's cosine relative to the
// average similarity each element has to its k nearest neighbors on the other
// side. Ratio margins cluster around 1 for background pairs, which is what
// makes an absolute threshold like 1.15 meaningful.
inline double margin_score(double cos_xy, std::span<const double> nn_x,
                           std::span<const double> nn_y, MarginKind kind) {
  if (nn_x.empty() || nn_x.size() != nn_y.size())
    throw CountMismatch("neighbor lists must be non-empty and equal length (k)");
  double sum = 0.0;
  for (double c : nn_x) sum += c;
  for (double c : nn_y) sum += c;
  double d = sum / (2.0 * static_cast<double>(nn_x.size()));
  if (kind == MarginKind::ratio) {
    if (d <= 1e-9) throw DegenerateDenominator("denominator " + std::to_string(d));
    return cos_xy / d;
  }
  return cos_xy - d;
}

namespace detail {

inline double neighbor_mean(const NeighborList& list) {
  double sum = 0.0;
  for (const Neighbor& n : list.neighbors) sum += n.cosine;
  return list.neighbors.empty() ? 0.0 : sum / static_cast<double>(list.neighbors.size());
}

// knn lists for one direction, honoring self-exclusion under both index
// modes. The IVF path fetches one extra neighbor and drops the self match,
// so exact and IVF agree whenever the probe covers everything.
inline std::vector<NeighborList> direction_knn(const EmbeddingMatrix& queries,
                                               const EmbeddingMatrix& targets, std::size_t k,
                                               bool exclude_self, IndexMode mode,
                                               const MiningConfig& cfg, std::uint64_t seed,
                                               std::size_t workers) {
  if (mode == IndexMode::exact)
    return knn_exact(queries, targets, k, exclude_self, workers);
  std::size_t cells = cfg.ivf_cells ? cfg.ivf_cells : default_n_cells(targets.count);
  cells = std::min<std::size_t>(cells, static_cast<std::size_t>(targets.count));
  IvfIndex idx = build_ivf(targets, cells, seed, cfg.ivf_probe, workers);
  std::size_t fetch = k + (exclude_self ? 1 : 0);
  std::vector<NeighborList> lists = knn_ivf(idx, queries, targets, fetch, workers);
  if (exclude_self) {
    for (NeighborList& l : lists) {
      auto& ns = l.neighbors;
      ns.erase(std::remove_if(ns.begin(), ns.end(),
                              [&](const Neighbor& n) { return n.row == l.query_row; }),
               ns.end());
      if (ns.size() > k) ns.resize(k);
    }
  }
  return lists;
}

}  // namespace detail

// Global mining: every element of `src` against every element of `tgt`.
// Forward pass scores each source's k neighbors, backward pass each target's;
// the union is deduped (a pair found both ways is marked `both`), thresholded,
// and sorted by margin. Self-matches are excluded only when mining a store
// against itself (same object).
inline std::vector<MinedPair> mine(const Store& src, const Store& tgt, const MiningConfig& cfg,
                                   IndexMode mode = IndexMode::exact, std::uint64_t seed = 0,
                                   std::size_t workers = 1) {
  if (src.emb.count == 0 || tgt.emb.count == 0) throw EmptyStore("mine over an empty store");
  if (!src.emb.normalized || !tgt.emb.normalized)
    throw NotNormalized("mine requires normalized stores");
  const bool self = (&src == &tgt);
  std::vector<NeighborList> fwd = detail::direction_knn(
      src.emb, tgt.emb, cfg.k, self, mode, cfg, derive_seed(seed, "ivf-fwd"), workers);
  std::vector<NeighborList> bwd = detail::direction_knn(
      tgt.emb, src.emb, cfg.k, self, mode, cfg, derive_seed(seed, "ivf-bwd"), workers);

  // Per-element average neighbor similarity: the two halves of the margin
  // denominator. With exact search both lists have exactly k entries; under
  // IVF a list can come up short, in which case its own length normalizes it.
  std::vector<double> mean_src(fwd.size()), mean_tgt(bwd.size());
  for (std::size_t i = 0; i < fwd.size(); ++i) mean_src[i] = detail::neighbor_mean(fwd[i]);
  for (std::size_t j = 0; j < bwd.size(); ++j) mean_tgt[j] = detail::neighbor_mean(bwd[j]);

  struct Cand {
    double cosine;
    double margin;
    unsigned dir_mask;  // 1 = forward, 2 = backward
  };
  std::map<std::pair<std::size_t, std::size_t>, Cand> by_pair;
  auto score = [&](std::size_t i, std::size_t j, double cos, unsigned dir_bit) {
    double d = 0.5 * (mean_src[i] + mean_tgt[j]);
    double margin;
    if (cfg.margin_kind == MarginKind::ratio) {
      if (d <= 1e-9) throw DegenerateDenominator("denominator " + std::to_string(d));
      margin = cos / d;
    } else {
      margin = cos - d;
    }
    auto [it, fresh] = by_pair.try_emplace({i, j}, Cand{cos, margin, dir_bit});
    if (!fresh) {
      it->second.dir_mask |= dir_bit;
      it->second.margin = std::max(it->second.margin, margin);
    }
  };
  for (std::size_t i = 0; i < fwd.size(); ++i)
    for (const Neighbor& n : fwd[i].neighbors) score(i, n.row, n.cosine, 1);
  for (std::size_t j = 0; j < bwd.size(); ++j)
    for (const Neighbor& n : bwd[j].neighbors) score(n.row, j, n.cosine, 2);

  std::vector<MinedPair> out;
  out.reserve(by_pair.size());
  for (const auto& [key, cand] : by_pair) {
    if (!(cand.margin >= cfg.threshold) || !(cand.margin > 0.0)) continue;
    Direction dir = cand.dir_mask == 3   ? Direction::both
                    : cand.dir_mask == 1 ? Direction::forward
                                         : Direction::backward;
    out.push_back({src.ids[key.first], tgt.ids[key.second], cand.cosine, cand.margin, dir});
  }
  auto order = [](const MinedPair& a, const MinedPair& b) {
    if (a.margin != b.margin) return a.margin > b.margin;
    if (a.src_id != b.src_id) return a.src_id < b.src_id;
    return a.tgt_id < b.tgt_id;
  };
  std::sort(out.begin(), out.end(), order);

  if (cfg.max_alignments_per_segment) {
    std::size_t cap = *cfg.max_alignments_per_segment;
    std::unordered_map<std::string, std::size_t> used_src, used_tgt;
    std::vector<MinedPair> kept;
    kept.reserve(out.size());
    for (MinedPair& p : out) {
      std::size_t& us = used_src[p.src_id];
      std::size_t& ut = used_tgt[p.tgt_id];
      if (us >= cap || ut >= cap) continue;
      ++us;
      ++ut;
      kept.push_back(std::move(p));
    }
    out = std::move(kept);
  }
  return out;
}

// --- pair file I/O ----------------------------------------------------------

inline constexpr const char* kPairHeader = "src_id\ttgt_id\tcosine\tmargin\tdirection";

inline std::string serialize_pairs(const std::vector<MinedPair>& pairs) {
  std::string out(kPairHeader);
  out.push_back('\n');
  for (const MinedPair& p : pairs) {
    out += p.src_id;
    out.push_back('\t');
    out += p.tgt_id;
    out.push_back('\t');
    out += format_fixed(p.cosine);
    out.push_back('\t');
    out += format_fixed(p.margin);
    out.push_back('\t');
    out += to_string(p.direction);
    out.push_back('\n');
  }
  return out;
}

inline void write_pairs(const std::vector<MinedPair>& pairs, const std::string& path) {
  atomic_write_file(path, serialize_pairs(pairs));
}

inline std::vector<MinedPair> parse_pairs(std::string_view tsv, const std::string& origin = "pairs") {
  std::vector<std::string> lines = split_lines(tsv);
  if (lines.empty() || lines[0] != kPairHeader)
    throw ParseFailure(origin + ": missing pair TSV header");
  std::vector<MinedPair> out;
  out.reserve(lines.size() - 1);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::vector<std::string> f = split_tabs(lines[i]);
    if (f.size() != 5) throw ParseFailure(origin + " line " + std::to_string(i + 1) + ": want 5 fields");
    MinedPair p;
    p.src_id = f[0];
    p.tgt_id = f[1];
    try {
      p.cosine = std::stod(f[2]);
      p.margin = std::stod(f[3]);
    } catch (const std::exception&) {
      throw ParseFailure(origin + " line " + std::to_string(i + 1) + ": bad number");
    }
    if (f[4] == "forward")
      p.direction = Direction::forward;
    else if (f[4] == "backward")
      p.direction = Direction::backward;
    else if (f[4] == "both")
      p.direction = Direction::both;
    else
      throw ParseFailure(origin + " line " + std::to_string(i + 1) + ": bad direction " + f[4]);
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<MinedPair> read_pairs(const std::string& path) {
  return parse_pairs(read_file(path), path);
}

// --- overlap resolution -----------------------------------------------------

namespace detail {

struct Interval {
  std::int64_t start, end;
  double weight;
  std::string id;
};

// Weighted interval scheduling, exact DP. Intervals that merely touch
// (end == next start) do not conflict. Returns the chosen ids.
inline std::vector<std::string> max_weight_schedule(std::vector<Interval> iv) {
  std::sort(iv.begin(), iv.end(), [](const Interval& a, const Interval& b) {
    if (a.end != b.end) return a.end < b.end;
    if (a.start != b.start) return a.start < b.start;
    return a.id < b.id;
  });
  const std::size_t n = iv.size();
  std::vector<double> best(n + 1, 0.0);
  std::vector<std::size_t> prev(n, 0);
  std::vector<std::int64_t> ends(n);
  for (std::size_t i = 0; i < n; ++i) ends[i] = iv[i].end;
  for (std::size_t i = 0; i < n; ++i) {
    // Last interval (by sort order) ending no later than iv[i].start.
    prev[i] = static_cast<std::size_t>(
        std::upper_bound(ends.begin(), ends.begin() + static_cast<std::ptrdiff_t>(i),
                         iv[i].start) -
        ends.begin());
    best[i + 1] = std::max(best[i], iv[i].weight + best[prev[i]]);
  }
  std::vector<std::string> chosen;
  for (std::size_t i = n; i > 0;) {
    if (best[i] == best[i - 1]) {
      --i;
    } else {
      chosen.push_back(iv[i - 1].id);
      i = prev[i - 1];
    }
  }
  return chosen;
}

}  // namespace detail

// Over-segmented speech candidates from one VAD parent overlap in time; at
// most one non-overlapping subset of them should survive. Per (parent, audio)
// group, picks the subset maximizing total margin mass (a segment's weight is
// the sum of margins of all pairs touching it) and drops pairs whose segment
// lost. Segments without speech metadata or without a parent pass through.
inline std::vector<MinedPair> resolve_overlaps(
    const std::vector<MinedPair>& pairs,
    const std::unordered_map<std::string, SegmentRecord>& segments) {
  std::unordered_map<std::string, double> weight;
  for (const MinedPair& p : pairs) {
    weight[p.src_id] += p.margin;
    weight[p.tgt_id] += p.margin;
  }
  // Group competing segments by (parent, audio file).
  std::map<std::pair<std::string, std::string>, std::vector<std::string>> groups;
  std::unordered_set<std::string> grouped;
  for (const auto& [id, w] : weight) {
    auto it = segments.find(id);
    if (it == segments.end()) continue;
    const SegmentRecord& r = it->second;
    if (r.modality != Modality::speech || !r.parent_id) continue;
    if (!r.start_ms || !r.end_ms)
      throw MissingSpan("speech segment " + id + " lacks start_ms/end_ms");
    if (grouped.insert(id).second)
      groups[{*r.parent_id, r.audio_uri.value_or("")}].push_back(id);
  }
  std::unordered_set<std::string> lost;
  for (auto& [key, ids] : groups) {
    std::vector<detail::Interval> iv;
    iv.reserve(ids.size());
    for (const std::string& id : ids) {
      const SegmentRecord& r = segments.at(id);
      iv.push_back({*r.start_ms, *r.end_ms, weight.at(id), id});
    }
    std::vector<std::string> chosen = detail::max_weight_schedule(std::move(iv));
    std::unordered_set<std::string> keep(chosen.begin(), chosen.end());
    for (const std::string& id : ids)
      if (!keep.count(id)) lost.insert(id);
  }
  std::vector<MinedPair> out;
  out.reserve(pairs.size());
  for (const MinedPair& p : pairs)
    if (!lost.count(p.src_id) && !lost.count(p.tgt_id)) out.push_back(p);
  return out;
}

// --- over-segmentation candidate generation ---------------------------------

// Emit every contiguous run of 1..max_merge consecutive VAD units as a
// candidate segment; the miner's margin plus overlap resolution later picks
// the winning split. Candidate count is sum over i of min(max_merge, n-i).
inline std::vector<SegmentRecord> make_overlapping_candidates(
    const std::vector<SegmentRecord>& vad_units, std::size_t max_merge) {
  if (max_merge < 1) throw ConfigError("max_merge must be >= 1");
  std::vector<SegmentRecord> out;
  if (vad_units.empty()) return out;
  const std::string& uri = vad_units.front().audio_uri.value_or("");
  for (std::size_t i = 0; i < vad_units.size(); ++i) {
    const SegmentRecord& u = vad_units[i];
    if (!u.start_ms || !u.end_ms) throw MissingSpan("vad unit " + u.id + " lacks start_ms/end_ms");
    if (u.audio_uri.value_or("") != uri)
      throw MixedAudioUri("vad units span multiple audio files (" + uri + " vs " +
                          u.audio_uri.value_or("") + ")");
    if (i > 0) {
      const SegmentRecord& prev = vad_units[i - 1];
      if (*u.start_ms < *prev.start_ms)
        throw UnsortedInput("vad units not sorted by start_ms at " + u.id);
      if (*u.start_ms < *prev.end_ms)
        throw OverlappingVadUnits("vad units " + prev.id + " and " + u.id + " overlap");
    }
  }
  const std::size_t n = vad_units.size();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t max_len = std::min(max_merge, n - i);
    for (std::size_t len = 1; len <= max_len; ++len) {
      const SegmentRecord& first = vad_units[i];
      const SegmentRecord& last = vad_units[i + len - 1];
      SegmentRecord c;
      c.id = (len == 1) ? first.id : first.id + ".." + last.id;
      c.lang = first.lang;
      c.modality = Modality::speech;
      c.audio_uri = first.audio_uri;
      c.start_ms = first.start_ms;
      c.end_ms = last.end_ms;
      c.parent_id = uri;
      out.push_back(std::move(c));
    }
  }
  return out;
}

}  // namespace polymine
