#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "polymine/embedding.hpp"
#include "polymine/errors.hpp"
#include "polymine/knn.hpp"

namespace polymine {

enum class XsimMode { cosine, margin };

struct XsimConfig {
  XsimMode mode = XsimMode::cosine;
  std::size_t margin_k = 4;  // neighbor count for the margin variant
  std::size_t workers = 1;
};

// Similarity-search error rate: fraction of source rows whose best-scoring
// target is not the gold-aligned one. `gold[i]` is the target row aligned to
// source row i and must be a bijection.
inline double xsim(const EmbeddingMatrix& src, const EmbeddingMatrix& tgt,
                   const std::vector<std::size_t>& gold, const XsimConfig& cfg = {}) {
  if (src.dim != tgt.dim)
    throw DimMismatch("dim " + std::to_string(src.dim) + " vs " + std::to_string(tgt.dim));
  if (src.count != tgt.count)
    throw CountMismatch("src has " + std::to_string(src.count) + " rows, tgt has " +
                        std::to_string(tgt.count));
  const std::size_t n = static_cast<std::size_t>(src.count);
  if (gold.size() != n) throw CountMismatch("gold permutation size != row count");
  std::vector<char> seen(n, 0);
  for (std::size_t t : gold) {
    if (t >= n || seen[t]) throw CountMismatch("gold is not a bijection");
    seen[t] = 1;
  }
  if (n == 0) return 0.0;

  std::vector<std::size_t> argmax(n);
  if (cfg.mode == XsimMode::cosine) {
    std::vector<NeighborList> top = knn_exact(src, tgt, 1, false, cfg.workers);
    for (std::size_t i = 0; i < n; ++i) argmax[i] = top[i].neighbors[0].row;
  } else {
    // Margin retrieval: score(i,j) = cos(i,j) / (avg kNN sim of i + avg of j)/2.
    // Denominators come from each side's k nearest neighbors on the other side.
    std::size_t k = std::min(cfg.margin_k, n);
    std::vector<NeighborList> fwd = knn_exact(src, tgt, k, false, cfg.workers);
    std::vector<NeighborList> bwd = knn_exact(tgt, src, k, false, cfg.workers);
    std::vector<double> mean_src(n), mean_tgt(n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (const Neighbor& nb : fwd[i].neighbors) s += nb.cosine;
      mean_src[i] = s / static_cast<double>(fwd[i].neighbors.size());
    }
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (const Neighbor& nb : bwd[j].neighbors) s += nb.cosine;
      mean_tgt[j] = s / static_cast<double>(bwd[j].neighbors.size());
    }
    detail::parallel_for(n, cfg.workers, [&](std::size_t i) {
      const float* v = src.row(i);
      std::size_t best = 0;
      double best_score = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        double d = 0.5 * (mean_src[i] + mean_tgt[j]);
        double cos = dot(v, tgt.row(j), src.dim);
        double score = (d <= 1e-9) ? -1e300 : cos / d;
        if (score > best_score) {
          best_score = score;
          best = j;
        }
      }
      argmax[i] = best;
    });
  }
  std::size_t errors = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (argmax[i] != gold[i]) ++errors;
  return static_cast<double>(errors) / static_cast<double>(n);
}

// --- robustness aggregates --------------------------------------------------

struct GroupScores {
  std::string key;
  std::vector<double> scores;
};

struct RobustnessReport {
  double chrf_ms = 0.0;     // mean of per-group means
  double coefvar_ms = 0.0;  // mean of per-group SD/mean over eligible groups
  std::size_t groups = 0;
  std::size_t coefvar_groups = 0;  // |g| > 1 and mean > 0
};

// chrF_MS averages each content group's mean score; CoefVar_MS averages
// SD/mean over groups where that is defined (more than one member, positive
// mean). Sample SD (n-1) by default; population SD behind the flag.
inline RobustnessReport robustness(const std::vector<GroupScores>& groups,
                                   bool population_sd = false) {
  if (groups.empty()) throw EmptyInput("robustness needs at least one group");
  RobustnessReport rep;
  rep.groups = groups.size();
  double mean_sum = 0.0, cv_sum = 0.0;
  for (const GroupScores& g : groups) {
    if (g.scores.empty()) throw EmptyInput("group " + g.key + " has no scores");
    double sum = 0.0;
    for (double s : g.scores) sum += s;
    double mean = sum / static_cast<double>(g.scores.size());
    mean_sum += mean;
    if (g.scores.size() > 1 && mean > 0.0) {
      double ss = 0.0;
      for (double s : g.scores) ss += (s - mean) * (s - mean);
      double denom = static_cast<double>(g.scores.size() - (population_sd ? 0 : 1));
      cv_sum += std::sqrt(ss / denom) / mean;
      ++rep.coefvar_groups;
    }
  }
  rep.chrf_ms = mean_sum / static_cast<double>(rep.groups);
  rep.coefvar_ms = rep.coefvar_groups ? cv_sum / static_cast<double>(rep.coefvar_groups) : 0.0;
  return rep;
}

// Relative masculine-vs-feminine quality gap: (M - F) / min(M, F).
// Negative when the feminine side scores higher.
inline double gender_delta(double masc, double fem) {
  double lo = std::min(masc, fem);
  if (!(lo > 0.0)) throw NonPositiveDenominator("min(masc, fem) = " + std::to_string(lo));
  return (masc - fem) / lo;
}

}  // namespace polymine
