#pragma once

#include <algorithm>
#include <cstdint>
#include <thread>
#include <vector>

#include "polymine/embedding.hpp"
#include "polymine/errors.hpp"
#include "polymine/rng.hpp"

namespace polymine {

struct Neighbor {
  std::size_t row = 0;
  double cosine = 0.0;
};

struct NeighborList {
  std::size_t query_row = 0;
  std::vector<Neighbor> neighbors;  // descending cosine, ties by ascending row
};

namespace detail {

// Ordering used everywhere: higher cosine first, ties broken by lower row
// index so results never depend on scan or scheduling order.
inline bool better(const Neighbor& a, const Neighbor& b) {
  if (a.cosine != b.cosine) return a.cosine > b.cosine;
  return a.row < b.row;
}

// Fixed-capacity top-k accumulator over a linear scan.
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) { heap_.reserve(k + 1); }

  void offer(std::size_t row, double cosine) {
    Neighbor n{row, cosine};
    if (heap_.size() < k_) {
      heap_.push_back(n);
      std::push_heap(heap_.begin(), heap_.end(), better);  // worst on top
      return;
    }
    if (better(n, heap_.front())) {
      std::pop_heap(heap_.begin(), heap_.end(), better);
      heap_.back() = n;
      std::push_heap(heap_.begin(), heap_.end(), better);
    }
  }

  std::vector<Neighbor> sorted() && {
    std::sort(heap_.begin(), heap_.end(), better);
    return std::move(heap_);
  }

 private:
  std::size_t k_;
  std::vector<Neighbor> heap_;
};

inline void check_same_dim(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
  if (a.dim != b.dim)
    throw DimMismatch("dim " + std::to_string(a.dim) + " vs " + std::to_string(b.dim));
}

// Run fn(i) over [0, n) on `workers` threads in contiguous shards. Each index
// writes only its own output slot, so results are identical for any worker
// count.
template <typename Fn>
inline void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  workers = std::min(workers, n);
  std::vector<std::thread> threads;
  threads.reserve(workers);
  std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    threads.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : threads) t.join();
}

}  // namespace detail

// Exact top-k by cosine (dot product on normalized rows). The scan is blocked
// over targets to keep the hot loop in cache; accumulation is double per dot,
// so the result is independent of blocking and worker count.
inline std::vector<NeighborList> knn_exact(const EmbeddingMatrix& queries,
                                           const EmbeddingMatrix& targets, std::size_t k,
                                           bool exclude_self, std::size_t workers = 1) {
  detail::check_same_dim(queries, targets);
  if (k < 1) throw KExceedsTargets("k must be >= 1");
  std::size_t available = static_cast<std::size_t>(targets.count) - (exclude_self ? 1 : 0);
  if (k > available)
    throw KExceedsTargets("k=" + std::to_string(k) + " exceeds " + std::to_string(available) +
                          " available targets");
  const std::size_t nq = static_cast<std::size_t>(queries.count);
  const std::size_t nt = static_cast<std::size_t>(targets.count);
  const std::uint32_t dim = queries.dim;
  constexpr std::size_t kBlock = 256;
  std::vector<NeighborList> out(nq);
  detail::parallel_for(nq, workers, [&](std::size_t q) {
    const float* qv = queries.row(q);
    detail::TopK top(k);
    for (std::size_t t0 = 0; t0 < nt; t0 += kBlock) {
      std::size_t t1 = std::min(nt, t0 + kBlock);
      for (std::size_t t = t0; t < t1; ++t) {
        if (exclude_self && t == q) continue;
        top.offer(t, dot(qv, targets.row(t), dim));
      }
    }
    out[q] = NeighborList{q, std::move(top).sorted()};
  });
  return out;
}

// Inverted-file index over spherical k-means cells.
struct IvfIndex {
  std::size_t n_cells = 0;
  EmbeddingMatrix centroids;
  std::vector<std::vector<std::size_t>> cell_members;
  std::size_t n_probe = 1;
};

inline std::size_t default_n_cells(std::uint64_t count) {
  double r = std::sqrt(static_cast<double>(count));
  auto n = static_cast<std::size_t>(r + 0.5);
  return std::max<std::size_t>(1, n);
}

inline std::size_t default_n_probe(std::size_t n_cells) {
  return std::max<std::size_t>(1, n_cells / 8);
}

// Spherical k-means: assignments by max dot, centroids re-normalized each
// round, at most 25 rounds or until assignments stop moving. Empty cells are
// repaired by re-seeding them with the farthest member of the largest cell.
// Fully deterministic for a given seed.
inline IvfIndex build_ivf(const EmbeddingMatrix& targets, std::size_t n_cells, std::uint64_t seed,
                          std::size_t n_probe = 0, std::size_t workers = 1) {
  if (!targets.normalized) throw NotNormalized("build_ivf needs a normalized matrix");
  const std::size_t n = static_cast<std::size_t>(targets.count);
  if (n_cells < 1 || n_cells > n)
    throw TooFewRows("n_cells=" + std::to_string(n_cells) + " for " + std::to_string(n) + " rows");
  const std::uint32_t dim = targets.dim;

  // Seed centroids with distinct rows.
  Rng rng(seed);
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  rng.shuffle(perm);
  EmbeddingMatrix cent;
  cent.dim = dim;
  cent.count = n_cells;
  cent.normalized = true;
  cent.data.resize(n_cells * dim);
  for (std::size_t c = 0; c < n_cells; ++c)
    std::copy_n(targets.row(perm[c]), dim, cent.row(c));

  std::vector<std::size_t> assign(n, 0);
  constexpr int kMaxIter = 25;
  for (int iter = 0; iter < kMaxIter; ++iter) {
    // Assignment: argmax dot, ties to the lowest cell index.
    std::vector<std::size_t> next(n);
    detail::parallel_for(n, workers, [&](std::size_t i) {
      const float* v = targets.row(i);
      std::size_t best = 0;
      double best_dot = dot(v, cent.row(0), dim);
      for (std::size_t c = 1; c < n_cells; ++c) {
        double d = dot(v, cent.row(c), dim);
        if (d > best_dot) {
          best_dot = d;
          best = c;
        }
      }
      next[i] = best;
    });
    bool moved = (iter == 0) || (next != assign);
    assign = std::move(next);

    // Mean + renormalize; collect empties.
    std::vector<std::vector<std::size_t>> members(n_cells);
    for (std::size_t i = 0; i < n; ++i) members[assign[i]].push_back(i);
    std::vector<double> mean(dim);
    for (std::size_t c = 0; c < n_cells; ++c) {
      if (members[c].empty()) continue;
      std::fill(mean.begin(), mean.end(), 0.0);
      for (std::size_t i : members[c]) {
        const float* v = targets.row(i);
        for (std::uint32_t d = 0; d < dim; ++d) mean[d] += v[d];
      }
      double sumsq = 0.0;
      for (double m : mean) sumsq += m * m;
      double norm = std::sqrt(sumsq);
      float* cv = cent.row(c);
      if (norm == 0.0) {
        // Degenerate mean (perfectly opposed members): keep previous centroid.
        continue;
      }
      for (std::uint32_t d = 0; d < dim; ++d) cv[d] = static_cast<float>(mean[d] / norm);
    }
    for (std::size_t c = 0; c < n_cells; ++c) {
      if (!members[c].empty()) continue;
      // Steal the farthest member of the largest cell (ties: lowest index).
      std::size_t big = 0;
      for (std::size_t c2 = 1; c2 < n_cells; ++c2)
        if (members[c2].size() > members[big].size()) big = c2;
      if (members[big].size() <= 1) continue;  // nothing to split
      std::size_t worst_pos = 0;
      double worst_dot = 1e300;
      for (std::size_t pos = 0; pos < members[big].size(); ++pos) {
        double d = dot(targets.row(members[big][pos]), cent.row(big), dim);
        if (d < worst_dot) {
          worst_dot = d;
          worst_pos = pos;
        }
      }
      std::size_t moved_row = members[big][worst_pos];
      members[big].erase(members[big].begin() + static_cast<std::ptrdiff_t>(worst_pos));
      members[c] = {moved_row};
      assign[moved_row] = c;
      std::copy_n(targets.row(moved_row), dim, cent.row(c));
      moved = true;
    }
    if (!moved) break;
  }

  IvfIndex idx;
  idx.n_cells = n_cells;
  idx.centroids = std::move(cent);
  idx.cell_members.assign(n_cells, {});
  for (std::size_t i = 0; i < n; ++i) idx.cell_members[assign[i]].push_back(i);
  idx.n_probe = n_probe ? std::min(n_probe, n_cells) : default_n_probe(n_cells);
  return idx;
}

// Approximate top-k: scan only the members of the n_probe cells whose
// centroids score highest for the query. Lists may be shorter than k when the
// probed cells hold fewer rows.
inline std::vector<NeighborList> knn_ivf(const IvfIndex& index, const EmbeddingMatrix& queries,
                                         const EmbeddingMatrix& targets, std::size_t k,
                                         std::size_t workers = 1) {
  detail::check_same_dim(queries, index.centroids);
  detail::check_same_dim(queries, targets);
  const std::size_t nq = static_cast<std::size_t>(queries.count);
  const std::uint32_t dim = queries.dim;
  std::vector<NeighborList> out(nq);
  detail::parallel_for(nq, workers, [&](std::size_t q) {
    const float* qv = queries.row(q);
    detail::TopK cells(index.n_probe);
    for (std::size_t c = 0; c < index.n_cells; ++c)
      cells.offer(c, dot(qv, index.centroids.row(c), dim));
    detail::TopK top(k);
    for (const Neighbor& cell : std::move(cells).sorted())
      for (std::size_t t : index.cell_members[cell.row]) top.offer(t, dot(qv, targets.row(t), dim));
    out[q] = NeighborList{q, std::move(top).sorted()};
  });
  return out;
}

}  // namespace polymine
