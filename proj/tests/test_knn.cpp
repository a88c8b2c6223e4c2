#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "polymine/knn.hpp"
#include "test_util.hpp"

using namespace polymine;

namespace {

// Independent oracle: score every target in double, stable-sort by
// (descending cosine, ascending row), take the head.
std::vector<NeighborList> knn_oracle(const EmbeddingMatrix& queries, const EmbeddingMatrix& targets,
                                     std::size_t k, bool exclude_self) {
  std::vector<NeighborList> out;
  for (std::size_t q = 0; q < queries.count; ++q) {
    std::vector<Neighbor> all;
    for (std::size_t t = 0; t < targets.count; ++t) {
      if (exclude_self && t == q) continue;
      all.push_back({t, dot(queries.row(q), targets.row(t), queries.dim)});
    }
    std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
      if (a.cosine != b.cosine) return a.cosine > b.cosine;
      return a.row < b.row;
    });
    all.resize(std::min(k, all.size()));
    out.push_back({q, std::move(all)});
  }
  return out;
}

void require_equal(const std::vector<NeighborList>& got, const std::vector<NeighborList>& want) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    REQUIRE(got[i].neighbors.size() == want[i].neighbors.size());
    for (std::size_t j = 0; j < got[i].neighbors.size(); ++j) {
      CHECK(got[i].neighbors[j].row == want[i].neighbors[j].row);
      CHECK(got[i].neighbors[j].cosine == want[i].neighbors[j].cosine);
    }
  }
}

}  // namespace

TEST_CASE("exact search matches the full-sort oracle") {
  EmbeddingMatrix q = normalize(testutil::random_unit_rows(57, 24, 1));
  EmbeddingMatrix t = normalize(testutil::random_unit_rows(203, 24, 2));
  for (std::size_t k : {1, 7, 16}) {
    require_equal(knn_exact(q, t, k, false), knn_oracle(q, t, k, false));
  }
}

TEST_CASE("duplicate targets tie-break to the lower row index") {
  // Three identical rows: all cosines tie, so order must be 0, 1, 2.
  EmbeddingMatrix t;
  t.dim = 4;
  t.count = 3;
  t.data = {1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0};
  t.normalized = true;
  EmbeddingMatrix q;
  q.dim = 4;
  q.count = 1;
  q.data = {1, 0, 0, 0};
  q.normalized = true;
  auto lists = knn_exact(q, t, 3, false);
  REQUIRE(lists[0].neighbors.size() == 3);
  CHECK(lists[0].neighbors[0].row == 0);
  CHECK(lists[0].neighbors[1].row == 1);
  CHECK(lists[0].neighbors[2].row == 2);
}

TEST_CASE("self exclusion removes the query row only") {
  EmbeddingMatrix m = normalize(testutil::random_unit_rows(40, 8, 3));
  auto lists = knn_exact(m, m, 5, true);
  for (const NeighborList& l : lists)
    for (const Neighbor& n : l.neighbors) CHECK(n.row != l.query_row);
  require_equal(lists, knn_oracle(m, m, 5, true));
}

TEST_CASE("k beyond available targets is an error") {
  EmbeddingMatrix m = normalize(testutil::random_unit_rows(5, 8, 4));
  CHECK_THROWS_AS(knn_exact(m, m, 6, false), KExceedsTargets);
  CHECK_THROWS_AS(knn_exact(m, m, 5, true), KExceedsTargets);  // 4 remain after self
  CHECK_NOTHROW(knn_exact(m, m, 5, false));
}

TEST_CASE("dimension mismatch is an error") {
  EmbeddingMatrix q = normalize(testutil::random_unit_rows(3, 8, 5));
  EmbeddingMatrix t = normalize(testutil::random_unit_rows(3, 16, 6));
  CHECK_THROWS_AS(knn_exact(q, t, 1, false), DimMismatch);
}

TEST_CASE("worker count does not change exact results") {
  EmbeddingMatrix q = normalize(testutil::random_unit_rows(64, 12, 7));
  EmbeddingMatrix t = normalize(testutil::random_unit_rows(300, 12, 8));
  auto a = knn_exact(q, t, 9, false, 1);
  auto b = knn_exact(q, t, 9, false, 4);
  require_equal(a, b);
}

TEST_CASE("default cell and probe counts follow the square-root rule") {
  CHECK(default_n_cells(10000) == 100);
  CHECK(default_n_cells(1) == 1);
  CHECK(default_n_cells(2) == 1);       // round(1.41) = 1
  CHECK(default_n_cells(5000) == 71);   // round(70.71)
  CHECK(default_n_probe(100) == 12);    // 100/8 floor
  CHECK(default_n_probe(7) == 1);
  CHECK(default_n_probe(1) == 1);
}

TEST_CASE("ivf build is deterministic and validates input") {
  EmbeddingMatrix t = normalize(testutil::random_unit_rows(500, 16, 9));
  IvfIndex a = build_ivf(t, 20, 123);
  IvfIndex b = build_ivf(t, 20, 123);
  REQUIRE(a.centroids.data.size() == b.centroids.data.size());
  CHECK(std::memcmp(a.centroids.data.data(), b.centroids.data.data(),
                    a.centroids.data.size() * sizeof(float)) == 0);
  REQUIRE(a.cell_members.size() == b.cell_members.size());
  for (std::size_t c = 0; c < a.cell_members.size(); ++c)
    CHECK(a.cell_members[c] == b.cell_members[c]);

  EmbeddingMatrix raw = testutil::random_unit_rows(500, 16, 9);
  raw.data[0] = 3.0f;  // clearly not unit-norm once perturbed
  CHECK_THROWS_AS(build_ivf(raw, 20, 123), NotNormalized);
  CHECK_THROWS_AS(build_ivf(t, 501, 123), TooFewRows);
}

TEST_CASE("every input row lands in exactly one cell") {
  EmbeddingMatrix t = normalize(testutil::random_unit_rows(300, 8, 10));
  IvfIndex idx = build_ivf(t, 15, 7);
  std::vector<int> seen(300, 0);
  for (const auto& members : idx.cell_members)
    for (std::size_t r : members) ++seen[r];
  for (int c : seen) CHECK(c == 1);
  // No cell may stay empty after repair.
  for (const auto& members : idx.cell_members) CHECK_FALSE(members.empty());
}

TEST_CASE("probing all cells reproduces exact search") {
  EmbeddingMatrix q = normalize(testutil::random_unit_rows(30, 12, 11));
  EmbeddingMatrix t = normalize(testutil::random_unit_rows(260, 12, 12));
  IvfIndex idx = build_ivf(t, 16, 99, /*n_probe=*/16);
  auto approx = knn_ivf(idx, q, t, 10);
  auto exact = knn_exact(q, t, 10, false);
  require_equal(approx, exact);
}

TEST_CASE("ivf recall at defaults is high on clustered data") {
  // 10 well-separated clusters; IVF should nearly always probe the right cells.
  Rng rng(13);
  std::size_t dim = 16, per = 100;
  EmbeddingMatrix t;
  t.dim = static_cast<std::uint32_t>(dim);
  t.count = 10 * per;
  t.data.resize(t.count * dim);
  std::vector<std::vector<double>> centers;
  for (int c = 0; c < 10; ++c) centers.push_back(testutil::random_unit_vec(16, rng));
  std::size_t r = 0;
  for (int c = 0; c < 10; ++c) {
    for (std::size_t i = 0; i < per; ++i, ++r) {
      double ss = 0.0;
      std::vector<double> v(dim);
      for (std::size_t d2 = 0; d2 < dim; ++d2) {
        v[d2] = centers[c][d2] + 0.15 * rng.gaussian();
        ss += v[d2] * v[d2];
      }
      for (std::size_t d2 = 0; d2 < dim; ++d2)
        t.data[r * dim + d2] = static_cast<float>(v[d2] / std::sqrt(ss));
    }
  }
  t = normalize(t);
  EmbeddingMatrix q = t;  // query the base itself
  IvfIndex idx = build_ivf(t, default_n_cells(t.count), 5);
  auto approx = knn_ivf(idx, q, t, 10);
  auto exact = knn_exact(q, t, 10, false);
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < exact.size(); ++i) {
    for (const Neighbor& n : exact[i].neighbors) {
      ++total;
      for (const Neighbor& a : approx[i].neighbors)
        if (a.row == n.row) {
          ++hit;
          break;
        }
    }
  }
  double recall = double(hit) / double(total);
  CHECK(recall >= 0.9);
}

TEST_CASE("ivf results are independent of worker count") {
  EmbeddingMatrix q = normalize(testutil::random_unit_rows(40, 8, 14));
  EmbeddingMatrix t = normalize(testutil::random_unit_rows(400, 8, 15));
  IvfIndex i1 = build_ivf(t, 20, 5, 0, 1);
  IvfIndex i4 = build_ivf(t, 20, 5, 0, 4);
  CHECK(std::memcmp(i1.centroids.data.data(), i4.centroids.data.data(),
                    i1.centroids.data.size() * sizeof(float)) == 0);
  auto a = knn_ivf(i1, q, t, 7, 1);
  auto b = knn_ivf(i4, q, t, 7, 4);
  require_equal(a, b);
}
