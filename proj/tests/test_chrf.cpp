// Tests for the character F-score: a frozen fixture scored by an independent
// reference implementation, one fully hand-derived value, and the symmetry /
// flag behaviours the metric contract promises.

#include <catch2/catch_amalgamated.hpp>

#include <string>

#include "polymine/chrf.hpp"

using namespace polymine;

namespace {

struct FixtureRow {
  const char* hyp;
  const char* ref;
  double chrf_char_only;  // char_order 6, word_order 0
  double chrf_plus_plus;  // char_order 6, word_order 2
};

const FixtureRow kFixture[] = {
#include "chrf_fixture.inc"
};

ChrfConfig plus_plus_config() {
  ChrfConfig cfg;
  cfg.word_order = 2;
  return cfg;
}

}  // namespace

TEST_CASE("fixture pairs match the independent reference scorer") {
  ChrfConfig pp = plus_plus_config();
  for (const FixtureRow& row : kFixture) {
    INFO("hyp: " << row.hyp << "\nref: " << row.ref);
    REQUIRE(chrf(row.hyp, row.ref) == Catch::Approx(row.chrf_char_only).margin(1e-6));
    REQUIRE(chrf(row.hyp, row.ref, pp) == Catch::Approx(row.chrf_plus_plus).margin(1e-6));
  }
}

TEST_CASE("three-character hypothesis scores its exact closed form") {
  // "cat" vs "cat sat": spaces removed, the reference becomes "catsat".
  // Order 1: match 3/3 hyp, 3/6 ref -> F2 = 5/9. Order 2: 2/2, 2/5 -> 5/11.
  // Order 3: 1/1, 1/4 -> 5/17. Orders 4-6 have no hypothesis n-grams and are
  // skipped, so the score is 100 * (5/9 + 5/11 + 5/17) / 3 = 219500/5049.
  REQUIRE(chrf("cat", "cat sat") == Catch::Approx(219500.0 / 5049.0).margin(1e-9));
}

TEST_CASE("identical strings score 100 in both variants") {
  ChrfConfig pp = plus_plus_config();
  for (const char* s : {"x", "The quick brown fox.", "a b  c", "äöü 今日は"}) {
    REQUIRE(chrf(s, s) == Catch::Approx(100.0).margin(1e-12));
    REQUIRE(chrf(s, s, pp) == Catch::Approx(100.0).margin(1e-12));
  }
}

TEST_CASE("beta 1 is swap-symmetric, beta 2 is not") {
  ChrfConfig f1;
  f1.beta = 1.0;
  for (const FixtureRow& row : kFixture) {
    INFO("hyp: " << row.hyp << "\nref: " << row.ref);
    REQUIRE(chrf(row.hyp, row.ref, f1) == Catch::Approx(chrf(row.ref, row.hyp, f1)).margin(1e-9));
  }
  // With recall weighting, a hypothesis strictly contained in its reference
  // scores differently from the swapped direction.
  REQUIRE(chrf("cat", "cat sat") != Catch::Approx(chrf("cat sat", "cat")).margin(1e-6));
}

TEST_CASE("higher beta weights recall over precision") {
  // "cat" vs "cat sat" has precision 1 at every contributing order and
  // recall below 1, so increasing beta must lower the score.
  ChrfConfig f1;
  f1.beta = 1.0;
  REQUIRE(chrf("cat", "cat sat") < chrf("cat", "cat sat", f1));
}

TEST_CASE("effective order skips empty orders instead of zeroing them") {
  // A 3-character hypothesis has no n-grams at orders 4-6; without the
  // effective-order rule those three orders count as zeros, exactly halving
  // the 6-order mean.
  ChrfConfig all_orders;
  all_orders.effective_order = false;
  REQUIRE(chrf("cat", "cat sat", all_orders) ==
          Catch::Approx(0.5 * chrf("cat", "cat sat")).margin(1e-9));
}

TEST_CASE("space removal makes character n-grams segmentation-blind") {
  REQUIRE(chrf("a b c", "abc") == Catch::Approx(100.0).margin(1e-12));
  ChrfConfig keep;
  keep.remove_spaces_for_char_ngrams = false;
  REQUIRE(chrf("a b c", "abc", keep) < 100.0);
}

TEST_CASE("lowercase flag folds case before matching") {
  ChrfConfig lc;
  lc.lowercase = true;
  REQUIRE(chrf("ABC DEF", "abc def", lc) == Catch::Approx(100.0).margin(1e-12));
  REQUIRE(chrf("ABC", "abc") == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("empty strings score zero") {
  REQUIRE(chrf("", "") == 0.0);
  REQUIRE(chrf("", "abc") == 0.0);
  REQUIRE(chrf("abc", "") == 0.0);
  ChrfConfig pp = plus_plus_config();
  REQUIRE(chrf("", "", pp) == 0.0);
}

TEST_CASE("dropping matched words lowers the score monotonically") {
  const std::string ref = "the cat sat on the mat";
  double full = chrf(ref, ref);
  double most = chrf("the cat sat on the", ref);
  double some = chrf("the cat", ref);
  double none = chrf("zzz", ref);
  REQUIRE(full == Catch::Approx(100.0).margin(1e-12));
  REQUIRE(full > most);
  REQUIRE(most > some);
  REQUIRE(some > none);
  REQUIRE(none == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("unigram-only scoring ignores character order") {
  ChrfConfig uni;
  uni.char_order = 1;
  REQUIRE(chrf("ab", "ba", uni) == Catch::Approx(100.0).margin(1e-12));
}

TEST_CASE("repeated hypothesis n-grams are clipped to reference counts") {
  // "aaa" has two "aa" bigrams but the reference only one; clipping keeps
  // precision below 1 and the pair distinct from a perfect match.
  double rep = chrf("aaa", "aa");
  REQUIRE(rep > 0.0);
  REQUIRE(rep < 100.0);
}
