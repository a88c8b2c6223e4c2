#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "polymine/lid.hpp"
#include "polymine/rng.hpp"
#include "test_util.hpp"

using namespace polymine;

namespace {

double gauss_pdf(double x, double mu, double sigma) {
  double z = (x - mu) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * M_PI));
}

// Oracle: the boundary is where the prior-weighted densities cross. Find it
// by bisection on the sign of the log-density difference between the means.
double boundary_by_bisection(double mc, double sc, double mi, double si, double pc) {
  auto diff = [&](double t) {
    return std::log(pc * gauss_pdf(t, mc, sc)) - std::log((1.0 - pc) * gauss_pdf(t, mi, si));
  };
  double lo = mi, hi = mc;
  if (diff(lo) >= 0.0 || diff(hi) <= 0.0) return std::nan("");  // no crossing inside
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    (diff(mid) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

SegmentRecord rec(const std::string& id, const std::string& lang, double score) {
  SegmentRecord r;
  r.id = id;
  r.lang = lang;
  r.modality = Modality::text;
  r.text = "x";
  r.lid_score = score;
  return r;
}

}  // namespace

TEST_CASE("threshold agrees with a bisection oracle on random class geometry") {
  Rng rng(77);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    LidCalibration cal;
    cal.lang = "xx";
    cal.mu_incorrect = rng.uniform(0.2, 0.5);
    cal.mu_correct = cal.mu_incorrect + rng.uniform(0.1, 0.4);
    cal.sigma_correct = rng.uniform(0.02, 0.2);
    cal.sigma_incorrect = rng.uniform(0.02, 0.2);
    cal.prior_correct = rng.uniform(0.2, 0.95);
    derive_threshold(cal);
    double want = boundary_by_bisection(cal.mu_correct, cal.sigma_correct, cal.mu_incorrect,
                                        cal.sigma_incorrect, cal.prior_correct);
    if (std::isnan(want)) continue;  // densities do not cross between the means
    ++checked;
    REQUIRE(std::isfinite(cal.threshold));
    CHECK_FALSE(cal.fallback);
    CHECK(cal.threshold == Catch::Approx(want).margin(1e-9));
    // At the boundary the posterior must be (numerically) one half.
    double num = cal.prior_correct * gauss_pdf(cal.threshold, cal.mu_correct, cal.sigma_correct);
    double den = num + (1.0 - cal.prior_correct) *
                           gauss_pdf(cal.threshold, cal.mu_incorrect, cal.sigma_incorrect);
    CHECK(num / den == Catch::Approx(0.5).margin(1e-9));
  }
  CHECK(checked > 100);  // the oracle must actually exercise the quadratic path
}

TEST_CASE("equal variances use the prior-shifted midpoint in closed form") {
  LidCalibration cal;
  cal.mu_correct = 0.8;
  cal.mu_incorrect = 0.4;
  cal.sigma_correct = 0.1;
  cal.sigma_incorrect = 0.1;
  cal.prior_correct = 0.75;
  derive_threshold(cal);
  double want = 0.6 + 0.01 * std::log(0.25 / 0.75) / 0.4;
  CHECK(cal.threshold == Catch::Approx(want).epsilon(1e-12));
  CHECK_FALSE(cal.fallback);
  // Equal priors land exactly on the midpoint.
  cal.prior_correct = 0.5;
  derive_threshold(cal);
  CHECK(cal.threshold == Catch::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("inverted class means fall back to accept-everything") {
  LidCalibration cal;
  cal.mu_correct = 0.4;
  cal.mu_incorrect = 0.7;
  cal.sigma_correct = 0.1;
  cal.sigma_incorrect = 0.1;
  cal.prior_correct = 0.9;
  derive_threshold(cal);
  CHECK(cal.threshold == -std::numeric_limits<double>::infinity());
  CHECK(cal.fallback);
}

TEST_CASE("fit recovers planted gaussians and ignores input order") {
  Rng rng(88);
  std::vector<LidSample> dev;
  for (int i = 0; i < 4000; ++i) {
    bool correct = rng.uniform() < 0.9;
    double score = correct ? rng.gaussian(0.85, 0.07) : rng.gaussian(0.55, 0.12);
    dev.push_back({"deu", score, correct});
  }
  auto cal = fit(dev);
  REQUIRE(cal.count("deu"));
  const LidCalibration& c = cal.at("deu");
  CHECK(c.mu_correct == Catch::Approx(0.85).margin(0.01));
  CHECK(c.sigma_correct == Catch::Approx(0.07).margin(0.01));
  CHECK(c.mu_incorrect == Catch::Approx(0.55).margin(0.02));
  CHECK(c.sigma_incorrect == Catch::Approx(0.12).margin(0.02));
  CHECK(c.prior_correct == Catch::Approx(0.9).margin(0.02));
  CHECK(c.threshold > 0.55);
  CHECK(c.threshold < 0.85);

  std::vector<LidSample> shuffled = dev;
  Rng shuffle_rng(5);
  shuffle_rng.shuffle(shuffled);
  auto cal2 = fit(shuffled);
  // Bitwise identical: the fit sorts scores before accumulating.
  CHECK(cal2.at("deu").mu_correct == c.mu_correct);
  CHECK(cal2.at("deu").sigma_correct == c.sigma_correct);
  CHECK(cal2.at("deu").threshold == c.threshold);
}

TEST_CASE("languages with too few samples of either class fall back") {
  std::vector<LidSample> dev = {
      {"aaa", 0.9, true}, {"aaa", 0.8, true}, {"aaa", 0.3, false},  // one incorrect only
      {"bbb", 0.9, true}, {"bbb", 0.85, true}, {"bbb", 0.3, false}, {"bbb", 0.4, false},
  };
  auto cal = fit(dev);
  CHECK(cal.at("aaa").fallback);
  CHECK(cal.at("aaa").threshold == -std::numeric_limits<double>::infinity());
  CHECK_FALSE(cal.at("bbb").fallback);
  CHECK(std::isfinite(cal.at("bbb").threshold));
}

TEST_CASE("apply uses a >= rule and passes unknown languages with a warning") {
  std::map<std::string, LidCalibration> cal;
  LidCalibration c;
  c.lang = "fra";
  c.threshold = 0.7;
  cal["fra"] = c;
  std::vector<SegmentRecord> records = {rec("r1", "fra", 0.7), rec("r2", "fra", 0.699),
                                        rec("r3", "zzz", 0.01)};
  LidApplyResult res = polymine::apply(records, cal);
  REQUIRE(res.accepted.size() == 2);
  CHECK(res.accepted[0].id == "r1");  // exactly at threshold: accepted
  CHECK(res.accepted[1].id == "r3");  // unknown language: accepted
  REQUIRE(res.rejected.size() == 1);
  CHECK(res.rejected[0].id == "r2");
  REQUIRE(res.warnings.size() == 1);
  CHECK(res.warnings[0].find("zzz") != std::string::npos);
}

TEST_CASE("apply requires a score on every record") {
  std::map<std::string, LidCalibration> cal;
  SegmentRecord r = rec("r1", "fra", 0.5);
  r.lid_score.reset();
  CHECK_THROWS_AS(polymine::apply({r}, cal), MissingLidScore);
}

TEST_CASE("micro F1 equals accuracy when rejections are excluded") {
  // Hand confusion matrix over accepted items:
  //   truth deu: pred deu, deu, fra   truth fra: pred fra, deu
  std::vector<std::pair<std::string, std::string>> labels = {
      {"deu", "deu"}, {"deu", "deu"}, {"deu", "fra"}, {"fra", "fra"}, {"fra", "deu"},
      {"deu", "deu"},  // rejected; must not count below
  };
  std::vector<bool> mask = {true, true, true, true, true, false};
  LidEvalReport rep = evaluate(labels, mask);
  CHECK(rep.f1_micro == Catch::Approx(3.0 / 5.0));  // accuracy over accepted
  CHECK(rep.coverage == Catch::Approx(5.0 / 6.0));
  // deu: tp=2 fp=1 fn=1 -> P=2/3 R=2/3 F1=2/3; fra: tp=1 fp=1 fn=1 -> F1=1/2.
  CHECK(rep.per_language.at("deu").f1 == Catch::Approx(2.0 / 3.0));
  CHECK(rep.per_language.at("fra").f1 == Catch::Approx(0.5));
  CHECK(rep.f1_macro == Catch::Approx((2.0 / 3.0 + 0.5) / 2.0));
}

TEST_CASE("counting rejections as errors lowers recall but not precision") {
  std::vector<std::pair<std::string, std::string>> labels = {
      {"deu", "deu"}, {"deu", "deu"}, {"deu", "deu"}};
  std::vector<bool> mask = {true, true, false};
  LidEvalReport strict = evaluate(labels, mask, true);
  LidEvalReport lax = evaluate(labels, mask, false);
  CHECK(lax.f1_micro == Catch::Approx(1.0));
  // Strict micro: tp=2, pred=2, truth=3 -> 2*2/(2+3).
  CHECK(strict.f1_micro == Catch::Approx(0.8));
  CHECK(strict.per_language.at("deu").precision == Catch::Approx(1.0));
  CHECK(strict.per_language.at("deu").recall == Catch::Approx(2.0 / 3.0));
}

TEST_CASE("evaluate validates input and handles the empty corpus") {
  CHECK_THROWS_AS(evaluate({{"a", "a"}}, {}), CountMismatch);
  LidEvalReport rep = evaluate({}, {});
  CHECK(rep.coverage == 1.0);
  CHECK(rep.f1_micro == 0.0);
}

TEST_CASE("the calibration survives a json round trip, including -inf") {
  std::vector<LidSample> dev;
  Rng rng(99);
  for (int i = 0; i < 200; ++i) {
    bool correct = i % 5 != 0;
    dev.push_back({"nld", correct ? rng.gaussian(0.8, 0.05) : rng.gaussian(0.5, 0.1), correct});
  }
  dev.push_back({"tiny", 0.9, true});  // forces a fallback entry
  auto cal = fit(dev);
  nlohmann::json j = calibration_to_json(cal);
  auto back = calibration_from_json(j);
  REQUIRE(back.size() == cal.size());
  CHECK(back.at("nld").threshold == cal.at("nld").threshold);
  CHECK(back.at("nld").mu_correct == cal.at("nld").mu_correct);
  CHECK(back.at("tiny").threshold == -std::numeric_limits<double>::infinity());
  CHECK(back.at("tiny").fallback);
}

TEST_CASE("dev tsv parsing enforces its header and field types") {
  std::string good = "lang\tscore\tis_correct\ndeu\t0.9\t1\nfra\t0.4\tfalse\n";
  auto samples = parse_dev_tsv(good, "test");
  REQUIRE(samples.size() == 2);
  CHECK(samples[0].lang == "deu");
  CHECK(samples[0].is_correct);
  CHECK_FALSE(samples[1].is_correct);
  CHECK_THROWS_AS(parse_dev_tsv("deu\t0.9\t1\n", "test"), ParseFailure);  // no header
  CHECK_THROWS_AS(parse_dev_tsv("lang\tscore\tis_correct\ndeu\t0.9\n", "test"), ParseFailure);
  CHECK_THROWS_AS(parse_dev_tsv("lang\tscore\tis_correct\ndeu\tx\t1\n", "test"), ParseFailure);
  CHECK_THROWS_AS(parse_dev_tsv("lang\tscore\tis_correct\ndeu\t0.9\tmaybe\n", "test"),
                  ParseFailure);
}

TEST_CASE("filtering with a planted mixture improves micro F1") {
  // The Table-7-style scaled scenario in unit-test form: correct scores high,
  // incorrect low; thresholding trades little coverage for real accuracy.
  Rng rng(123);
  std::vector<LidSample> dev;
  for (int i = 0; i < 2000; ++i) {
    bool correct = rng.uniform() < 0.9;
    dev.push_back({"spa", correct ? rng.gaussian(0.85, 0.07) : rng.gaussian(0.55, 0.12), correct});
  }
  auto cal = fit(dev);
  std::vector<std::pair<std::string, std::string>> labels;
  std::vector<bool> keep_all, keep_thresholded;
  Rng rng2(321);
  for (int i = 0; i < 4000; ++i) {
    bool correct = rng2.uniform() < 0.9;
    double score = correct ? rng2.gaussian(0.85, 0.07) : rng2.gaussian(0.55, 0.12);
    labels.push_back({"spa", correct ? "spa" : "other"});
    keep_all.push_back(true);
    keep_thresholded.push_back(score >= cal.at("spa").threshold);
  }
  LidEvalReport before = evaluate(labels, keep_all);
  LidEvalReport after = evaluate(labels, keep_thresholded);
  CHECK(after.f1_micro > before.f1_micro + 0.02);
  CHECK(after.coverage >= 0.85);
}
