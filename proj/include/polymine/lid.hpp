#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "polymine/embedding.hpp"
#include "polymine/errors.hpp"

namespace polymine {

// Per-language two-Gaussian model over LID scores of correctly vs incorrectly
// identified samples, plus the posterior decision boundary used as an
// acceptance threshold.
struct LidCalibration {
  std::string lang;
  double mu_correct = 0.0, sigma_correct = 0.0;
  double mu_incorrect = 0.0, sigma_incorrect = 0.0;
  double prior_correct = 0.0;
  double threshold = -std::numeric_limits<double>::infinity();
  bool fallback = false;       // true when the boundary came from a fallback rule
  std::string fallback_reason;
};

struct LidSample {
  std::string lang;
  double score = 0.0;
  bool is_correct = false;
};

struct PerLangEval {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  std::size_t n = 0;  // support (true-label count among evaluated items)
};

struct LidEvalReport {
  double f1_micro = 0.0;
  double f1_macro = 0.0;
  double coverage = 0.0;
  std::map<std::string, PerLangEval> per_language;
};

namespace detail {

struct MeanStd {
  double mu = 0.0, sigma = 0.0;
};

// Sample mean / sample standard deviation (n-1), sigma floored at 1e-6 so a
// near-constant dev set cannot blow up the boundary equation.
inline MeanStd mean_std(const std::vector<double>& xs) {
  double sum = 0.0;
  for (double x : xs) sum += x;
  double mu = sum / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mu) * (x - mu);
  double sigma = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
  return {mu, std::max(sigma, 1e-6)};
}

}  // namespace detail

// Decision boundary where prior-weighted class densities cross:
//   p_c * N(t; mu_c, s_c) == p_i * N(t; mu_i, s_i).
// Solved in log space. Unequal variances give a quadratic; the root lying
// strictly between the class means is the operative boundary (the other root
// sits in a tail where the comparison flips for spurious reasons). Fallbacks
// (flagged): equal variances use the prior-shifted midpoint; no usable root
// falls back to the midpoint formula with pooled variance.
inline void derive_threshold(LidCalibration& cal) {
  const double mc = cal.mu_correct, sc = cal.sigma_correct;
  const double mi = cal.mu_incorrect, si = cal.sigma_incorrect;
  const double pc = cal.prior_correct, pi = 1.0 - cal.prior_correct;
  if (!(mc > mi)) {
    cal.threshold = -std::numeric_limits<double>::infinity();
    cal.fallback = true;
    cal.fallback_reason = "mu_correct <= mu_incorrect; accepting everything";
    return;
  }
  auto prior_shifted_midpoint = [&](double var) {
    return 0.5 * (mc + mi) + var * std::log(pi / pc) / (mc - mi);
  };
  if (std::abs(sc - si) <= 1e-12 * std::max({sc, si, 1.0})) {
    cal.threshold = prior_shifted_midpoint(sc * sc);
    return;
  }
  double a = 1.0 / (2.0 * si * si) - 1.0 / (2.0 * sc * sc);
  double b = mc / (sc * sc) - mi / (si * si);
  double c = mi * mi / (2.0 * si * si) - mc * mc / (2.0 * sc * sc) +
             std::log((pc * si) / (pi * sc));
  double disc = b * b - 4.0 * a * c;
  if (disc >= 0.0) {
    double rt = std::sqrt(disc);
    for (double t : {(-b + rt) / (2.0 * a), (-b - rt) / (2.0 * a)}) {
      if (t > mi && t < mc) {
        cal.threshold = t;
        return;
      }
    }
  }
  cal.threshold = prior_shifted_midpoint(0.5 * (sc * sc + si * si));
  cal.fallback = true;
  cal.fallback_reason = "no boundary root between the class means; midpoint fallback";
}

// Fit one calibration per language. Languages lacking two samples of either
// class get an accept-all fallback (threshold -inf) instead of a junk fit.
// Samples are sorted per language first so the fit cannot depend on input
// order (float accumulation order is pinned).
inline std::map<std::string, LidCalibration> fit(const std::vector<LidSample>& dev) {
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_lang;
  for (const LidSample& s : dev) {
    auto& [correct, incorrect] = by_lang[s.lang];
    (s.is_correct ? correct : incorrect).push_back(s.score);
  }
  std::map<std::string, LidCalibration> out;
  for (auto& [lang, scores] : by_lang) {
    auto& [correct, incorrect] = scores;
    std::sort(correct.begin(), correct.end());
    std::sort(incorrect.begin(), incorrect.end());
    LidCalibration cal;
    cal.lang = lang;
    std::size_t nc = correct.size(), ni = incorrect.size();
    cal.prior_correct = nc + ni ? static_cast<double>(nc) / static_cast<double>(nc + ni) : 0.0;
    if (nc < 2 || ni < 2) {
      cal.fallback = true;
      cal.fallback_reason = "needs >= 2 correct and >= 2 incorrect dev samples; accepting everything";
      if (nc >= 1) cal.mu_correct = detail::mean_std(correct).mu;
      if (ni >= 1) cal.mu_incorrect = detail::mean_std(incorrect).mu;
      out.emplace(lang, std::move(cal));
      continue;
    }
    detail::MeanStd c = detail::mean_std(correct), i = detail::mean_std(incorrect);
    cal.mu_correct = c.mu;
    cal.sigma_correct = c.sigma;
    cal.mu_incorrect = i.mu;
    cal.sigma_incorrect = i.sigma;
    derive_threshold(cal);
    if (!std::isfinite(cal.threshold) && !cal.fallback) {
      cal.threshold = -std::numeric_limits<double>::infinity();
      cal.fallback = true;
      cal.fallback_reason = "non-finite boundary; accepting everything";
    }
    out.emplace(lang, std::move(cal));
  }
  return out;
}

struct LidApplyResult {
  std::vector<SegmentRecord> accepted;
  std::vector<SegmentRecord> rejected;
  std::vector<std::string> warnings;
};

// Accept a record iff its score clears its language's threshold (>= rule, so
// a score exactly at the boundary passes). Unknown languages pass through
// with a warning rather than being silently dropped.
inline LidApplyResult apply(const std::vector<SegmentRecord>& records,
                            const std::map<std::string, LidCalibration>& cal) {
  LidApplyResult res;
  std::map<std::string, std::size_t> unknown;
  for (const SegmentRecord& r : records) {
    if (!r.lid_score) throw MissingLidScore("record " + r.id + " has no lid_score");
    auto it = cal.find(r.lang);
    if (it == cal.end()) {
      ++unknown[r.lang];
      res.accepted.push_back(r);
      continue;
    }
    (*r.lid_score >= it->second.threshold ? res.accepted : res.rejected).push_back(r);
  }
  for (const auto& [lang, n] : unknown)
    res.warnings.push_back("no calibration for language " + lang + " (" + std::to_string(n) +
                           " records accepted unfiltered)");
  return res;
}

// F1 over the accepted subset. Micro = pooled over items (for single-label
// data this equals accuracy); macro = unweighted mean of per-true-language
// F1. Rejected items are excluded from both by default; the flag counts them
// as unrecoverable errors instead (misses for their true language).
inline LidEvalReport evaluate(const std::vector<std::pair<std::string, std::string>>& labels,
                              const std::vector<bool>& accepted_mask,
                              bool count_rejected_as_errors = false) {
  if (labels.size() != accepted_mask.size())
    throw CountMismatch("labels and accepted mask differ in length");
  LidEvalReport rep;
  std::size_t total = labels.size();
  std::size_t accepted = 0;
  std::map<std::string, std::size_t> tp, fp, fn, support;
  // Pooled counts: predictions made (TP+FP) and truths in scope (TP+FN).
  // They coincide in the default mode; counting rejections as errors grows
  // only the truth side, since a rejected item predicts nothing.
  std::size_t micro_tp = 0, pred_count = 0, truth_count = 0;
  for (std::size_t i = 0; i < total; ++i) {
    const auto& [truth, pred] = labels[i];
    if (accepted_mask[i]) {
      ++accepted;
      ++support[truth];
      ++pred_count;
      ++truth_count;
      if (truth == pred) {
        ++tp[truth];
        ++micro_tp;
      } else {
        ++fn[truth];
        ++fp[pred];
      }
    } else if (count_rejected_as_errors) {
      ++support[truth];
      ++truth_count;
      ++fn[truth];
    }
  }
  rep.coverage = total ? static_cast<double>(accepted) / static_cast<double>(total) : 1.0;
  rep.f1_micro = (pred_count + truth_count)
                     ? 2.0 * static_cast<double>(micro_tp) /
                           static_cast<double>(pred_count + truth_count)
                     : 0.0;
  double macro_sum = 0.0;
  for (const auto& [lang, n] : support) {
    double p_den = static_cast<double>(tp[lang] + fp[lang]);
    double r_den = static_cast<double>(tp[lang] + fn[lang]);
    PerLangEval pl;
    pl.n = n;
    pl.precision = p_den > 0 ? tp[lang] / p_den : 0.0;
    pl.recall = r_den > 0 ? tp[lang] / r_den : 0.0;
    pl.f1 = (pl.precision + pl.recall > 0)
                ? 2.0 * pl.precision * pl.recall / (pl.precision + pl.recall)
                : 0.0;
    macro_sum += pl.f1;
    rep.per_language.emplace(lang, pl);
  }
  rep.f1_macro = support.empty() ? 0.0 : macro_sum / static_cast<double>(support.size());
  return rep;
}

// --- persistence ------------------------------------------------------------

// JSON array of calibration objects. -inf thresholds (accept-all fallbacks)
// serialize as null since JSON has no infinity literal.
inline nlohmann::json calibration_to_json(const std::map<std::string, LidCalibration>& cal) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [lang, c] : cal) {
    nlohmann::json j;
    j["lang"] = c.lang;
    j["mu_correct"] = c.mu_correct;
    j["sigma_correct"] = c.sigma_correct;
    j["mu_incorrect"] = c.mu_incorrect;
    j["sigma_incorrect"] = c.sigma_incorrect;
    j["prior_correct"] = c.prior_correct;
    if (std::isfinite(c.threshold))
      j["threshold"] = c.threshold;
    else
      j["threshold"] = nullptr;
    j["fallback"] = c.fallback;
    if (c.fallback) j["fallback_reason"] = c.fallback_reason;
    arr.push_back(std::move(j));
  }
  return arr;
}

inline std::map<std::string, LidCalibration> calibration_from_json(const nlohmann::json& arr) {
  std::map<std::string, LidCalibration> out;
  try {
    for (const nlohmann::json& j : arr) {
      LidCalibration c;
      c.lang = j.at("lang").get<std::string>();
      c.mu_correct = j.at("mu_correct").get<double>();
      c.sigma_correct = j.at("sigma_correct").get<double>();
      c.mu_incorrect = j.at("mu_incorrect").get<double>();
      c.sigma_incorrect = j.at("sigma_incorrect").get<double>();
      c.prior_correct = j.at("prior_correct").get<double>();
      c.threshold = j.at("threshold").is_null() ? -std::numeric_limits<double>::infinity()
                                                : j.at("threshold").get<double>();
      c.fallback = j.value("fallback", false);
      c.fallback_reason = j.value("fallback_reason", "");
      out.emplace(c.lang, std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseFailure(std::string("calibration json: ") + e.what());
  }
  return out;
}

inline constexpr const char* kDevHeader = "lang\tscore\tis_correct";

// Dev data TSV: header row, then lang <tab> score <tab> is_correct (0/1 or
// true/false) per line.
inline std::vector<LidSample> parse_dev_tsv(std::string_view tsv, const std::string& origin) {
  std::vector<LidSample> out;
  std::vector<std::string> lines = split_lines(tsv);
  if (lines.empty() || lines[0] != kDevHeader)
    throw ParseFailure(origin + ": expected header '" + std::string(kDevHeader) + "'");
  lines.erase(lines.begin());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    std::vector<std::string> f = split_tabs(lines[i]);
    if (f.size() != 3)
      throw ParseFailure(origin + " line " + std::to_string(i + 2) + ": want 3 fields");
    LidSample s;
    s.lang = f[0];
    try {
      s.score = std::stod(f[1]);
    } catch (const std::exception&) {
      throw ParseFailure(origin + " line " + std::to_string(i + 2) + ": bad score");
    }
    if (f[2] == "1" || f[2] == "true")
      s.is_correct = true;
    else if (f[2] == "0" || f[2] == "false")
      s.is_correct = false;
    else
      throw ParseFailure(origin + " line " + std::to_string(i + 2) + ": bad is_correct " + f[2]);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace polymine
