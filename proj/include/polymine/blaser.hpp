#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "polymine/errors.hpp"
#include "polymine/rng.hpp"

namespace polymine {

namespace detail {
inline void check_unit(std::span<const double> v, const char* name) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  if (std::abs(std::sqrt(ss) - 1.0) > 1e-4)
    throw NotNormalized(std::string(name) + " embedding is not unit-norm");
}
inline void check_same_dim(std::size_t a, std::size_t b) {
  if (a != b) throw DimMismatch("embedding dims " + std::to_string(a) + " vs " + std::to_string(b));
}
}  // namespace detail

// Average of source-translation and reference-translation cosines; the
// no-training baseline score. Symmetric in source and reference.
inline double score_unsupervised(std::span<const double> h_src, std::span<const double> h_mt,
                                 std::span<const double> h_ref) {
  detail::check_same_dim(h_src.size(), h_mt.size());
  detail::check_same_dim(h_ref.size(), h_mt.size());
  detail::check_unit(h_src, "src");
  detail::check_unit(h_mt, "mt");
  detail::check_unit(h_ref, "ref");
  double cs = 0.0, cr = 0.0;
  for (std::size_t i = 0; i < h_mt.size(); ++i) {
    cs += h_src[i] * h_mt[i];
    cr += h_ref[i] * h_mt[i];
  }
  return 0.5 * (cs + cr);
}

// Feature vector for the reference-based regressor: six d-blocks
// [ref; mt; src*mt; |src-mt|; ref*mt; |ref-mt|] (elementwise product and
// absolute difference). Inputs must be unit vectors of equal dim.
inline std::vector<double> features_supervised(std::span<const double> h_src,
                                               std::span<const double> h_mt,
                                               std::span<const double> h_ref) {
  detail::check_same_dim(h_src.size(), h_mt.size());
  detail::check_same_dim(h_ref.size(), h_mt.size());
  detail::check_unit(h_src, "src");
  detail::check_unit(h_mt, "mt");
  detail::check_unit(h_ref, "ref");
  std::size_t d = h_mt.size();
  std::vector<double> f;
  f.reserve(6 * d);
  for (std::size_t i = 0; i < d; ++i) f.push_back(h_ref[i]);
  for (std::size_t i = 0; i < d; ++i) f.push_back(h_mt[i]);
  for (std::size_t i = 0; i < d; ++i) f.push_back(h_src[i] * h_mt[i]);
  for (std::size_t i = 0; i < d; ++i) f.push_back(std::abs(h_src[i] - h_mt[i]));
  for (std::size_t i = 0; i < d; ++i) f.push_back(h_ref[i] * h_mt[i]);
  for (std::size_t i = 0; i < d; ++i) f.push_back(std::abs(h_ref[i] - h_mt[i]));
  return f;
}

// Reference-free (QE) features: four d-blocks [src; mt; src*mt; |src-mt|].
inline std::vector<double> features_qe(std::span<const double> h_src,
                                       std::span<const double> h_mt) {
  detail::check_same_dim(h_src.size(), h_mt.size());
  detail::check_unit(h_src, "src");
  detail::check_unit(h_mt, "mt");
  std::size_t d = h_mt.size();
  std::vector<double> f;
  f.reserve(4 * d);
  for (std::size_t i = 0; i < d; ++i) f.push_back(h_src[i]);
  for (std::size_t i = 0; i < d; ++i) f.push_back(h_mt[i]);
  for (std::size_t i = 0; i < d; ++i) f.push_back(h_src[i] * h_mt[i]);
  for (std::size_t i = 0; i < d; ++i) f.push_back(std::abs(h_src[i] - h_mt[i]));
  return f;
}

// 3-layer perceptron regressor: two tanh hidden layers, linear scalar output
// targeting the 1-5 quality scale (unclamped by default).
struct BlaserModel {
  std::vector<std::size_t> layer_dims;       // [in, hid1, hid2, 1]
  std::vector<std::vector<double>> weights;  // weights[l]: dims[l+1] x dims[l], row-major
  std::vector<std::vector<double>> biases;   // biases[l]: dims[l+1]
  double dropout_p = 0.5;                    // training-time only
  std::uint64_t seed = 0;
};

inline BlaserModel init_model(std::vector<std::size_t> layer_dims, std::uint64_t seed) {
  if (layer_dims.size() != 4 || layer_dims.back() != 1)
    throw ConfigError("layer_dims must be [in, hid1, hid2, 1]");
  for (std::size_t d : layer_dims)
    if (d == 0) throw ConfigError("zero layer width");
  BlaserModel m;
  m.layer_dims = std::move(layer_dims);
  m.seed = seed;
  Rng rng(derive_seed(seed, "blaser-init"));
  for (std::size_t l = 0; l + 1 < m.layer_dims.size(); ++l) {
    std::size_t in = m.layer_dims[l], out = m.layer_dims[l + 1];
    double bound = std::sqrt(6.0 / static_cast<double>(in + out));  // Xavier uniform
    std::vector<double> w(out * in);
    for (double& x : w) x = rng.uniform(-bound, bound);
    m.weights.push_back(std::move(w));
    m.biases.emplace_back(out, 0.0);
  }
  return m;
}

namespace detail {

struct Activations {
  // a[0] = input, a[l] = post-activation of layer l; z kept implicitly via a.
  std::vector<std::vector<double>> a;
};

// Forward pass. When `masks` is non-null its entries multiply the hidden
// activations (inverted dropout, already scaled by 1/(1-p)).
inline double forward(const BlaserModel& m, std::span<const double> x,
                      const std::vector<std::vector<double>>* masks, Activations* acts) {
  std::vector<double> cur(x.begin(), x.end());
  if (acts) acts->a.push_back(cur);
  const std::size_t layers = m.weights.size();
  for (std::size_t l = 0; l < layers; ++l) {
    std::size_t in = m.layer_dims[l], out = m.layer_dims[l + 1];
    std::vector<double> next(out);
    for (std::size_t o = 0; o < out; ++o) {
      double acc = m.biases[l][o];
      const double* wrow = m.weights[l].data() + o * in;
      for (std::size_t i = 0; i < in; ++i) acc += wrow[i] * cur[i];
      next[o] = (l + 1 < layers) ? std::tanh(acc) : acc;  // identity output
    }
    if (masks && l + 1 < layers)
      for (std::size_t o = 0; o < out; ++o) next[o] *= (*masks)[l][o];
    cur = std::move(next);
    if (acts) acts->a.push_back(cur);
  }
  return cur[0];
}

}  // namespace detail

inline double score_supervised(const BlaserModel& m, std::span<const double> features) {
  if (features.size() != m.layer_dims.front())
    throw DimMismatch("feature length " + std::to_string(features.size()) + ", model expects " +
                      std::to_string(m.layer_dims.front()));
  return detail::forward(m, features, nullptr, nullptr);
}

struct TrainExample {
  std::vector<double> features;
  double label = 0.0;
};

struct TrainHyper {
  double dropout = 0.5;
  double weight_decay = 0.1;
  std::size_t batch = 1024;
  std::size_t epochs = 50;
  double lr0 = 0.05;
  std::uint64_t seed = 0;
};

struct Gradients {
  std::vector<std::vector<double>> dw, db;
  double loss = 0.0;  // mean squared error over the examples
};

inline double mse_loss(const BlaserModel& m, std::span<const TrainExample> examples) {
  double sum = 0.0;
  for (const TrainExample& e : examples) {
    double err = detail::forward(m, e.features, nullptr, nullptr) - e.label;
    sum += err * err;
  }
  return examples.empty() ? 0.0 : sum / static_cast<double>(examples.size());
}

// Mean-squared-error gradients by manual backpropagation, averaged over the
// examples. Dropout masks (when rng given) are drawn per example per hidden
// unit: Bernoulli keep(1-p) scaled by 1/(1-p). Weight decay is added to the
// weight gradients (not biases) afterwards.
inline Gradients compute_gradients(const BlaserModel& m, std::span<const TrainExample> examples,
                                   double weight_decay = 0.0, double dropout_p = 0.0,
                                   Rng* rng = nullptr) {
  const std::size_t layers = m.weights.size();
  Gradients g;
  g.dw.resize(layers);
  g.db.resize(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    g.dw[l].assign(m.weights[l].size(), 0.0);
    g.db[l].assign(m.biases[l].size(), 0.0);
  }
  const double batch_n = static_cast<double>(examples.size());
  for (const TrainExample& e : examples) {
    if (e.features.size() != m.layer_dims.front())
      throw DimMismatch("training feature length mismatch");
    std::vector<std::vector<double>> masks;
    std::vector<std::vector<double>>* mask_ptr = nullptr;
    if (rng && dropout_p > 0.0) {
      for (std::size_t l = 0; l + 1 < layers; ++l) {
        std::vector<double> mk(m.layer_dims[l + 1]);
        for (double& v : mk)
          v = (rng->uniform() < dropout_p) ? 0.0 : 1.0 / (1.0 - dropout_p);
        masks.push_back(std::move(mk));
      }
      mask_ptr = &masks;
    }
    detail::Activations acts;
    double y = detail::forward(m, e.features, mask_ptr, &acts);
    double err = y - e.label;
    g.loss += err * err;
    // delta for the linear output layer; walk backwards through tanh layers.
    std::vector<double> delta{2.0 * err / batch_n};
    for (std::size_t l = layers; l-- > 0;) {
      std::size_t in = m.layer_dims[l], out = m.layer_dims[l + 1];
      const std::vector<double>& a_in = acts.a[l];
      for (std::size_t o = 0; o < out; ++o) {
        g.db[l][o] += delta[o];
        double* grow = g.dw[l].data() + o * in;
        for (std::size_t i = 0; i < in; ++i) grow[i] += delta[o] * a_in[i];
      }
      if (l == 0) break;
      std::vector<double> prev(in, 0.0);
      for (std::size_t o = 0; o < out; ++o) {
        const double* wrow = m.weights[l].data() + o * in;
        for (std::size_t i = 0; i < in; ++i) prev[i] += wrow[i] * delta[o];
      }
      // Through dropout (same mask) and tanh': 1 - a^2 of the *pre-dropout*
      // activation; with masks applied, acts stores post-dropout values, so
      // recover tanh(z) by dividing the mask back out where it is nonzero.
      const std::vector<double>& a_here = acts.a[l];
      for (std::size_t i = 0; i < in; ++i) {
        double mask = mask_ptr ? masks[l - 1][i] : 1.0;
        if (mask == 0.0) {
          prev[i] = 0.0;
          continue;
        }
        double tanh_z = mask_ptr ? a_here[i] / mask : a_here[i];
        prev[i] *= mask * (1.0 - tanh_z * tanh_z);
      }
      delta = std::move(prev);
    }
  }
  g.loss = examples.empty() ? 0.0 : g.loss / batch_n;
  if (weight_decay != 0.0)
    for (std::size_t l = 0; l < layers; ++l)
      for (std::size_t i = 0; i < g.dw[l].size(); ++i) g.dw[l][i] += weight_decay * m.weights[l][i];
  return g;
}

// Plain SGD over shuffled mini-batches, learning rate decaying linearly to
// zero across the whole run. Returns the per-epoch mean training loss.
// Deterministic for a given seed; with lr0 == 0 and dropout == 0 the model
// comes back bit-identical (useful as a pipeline no-op check).
inline std::vector<double> train(BlaserModel& m, const std::vector<TrainExample>& examples,
                                 const TrainHyper& hyper) {
  if (examples.empty()) throw EmptyInput("train needs at least one example");
  if (hyper.batch == 0 || hyper.epochs == 0) throw ConfigError("batch and epochs must be positive");
  if (hyper.dropout < 0.0 || hyper.dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
  for (const TrainExample& e : examples)
    if (!std::isfinite(e.label)) throw NonFiniteLoss("non-finite training label");
  m.dropout_p = hyper.dropout;
  Rng shuffle_rng(derive_seed(hyper.seed, "blaser-shuffle"));
  Rng dropout_rng(derive_seed(hyper.seed, "blaser-dropout"));
  const std::size_t n = examples.size();
  const std::size_t batches = (n + hyper.batch - 1) / hyper.batch;
  const double total_steps = static_cast<double>(hyper.epochs * batches);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> trace;
  trace.reserve(hyper.epochs);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t bstart = 0; bstart < n; bstart += hyper.batch) {
      std::size_t bend = std::min(n, bstart + hyper.batch);
      std::vector<TrainExample> mb;
      mb.reserve(bend - bstart);
      for (std::size_t i = bstart; i < bend; ++i) mb.push_back(examples[order[i]]);
      Gradients g = compute_gradients(m, mb, hyper.weight_decay, hyper.dropout,
                                      hyper.dropout > 0.0 ? &dropout_rng : nullptr);
      if (!std::isfinite(g.loss))
        throw NonFiniteLoss("loss diverged at epoch " + std::to_string(epoch) + " batch " +
                            std::to_string(bstart / hyper.batch));
      epoch_loss += g.loss * static_cast<double>(bend - bstart);
      double lr = hyper.lr0 * (total_steps - static_cast<double>(step)) / total_steps;
      for (std::size_t l = 0; l < m.weights.size(); ++l) {
        for (std::size_t i = 0; i < m.weights[l].size(); ++i)
          m.weights[l][i] -= lr * g.dw[l][i];
        for (std::size_t i = 0; i < m.biases[l].size(); ++i) m.biases[l][i] -= lr * g.db[l][i];
      }
      ++step;
    }
    trace.push_back(epoch_loss / static_cast<double>(n));
  }
  return trace;
}

// --- correlation ------------------------------------------------------------

struct Correlation {
  double pearson = 0.0;
  double spearman = 0.0;
};

namespace detail {

inline double pearson(std::span<const double> xs, std::span<const double> ys) {
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw ConstantSeries("constant series in correlation");
  return sxy / std::sqrt(sxx * syy);
}

// Average ranks (1-based); tied values share the mean of their positions.
inline std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace detail

inline Correlation correlate(std::span<const double> preds, std::span<const double> labels) {
  if (preds.size() != labels.size()) throw CountMismatch("pred/label length mismatch");
  if (preds.size() < 3) throw ConstantSeries("need at least 3 points");
  Correlation c;
  c.pearson = detail::pearson(preds, labels);
  std::vector<double> rp = detail::average_ranks(preds);
  std::vector<double> rl = detail::average_ranks(labels);
  c.spearman = detail::pearson(rp, rl);
  return c;
}

// --- persistence ------------------------------------------------------------

inline nlohmann::json model_to_json(const BlaserModel& m) {
  nlohmann::json j;
  j["layer_dims"] = m.layer_dims;
  j["weights"] = m.weights;
  j["biases"] = m.biases;
  j["dropout_p"] = m.dropout_p;
  j["seed"] = m.seed;
  return j;
}

inline BlaserModel model_from_json(const nlohmann::json& j) {
  BlaserModel m;
  try {
    m.layer_dims = j.at("layer_dims").get<std::vector<std::size_t>>();
    m.weights = j.at("weights").get<std::vector<std::vector<double>>>();
    m.biases = j.at("biases").get<std::vector<std::vector<double>>>();
    m.dropout_p = j.value("dropout_p", 0.5);
    m.seed = j.value("seed", 0ull);
  } catch (const nlohmann::json::exception& e) {
    throw ParseFailure(std::string("model json: ") + e.what());
  }
  if (m.layer_dims.size() != 4 || m.weights.size() != 3 || m.biases.size() != 3)
    throw ParseFailure("model json: expected 3 layers");
  for (std::size_t l = 0; l < 3; ++l) {
    if (m.weights[l].size() != m.layer_dims[l] * m.layer_dims[l + 1] ||
        m.biases[l].size() != m.layer_dims[l + 1])
      throw ParseFailure("model json: weight shape mismatch at layer " + std::to_string(l));
  }
  return m;
}

}  // namespace polymine
