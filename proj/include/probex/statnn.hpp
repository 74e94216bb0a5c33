#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "probex/errors.hpp"
#include "probex/linalg.hpp"
#include "probex/rng.hpp"
#include "probex/zoo.hpp"

namespace probex {

// Fixed quantile levels; the five interior levels plus mean and variance give
// the 7 per-layer statistics.
inline constexpr double kStatQuantiles[5] = {0.10, 0.25, 0.50, 0.75, 0.90};
inline constexpr std::size_t kStatsPerLayer = 7;

// mean, population variance, then the 5 quantiles, per selected layer,
// concatenated in selection order. Invariant to any within-layer entry
// permutation.
inline Vec statnn_features(const ModelRecord& record,
                           const std::vector<std::string>& layer_selection) {
  Vec features;
  features.reserve(layer_selection.size() * kStatsPerLayer);
  for (const auto& name : layer_selection) {
    if (!record.has_layer(name)) {
      throw ConfigError("statnn: record " + record.model_id + " has no layer '" + name + "'");
    }
    const Matrix layer = record.input_layer(name);
    const Vec& v = layer.data;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size());
    features.push_back(mean);
    features.push_back(var);
    for (double q : kStatQuantiles) features.push_back(quantile(v, q));
  }
  for (double f : features)
    if (!std::isfinite(f)) throw NumericError("statnn features contain a non-finite value");
  return features;
}

inline void write_features_csv(const std::string& path, const Zoo& zoo,
                               const std::vector<std::string>& layer_selection) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write features csv: " + path);
  os << "model_id";
  const std::size_t n_features = layer_selection.size() * kStatsPerLayer;
  for (std::size_t i = 1; i <= n_features; ++i) os << ",f" << i;
  os << "\n";
  os.precision(17);
  for (const auto& rec : zoo.records) {
    os << rec.model_id;
    for (double f : statnn_features(rec, layer_selection)) os << "," << f;
    os << "\n";
  }
}

// Linear or one-hidden-layer head over the features. hidden == 0 is the
// linear variant.
struct StatHead {
  Matrix w1;  // linear: d_y x d_f; mlp: h x d_f
  Vec b1;
  Matrix w2;  // mlp only: d_y x h
  Vec b2;
  std::size_t hidden = 0;

  std::size_t param_count() const {
    return w1.size() + b1.size() + w2.size() + b2.size();
  }
};

// Hidden width that brings the MLP head closest to a parameter budget:
// params = h (d_f + d_y + 1) + d_y.
inline std::size_t stat_mlp_hidden_for_budget(std::size_t d_f, std::size_t d_y,
                                              std::size_t budget) {
  const double h = (static_cast<double>(budget) - static_cast<double>(d_y)) /
                   static_cast<double>(d_f + d_y + 1);
  return h < 1.0 ? 1 : static_cast<std::size_t>(std::llround(h));
}

inline StatHead stat_head_init(std::size_t d_f, std::size_t d_y, std::size_t hidden, Rng& rng) {
  if (d_f == 0 || d_y == 0) throw ConfigError("stat head dims must be >= 1");
  StatHead head;
  head.hidden = hidden;
  auto init = [&rng](std::size_t out, std::size_t in) {
    Matrix w(out, in);
    const double a = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& v : w.data) v = rng.uniform(-a, a);
    return w;
  };
  if (hidden == 0) {
    head.w1 = init(d_y, d_f);
    head.b1 = Vec(d_y, 0.0);
  } else {
    head.w1 = init(hidden, d_f);
    head.b1 = Vec(hidden, 0.0);
    head.w2 = init(d_y, hidden);
    head.b2 = Vec(d_y, 0.0);
  }
  return head;
}

struct StatHeadCache {
  Vec pre1, h1;
};

inline Vec stat_head_forward(const StatHead& head, const Vec& features,
                             StatHeadCache* cache = nullptr) {
  if (features.size() != head.w1.cols) {
    throw DimensionError("stat head expects " + std::to_string(head.w1.cols) +
                         " features, got " + std::to_string(features.size()));
  }
  Vec pre1 = matvec(head.w1, features);
  for (std::size_t i = 0; i < pre1.size(); ++i) pre1[i] += head.b1[i];
  if (head.hidden == 0) return pre1;
  Vec h1 = relu(pre1);
  Vec y = matvec(head.w2, h1);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += head.b2[i];
  if (cache) {
    cache->pre1 = std::move(pre1);
    cache->h1 = std::move(h1);
  }
  return y;
}

struct StatHeadGrads {
  Matrix w1;
  Vec b1;
  Matrix w2;
  Vec b2;
};

inline StatHeadGrads stat_head_grads_like(const StatHead& head) {
  StatHeadGrads g;
  g.w1 = Matrix(head.w1.rows, head.w1.cols);
  g.b1 = Vec(head.b1.size(), 0.0);
  g.w2 = Matrix(head.w2.rows, head.w2.cols);
  g.b2 = Vec(head.b2.size(), 0.0);
  return g;
}

inline void stat_head_backward(const StatHead& head, const Vec& features,
                               const StatHeadCache& cache, const Vec& dl_dy, StatHeadGrads& g) {
  if (head.hidden == 0) {
    for (std::size_t i = 0; i < head.w1.rows; ++i) {
      g.b1[i] += dl_dy[i];
      for (std::size_t j = 0; j < head.w1.cols; ++j) g.w1(i, j) += dl_dy[i] * features[j];
    }
    return;
  }
  for (std::size_t i = 0; i < head.w2.rows; ++i) {
    g.b2[i] += dl_dy[i];
    for (std::size_t j = 0; j < head.w2.cols; ++j) g.w2(i, j) += dl_dy[i] * cache.h1[j];
  }
  Vec dh1 = matvec_t(head.w2, dl_dy);
  for (std::size_t i = 0; i < dh1.size(); ++i)
    if (cache.pre1[i] <= 0.0) dh1[i] = 0.0;
  for (std::size_t i = 0; i < head.w1.rows; ++i) {
    g.b1[i] += dh1[i];
    for (std::size_t j = 0; j < head.w1.cols; ++j) g.w1(i, j) += dh1[i] * features[j];
  }
}

}  // namespace probex
