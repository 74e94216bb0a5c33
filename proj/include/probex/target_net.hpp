#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "probex/errors.hpp"
#include "probex/linalg.hpp"
#include "probex/rng.hpp"

namespace probex {

// Synthetic labeled task: isotropic Gaussian clusters, one per class.
struct GaussianMixture {
  Matrix means;  // n_classes x input_dim
  double noise_std = 1.0;

  std::size_t n_classes() const { return means.rows; }
  std::size_t input_dim() const { return means.cols; }

  void sample_into(std::size_t cls, Rng& rng, double* out) const {
    for (std::size_t j = 0; j < means.cols; ++j)
      out[j] = means(cls, j) + noise_std * rng.normal();
  }
};

// Means drawn as scale * (unit random direction); in high dimension these are
// near-orthogonal, which keeps classes separated without tuning.
inline GaussianMixture make_mixture(std::size_t n_classes, std::size_t input_dim,
                                    double mean_scale, double noise_std, Rng& rng) {
  GaussianMixture mix;
  mix.means = Matrix(n_classes, input_dim);
  mix.noise_std = noise_std;
  for (std::size_t c = 0; c < n_classes; ++c) {
    double norm_sq = 0.0;
    for (std::size_t j = 0; j < input_dim; ++j) {
      const double g = rng.normal();
      mix.means(c, j) = g;
      norm_sq += g * g;
    }
    const double scale = mean_scale / std::sqrt(norm_sq > 0 ? norm_sq : 1.0);
    for (std::size_t j = 0; j < input_dim; ++j) mix.means(c, j) *= scale;
  }
  return mix;
}

struct LabeledBatch {
  Matrix x;  // n x input_dim
  std::vector<std::size_t> labels;
};

// n_per_class samples from each listed class; labels are the logit indices
// given in `labels_for_classes` (parallel to `classes`).
inline LabeledBatch sample_dataset(const GaussianMixture& mix,
                                   const std::vector<std::size_t>& classes,
                                   const std::vector<std::size_t>& labels_for_classes,
                                   std::size_t n_per_class, Rng& rng) {
  LabeledBatch out;
  out.x = Matrix(classes.size() * n_per_class, mix.input_dim());
  out.labels.resize(out.x.rows);
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < classes.size(); ++ci) {
    for (std::size_t s = 0; s < n_per_class; ++s, ++row) {
      mix.sample_into(classes[ci], rng, &out.x.data[row * out.x.cols]);
      out.labels[row] = labels_for_classes[ci];
    }
  }
  return out;
}

// The fine-tuned targets: input -> hidden -> hidden -> logits, ReLU, biases.
// Only the weight matrices are exposed to metanetworks; biases stay internal.
struct TargetNet {
  std::vector<Matrix> weights;  // each out_dim x in_dim
  std::vector<Vec> biases;

  std::size_t n_layers() const { return weights.size(); }
};

inline TargetNet make_target(std::size_t input_dim, std::size_t hidden_dim,
                             std::size_t n_logits, Rng& rng) {
  auto init = [&rng](std::size_t out, std::size_t in) {
    Matrix w(out, in);
    const double a = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& v : w.data) v = rng.uniform(-a, a);
    return w;
  };
  TargetNet net;
  net.weights = {init(hidden_dim, input_dim), init(hidden_dim, hidden_dim),
                 init(n_logits, hidden_dim)};
  net.biases = {Vec(hidden_dim, 0.0), Vec(hidden_dim, 0.0), Vec(n_logits, 0.0)};
  return net;
}

namespace detail {

inline void add_bias_rows(Matrix& a, const Vec& b) {
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) a(i, j) += b[j];
}

inline void relu_inplace(Matrix& a) {
  for (double& v : a.data) v = v > 0.0 ? v : 0.0;
}

inline Vec col_sums(const Matrix& a) {
  Vec s(a.cols, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) s[j] += a(i, j);
  return s;
}

}  // namespace detail

struct TargetActivations {
  Matrix pre1, h1, pre2, h2, logits;  // all n x dim, row per sample
};

inline TargetActivations target_forward(const TargetNet& net, const Matrix& x) {
  TargetActivations act;
  act.pre1 = matmul_nt(x, net.weights[0]);
  detail::add_bias_rows(act.pre1, net.biases[0]);
  act.h1 = act.pre1;
  detail::relu_inplace(act.h1);
  act.pre2 = matmul_nt(act.h1, net.weights[1]);
  detail::add_bias_rows(act.pre2, net.biases[1]);
  act.h2 = act.pre2;
  detail::relu_inplace(act.h2);
  act.logits = matmul_nt(act.h2, net.weights[2]);
  detail::add_bias_rows(act.logits, net.biases[2]);
  return act;
}

// Mean softmax cross-entropy over the batch; returns loss, writes the logit
// gradient (softmax - onehot) / n into dlogits.
inline double softmax_ce_grad(const Matrix& logits, const std::vector<std::size_t>& labels,
                              Matrix& dlogits) {
  const std::size_t n = logits.rows;
  dlogits = Matrix(logits.rows, logits.cols);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = &logits.data[i * logits.cols];
    double mx = row[0];
    for (std::size_t j = 1; j < logits.cols; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < logits.cols; ++j) z += std::exp(row[j] - mx);
    const double logz = std::log(z) + mx;
    loss += logz - row[labels[i]];
    for (std::size_t j = 0; j < logits.cols; ++j) {
      dlogits(i, j) = std::exp(row[j] - logz) / static_cast<double>(n);
    }
    dlogits(i, labels[i]) -= 1.0 / static_cast<double>(n);
  }
  return loss / static_cast<double>(n);
}

// One plain-SGD epoch over a fixed dataset, deterministic batch order from rng.
inline void target_sgd_epoch(TargetNet& net, const LabeledBatch& data, double lr,
                             std::size_t batch_size, Rng& rng) {
  const std::size_t n = data.x.rows;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  if (batch_size == 0) batch_size = n;

  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t bsz = std::min(batch_size, n - start);
    Matrix xb(bsz, data.x.cols);
    std::vector<std::size_t> yb(bsz);
    for (std::size_t r = 0; r < bsz; ++r) {
      const std::size_t idx = order[start + r];
      std::copy_n(&data.x.data[idx * data.x.cols], data.x.cols, &xb.data[r * xb.cols]);
      yb[r] = data.labels[idx];
    }

    TargetActivations act = target_forward(net, xb);
    Matrix dlogits;
    softmax_ce_grad(act.logits, yb, dlogits);

    Matrix dw3 = matmul_tn(dlogits, act.h2);
    Vec db3 = detail::col_sums(dlogits);
    Matrix dh2 = matmul(dlogits, net.weights[2]);
    for (std::size_t i = 0; i < dh2.data.size(); ++i)
      if (act.pre2.data[i] <= 0.0) dh2.data[i] = 0.0;
    Matrix dw2 = matmul_tn(dh2, act.h1);
    Vec db2 = detail::col_sums(dh2);
    Matrix dh1 = matmul(dh2, net.weights[1]);
    for (std::size_t i = 0; i < dh1.data.size(); ++i)
      if (act.pre1.data[i] <= 0.0) dh1.data[i] = 0.0;
    Matrix dw1 = matmul_tn(dh1, xb);
    Vec db1 = detail::col_sums(dh1);

    auto apply = [lr](Matrix& w, const Matrix& g) {
      for (std::size_t i = 0; i < w.data.size(); ++i) w.data[i] -= lr * g.data[i];
    };
    auto apply_b = [lr](Vec& b, const Vec& g) {
      for (std::size_t i = 0; i < b.size(); ++i) b[i] -= lr * g[i];
    };
    apply(net.weights[0], dw1);
    apply(net.weights[1], dw2);
    apply(net.weights[2], dw3);
    apply_b(net.biases[0], db1);
    apply_b(net.biases[1], db2);
    apply_b(net.biases[2], db3);
  }
}

// Top-1 accuracy; when `restrict_logits` is nonempty the argmax runs over
// that subset only (a model is judged on its own class subset).
inline double target_accuracy(const TargetNet& net, const LabeledBatch& data,
                              const std::vector<std::size_t>& restrict_logits = {}) {
  const TargetActivations act = target_forward(net, data.x);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < act.logits.rows; ++i) {
    const double* row = &act.logits.data[i * act.logits.cols];
    std::size_t best = 0;
    double best_v = -1e300;
    if (restrict_logits.empty()) {
      for (std::size_t j = 0; j < act.logits.cols; ++j)
        if (row[j] > best_v) {
          best_v = row[j];
          best = j;
        }
    } else {
      for (std::size_t j : restrict_logits)
        if (row[j] > best_v) {
          best_v = row[j];
          best = j;
        }
    }
    if (best == data.labels[i]) ++hits;
  }
  return act.logits.rows == 0 ? 0.0
                              : static_cast<double>(hits) / static_cast<double>(act.logits.rows);
}

}  // namespace probex
