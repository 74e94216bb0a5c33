#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "probex/dense.hpp"
#include "probex/embedding_table.hpp"
#include "probex/errors.hpp"
#include "probex/expert.hpp"
#include "probex/linalg.hpp"
#include "probex/parallel.hpp"
#include "probex/rng.hpp"
#include "probex/statnn.hpp"

namespace probex {

enum class LossKind { multilabel_bce, contrastive_align };

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-5;
  int epochs = 500;
  std::size_t batch_size = 0;  // 0 = full batch
  std::uint64_t seed = 0;
  LossKind loss = LossKind::multilabel_bce;
  double temperature = 0.07;

  void validate() const {
    if (lr <= 0.0) throw ConfigError("train config: lr must be > 0");
    if (epochs < 0) throw ConfigError("train config: epochs must be >= 0");
    if (temperature <= 0.0) throw ConfigError("train config: temperature must be > 0");
  }
};

struct LossOut {
  double loss = 0.0;
  Vec dl_dy;
};

// Mean over classes of sigmoid binary cross-entropy, in the usual stable
// form; gradient is (sigmoid(y_c) - bit_c) / C.
inline LossOut loss_multilabel_bce(const Vec& y, const std::vector<std::uint8_t>& bits) {
  if (y.size() != bits.size()) {
    throw DimensionError("multilabel bce: " + std::to_string(y.size()) + " logits vs " +
                         std::to_string(bits.size()) + " labels");
  }
  const double inv_c = 1.0 / static_cast<double>(y.size());
  LossOut out;
  out.dl_dy.resize(y.size());
  for (std::size_t c = 0; c < y.size(); ++c) {
    const double yc = y[c];
    const double bit = bits[c] ? 1.0 : 0.0;
    out.loss += std::max(yc, 0.0) - yc * bit + std::log1p(std::exp(-std::fabs(yc)));
    const double sig = 1.0 / (1.0 + std::exp(-yc));
    out.dl_dy[c] = (sig - bit) * inv_c;
  }
  out.loss *= inv_c;
  return out;
}

// Cross-entropy of the softmax over cos(e, t_c)/tau against the target
// class. e is l2-normalized inside the loss.
inline LossOut loss_contrastive_align(const Vec& e_mapped, std::size_t target,
                                      const EmbeddingTable& table, double tau) {
  if (tau <= 0.0) throw ConfigError("contrastive loss: temperature must be > 0");
  if (target >= table.size()) throw DataError("contrastive loss: target class out of range");
  const double norm = norm2(e_mapped);
  if (norm == 0.0) throw DegenerateInputError("contrastive loss: zero-norm encoding");
  const std::size_t n = table.size();
  Vec unit(e_mapped.size());
  for (std::size_t i = 0; i < unit.size(); ++i) unit[i] = e_mapped[i] / norm;

  Vec sims(n);
  for (std::size_t c = 0; c < n; ++c) sims[c] = dot(unit, table.vectors[c]) / tau;
  double mx = sims[0];
  for (double s : sims) mx = std::max(mx, s);
  double z = 0.0;
  for (double s : sims) z += std::exp(s - mx);
  const double logz = std::log(z) + mx;

  LossOut out;
  out.loss = logz - sims[target];
  // dL/d unit = sum_c (p_c - 1[c=target]) t_c / tau, then through the
  // normalization jacobian (I - unit unit^T) / norm.
  Vec d_unit(unit.size(), 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    const double p = std::exp(sims[c] - logz);
    const double w = (p - (c == target ? 1.0 : 0.0)) / tau;
    const Vec& t = table.vectors[c];
    for (std::size_t i = 0; i < unit.size(); ++i) d_unit[i] += w * t[i];
  }
  const double proj = dot(d_unit, unit);
  out.dl_dy.resize(unit.size());
  for (std::size_t i = 0; i < unit.size(); ++i)
    out.dl_dy[i] = (d_unit[i] - proj * unit[i]) / norm;
  return out;
}

// ---------------------------------------------------------------------------
// Adam over named flat tensor views.
// ---------------------------------------------------------------------------

struct TensorRef {
  std::string name;
  double* data = nullptr;
  std::size_t n = 0;
};

struct AdamState {
  std::vector<Vec> m, v;
  long step = 0;

  void init(const std::vector<TensorRef>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p.n, 0.0);
      v.emplace_back(p.n, 0.0);
    }
    step = 0;
  }
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// One bias-corrected Adam step; weight decay enters as the classic additive
// lambda * param term on the gradient.
inline void adam_step(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads,
                      AdamState& state, const TrainConfig& cfg) {
  if (params.size() != grads.size()) throw DimensionError("adam: param/grad tensor count differs");
  if (state.m.size() != params.size()) state.init(params);
  ++state.step;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].n != grads[t].n) {
      throw DimensionError("adam: tensor '" + params[t].name + "' size mismatch");
    }
    if (!all_finite(grads[t].data, grads[t].n)) {
      throw NumericError("non-finite gradient in tensor '" + params[t].name + "'");
    }
    double* p = params[t].data;
    const double* g = grads[t].data;
    Vec& m = state.m[t];
    Vec& v = state.v[t];
    for (std::size_t i = 0; i < params[t].n; ++i) {
      const double gi = g[i] + cfg.weight_decay * p[i];
      m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * gi;
      v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + kAdamEps);
    }
  }
}

// ---------------------------------------------------------------------------
// Trainable adapters: a uniform face (forward/backward/tensor views) over the
// expert parameterizations so one loop trains them all.
// ---------------------------------------------------------------------------

struct ProbeXTrainable {
  ProbeXParams p;
  using Input = Matrix;
  struct Cache {
    EncoderCache enc;
    Vec e;
  };
  using Grads = ProbeXGrads;

  Vec forward(const Input& x, Cache* c = nullptr) const {
    if (c) {
      ProbeXOutput o = probex_forward(p, x, &c->enc);
      c->e = std::move(o.enc.e);
      return std::move(o.y);
    }
    return probex_forward(p, x).y;
  }
  void backward(const Input& x, const Cache& c, const Vec& dl_dy, Grads& g) const {
    probex_backward(p, x, c.enc, c.e, dl_dy, g);
  }
  Grads make_grads() const { return probex_grads_like(p); }

  std::vector<TensorRef> tensors() {
    std::vector<TensorRef> refs = {{"u", p.enc.u.data.data(), p.enc.u.size()},
                                   {"v", p.enc.v.data.data(), p.enc.v.size()}};
    for (std::size_t i = 0; i < p.enc.hidden.size(); ++i) {
      refs.push_back({"hidden" + std::to_string(i), p.enc.hidden[i].data.data(),
                      p.enc.hidden[i].size()});
    }
    refs.push_back({"m", p.enc.m.data.data(), p.enc.m.size()});
    refs.push_back({"t", p.t.data.data(), p.t.size()});
    return refs;
  }
  static std::vector<TensorRef> grad_tensors(Grads& g) {
    std::vector<TensorRef> refs = {{"u", g.enc.u.data.data(), g.enc.u.size()},
                                   {"v", g.enc.v.data.data(), g.enc.v.size()}};
    for (std::size_t i = 0; i < g.enc.hidden.size(); ++i) {
      refs.push_back({"hidden" + std::to_string(i), g.enc.hidden[i].data.data(),
                      g.enc.hidden[i].size()});
    }
    refs.push_back({"m", g.enc.m.data.data(), g.enc.m.size()});
    refs.push_back({"t", g.t.data.data(), g.t.size()});
    return refs;
  }
};

struct MultiProbeXTrainable {
  MultiProbeX p;
  using Input = std::vector<Matrix>;  // one matrix per selected layer
  using Cache = MultiForward;
  using Grads = MultiProbeXGrads;

  Vec forward(const Input& x, Cache* c = nullptr) const {
    auto lookup = [&x](std::size_t i) -> const Matrix& { return x[i]; };
    if (c) {
      *c = multi_forward(p, lookup, true);
      return c->y;
    }
    return multi_forward(p, lookup, false).y;
  }
  void backward(const Input& x, const Cache& c, const Vec& dl_dy, Grads& g) const {
    auto lookup = [&x](std::size_t i) -> const Matrix& { return x[i]; };
    multi_backward(p, lookup, c, dl_dy, g);
  }
  Grads make_grads() const { return multi_grads_like(p); }

  std::vector<TensorRef> tensors() {
    std::vector<TensorRef> refs;
    for (std::size_t b = 0; b < p.encoders.size(); ++b) {
      auto& e = p.encoders[b];
      const std::string tag = "layer" + std::to_string(b) + ".";
      refs.push_back({tag + "u", e.u.data.data(), e.u.size()});
      refs.push_back({tag + "v", e.v.data.data(), e.v.size()});
      for (std::size_t i = 0; i < e.hidden.size(); ++i)
        refs.push_back({tag + "hidden" + std::to_string(i), e.hidden[i].data.data(),
                        e.hidden[i].size()});
      refs.push_back({tag + "m", e.m.data.data(), e.m.size()});
    }
    refs.push_back({"t", p.t.data.data(), p.t.size()});
    return refs;
  }
  static std::vector<TensorRef> grad_tensors(Grads& g) {
    std::vector<TensorRef> refs;
    for (std::size_t b = 0; b < g.encoders.size(); ++b) {
      auto& e = g.encoders[b];
      const std::string tag = "layer" + std::to_string(b) + ".";
      refs.push_back({tag + "u", e.u.data.data(), e.u.size()});
      refs.push_back({tag + "v", e.v.data.data(), e.v.size()});
      for (std::size_t i = 0; i < e.hidden.size(); ++i)
        refs.push_back({tag + "hidden" + std::to_string(i), e.hidden[i].data.data(),
                        e.hidden[i].size()});
      refs.push_back({tag + "m", e.m.data.data(), e.m.size()});
    }
    refs.push_back({"t", g.t.data.data(), g.t.size()});
    return refs;
  }
};

struct DenseTrainable {
  DenseExpertParams p;
  using Input = Matrix;
  struct Cache {};
  using Grads = DenseGrads;

  Vec forward(const Input& x, Cache* = nullptr) const { return dense_forward(p, x); }
  void backward(const Input& x, const Cache&, const Vec& dl_dy, Grads& g) const {
    dense_backward(p, x, dl_dy, g);
  }
  Grads make_grads() const { return dense_grads_like(p); }

  std::vector<TensorRef> tensors() { return {{"w", p.w.data.data(), p.w.size()}}; }
  static std::vector<TensorRef> grad_tensors(Grads& g) {
    return {{"w", g.w.data.data(), g.w.size()}};
  }
};

struct StatHeadTrainable {
  StatHead p;
  using Input = Vec;
  using Cache = StatHeadCache;
  using Grads = StatHeadGrads;

  Vec forward(const Input& x, Cache* c = nullptr) const {
    Cache local;
    return stat_head_forward(p, x, c ? c : &local);
  }
  void backward(const Input& x, const Cache& c, const Vec& dl_dy, Grads& g) const {
    stat_head_backward(p, x, c, dl_dy, g);
  }
  Grads make_grads() const { return stat_head_grads_like(p); }

  std::vector<TensorRef> tensors() {
    std::vector<TensorRef> refs = {{"w1", p.w1.data.data(), p.w1.size()},
                                   {"b1", p.b1.data(), p.b1.size()}};
    if (p.hidden > 0) {
      refs.push_back({"w2", p.w2.data.data(), p.w2.size()});
      refs.push_back({"b2", p.b2.data(), p.b2.size()});
    }
    return refs;
  }
  static std::vector<TensorRef> grad_tensors(Grads& g) {
    std::vector<TensorRef> refs = {{"w1", g.w1.data.data(), g.w1.size()},
                                   {"b1", g.b1.data(), g.b1.size()}};
    if (!g.w2.data.empty()) {
      refs.push_back({"w2", g.w2.data.data(), g.w2.size()});
      refs.push_back({"b2", g.b2.data(), g.b2.size()});
    }
    return refs;
  }
};

// ---------------------------------------------------------------------------
// Training loop.
// ---------------------------------------------------------------------------

struct HistoryRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_metric = 0.0;
};

template <class Model>
struct TrainResult {
  Model model;  // parameters of the best validation epoch
  std::vector<HistoryRow> history;
  double best_metric = 0.0;
  int best_epoch = -1;
  bool aborted = false;
  std::string abort_reason;
};

inline void write_history_csv(const std::string& path, const std::vector<HistoryRow>& rows) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write history csv: " + path);
  os << "epoch,train_loss,val_metric\n";
  os.precision(17);
  for (const auto& r : rows) os << r.epoch << "," << r.train_loss << "," << r.val_metric << "\n";
}

inline constexpr std::size_t kGradBlock = 16;

// Full-batch by default; with batch_size > 0 the train order is reshuffled
// each epoch from the config seed. Per-record gradients are reduced in fixed
// block order so the result is independent of the thread count. Validation is
// scored after each epoch and the best epoch's parameters are returned.
template <class Model, class LossFn, class MetricFn>
TrainResult<Model> train_loop(Model model, const std::vector<typename Model::Input>& inputs,
                              const std::vector<std::size_t>& train_ids, const LossFn& loss_fn,
                              const MetricFn& metric_fn, const TrainConfig& cfg) {
  cfg.validate();
  if (train_ids.empty()) throw ConfigError("train: empty training split");

  TrainResult<Model> result;
  result.model = model;
  if (cfg.epochs == 0) return result;

  AdamState state;
  state.init(model.tensors());

  typename Model::Grads total = model.make_grads();
  const std::size_t max_blocks = block_count(train_ids.size(), kGradBlock);
  std::vector<typename Model::Grads> block_grads(max_blocks, model.make_grads());
  std::vector<double> block_loss(max_blocks, 0.0);

  std::vector<std::size_t> order = train_ids;
  Rng shuffle_rng = Rng(cfg.seed).split(7);
  const std::size_t batch = cfg.batch_size == 0 ? train_ids.size() : cfg.batch_size;

  double best = -std::numeric_limits<double>::infinity();
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.batch_size > 0) shuffle_rng.shuffle(order);
    double epoch_loss_sum = 0.0;
    bool numeric_failure = false;
    std::string failure_reason;

    for (std::size_t start = 0; start < order.size() && !numeric_failure; start += batch) {
      const std::size_t count = std::min(batch, order.size() - start);
      const std::size_t n_blocks = block_count(count, kGradBlock);
      auto zero_grads = [](typename Model::Grads& g) {
        for (auto& ref : Model::grad_tensors(g)) std::fill_n(ref.data, ref.n, 0.0);
      };
      parallel_blocks(count, kGradBlock, [&](std::size_t b, std::size_t lo, std::size_t hi) {
        zero_grads(block_grads[b]);
        block_loss[b] = 0.0;
        typename Model::Cache cache;
        for (std::size_t i = lo; i < hi; ++i) {
          const std::size_t rec = order[start + i];
          const Vec y = model.forward(inputs[rec], &cache);
          LossOut lo_out = loss_fn(rec, y);
          block_loss[b] += lo_out.loss;
          model.backward(inputs[rec], cache, lo_out.dl_dy, block_grads[b]);
        }
      });
      // reduce in block order, then scale to the batch mean
      for (auto& ref : Model::grad_tensors(total)) std::fill_n(ref.data, ref.n, 0.0);
      auto total_refs = Model::grad_tensors(total);
      for (std::size_t b = 0; b < n_blocks; ++b) {
        auto refs = Model::grad_tensors(block_grads[b]);
        for (std::size_t t = 0; t < refs.size(); ++t)
          for (std::size_t i = 0; i < refs[t].n; ++i) total_refs[t].data[i] += refs[t].data[i];
        epoch_loss_sum += block_loss[b];
      }
      const double inv = 1.0 / static_cast<double>(count);
      for (auto& ref : total_refs)
        for (std::size_t i = 0; i < ref.n; ++i) ref.data[i] *= inv;
      try {
        adam_step(model.tensors(), total_refs, state, cfg);
      } catch (const NumericError& e) {
        numeric_failure = true;
        failure_reason = e.what();
      }
    }

    const double train_loss = epoch_loss_sum / static_cast<double>(order.size());
    const double metric = numeric_failure ? 0.0 : metric_fn(model);
    result.history.push_back({epoch, train_loss, metric});
    if (!numeric_failure && metric > best) {
      best = metric;
      result.best_metric = metric;
      result.best_epoch = epoch;
      result.model = model;
    }
    if (numeric_failure || !std::isfinite(train_loss)) {
      result.aborted = true;
      result.abort_reason = failure_reason.empty() ? "non-finite training loss" : failure_reason;
      break;
    }
  }
  return result;
}

// Trains each candidate in order and keeps the argmax validation metric;
// ties keep the earlier candidate.
template <class TrainOne>
auto select_layer(const std::vector<std::string>& layers, TrainOne&& train_one)
    -> std::pair<std::string, decltype(train_one(std::string{}))> {
  if (layers.empty()) throw ConfigError("select_layer: no candidate layers");
  std::string best_name;
  decltype(train_one(std::string{})) best_result;
  bool first = true;
  for (const auto& name : layers) {
    auto result = train_one(name);
    if (first || result.best_metric > best_result.best_metric) {
      best_result = std::move(result);
      best_name = name;
      first = false;
    }
  }
  return {best_name, std::move(best_result)};
}

}  // namespace probex
