#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"
#include "probex/embedding_table.hpp"
#include "probex/errors.hpp"
#include "probex/linalg.hpp"
#include "probex/zoo.hpp"

namespace probex {

// Prediction/representation callbacks keep the evaluations independent of
// which expert produced them.
using PredictFn = std::function<Vec(const ModelRecord&)>;

struct EvalReport {
  std::string task;
  double aggregate = 0.0;
  std::vector<std::pair<std::string, double>> per_class;
  std::vector<std::string> warnings;
  nlohmann::json config_echo = nlohmann::json::object();
  std::uint64_t seed = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["task"] = task;
    j["aggregate"] = aggregate;
    nlohmann::json pc = nlohmann::json::object();
    for (const auto& [name, value] : per_class) pc[name] = value;
    j["per_class"] = pc;
    j["warnings"] = warnings;
    j["config"] = config_echo;
    j["seed"] = seed;
    return j;
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write eval report: " + path);
    os << to_json().dump(2) << "\n";
  }

  void save_per_class_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write per-class csv: " + path);
    os << "class,value\n";
    os.precision(17);
    for (const auto& [name, value] : per_class) os << name << "," << value << "\n";
  }
};

inline double cosine_distance(const Vec& a, const Vec& b) { return 1.0 - cosine_sim(a, b); }

// ---------------------------------------------------------------------------
// Multi-label class prediction: mean per-class binary accuracy at logit
// threshold 0.
// ---------------------------------------------------------------------------

inline double multilabel_accuracy(const Vec& logits, const std::vector<std::uint8_t>& bits) {
  if (logits.size() != bits.size()) {
    throw DimensionError("multilabel accuracy: " + std::to_string(logits.size()) +
                         " logits vs " + std::to_string(bits.size()) + " labels");
  }
  std::size_t hits = 0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    const bool predicted = logits[c] > 0.0;
    if (predicted == (bits[c] != 0)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(logits.size());
}

inline EvalReport eval_multilabel(const PredictFn& predict, const Zoo& zoo,
                                  const std::vector<std::size_t>& split_ids) {
  if (split_ids.empty()) throw ConfigError("eval_multilabel: empty split");
  EvalReport report;
  report.task = "multilabel";
  Vec per_class_hits(zoo.universe_size, 0.0);
  double total = 0.0;
  for (std::size_t id : split_ids) {
    const ModelRecord& rec = zoo.records[id];
    const Vec y = predict(rec);
    total += multilabel_accuracy(y, rec.label_bits);
    for (std::size_t c = 0; c < zoo.universe_size; ++c) {
      const bool predicted = y[c] > 0.0;
      if (predicted == (rec.label_bits[c] != 0)) per_class_hits[c] += 1.0;
    }
  }
  for (std::size_t c = 0; c < zoo.universe_size; ++c) {
    report.per_class.emplace_back("class" + std::to_string(c),
                                  per_class_hits[c] / static_cast<double>(split_ids.size()));
  }
  report.aggregate = total / static_cast<double>(split_ids.size());
  return report;
}

// ---------------------------------------------------------------------------
// Zero-shot classification: nearest class embedding by cosine similarity over
// a restricted candidate set.
// ---------------------------------------------------------------------------

inline EvalReport eval_zeroshot(const PredictFn& rep, const Zoo& zoo,
                                const std::vector<std::size_t>& split_ids,
                                const EmbeddingTable& table,
                                const std::vector<std::string>& restrict_to) {
  if (split_ids.empty()) throw ConfigError("eval_zeroshot: empty split");
  if (restrict_to.empty()) throw ConfigError("eval_zeroshot: empty candidate set");
  EmbeddingTable candidates = table.restricted(restrict_to);

  EvalReport report;
  report.task = "zeroshot";
  std::vector<double> class_hits(candidates.size(), 0.0);
  std::vector<double> class_counts(candidates.size(), 0.0);
  double hits = 0.0;
  for (std::size_t id : split_ids) {
    const ModelRecord& rec = zoo.records[id];
    if (rec.embedding_key.empty()) {
      throw DataError("eval_zeroshot: record " + rec.model_id + " has no embedding key");
    }
    const int truth = candidates.index_of(rec.embedding_key);
    if (truth < 0) {
      throw DataError("eval_zeroshot: record " + rec.model_id + " labeled '" +
                      rec.embedding_key + "' outside the candidate set");
    }
    const Vec e = rep(rec);
    const double norm = norm2(e);
    std::size_t best = 0;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const double sim = norm == 0.0 ? 0.0 : dot(e, candidates.vectors[c]) / norm;
      if (sim > best_sim) {
        best_sim = sim;
        best = c;
      }
    }
    class_counts[static_cast<std::size_t>(truth)] += 1.0;
    if (best == static_cast<std::size_t>(truth)) {
      hits += 1.0;
      class_hits[best] += 1.0;
    }
  }
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    if (class_counts[c] > 0.0)
      report.per_class.emplace_back(candidates.names[c], class_hits[c] / class_counts[c]);
  }
  report.aggregate = hits / static_cast<double>(split_ids.size());
  return report;
}

// ---------------------------------------------------------------------------
// kNN classification over aligned representations. Score of a class is the
// mean cosine distance to the k nearest training reps of that class
// (k = 0 means all of them); predict the minimum score.
// ---------------------------------------------------------------------------

namespace detail {

inline double knn_score(const Vec& rep, const std::vector<Vec>& class_reps, std::size_t k) {
  std::vector<double> dists;
  dists.reserve(class_reps.size());
  for (const auto& train_rep : class_reps) dists.push_back(cosine_distance(rep, train_rep));
  const std::size_t use = (k == 0 || k > dists.size()) ? dists.size() : k;
  std::partial_sort(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(use), dists.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < use; ++i) acc += dists[i];
  return acc / static_cast<double>(use);
}

}  // namespace detail

inline EvalReport eval_knn(const PredictFn& rep, const Zoo& zoo,
                           const std::vector<std::size_t>& split_ids, std::size_t k) {
  if (split_ids.empty()) throw ConfigError("eval_knn: empty split");
  EvalReport report;
  report.task = "knn";

  std::vector<std::string> class_names;
  std::vector<std::vector<Vec>> train_reps;
  for (std::size_t id : zoo.train_idx) {
    const ModelRecord& rec = zoo.records[id];
    if (rec.embedding_key.empty()) continue;
    auto it = std::find(class_names.begin(), class_names.end(), rec.embedding_key);
    std::size_t c;
    if (it == class_names.end()) {
      class_names.push_back(rec.embedding_key);
      train_reps.emplace_back();
      c = class_names.size() - 1;
    } else {
      c = static_cast<std::size_t>(it - class_names.begin());
    }
    train_reps[c].push_back(rep(rec));
  }
  if (class_names.empty()) throw ConfigError("eval_knn: no labeled training representations");

  std::vector<double> class_hits(class_names.size(), 0.0);
  std::vector<double> class_counts(class_names.size(), 0.0);
  double hits = 0.0, counted = 0.0;
  for (std::size_t id : split_ids) {
    const ModelRecord& rec = zoo.records[id];
    auto it = std::find(class_names.begin(), class_names.end(), rec.embedding_key);
    if (it == class_names.end()) {
      report.warnings.push_back("skipped " + rec.model_id + ": class '" + rec.embedding_key +
                                "' has no training representations");
      continue;
    }
    const auto truth = static_cast<std::size_t>(it - class_names.begin());
    const Vec r = rep(rec);
    std::size_t best = 0;
    double best_score = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < class_names.size(); ++c) {
      const double score = detail::knn_score(r, train_reps[c], k);
      if (score < best_score) {
        best_score = score;
        best = c;
      }
    }
    counted += 1.0;
    class_counts[truth] += 1.0;
    if (best == truth) {
      hits += 1.0;
      class_hits[truth] += 1.0;
    }
  }
  if (counted == 0.0) throw ConfigError("eval_knn: no evaluable models in split");
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    if (class_counts[c] > 0.0)
      report.per_class.emplace_back(class_names[c], class_hits[c] / class_counts[c]);
  }
  report.aggregate = hits / counted;
  return report;
}

// ---------------------------------------------------------------------------
// One-class classification: with each held-out class in turn as "normal",
// score all test models by mean kNN distance to the normal class's training
// reps and report the mean ROC AUC (lower distance = more normal).
// ---------------------------------------------------------------------------

// AUC via midranks on the *negated* scores, so that lower score = positive
// class ranks first. Ties get rank averages.
inline double roc_auc_lower_is_positive(const std::vector<double>& scores,
                                        const std::vector<int>& is_positive) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // midranks
  std::vector<double> rank(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = mid;
    i = j + 1;
  }
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t t = 0; t < n; ++t) {
    if (is_positive[t]) {
      pos_rank_sum += rank[t];
      ++n_pos;
    }
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::numeric_limits<double>::quiet_NaN();
  // Mann-Whitney U of "positive scores are LOWER"
  const double u = static_cast<double>(n_pos) * static_cast<double>(n_neg) +
                   static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0 -
                   pos_rank_sum;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

inline EvalReport eval_occ(const PredictFn& rep, const Zoo& zoo,
                           const std::vector<std::size_t>& split_ids,
                           const std::vector<std::string>& holdout_classes, std::size_t k) {
  if (split_ids.empty()) throw ConfigError("eval_occ: empty split");
  if (holdout_classes.empty()) throw ConfigError("eval_occ: no holdout classes");
  EvalReport report;
  report.task = "occ";

  std::vector<Vec> test_reps;
  std::vector<std::string> test_keys;
  for (std::size_t id : split_ids) {
    const ModelRecord& rec = zoo.records[id];
    bool in_holdout = false;
    for (const auto& c : holdout_classes) in_holdout = in_holdout || c == rec.embedding_key;
    if (!in_holdout) continue;
    test_reps.push_back(rep(zoo.records[id]));
    test_keys.push_back(rec.embedding_key);
  }

  double auc_sum = 0.0;
  std::size_t auc_count = 0;
  for (const auto& normal : holdout_classes) {
    std::vector<Vec> normal_train;
    for (std::size_t id : zoo.train_idx) {
      if (zoo.records[id].embedding_key == normal)
        normal_train.push_back(rep(zoo.records[id]));
    }
    if (normal_train.empty()) {
      report.warnings.push_back("class '" + normal + "' has no training reps, excluded");
      continue;
    }
    std::vector<double> scores;
    std::vector<int> is_normal;
    for (std::size_t i = 0; i < test_reps.size(); ++i) {
      scores.push_back(detail::knn_score(test_reps[i], normal_train, k));
      is_normal.push_back(test_keys[i] == normal ? 1 : 0);
    }
    const double auc = roc_auc_lower_is_positive(scores, is_normal);
    if (std::isnan(auc)) {
      report.warnings.push_back("class '" + normal + "' lacks both normal and OOD test models, excluded");
      continue;
    }
    report.per_class.emplace_back(normal, auc);
    auc_sum += auc;
    ++auc_count;
  }
  if (auc_count == 0) throw ConfigError("eval_occ: no class produced a defined AUC");
  report.aggregate = auc_sum / static_cast<double>(auc_count);
  return report;
}

// ---------------------------------------------------------------------------
// Retrieval: n nearest training models by cosine distance, the query itself
// excluded, ties broken by model id.
// ---------------------------------------------------------------------------

struct RetrievalHit {
  std::string model_id;
  double distance = 0.0;
};

inline std::vector<RetrievalHit> retrieve(const PredictFn& rep, const Zoo& zoo,
                                          const std::string& query_model_id, std::size_t n,
                                          std::vector<std::string>* warnings = nullptr) {
  if (n == 0) throw ConfigError("retrieve: n must be >= 1");
  const int q = zoo.record_index(query_model_id);
  if (q < 0) throw DataError("retrieve: unknown query model '" + query_model_id + "'");
  const Vec query = rep(zoo.records[static_cast<std::size_t>(q)]);

  std::vector<RetrievalHit> hits;
  for (std::size_t id : zoo.train_idx) {
    const ModelRecord& rec = zoo.records[id];
    if (rec.model_id == query_model_id) continue;
    hits.push_back({rec.model_id, cosine_distance(query, rep(rec))});
  }
  std::sort(hits.begin(), hits.end(), [](const RetrievalHit& a, const RetrievalHit& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.model_id < b.model_id;
  });
  if (hits.size() < n) {
    if (warnings)
      warnings->push_back("requested " + std::to_string(n) + " neighbors, only " +
                          std::to_string(hits.size()) + " available");
    return hits;
  }
  hits.resize(n);
  return hits;
}

}  // namespace probex
