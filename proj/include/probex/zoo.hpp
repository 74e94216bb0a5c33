#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "probex/embedding_table.hpp"
#include "probex/errors.hpp"
#include "probex/linalg.hpp"
#include "probex/parallel.hpp"
#include "probex/rng.hpp"
#include "probex/target_net.hpp"
#include "probex/tensor_io.hpp"

namespace probex {

// Stream tags for deriving per-purpose RNG streams from a zoo seed. Fixed
// values are part of the reproducibility contract: (seed, ratios) alone
// determine the zoo, its hyperparameters and its splits.
namespace stream {
inline constexpr std::uint64_t kMeans = 1;
inline constexpr std::uint64_t kRoot = 2;  // +tree index
inline constexpr std::uint64_t kSplits = 64;
inline constexpr std::uint64_t kEmbeddings = 65;
inline constexpr std::uint64_t kProjection = 66;
inline constexpr std::uint64_t kModelBase = 1000;  // +model index
}  // namespace stream

// Synthetic task family: a 50-class Gaussian-mixture universe A plus a
// disjoint pretraining set B, fine-tuned by small MLP classifiers.
struct TaskSpec {
  std::size_t input_dim = 32;
  std::size_t hidden_dim = 64;
  std::size_t universe = 50;          // dataset A
  std::size_t subset = 25;            // classes per fine-tuned model
  std::size_t pretrain_classes = 25;  // dataset B, disjoint from A
  std::size_t samples_per_class = 200;
  std::size_t eval_samples_per_class = 20;
  double mean_scale = 4.0;
  double noise_std = 1.0;
  double pretrain_lr = 5e-2;
  // Fine-tuning grid, sampled per model. lr values are the discriminative
  // grid scaled x100: plain SGD on these small MLPs stalls at chance with
  // smaller steps.
  std::vector<double> lr_grid = {5e-2, 3e-2, 1e-2, 9e-3, 7e-3, 5e-3, 3e-3};
  int epochs_min = 2;
  int epochs_max = 9;
  std::size_t batch_size = 64;

  void validate() const {
    if (input_dim == 0 || hidden_dim == 0 || universe == 0)
      throw ConfigError("task spec: dimensions must be >= 1");
    if (subset == 0 || subset > universe)
      throw ConfigError("task spec: subset size " + std::to_string(subset) +
                        " must be in [1, universe " + std::to_string(universe) + "]");
    if (epochs_min < 0 || epochs_max < epochs_min)
      throw ConfigError("task spec: bad epoch range");
    if (lr_grid.empty()) throw ConfigError("task spec: empty lr grid");
  }
};

struct LoraPair {
  Matrix b;  // d_out x rank
  Matrix a;  // rank x d_in
};

// X = B*A, the full matrix a LoRA-tuned layer contributes.
inline Matrix lora_reconstruct(const Matrix& b, const Matrix& a) {
  if (b.cols != a.rows) {
    throw DimensionError("lora_reconstruct: B is " + detail::shape_str(b.rows, b.cols) +
                         " but A is " + detail::shape_str(a.rows, a.cols));
  }
  return matmul(b, a);
}

struct ModelRecord {
  std::string model_id;
  std::string tree_id;
  std::vector<std::pair<std::string, Matrix>> layers;
  std::vector<std::pair<std::string, LoraPair>> lora;
  std::vector<std::uint8_t> label_bits;  // one per universe class
  std::string embedding_key;             // empty unless alignment zoo
  std::map<std::string, double> hyperparams;

  bool has_layer(const std::string& name) const {
    for (const auto& [n, m] : layers)
      if (n == name) return true;
    for (const auto& [n, p] : lora)
      if (n == name) return true;
    return false;
  }

  // Metanetwork input for a named layer; LoRA entries resolve to B*A.
  Matrix input_layer(const std::string& name) const {
    for (const auto& [n, m] : layers)
      if (n == name) return m;
    for (const auto& [n, p] : lora)
      if (n == name) return lora_reconstruct(p.b, p.a);
    throw ConfigError("record " + model_id + " has no layer named '" + name + "'");
  }

  std::vector<std::string> input_layer_names() const {
    std::vector<std::string> names;
    for (const auto& [n, m] : layers) names.push_back(n);
    for (const auto& [n, p] : lora) names.push_back(n);
    return names;
  }
};

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

struct Zoo {
  std::size_t universe_size = 50;
  std::size_t subset_size = 25;
  std::vector<std::string> trees;
  std::vector<ModelRecord> records;
  SplitRatios ratios;
  std::uint64_t seed = 0;
  std::vector<std::size_t> train_idx, val_idx, test_idx;

  // Shuffle record indices with the zoo's split stream and partition by the
  // ratios; reproducible from (seed, ratios) alone.
  void make_splits() {
    const std::size_t n = records.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng = Rng(seed).split(stream::kSplits);
    rng.shuffle(order);
    const auto n_train = static_cast<std::size_t>(std::llround(ratios.train * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::llround(ratios.val * static_cast<double>(n)));
    train_idx.assign(order.begin(), order.begin() + std::min(n_train, n));
    val_idx.assign(order.begin() + std::min(n_train, n),
                   order.begin() + std::min(n_train + n_val, n));
    test_idx.assign(order.begin() + std::min(n_train + n_val, n), order.end());
  }

  const std::vector<std::size_t>& split(const std::string& name) const {
    if (name == "train") return train_idx;
    if (name == "val") return val_idx;
    if (name == "test") return test_idx;
    throw ConfigError("unknown split '" + name + "' (want train|val|test)");
  }

  int record_index(const std::string& model_id) const {
    for (std::size_t i = 0; i < records.size(); ++i)
      if (records[i].model_id == model_id) return static_cast<int>(i);
    return -1;
  }
};

inline std::string bits_to_hex(const std::vector<std::uint8_t>& bits) {
  const std::size_t n_bytes = (bits.size() + 7) / 8;
  std::string out;
  out.reserve(n_bytes * 2);
  static const char* digits = "0123456789abcdef";
  for (std::size_t byte = 0; byte < n_bytes; ++byte) {
    unsigned v = 0;
    for (std::size_t bit = 0; bit < 8; ++bit) {
      const std::size_t idx = byte * 8 + bit;
      if (idx < bits.size() && bits[idx]) v |= 1u << bit;
    }
    out.push_back(digits[v >> 4]);
    out.push_back(digits[v & 0xf]);
  }
  return out;
}

inline std::vector<std::uint8_t> hex_to_bits(const std::string& hex, std::size_t n_bits) {
  auto nibble = [](char c) -> unsigned {
    if (c >= '0' && c <= '9') return static_cast<unsigned>(c - '0');
    if (c >= 'a' && c <= 'f') return static_cast<unsigned>(c - 'a' + 10);
    if (c >= 'A' && c <= 'F') return static_cast<unsigned>(c - 'A' + 10);
    throw FormatError(std::string("bad hex digit '") + c + "' in label bits");
  };
  const std::size_t n_bytes = (n_bits + 7) / 8;
  if (hex.size() < 2 * n_bytes) throw FormatError("label bits hex too short");
  std::vector<std::uint8_t> bits(n_bits, 0);
  for (std::size_t byte = 0; byte < n_bytes; ++byte) {
    const unsigned v = (nibble(hex[byte * 2]) << 4) | nibble(hex[byte * 2 + 1]);
    for (std::size_t bit = 0; bit < 8 && byte * 8 + bit < n_bits; ++bit) {
      bits[byte * 8 + bit] = (v >> bit) & 1u;
    }
  }
  return bits;
}

struct PretrainedRoot {
  TargetNet net;
  double pretrain_accuracy = 0.0;  // held-out accuracy on dataset B
};

namespace detail {

inline GaussianMixture task_mixture(const TaskSpec& spec, const Rng& base) {
  Rng means_rng = base.split(stream::kMeans);
  return make_mixture(spec.universe + spec.pretrain_classes, spec.input_dim, spec.mean_scale,
                      spec.noise_std, means_rng);
}

inline PretrainedRoot pretrain_root_impl(const TaskSpec& spec, const GaussianMixture& mix,
                                         Rng root_rng, int epochs) {
  if (epochs < 1) throw ConfigError("pretraining requires at least one epoch");
  // Root trunk plus the universe head that the whole tree inherits.
  Rng init_rng = root_rng.split(1);
  TargetNet full = make_target(spec.input_dim, spec.hidden_dim, spec.universe, init_rng);
  Rng aux_rng = root_rng.split(2);
  Matrix aux_head;
  {
    const double a = 1.0 / std::sqrt(static_cast<double>(spec.hidden_dim));
    aux_head = Matrix(spec.pretrain_classes, spec.hidden_dim);
    for (double& v : aux_head.data) v = aux_rng.uniform(-a, a);
  }
  TargetNet pretrain_net;
  pretrain_net.weights = {full.weights[0], full.weights[1], aux_head};
  pretrain_net.biases = {full.biases[0], full.biases[1], Vec(spec.pretrain_classes, 0.0)};

  std::vector<std::size_t> b_classes(spec.pretrain_classes);
  std::vector<std::size_t> b_labels(spec.pretrain_classes);
  for (std::size_t i = 0; i < spec.pretrain_classes; ++i) {
    b_classes[i] = spec.universe + i;
    b_labels[i] = i;
  }
  Rng data_rng = root_rng.split(3);
  const LabeledBatch train = sample_dataset(mix, b_classes, b_labels, spec.samples_per_class, data_rng);
  for (int e = 0; e < epochs; ++e) {
    target_sgd_epoch(pretrain_net, train, spec.pretrain_lr, spec.batch_size, data_rng);
  }
  Rng eval_rng = root_rng.split(4);
  const LabeledBatch held_out =
      sample_dataset(mix, b_classes, b_labels, spec.eval_samples_per_class, eval_rng);

  PretrainedRoot root;
  root.pretrain_accuracy = target_accuracy(pretrain_net, held_out);
  root.net = full;
  root.net.weights[0] = pretrain_net.weights[0];
  root.net.weights[1] = pretrain_net.weights[1];
  root.net.biases[0] = pretrain_net.biases[0];
  root.net.biases[1] = pretrain_net.biases[1];
  return root;
}

inline std::string model_name(std::size_t idx) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "m%04zu", idx);
  return buf;
}

// Fine-tune one record. Every random draw comes from this model's own
// stream, so records are identical however generation is scheduled.
inline ModelRecord spawn_one(const TargetNet* root, const TaskSpec& spec,
                             const GaussianMixture& mix, const Rng& base, std::size_t model_idx,
                             const std::string& tree_id) {
  Rng m = base.split(stream::kModelBase + model_idx);
  Rng subset_rng = m.split(1);
  std::vector<std::size_t> subset = subset_rng.sample_without_replacement(spec.universe, spec.subset);
  std::sort(subset.begin(), subset.end());

  Rng hp_rng = m.split(2);
  const double lr = spec.lr_grid[hp_rng.uniform_int(spec.lr_grid.size())];
  const int epochs =
      spec.epochs_min + static_cast<int>(hp_rng.uniform_int(
                            static_cast<std::uint64_t>(spec.epochs_max - spec.epochs_min + 1)));

  TargetNet net;
  if (root != nullptr) {
    net = *root;
  } else {
    Rng init_rng = m.split(3);
    net = make_target(spec.input_dim, spec.hidden_dim, spec.universe, init_rng);
  }

  Rng train_rng = m.split(4);
  const LabeledBatch data = sample_dataset(mix, subset, subset, spec.samples_per_class, train_rng);
  for (int e = 0; e < epochs; ++e) {
    target_sgd_epoch(net, data, lr, spec.batch_size, train_rng);
  }

  Rng eval_rng = m.split(5);
  const LabeledBatch held_out = sample_dataset(mix, subset, subset, spec.eval_samples_per_class, eval_rng);
  const double accuracy = target_accuracy(net, held_out, subset);

  ModelRecord rec;
  rec.model_id = model_name(model_idx);
  rec.tree_id = tree_id.empty() ? ("f" + rec.model_id.substr(1)) : tree_id;
  rec.layers = {{"fc1", net.weights[0]}, {"fc2", net.weights[1]}, {"head", net.weights[2]}};
  rec.label_bits.assign(spec.universe, 0);
  for (std::size_t c : subset) rec.label_bits[c] = 1;
  rec.hyperparams = {{"lr", lr},
                     {"epochs", static_cast<double>(epochs)},
                     {"seed", static_cast<double>(model_idx)},
                     {"accuracy", accuracy}};
  return rec;
}

}  // namespace detail

// Root of a Model Tree: a classifier pre-trained on dataset B (default: for a
// single epoch), with a fresh universe head every descendant inherits.
inline PretrainedRoot pretrain_root(const TaskSpec& spec, const Rng& rng, int epochs = 1,
                                    std::uint64_t tree_index = 0) {
  spec.validate();
  const GaussianMixture mix = detail::task_mixture(spec, rng);
  return detail::pretrain_root_impl(spec, mix, rng.split(stream::kRoot + tree_index), epochs);
}

// Fine-tune n models on random class subsets. root == nullopt gives a Model
// Forest (fresh random init per model); a root gives one Model Tree where all
// models start from the same weights.
inline Zoo spawn_population(const std::optional<TargetNet>& root, std::size_t n,
                            const TaskSpec& spec, const Rng& rng,
                            const std::string& tree_id = "t0") {
  spec.validate();
  if (n == 0) throw ConfigError("spawn_population: n must be >= 1");
  const GaussianMixture mix = detail::task_mixture(spec, rng);

  Zoo zoo;
  zoo.universe_size = spec.universe;
  zoo.subset_size = spec.subset;
  zoo.seed = rng.seed();
  zoo.records.resize(n);
  const TargetNet* root_ptr = root ? &*root : nullptr;
  parallel_blocks(n, 1, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      zoo.records[i] = detail::spawn_one(root_ptr, spec, mix, rng, i, root_ptr ? tree_id : "");
    }
  });
  if (root_ptr) {
    zoo.trees = {tree_id};
  } else {
    zoo.trees.reserve(n);
    for (const auto& rec : zoo.records) zoo.trees.push_back(rec.tree_id);
  }
  zoo.make_splits();
  return zoo;
}

// k trees sharing one task mixture; models are distributed round-robin so
// every tree gets n_total / k members. Each tree has its own 1-epoch
// pretrained root.
inline Zoo spawn_multitree(std::size_t k, std::size_t n_total, const TaskSpec& spec,
                           const Rng& rng) {
  spec.validate();
  if (k == 0 || n_total == 0) throw ConfigError("spawn_multitree: k and n must be >= 1");
  if (n_total < k) throw ConfigError("spawn_multitree: need at least one model per tree");
  const GaussianMixture mix = detail::task_mixture(spec, rng);

  std::vector<TargetNet> roots(k);
  for (std::size_t t = 0; t < k; ++t) {
    roots[t] = detail::pretrain_root_impl(spec, mix, rng.split(stream::kRoot + t), 1).net;
  }

  Zoo zoo;
  zoo.universe_size = spec.universe;
  zoo.subset_size = spec.subset;
  zoo.seed = rng.seed();
  for (std::size_t t = 0; t < k; ++t) zoo.trees.push_back("t" + std::to_string(t));
  zoo.records.resize(n_total);
  parallel_blocks(n_total, 1, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t t = i % k;
      zoo.records[i] = detail::spawn_one(&roots[t], spec, mix, rng, i, zoo.trees[t]);
    }
  });
  zoo.make_splits();
  return zoo;
}

// ---------------------------------------------------------------------------
// Alignment population: LoRA-personalized models, one class each, whose class
// means are tied to the embedding table through a fixed projection. That link
// is what makes a weights->embedding map generalize to held-out classes.
// ---------------------------------------------------------------------------

struct AlignmentSpec {
  std::size_t n_classes = 50;
  std::size_t embed_dim = 32;
  std::size_t lora_rank = 16;
  std::size_t images_min = 5;
  std::size_t images_max = 10;
  int steps_min = 450;
  int steps_max = 700;
  std::string class_prefix = "class_";

  std::string class_name(std::size_t c) const {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%02zu", class_prefix.c_str(), c);
    return buf;
  }
};

struct AlignmentZoo {
  Zoo zoo;
  EmbeddingTable table;
};

namespace detail {

// SGD on the LoRA factors of fc1 only; trunk and head stay frozen.
inline void lora_personalize(const TargetNet& root, LoraPair& delta, const GaussianMixture& mix,
                             std::size_t cls, std::size_t n_images, int steps, double lr,
                             Rng& rng) {
  const std::size_t in_dim = root.weights[0].cols;
  Matrix images(n_images, in_dim);
  for (std::size_t i = 0; i < n_images; ++i) mix.sample_into(cls, rng, &images.data[i * in_dim]);

  for (int step = 0; step < steps; ++step) {
    const std::size_t img = static_cast<std::size_t>(step) % n_images;
    const Vec x(images.data.begin() + static_cast<std::ptrdiff_t>(img * in_dim),
                images.data.begin() + static_cast<std::ptrdiff_t>((img + 1) * in_dim));
    // fc1 with the LoRA delta applied
    Vec ax = matvec(delta.a, x);
    Vec pre1 = matvec(root.weights[0], x);
    {
      const Vec bax = matvec(delta.b, ax);
      for (std::size_t i = 0; i < pre1.size(); ++i) pre1[i] += bax[i] + root.biases[0][i];
    }
    Vec h1 = relu(pre1);
    Vec pre2 = matvec(root.weights[1], h1);
    for (std::size_t i = 0; i < pre2.size(); ++i) pre2[i] += root.biases[1][i];
    Vec h2 = relu(pre2);
    Vec logits = matvec(root.weights[2], h2);
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += root.biases[2][i];

    // softmax CE toward the personalization class
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    Vec dlogits(logits.size());
    for (std::size_t j = 0; j < logits.size(); ++j) dlogits[j] = std::exp(logits[j] - mx) / z;
    dlogits[cls] -= 1.0;

    Vec dh2 = matvec_t(root.weights[2], dlogits);
    for (std::size_t i = 0; i < dh2.size(); ++i)
      if (pre2[i] <= 0.0) dh2[i] = 0.0;
    Vec dh1 = matvec_t(root.weights[1], dh2);
    for (std::size_t i = 0; i < dh1.size(); ++i)
      if (pre1[i] <= 0.0) dh1[i] = 0.0;

    // dB = dpre1 (A x)^T, dA = B^T dpre1 x^T
    const Vec bt_d = matvec_t(delta.b, dh1);
    for (std::size_t i = 0; i < delta.b.rows; ++i)
      for (std::size_t r = 0; r < delta.b.cols; ++r) delta.b(i, r) -= lr * dh1[i] * ax[r];
    for (std::size_t r = 0; r < delta.a.rows; ++r)
      for (std::size_t j = 0; j < delta.a.cols; ++j) delta.a(r, j) -= lr * bt_d[r] * x[j];
  }
}

}  // namespace detail

inline AlignmentZoo spawn_alignment(std::size_t n, const TaskSpec& task, const AlignmentSpec& align,
                                    const Rng& rng) {
  task.validate();
  if (n == 0) throw ConfigError("spawn_alignment: n must be >= 1");
  if (align.n_classes == 0 || align.embed_dim == 0 || align.lora_rank == 0)
    throw ConfigError("alignment spec: dimensions must be >= 1");

  AlignmentZoo out;
  Rng embed_rng = rng.split(stream::kEmbeddings);
  for (std::size_t c = 0; c < align.n_classes; ++c) {
    Vec t(align.embed_dim);
    double norm_sq = 0.0;
    for (double& v : t) {
      v = embed_rng.normal();
      norm_sq += v * v;
    }
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (double& v : t) v *= inv;
    out.table.names.push_back(align.class_name(c));
    out.table.vectors.push_back(std::move(t));
  }

  // Class means derived from the embeddings through one fixed projection.
  Rng proj_rng = rng.split(stream::kProjection);
  Matrix proj(task.input_dim, align.embed_dim);
  for (double& v : proj.data) v = proj_rng.normal();
  GaussianMixture mix;
  mix.noise_std = task.noise_std;
  mix.means = Matrix(align.n_classes, task.input_dim);
  for (std::size_t c = 0; c < align.n_classes; ++c) {
    Vec mu = matvec(proj, out.table.vectors[c]);
    const double norm = norm2(mu);
    for (std::size_t j = 0; j < task.input_dim; ++j)
      mix.means(c, j) = task.mean_scale * mu[j] / (norm > 0 ? norm : 1.0);
  }

  // The root is pre-trained for one epoch on the alignment classes
  // themselves (the root has seen every concept; the metanetwork has not).
  // pretrain_root_impl draws dataset B from mixture rows universe..universe+
  // pretrain_classes, so the means are duplicated into that range.
  TaskSpec root_spec = task;
  root_spec.universe = align.n_classes;
  root_spec.pretrain_classes = align.n_classes;
  GaussianMixture doubled;
  doubled.noise_std = mix.noise_std;
  doubled.means = Matrix(2 * align.n_classes, task.input_dim);
  for (std::size_t c = 0; c < align.n_classes; ++c)
    for (std::size_t j = 0; j < task.input_dim; ++j) {
      doubled.means(c, j) = mix.means(c, j);
      doubled.means(align.n_classes + c, j) = mix.means(c, j);
    }
  const PretrainedRoot root =
      detail::pretrain_root_impl(root_spec, doubled, rng.split(stream::kRoot), 1);

  out.zoo.universe_size = align.n_classes;
  out.zoo.subset_size = 1;
  out.zoo.trees = {"t0"};
  out.zoo.seed = rng.seed();
  out.zoo.records.resize(n);
  parallel_blocks(n, 1, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Rng m = rng.split(stream::kModelBase + i);
      const std::size_t cls = i % align.n_classes;

      Rng hp_rng = m.split(2);
      const double lr = task.lr_grid[hp_rng.uniform_int(task.lr_grid.size())];
      const std::size_t n_images =
          align.images_min + hp_rng.uniform_int(align.images_max - align.images_min + 1);
      const int steps = align.steps_min + static_cast<int>(hp_rng.uniform_int(
                                              static_cast<std::uint64_t>(align.steps_max - align.steps_min + 1)));

      LoraPair delta;
      delta.b = Matrix(task.hidden_dim, align.lora_rank);  // zero: BA starts at 0
      delta.a = Matrix(align.lora_rank, task.input_dim);
      {
        Rng init_rng = m.split(3);
        const double a0 = 1.0 / std::sqrt(static_cast<double>(task.input_dim));
        for (double& v : delta.a.data) v = init_rng.uniform(-a0, a0);
      }
      Rng train_rng = m.split(4);
      detail::lora_personalize(root.net, delta, mix, cls, n_images, steps, lr, train_rng);

      ModelRecord rec;
      rec.model_id = detail::model_name(i);
      rec.tree_id = "t0";
      rec.lora = {{"fc1.lora", delta}};
      rec.label_bits.assign(align.n_classes, 0);
      rec.label_bits[cls] = 1;
      rec.embedding_key = align.class_name(cls);
      rec.hyperparams = {{"lr", lr},
                         {"steps", static_cast<double>(steps)},
                         {"images", static_cast<double>(n_images)},
                         {"seed", static_cast<double>(i)}};
      out.zoo.records[i] = rec;
    }
  });
  out.zoo.make_splits();
  return out;
}

// ---------------------------------------------------------------------------
// Persistence. Tensor files first, manifest last (the commit point).
// label_bits hex encoding: byte i holds classes 8i..8i+7, class c at bit c%8.
// ---------------------------------------------------------------------------

inline void save_zoo(const Zoo& zoo, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "tensors");

  nlohmann::json records = nlohmann::json::array();
  for (const auto& rec : zoo.records) {
    nlohmann::json jrec;
    jrec["id"] = rec.model_id;
    jrec["tree"] = rec.tree_id;
    nlohmann::json jlayers = nlohmann::json::object();
    for (const auto& [name, m] : rec.layers) {
      const std::string rel = "tensors/" + rec.model_id + "_" + name + ".wzt";
      write_matrix((fs::path(dir) / rel).string(), m);
      jlayers[name] = {{"file", rel}, {"shape", {m.rows, m.cols}}};
    }
    jrec["layers"] = jlayers;
    nlohmann::json jlora = nlohmann::json::object();
    for (const auto& [name, p] : rec.lora) {
      const std::string rel_b = "tensors/" + rec.model_id + "_" + name + ".b.wzt";
      const std::string rel_a = "tensors/" + rec.model_id + "_" + name + ".a.wzt";
      write_matrix((fs::path(dir) / rel_b).string(), p.b);
      write_matrix((fs::path(dir) / rel_a).string(), p.a);
      jlora[name] = {{"b", {{"file", rel_b}, {"shape", {p.b.rows, p.b.cols}}}},
                     {"a", {{"file", rel_a}, {"shape", {p.a.rows, p.a.cols}}}}};
    }
    jrec["lora"] = jlora;
    jrec["label_bits"] = bits_to_hex(rec.label_bits);
    jrec["hyperparams"] = rec.hyperparams;
    jrec["embedding_key"] = rec.embedding_key;
    records.push_back(jrec);
  }

  nlohmann::json manifest;
  manifest["universe_size"] = zoo.universe_size;
  manifest["subset_size"] = zoo.subset_size;
  manifest["trees"] = zoo.trees;
  manifest["seed"] = zoo.seed;
  auto ids_of = [&zoo](const std::vector<std::size_t>& idx) {
    std::vector<std::string> ids;
    ids.reserve(idx.size());
    for (std::size_t i : idx) ids.push_back(zoo.records[i].model_id);
    return ids;
  };
  manifest["splits"] = {{"train", ids_of(zoo.train_idx)},
                        {"val", ids_of(zoo.val_idx)},
                        {"test", ids_of(zoo.test_idx)},
                        {"ratios",
                         {{"train", zoo.ratios.train}, {"val", zoo.ratios.val}, {"test", zoo.ratios.test}}}};
  manifest["records"] = records;

  std::ofstream os(fs::path(dir) / "manifest.json");
  if (!os) throw FormatError("cannot write manifest in " + dir);
  os << manifest.dump(2) << "\n";
}

inline Zoo load_zoo(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
  std::ifstream is(manifest_path);
  if (!is) throw FormatError("cannot open manifest: " + manifest_path);
  nlohmann::json manifest;
  try {
    is >> manifest;
  } catch (const std::exception& e) {
    throw FormatError("bad manifest JSON in " + manifest_path + ": " + e.what());
  }

  Zoo zoo;
  zoo.universe_size = manifest.at("universe_size").get<std::size_t>();
  zoo.subset_size = manifest.at("subset_size").get<std::size_t>();
  zoo.trees = manifest.at("trees").get<std::vector<std::string>>();
  zoo.seed = manifest.value("seed", std::uint64_t{0});
  if (manifest.contains("splits") && manifest["splits"].contains("ratios")) {
    const auto& r = manifest["splits"]["ratios"];
    zoo.ratios = {r.value("train", 0.7), r.value("val", 0.1), r.value("test", 0.2)};
  }

  auto read_checked = [&](const nlohmann::json& entry) {
    const std::string rel = entry.at("file").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    Matrix m = read_matrix((fs::path(dir) / rel).string());
    if (shape.size() != 2 || m.rows != shape[0] || m.cols != shape[1]) {
      throw FormatError("shape mismatch for " + rel + ": manifest says " +
                        std::to_string(shape.size() == 2 ? shape[0] : 0) + "x" +
                        std::to_string(shape.size() == 2 ? shape[1] : 0) + ", tensor header says " +
                        detail::shape_str(m.rows, m.cols));
    }
    return m;
  };

  for (const auto& jrec : manifest.at("records")) {
    ModelRecord rec;
    rec.model_id = jrec.at("id").get<std::string>();
    rec.tree_id = jrec.at("tree").get<std::string>();
    for (auto it = jrec.at("layers").begin(); it != jrec.at("layers").end(); ++it) {
      rec.layers.emplace_back(it.key(), read_checked(it.value()));
    }
    if (jrec.contains("lora")) {
      for (auto it = jrec["lora"].begin(); it != jrec["lora"].end(); ++it) {
        LoraPair p{read_checked(it.value().at("b")), read_checked(it.value().at("a"))};
        if (p.b.cols != p.a.rows) {
          throw FormatError("lora factors disagree for " + rec.model_id + "/" + it.key() + ": B " +
                            detail::shape_str(p.b.rows, p.b.cols) + " vs A " +
                            detail::shape_str(p.a.rows, p.a.cols));
        }
        rec.lora.emplace_back(it.key(), std::move(p));
      }
    }
    rec.label_bits = hex_to_bits(jrec.at("label_bits").get<std::string>(), zoo.universe_size);
    rec.embedding_key = jrec.value("embedding_key", "");
    if (jrec.contains("hyperparams")) {
      for (auto it = jrec["hyperparams"].begin(); it != jrec["hyperparams"].end(); ++it) {
        rec.hyperparams[it.key()] = it.value().get<double>();
      }
    }
    bool tree_known = false;
    for (const auto& t : zoo.trees) tree_known = tree_known || t == rec.tree_id;
    if (!tree_known) {
      throw FormatError("record " + rec.model_id + " references unknown tree '" + rec.tree_id + "'");
    }
    zoo.records.push_back(std::move(rec));
  }

  auto indices_of = [&zoo](const std::vector<std::string>& ids) {
    std::vector<std::size_t> idx;
    idx.reserve(ids.size());
    for (const auto& id : ids) {
      const int i = zoo.record_index(id);
      if (i < 0) throw FormatError("split references unknown model id '" + id + "'");
      idx.push_back(static_cast<std::size_t>(i));
    }
    return idx;
  };
  zoo.train_idx = indices_of(manifest.at("splits").at("train").get<std::vector<std::string>>());
  zoo.val_idx = indices_of(manifest.at("splits").at("val").get<std::vector<std::string>>());
  zoo.test_idx = indices_of(manifest.at("splits").at("test").get<std::vector<std::string>>());
  return zoo;
}

}  // namespace probex
