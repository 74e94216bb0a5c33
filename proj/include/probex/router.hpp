#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"
#include "probex/errors.hpp"
#include "probex/linalg.hpp"
#include "probex/parallel.hpp"
#include "probex/tensor_io.hpp"
#include "probex/zoo.hpp"

namespace probex {

// Nearest-center router over one designated layer. Centers are per-cluster
// means of the training split after single-linkage agglomerative clustering.
struct RouterModel {
  std::size_t k = 0;
  std::vector<Matrix> centers;
  std::string layer_name;
  std::vector<double> merge_heights;  // ascending single-linkage heights
};

namespace detail {

struct SingleLinkage {
  std::vector<int> labels;            // cluster label per item at the chosen cut
  std::vector<double> merge_heights;  // n-1 heights, ascending
  std::size_t k = 0;
};

// Plain O(n^2 log n)-ish agglomerative single linkage over a precomputed
// distance matrix; n here is a few hundred at most.
inline SingleLinkage single_linkage_cluster(const Matrix& dist, std::size_t k_override) {
  const std::size_t n = dist.rows;
  if (n < 2) throw ConfigError("clustering requires at least 2 models");

  // cluster ids start as item ids; merging relabels the smaller id set
  std::vector<int> label(n);
  for (std::size_t i = 0; i < n; ++i) label[i] = static_cast<int>(i);
  Matrix d = dist;  // single-linkage cluster distance, updated in place
  std::vector<bool> alive(n, true);
  std::vector<double> heights;
  heights.reserve(n - 1);

  struct Merge {
    int from, into;
    double height;
  };
  std::vector<Merge> merges;
  for (std::size_t step = 0; step + 1 < n; ++step) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!alive[i]) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!alive[j]) continue;
        if (d(i, j) < best) {
          best = d(i, j);
          bi = i;
          bj = j;
        }
      }
    }
    heights.push_back(best);
    merges.push_back({static_cast<int>(bj), static_cast<int>(bi), best});
    // single linkage: d(merged, c) = min(d(bi, c), d(bj, c))
    for (std::size_t c = 0; c < n; ++c) {
      if (!alive[c] || c == bi || c == bj) continue;
      const double m = std::min(d(bi, c), d(bj, c));
      d(bi, c) = m;
      d(c, bi) = m;
    }
    alive[bj] = false;
  }

  SingleLinkage out;
  out.merge_heights = heights;

  std::size_t k = k_override;
  if (k == 0) {
    // Largest gap between consecutive merge heights; cutting inside the gap
    // after merge m leaves n - m clusters.
    if (heights.size() < 2) {
      k = 2;
    } else {
      double best_gap = 0.0;
      std::size_t best_m = 0;
      for (std::size_t m = 0; m + 1 < heights.size(); ++m) {
        const double gap = heights[m + 1] - heights[m];
        if (gap > best_gap) {
          best_gap = gap;
          best_m = m + 1;  // merges are 1-indexed in the cut formula
        }
      }
      if (best_gap <= 0.0) {
        throw DegenerateInputError(
            "clustering: merge heights have no gap (all models identical?)");
      }
      k = n - best_m;
    }
  }
  if (k < 1 || k > n) throw ConfigError("clustering: k must be in [1, n]");

  // replay merges until k clusters remain
  std::vector<int> parent(n);
  for (std::size_t i = 0; i < n; ++i) parent[i] = static_cast<int>(i);
  std::function<int(int)> find = [&](int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  for (std::size_t m = 0; m + k < n + 0; ++m) {
    if (m >= merges.size()) break;
    parent[find(merges[m].from)] = find(merges[m].into);
  }
  // compact labels in order of first appearance
  std::vector<int> remap(n, -1);
  int next = 0;
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int root = find(static_cast<int>(i));
    if (remap[root] < 0) remap[root] = next++;
    out.labels[i] = remap[root];
  }
  out.k = static_cast<std::size_t>(next);
  return out;
}

}  // namespace detail

// Clusters the training split on pairwise l2 distances of the chosen layer;
// k comes from the largest merge-height gap unless overridden.
inline RouterModel fit_router(const Zoo& zoo, const std::string& layer_name,
                              std::size_t k_override = 0) {
  const std::vector<std::size_t>& ids = zoo.train_idx.empty() ? zoo.val_idx : zoo.train_idx;
  if (ids.size() < 2) throw ConfigError("fit_router: need at least 2 training models");

  std::vector<Matrix> layers(ids.size());
  parallel_blocks(ids.size(), 4, [&](std::size_t, std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) layers[i] = zoo.records[ids[i]].input_layer(layer_name);
  });
  const Matrix dist = pairwise_l2(layers);
  const detail::SingleLinkage clustering = detail::single_linkage_cluster(dist, k_override);

  RouterModel router;
  router.k = clustering.k;
  router.layer_name = layer_name;
  router.merge_heights = clustering.merge_heights;
  router.centers.assign(clustering.k, Matrix(layers[0].rows, layers[0].cols));
  std::vector<std::size_t> counts(clustering.k, 0);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto c = static_cast<std::size_t>(clustering.labels[i]);
    for (std::size_t e = 0; e < layers[i].data.size(); ++e)
      router.centers[c].data[e] += layers[i].data[e];
    ++counts[c];
  }
  for (std::size_t c = 0; c < clustering.k; ++c)
    for (double& v : router.centers[c].data) v /= static_cast<double>(counts[c]);

  for (std::size_t a = 0; a < router.k; ++a)
    for (std::size_t b = a + 1; b < router.k; ++b)
      if (frobenius_distance(router.centers[a], router.centers[b]) == 0.0)
        throw DegenerateInputError("fit_router: two cluster centers coincide");
  return router;
}

// argmin_k ||X - center_k||_2; ties go to the lowest index.
inline std::size_t route(const RouterModel& router, const Matrix& x) {
  if (router.centers.empty()) throw ConfigError("route: router has no centers");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < router.centers.size(); ++c) {
    const double d = frobenius_distance(router.centers[c], x);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

inline void save_router(const RouterModel& router, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json j;
  j["k"] = router.k;
  j["layer"] = router.layer_name;
  j["merge_heights"] = router.merge_heights;
  nlohmann::json centers = nlohmann::json::array();
  for (std::size_t c = 0; c < router.centers.size(); ++c) {
    const std::string rel = "center" + std::to_string(c) + ".wzt";
    write_matrix((fs::path(dir) / rel).string(), router.centers[c]);
    centers.push_back(rel);
  }
  j["centers"] = centers;
  std::ofstream os(fs::path(dir) / "router.json");
  if (!os) throw FormatError("cannot write router manifest in " + dir);
  os << j.dump(2) << "\n";
}

inline RouterModel load_router(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream is(fs::path(dir) / "router.json");
  if (!is) throw FormatError("cannot open router manifest in " + dir);
  nlohmann::json j;
  is >> j;
  RouterModel router;
  router.k = j.at("k").get<std::size_t>();
  router.layer_name = j.at("layer").get<std::string>();
  router.merge_heights = j.at("merge_heights").get<std::vector<double>>();
  for (const auto& rel : j.at("centers")) {
    router.centers.push_back(read_matrix((fs::path(dir) / rel.get<std::string>()).string()));
  }
  return router;
}

}  // namespace probex
