#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "probex/errors.hpp"
#include "probex/eval.hpp"
#include "probex/expert.hpp"
#include "probex/router.hpp"
#include "probex/trainer.hpp"
#include "probex/zoo.hpp"

namespace probex {

// Mixture of tree experts: router first, then one probing expert per cluster,
// each trained only on its own cluster's records. Prediction dispatches
// through the router.
struct MoEModel {
  RouterModel router;
  std::vector<ProbeXParams> experts;
};

struct MoETrainOptions {
  std::string layer_name;
  std::size_t r_u = 16, r_v = 32, r_t = 32;
  Activation activation = Activation::relu;
  TrainConfig cfg;
  std::size_t min_train_size = 4;
  std::size_t k_override = 0;
};

inline MoEModel moe_train(const Zoo& zoo, const MoETrainOptions& opt) {
  MoEModel moe;
  moe.router = fit_router(zoo, opt.layer_name, opt.k_override);

  // Partition train/val records by routed cluster.
  std::vector<std::vector<std::size_t>> cluster_train(moe.router.k), cluster_val(moe.router.k);
  for (std::size_t id : zoo.train_idx) {
    cluster_train[route(moe.router, zoo.records[id].input_layer(opt.layer_name))].push_back(id);
  }
  for (std::size_t id : zoo.val_idx) {
    cluster_val[route(moe.router, zoo.records[id].input_layer(opt.layer_name))].push_back(id);
  }
  for (std::size_t c = 0; c < moe.router.k; ++c) {
    if (cluster_train[c].size() < opt.min_train_size) {
      throw ConfigError("moe_train: cluster " + std::to_string(c) + " has only " +
                        std::to_string(cluster_train[c].size()) + " training models (min " +
                        std::to_string(opt.min_train_size) + ")");
    }
  }

  std::vector<Matrix> inputs(zoo.records.size());
  for (std::size_t i = 0; i < zoo.records.size(); ++i)
    inputs[i] = zoo.records[i].input_layer(opt.layer_name);

  moe.experts.resize(moe.router.k);
  for (std::size_t c = 0; c < moe.router.k; ++c) {
    ProbeXDims dims{inputs[0].rows, inputs[0].cols, zoo.universe_size,
                    opt.r_u,        opt.r_v,        opt.r_t};
    TrainConfig cfg = opt.cfg;
    cfg.seed = Rng(opt.cfg.seed).split(100 + c).seed();
    Rng init_rng = Rng(cfg.seed).split(3);
    ProbeXTrainable model{probex_init(dims, opt.activation, init_rng)};

    const std::vector<std::size_t>& val_ids =
        cluster_val[c].empty() ? cluster_train[c] : cluster_val[c];
    auto loss_fn = [&](std::size_t rec, const Vec& y) {
      return loss_multilabel_bce(y, zoo.records[rec].label_bits);
    };
    auto metric_fn = [&](const ProbeXTrainable& m) {
      double acc = 0.0;
      for (std::size_t id : val_ids) acc += multilabel_accuracy(m.forward(inputs[id]), zoo.records[id].label_bits);
      return acc / static_cast<double>(val_ids.size());
    };
    auto result = train_loop(model, inputs, cluster_train[c], loss_fn, metric_fn, cfg);
    moe.experts[c] = result.model.p;
  }
  return moe;
}

inline Vec moe_predict(const MoEModel& moe, const Matrix& x) {
  const std::size_t c = route(moe.router, x);
  return probex_forward(moe.experts[c], x).y;
}

inline void save_moe(const MoEModel& moe, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_router(moe.router, (fs::path(dir) / "router").string());
  for (std::size_t c = 0; c < moe.experts.size(); ++c) {
    save_probex(moe.experts[c], (fs::path(dir) / ("expert" + std::to_string(c))).string());
  }
}

inline MoEModel load_moe(const std::string& dir) {
  namespace fs = std::filesystem;
  MoEModel moe;
  moe.router = load_router((fs::path(dir) / "router").string());
  for (std::size_t c = 0; c < moe.router.k; ++c) {
    moe.experts.push_back(load_probex((fs::path(dir) / ("expert" + std::to_string(c))).string()));
  }
  return moe;
}

}  // namespace probex
