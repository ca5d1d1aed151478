#pragma once

// Plain encoder + readout + predictor trained by gradient descent, with no
// decomposition or intervention. Reference point for the synthetic benchmark.

#include <limits>
#include <string>
#include <vector>

#include "fig/encoder.hpp"
#include "fig/graph.hpp"
#include "fig/objective.hpp"
#include "fig/trainer.hpp"

namespace fig {

struct BaselineModel {
  TrainConfig config;
  EncoderParams encoder;
  PredictorParams predictor;

  static BaselineModel init(const TrainConfig& cfg, const Dataset& data) {
    cfg.validate();
    Rng rng(cfg.seed);
    BaselineModel m{cfg, EncoderParams::init(data.dim_x, data.dim_e, cfg.d, cfg.encoder_layers, rng), {}};
    m.predictor = PredictorParams::init(cfg.d, output_width(cfg.task), rng);
    return m;
  }

  void visit(const ParamVisitor& f) {
    encoder.visit("encoder", f);
    predictor.visit("predictor", f);
  }

  Tensor logits(const Graph& g) const { return predict(readout(encode(g, encoder), config.readout), predictor); }

  BaselineModel clone() const {
    BaselineModel c = *this;
    c.visit([](const std::string&, Tensor& t) { t = clone_leaf(t); });
    return c;
  }
};

inline double baseline_metric(const Dataset& data, const BaselineModel& model) {
  Predictions p;
  for (const auto& g : data.graphs) {
    auto z = model.logits(g).data();
    if (model.config.task == Task::regression) {
      p.score.push_back(z[0]);
      p.predicted_class.push_back(0);
    } else {
      p.score.push_back(0.0);
      p.predicted_class.push_back(static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin()));
    }
    p.target.push_back(g.y);
  }
  return model.config.task == Task::regression ? rmse(p) : accuracy(p);
}

/// Same batching, learning-rate schedule and model selection as train().
inline BaselineModel train_baseline(const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set) {
  BaselineModel model = BaselineModel::init(cfg, train_set);
  BaselineModel best_model = model.clone();
  double lr = cfg.lr;
  double best = cfg.task == Task::regression ? std::numeric_limits<double>::infinity()
                                             : -std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for (const auto& b : make_batches(train_set, cfg.batch_size, mix_seed(cfg.seed, 1000003 + epoch))) {
      model.visit([](const std::string&, Tensor& t) { t.zero_grad(); });
      std::vector<Tensor> losses;
      for (auto gi : b.graphs) {
        const auto& g = train_set.graphs[gi];
        losses.push_back(reshape(task_loss(model.logits(g), g.y, cfg.task), {1}));
      }
      Tensor obj = scale(sum_all(concat_rows(std::span<const Tensor>(losses))), 1.0 / static_cast<double>(b.size()));
      if (!std::isfinite(obj.item())) throw NumericalError("baseline diverged at epoch " + std::to_string(epoch));
      backward(obj);
      model.visit([lr](const std::string&, Tensor& t) {
        auto v = t.mutable_data();
        auto g = t.grad();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
      });
    }
    const double val = baseline_metric(val_set, model);
    if (metric_improves(cfg.task, val, best)) {
      best = val;
      best_model = model.clone();
      stale = 0;
    } else if (++stale >= cfg.patience) {
      lr *= cfg.lr_decay;
      stale = 0;
    }
  }
  return best_model;
}

}  // namespace fig
