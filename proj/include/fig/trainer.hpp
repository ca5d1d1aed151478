#pragma once

// Simultaneous gradient descent (theta) / ascent (phi), the epoch loop with
// plateau learning-rate decay, and JSON checkpoints.

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "fig/graph.hpp"
#include "fig/objective.hpp"

namespace fig {

struct StepResult {
  LossReport mean;
};

namespace detail {

inline Tensor batch_objective(const Dataset& data, const Batch& batch, const FigModel& model, LossReport& mean) {
  std::vector<Decomposition> decs;
  decs.reserve(batch.size());
  for (auto gi : batch.graphs) decs.push_back(decompose(data.graphs[gi], model));
  const double w = 1.0 / static_cast<double>(batch.size());
  std::vector<Tensor> totals;
  LossAverage avg;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto terms = total_loss(decs[i], decs[batch.partner[i]], data.graphs[batch.graphs[i]].y, model);
    totals.push_back(terms.total);
    avg.add(terms.report, 1.0);
  }
  mean = avg.mean();
  Tensor sum = reshape(concat_rows(std::span<const Tensor>(totals)), {totals.size()});
  return scale(sum_all(sum), w);
}

inline void check_finite(FigModel& model, const LossReport& r) {
  if (!std::isfinite(r.total)) throw NumericalError("non-finite loss " + std::to_string(r.total));
  model.visit([](const std::string& name, Tensor& t) {
    for (double g : t.grad())
      if (!std::isfinite(g)) throw NumericalError("non-finite gradient in " + name);
  });
}

}  // namespace detail

/// One min-max update on the mean objective of the batch:
/// theta <- theta - lr * grad_theta, phi <- phi + lr * grad_phi.
/// Simultaneous mode takes both from one gradient evaluation; alternating mode
/// re-evaluates after the theta step.
inline StepResult minmax_step(const Dataset& data, const Batch& batch, FigModel& model, double lr) {
  if (batch.size() == 0) throw ArgumentError("minmax_step: empty batch");
  StepResult res;
  auto descend = [lr](const std::string&, Tensor& t) {
    auto v = t.mutable_data();
    auto g = t.grad();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
  };
  auto ascend = [lr](const std::string&, Tensor& t) {
    auto v = t.mutable_data();
    auto g = t.grad();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += lr * g[i];
  };

  model.zero_grad();
  Tensor obj = detail::batch_objective(data, batch, model, res.mean);
  if (!std::isfinite(res.mean.total)) throw NumericalError("non-finite loss " + std::to_string(res.mean.total));
  backward(obj);
  detail::check_finite(model, res.mean);
  if (model.config.update_rule == UpdateRule::simultaneous) {
    model.visit_theta(descend);
    model.visit_phi(ascend);
    return res;
  }
  model.visit_theta(descend);
  model.zero_grad();
  LossReport second;
  Tensor obj2 = detail::batch_objective(data, batch, model, second);
  backward(obj2);
  detail::check_finite(model, second);
  model.visit_phi(ascend);
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation helpers

struct Predictions {
  std::vector<double> score;  // P(class 1) for classification, value for regression
  std::vector<std::size_t> predicted_class;
  std::vector<double> target;
};

inline std::vector<double> softmax_vec(std::span<const double> z) {
  std::vector<double> p(z.begin(), z.end());
  const double mx = *std::max_element(p.begin(), p.end());
  double s = 0.0;
  for (auto& v : p) s += (v = std::exp(v - mx));
  for (auto& v : p) v /= s;
  return p;
}

inline Predictions predict_dataset(const Dataset& data, const FigModel& model) {
  Predictions out;
  for (const auto& g : data.graphs) {
    auto res = evaluate_graph(g, model);
    auto z = res.prediction.data();
    if (model.config.task == Task::regression) {
      out.score.push_back(z[0]);
      out.predicted_class.push_back(0);
    } else {
      auto p = softmax_vec(z);
      out.score.push_back(p.size() > 1 ? p[1] : p[0]);
      out.predicted_class.push_back(static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()));
    }
    out.target.push_back(g.y);
  }
  return out;
}

inline double accuracy(const Predictions& p) {
  if (p.target.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < p.target.size(); ++i) hit += static_cast<double>(p.predicted_class[i]) == p.target[i];
  return static_cast<double>(hit) / static_cast<double>(p.target.size());
}

inline double rmse(const Predictions& p) {
  if (p.target.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < p.target.size(); ++i) s += (p.score[i] - p.target[i]) * (p.score[i] - p.target[i]);
  return std::sqrt(s / static_cast<double>(p.target.size()));
}

/// Accuracy for classification (higher is better), RMSE for regression (lower is better).
inline double validation_metric(const Dataset& data, const FigModel& model) {
  auto p = predict_dataset(data, model);
  return model.config.task == Task::regression ? rmse(p) : accuracy(p);
}

inline bool metric_improves(Task task, double candidate, double best) {
  return task == Task::regression ? candidate < best : candidate > best;
}

// ---------------------------------------------------------------------------
// Epoch loop

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  LossReport loss;
  double val_metric = 0.0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EpochLog, epoch, lr, loss, val_metric)

struct TrainResult {
  FigModel model;  // best-validation checkpoint
  FigModel last;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_val = 0.0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

inline TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_set.empty() || val_set.empty()) throw ArgumentError("train: training and validation sets must be nonempty");
  FigModel model = FigModel::init(cfg, dims_for(train_set));
  TrainResult res{model.clone(), model, {}, 0, 0.0};
  if (cfg.max_epochs == 0) return res;

  double lr = cfg.lr;
  double best = cfg.task == Task::regression ? std::numeric_limits<double>::infinity()
                                             : -std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    auto batches = make_batches(train_set, cfg.batch_size, mix_seed(cfg.seed, 1000003 + epoch));
    LossAverage epoch_loss;
    for (const auto& b : batches) {
      StepResult step;
      try {
        step = minmax_step(train_set, b, model, lr);
      } catch (const NumericalError& e) {
        throw NumericalError("diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
      epoch_loss.add(step.mean, static_cast<double>(b.size()));
    }
    EpochLog entry{epoch, lr, epoch_loss.mean(), validation_metric(val_set, model)};
    res.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    if (metric_improves(cfg.task, entry.val_metric, best)) {
      best = entry.val_metric;
      res.model = model.clone();
      res.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      lr *= cfg.lr_decay;
      stale = 0;
    }
  }
  res.best_val = best;
  res.last = model;
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json checkpoint_json(FigModel& model) {
  nlohmann::json j;
  j["format"] = "fig-checkpoint";
  j["version"] = kCheckpointVersion;
  j["config"] = model.config;
  j["dims"] = {{"dim_x", model.dims.dim_x}, {"dim_e", model.dims.dim_e}, {"n_max", model.dims.n_max}};
  auto params = nlohmann::json::array();
  auto add = [&](const std::string& group) {
    return [&, group](const std::string& name, Tensor& t) {
      params.push_back({{"name", name},
                        {"group", group},
                        {"shape", t.shape()},
                        {"data", std::vector<double>(t.data().begin(), t.data().end())}});
    };
  };
  model.visit_theta(add("theta"));
  model.visit_phi(add("phi"));
  j["params"] = params;
  return j;
}

inline FigModel model_from_checkpoint(const nlohmann::json& j) {
  if (j.value("format", "") != "fig-checkpoint") throw ValidationError("not a fig checkpoint");
  if (j.value("version", 0) != kCheckpointVersion)
    throw ValidationError("unsupported checkpoint version " + std::to_string(j.value("version", 0)));
  TrainConfig cfg = j.at("config").get<TrainConfig>();
  ModelDims dims{j.at("dims").at("dim_x").get<std::size_t>(), j.at("dims").at("dim_e").get<std::size_t>(),
                 j.at("dims").at("n_max").get<std::size_t>()};
  FigModel model = FigModel::init(cfg, dims);
  std::map<std::string, const nlohmann::json*> by_name;
  for (const auto& p : j.at("params")) by_name[p.at("name").get<std::string>()] = &p;
  model.visit([&](const std::string& name, Tensor& t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ValidationError("checkpoint lacks parameter " + name);
    auto shape = it->second->at("shape").get<Shape>();
    auto data = it->second->at("data").get<std::vector<double>>();
    if (shape != t.shape()) throw ValidationError("parameter " + name + " has shape " + shape_str(shape));
    t = Tensor(std::move(shape), std::move(data), true);
  });
  return model;
}

inline void save_checkpoint(const std::string& path, FigModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << checkpoint_json(model).dump() << '\n';
}

inline FigModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return model_from_checkpoint(nlohmann::json::parse(in));
}

}  // namespace fig
