#pragma once

// Model assembly (theta = encoder, augmenter, predictor; phi = intervener), readout,
// prediction head, and the utility + cut-regularization objective.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fig/augmenter.hpp"
#include "fig/encoder.hpp"
#include "fig/graph.hpp"
#include "fig/intervener.hpp"
#include "fig/nn.hpp"
#include "fig/regularizer.hpp"
#include "fig/tensor.hpp"

namespace fig {

enum class Variant { fig_n, fig_vn };
enum class ReadoutKind { mean, sum };
enum class ReadoutScope { all, rationale };
enum class Task { binary_classification, regression };
enum class UpdateRule { simultaneous, alternating };

NLOHMANN_JSON_SERIALIZE_ENUM(Variant, {{Variant::fig_n, "fig_n"}, {Variant::fig_vn, "fig_vn"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ReadoutKind, {{ReadoutKind::mean, "mean"}, {ReadoutKind::sum, "sum"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ReadoutScope, {{ReadoutScope::all, "all"}, {ReadoutScope::rationale, "rationale"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Task, {{Task::binary_classification, "binary_classification"},
                                    {Task::regression, "regression"}})
NLOHMANN_JSON_SERIALIZE_ENUM(UpdateRule, {{UpdateRule::simultaneous, "simultaneous"},
                                          {UpdateRule::alternating, "alternating"}})

struct TrainConfig {
  Variant variant = Variant::fig_n;
  double K_hat = 0.75;
  std::size_t r = 8;
  double alpha = 1.0;
  double beta_hat = 1.0;
  double lr = 0.01;
  double lr_decay = 0.25;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  ReadoutKind readout = ReadoutKind::sum;
  ReadoutScope readout_scope = ReadoutScope::all;
  Task task = Task::binary_classification;
  std::size_t d = 64;
  std::size_t encoder_layers = 3;
  bool layer_norm = false;
  UpdateRule update_rule = UpdateRule::simultaneous;

  /// d = 300 preset for full-size molecule datasets.
  static TrainConfig wide() {
    TrainConfig c;
    c.d = 300;
    return c;
  }

  void validate() const {
    if (!(K_hat > 0.0 && K_hat < 1.0)) throw ConfigError("K_hat must lie in (0,1)");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must lie in (0,1]");
    if (alpha < 0.0 || beta_hat < 0.0) throw ConfigError("alpha and beta_hat must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (d < 1) throw ConfigError("d must be positive");
    if (encoder_layers < 1) throw ConfigError("encoder_layers must be at least 1");
    if (variant == Variant::fig_vn) {
      if (r < 2) throw ConfigError("r must be at least 2");
      const auto k = std::llround(K_hat * static_cast<double>(r));
      if (k < 1 || k >= static_cast<long long>(r))
        throw ConfigError("K_hat * r must round into [1, r-1] so both subsets are nonempty");
    }
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, variant, K_hat, r, alpha, beta_hat, lr, lr_decay,
                                                batch_size, max_epochs, patience, seed, readout, readout_scope, task,
                                                d, encoder_layers, layer_norm, update_rule)

/// Overlays the keys present in `j` on the defaults; unknown keys and
/// mistyped values are configuration errors.
inline TrainConfig parse_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const nlohmann::json known = TrainConfig{};
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  nlohmann::json merged = known;
  merged.update(j);
  TrainConfig cfg;
  try {
    cfg = merged.get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  // Enum strings outside the table silently map to the first value; reject them.
  if (nlohmann::json(cfg) != merged) throw ConfigError("config has an unrecognized value");
  cfg.validate();
  return cfg;
}

inline std::size_t output_width(Task task) { return task == Task::regression ? 1 : 2; }

struct PredictorParams {
  Mlp mlp;  // d -> d -> d -> c

  static PredictorParams init(std::size_t d, std::size_t c, Rng& rng) { return {Mlp::init({d, d, d, c}, rng)}; }
  std::size_t out() const { return mlp.layers.back().out(); }
  void visit(const std::string& prefix, const ParamVisitor& f) { mlp.visit(prefix + ".mlp", f); }
};

/// Input widths fixed by the training data.
struct ModelDims {
  std::size_t dim_x = 0;
  std::size_t dim_e = 0;
  std::size_t n_max = 0;  // FIG-VN truncation bound
};

/// n_max = ceil(10 x mean node count).
inline std::size_t n_max_for(const Dataset& d) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(10.0 * d.mean_nodes())));
}

inline ModelDims dims_for(const Dataset& d) { return {d.dim_x, d.dim_e, n_max_for(d)}; }

struct FigModel {
  TrainConfig config;
  ModelDims dims;
  EncoderParams encoder;
  AugmenterNParams aug_n;
  AugmenterVNParams aug_vn;
  IntervenerParams intervener;
  PredictorParams predictor;

  static FigModel init(const TrainConfig& cfg, const ModelDims& dims) {
    cfg.validate();
    FigModel m;
    m.config = cfg;
    m.dims = dims;
    Rng rng(cfg.seed);
    m.encoder = EncoderParams::init(dims.dim_x, dims.dim_e, cfg.d, cfg.encoder_layers, rng);
    if (cfg.variant == Variant::fig_n)
      m.aug_n = AugmenterNParams::init(cfg.d, rng);
    else
      m.aug_vn = AugmenterVNParams::init(cfg.r, dims.n_max, rng);
    m.intervener = IntervenerParams::init(cfg.d, rng, cfg.layer_norm);
    m.predictor = PredictorParams::init(cfg.d, output_width(cfg.task), rng);
    return m;
  }

  /// theta: encoder, augmenter, predictor.
  void visit_theta(const ParamVisitor& f) {
    encoder.visit("encoder", f);
    if (config.variant == Variant::fig_n)
      aug_n.visit("augmenter", f);
    else
      aug_vn.visit("augmenter", f);
    predictor.visit("predictor", f);
  }
  /// phi: intervener.
  void visit_phi(const ParamVisitor& f) { intervener.visit("intervener", f); }
  void visit(const ParamVisitor& f) {
    visit_theta(f);
    visit_phi(f);
  }

  void zero_grad() {
    visit([](const std::string&, Tensor& t) { t.zero_grad(); });
  }

  /// Deep copy with fresh leaves.
  FigModel clone() const {
    FigModel c = *this;
    c.visit([](const std::string&, Tensor& t) { t = clone_leaf(t); });
    return c;
  }
};

// ---------------------------------------------------------------------------
// Decomposition of one graph into rationale and environment rows

struct Decomposition {
  Tensor h;      // node embeddings (truncated to n_max for FIG-VN)
  Tensor h_ra;   // K x d
  Tensor h_env;  // (n-K) x d or (r-K) x d
  std::size_t k = 0;
  std::size_t n = 0;                   // nodes of the source graph
  std::optional<Partition> partition;  // FIG-N only
};

inline Decomposition decompose(const Graph& g, const FigModel& model) {
  Decomposition out;
  out.n = g.n;
  Tensor h = encode(g, model.encoder);
  if (model.config.variant == Variant::fig_n) {
    out.k = rationale_size(model.config.K_hat, g.n);
    Tensor m = partition_scores(h, model.aug_n);
    auto part = split_node_level(h, m, out.k);
    out.h_ra = part.h_ra;
    out.h_env = part.h_env;
    out.partition = std::move(part);
  } else {
    h = truncate_nodes(h, model.aug_vn.n_max);
    out.k = rationale_size(model.config.K_hat, model.aug_vn.r);
    auto [ra, env] = split_virtual(virtual_node_embed(h, model.aug_vn), out.k);
    out.h_ra = ra;
    out.h_env = env;
  }
  out.h = h;
  return out;
}

// ---------------------------------------------------------------------------
// Readout, prediction, losses

inline Tensor readout(const Tensor& h, ReadoutKind kind) {
  if (h.rank() != 2 || h.rows() < 1) throw DimensionError("readout: empty input " + shape_str(h.shape()));
  return kind == ReadoutKind::mean ? mean_rows(h) : sum_rows(h);
}

/// Raw logits (classification) or raw value (regression).
inline Tensor predict(const Tensor& h, const PredictorParams& p) {
  if (h.size() != p.mlp.layers.front().in())
    throw DimensionError("predict: embedding length " + std::to_string(h.size()) + " vs " +
                         std::to_string(p.mlp.layers.front().in()));
  return reshape(p.mlp(reshape(h, {1, h.size()})), {p.out()});
}

/// Cross-entropy over the logits for classification, squared error for regression.
inline Tensor task_loss(const Tensor& pred, double y, Task task) {
  if (task == Task::regression) {
    if (pred.size() != 1) throw DimensionError("task_loss: regression expects one output");
    Tensor diff = sub(pred, Tensor::scalar(y));
    return sum_all(mul(diff, diff));
  }
  if (y < 0 || y != std::floor(y) || y >= static_cast<double>(pred.size()))
    throw ArgumentError("task_loss: label " + std::to_string(y) + " out of range for " + std::to_string(pred.size()) +
                        " classes");
  return cross_entropy(pred, static_cast<std::size_t>(y));
}

struct UtilityResult {
  Tensor loss;
  Tensor prediction;
  Tensor h_inter;
  AttentionRecord record;
};

/// task_loss(predict(readout(intervene(H_ra || H_env))), y).
inline UtilityResult utility_loss(const Tensor& h_ra, const Tensor& h_env, double y, const FigModel& model) {
  auto inter = intervene(h_ra, h_env, model.intervener);
  const Tensor pooled_rows =
      model.config.readout_scope == ReadoutScope::all ? inter.h_inter : slice_rows(inter.h_inter, 0, h_ra.rows());
  UtilityResult out;
  out.prediction = predict(readout(pooled_rows, model.config.readout), model.predictor);
  out.loss = task_loss(out.prediction, y, model.config.task);
  out.h_inter = inter.h_inter;
  out.record = std::move(inter.record);
  return out;
}

/// beta = 2 beta_hat / (c (c - 1)) with c = node count (FIG-N) or r (FIG-VN).
inline double beta_scale(double beta_hat, std::size_t count) {
  if (count < 2) return 0.0;
  const double c = static_cast<double>(count);
  return 2.0 * beta_hat / (c * (c - 1.0));
}

struct LossReport {
  double l_util_own = 0.0;
  double l_util_swapped = 0.0;
  double l_reg_own = 0.0;
  double l_reg_swapped = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double total = 0.0;

  /// total = util_own + alpha * util_swapped + beta * (reg_own + reg_swapped).
  double recombined() const { return l_util_own + alpha * l_util_swapped + beta * (l_reg_own + l_reg_swapped); }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(LossReport, l_util_own, l_util_swapped, l_reg_own, l_reg_swapped, alpha, beta,
                                   total)

/// Weighted mean of reports. beta differs between graphs, so the mean carries the
/// effective beta that keeps total == recombined().
class LossAverage {
 public:
  void add(const LossReport& r, double w) {
    sum_.l_util_own += w * r.l_util_own;
    sum_.l_util_swapped += w * r.l_util_swapped;
    sum_.l_reg_own += w * r.l_reg_own;
    sum_.l_reg_swapped += w * r.l_reg_swapped;
    sum_.alpha += w * r.alpha;
    sum_.beta += w * r.beta;
    sum_.total += w * r.total;
    beta_reg_ += w * r.beta * (r.l_reg_own + r.l_reg_swapped);
    weight_ += w;
  }

  LossReport mean() const {
    if (weight_ == 0.0) return {};
    const double inv = 1.0 / weight_;
    LossReport m{sum_.l_util_own * inv, sum_.l_util_swapped * inv, sum_.l_reg_own * inv, sum_.l_reg_swapped * inv,
                 sum_.alpha * inv,      sum_.beta * inv,           sum_.total * inv};
    const double reg = sum_.l_reg_own + sum_.l_reg_swapped;
    if (reg != 0.0) m.beta = beta_reg_ / reg;
    return m;
  }

 private:
  LossReport sum_;
  double beta_reg_ = 0.0;
  double weight_ = 0.0;
};

struct LossTerms {
  Tensor total;
  LossReport report;
  UtilityResult own;
  UtilityResult swapped;
};

/// Objective for one graph with the environment of `partner` swapped in.
inline LossTerms total_loss(const Decomposition& own, const Decomposition& partner, double y, const FigModel& model) {
  const auto& cfg = model.config;
  LossTerms out;
  out.own = utility_loss(own.h_ra, own.h_env, y, model);
  out.swapped = utility_loss(own.h_ra, partner.h_env, y, model);
  const double beta = beta_scale(cfg.beta_hat, cfg.variant == Variant::fig_n ? own.n : cfg.r);
  Tensor util = add(out.own.loss, scale(out.swapped.loss, cfg.alpha));
  Tensor reg = add(out.own.record.cut, out.swapped.record.cut);
  out.total = add(util, scale(reg, beta));
  out.report.l_util_own = out.own.loss.item();
  out.report.l_util_swapped = out.swapped.loss.item();
  out.report.l_reg_own = out.own.record.cut.item();
  out.report.l_reg_swapped = out.swapped.record.cut.item();
  out.report.alpha = cfg.alpha;
  out.report.beta = beta;
  out.report.total = out.total.item();
  return out;
}

inline LossTerms total_loss(const Graph& g, const Graph& partner, const FigModel& model) {
  return total_loss(decompose(g, model), decompose(partner, model), g.y, model);
}

/// Test-time path: predict(readout(phi(H_ra || H_env))) with the graph's own environment.
inline UtilityResult evaluate_graph(const Graph& g, const FigModel& model) {
  auto dec = decompose(g, model);
  return utility_loss(dec.h_ra, dec.h_env, g.y, model);
}

}  // namespace fig
