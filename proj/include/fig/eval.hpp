#pragma once

// Metrics, rationale recovery against planted motifs, attention heatmap export
// and the paired regularization experiment.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fig/graph.hpp"
#include "fig/objective.hpp"
#include "fig/trainer.hpp"

namespace fig {

/// A metric whose value is undefined for the given input (e.g. AUC on one class).
class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct MetricReport {
  std::string metric;
  double value = 0.0;
  std::size_t n_samples = 0;
  std::vector<double> per_seed;  // filled when aggregated over seeds
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(MetricReport, metric, value, n_samples, per_seed)

/// Probability that a random positive outscores a random negative, ties counted
/// half, via average ranks.
inline double roc_auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size())
    throw DimensionError("roc_auc: " + std::to_string(scores.size()) + " scores vs " + std::to_string(labels.size()) +
                         " labels");
  std::size_t pos = 0;
  for (double l : labels) {
    if (l != 0.0 && l != 1.0) throw ArgumentError("roc_auc: labels must be 0 or 1");
    pos += l == 1.0;
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw UndefinedMetricError("roc_auc: both classes must be present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1..j
    for (std::size_t q = i; q < j; ++q)
      if (labels[order[q]] == 1.0) rank_sum += avg_rank;
    i = j;
  }
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

struct RegressionMetrics {
  double rmse = 0.0;
  double mae = 0.0;
};

inline RegressionMetrics regression_metrics(std::span<const double> preds, std::span<const double> targets) {
  if (preds.size() != targets.size())
    throw DimensionError("regression_metrics: " + std::to_string(preds.size()) + " predictions vs " +
                         std::to_string(targets.size()) + " targets");
  if (preds.empty()) throw ArgumentError("regression_metrics: no samples");
  double sq = 0.0, ab = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double r = preds[i] - targets[i];
    sq += r * r;
    ab += std::abs(r);
  }
  const double n = static_cast<double>(preds.size());
  return {std::sqrt(sq / n), ab / n};
}

/// Accuracy for classification, RMSE for regression.
inline MetricReport test_metric(const Dataset& data, const FigModel& model) {
  auto p = predict_dataset(data, model);
  if (model.config.task == Task::regression)
    return {"rmse", regression_metrics(p.score, p.target).rmse, p.target.size(), {}};
  return {"accuracy", accuracy(p), p.target.size(), {}};
}

// ---------------------------------------------------------------------------
// Rationale recovery

struct RecoveryReport {
  double precision_at_k = 0.0;
  double recall = 0.0;
  double jaccard = 0.0;
  double random_baseline = 0.0;  // expected precision of a uniformly random K-subset
  std::size_t graphs = 0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(RecoveryReport, precision_at_k, recall, jaccard, random_baseline, graphs)

/// Scores for a single graph; the baseline is |truth|/n.
inline RecoveryReport recovery_scores(const std::vector<std::size_t>& selected, const std::vector<std::size_t>& truth,
                                      std::size_t n) {
  if (selected.empty() || truth.empty() || n == 0) throw ArgumentError("recovery_scores: empty selection or truth");
  const std::set<std::size_t> a(selected.begin(), selected.end()), b(truth.begin(), truth.end());
  std::size_t inter = 0;
  for (auto v : a) inter += b.contains(v);
  const double uni = static_cast<double>(a.size() + b.size() - inter);
  return {static_cast<double>(inter) / static_cast<double>(a.size()), static_cast<double>(inter) / static_cast<double>(b.size()),
          static_cast<double>(inter) / uni, static_cast<double>(b.size()) / static_cast<double>(n), 1};
}

/// Mean over graphs of the augmenter's top-K node set scored against the planted truth.
inline RecoveryReport rationale_recovery(const FigModel& model, const Dataset& data) {
  if (model.config.variant != Variant::fig_n)
    throw UnsupportedVariantError("rationale_recovery: virtual nodes have no node-level selection");
  if (data.empty()) throw ArgumentError("rationale_recovery: empty dataset");
  RecoveryReport sum;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& g = data.graphs[i];
    if (!g.rationale) throw ArgumentError("rationale_recovery: graph " + std::to_string(i) + " has no rationale");
    const Tensor h = encode(g, model.encoder);
    const Tensor m = partition_scores(h, model.aug_n);
    const auto top = soft_arg_top_k(rationale_size(model.config.K_hat, g.n), h, m);
    auto r = recovery_scores(top.idx, *g.rationale, g.n);
    sum.precision_at_k += r.precision_at_k;
    sum.recall += r.recall;
    sum.jaccard += r.jaccard;
    sum.random_baseline += r.random_baseline;
  }
  const double w = 1.0 / static_cast<double>(data.size());
  return {sum.precision_at_k * w, sum.recall * w, sum.jaccard * w, sum.random_baseline * w, data.size()};
}

// ---------------------------------------------------------------------------
// Attention export

struct AttentionExport {
  std::string csv_path;
  std::string json_path;
  std::vector<double> p;  // t x t row-major
  std::size_t t = 0;
  std::vector<double> s;
  std::size_t k = 0;
  double cut_value = 0.0;
  double off_block_mass = 0.0;
};

/// Attention of the graph over its own rationale and environment.
inline AttentionRecord attention_record(const Graph& g, const FigModel& model) {
  return evaluate_graph(g, model).record;
}

inline std::string format_csv_matrix(std::span<const double> p, std::size_t t) {
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < t; ++j) {
      std::snprintf(buf, sizeof buf, "%.12g", p[i * t + j]);
      if (j) out += ',';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

/// Square matrix from a headerless comma-separated file; returns t.
inline std::size_t read_csv_matrix(const std::string& path, std::vector<double>& out) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  out.clear();
  std::string line;
  std::size_t rows = 0, cols = 0, lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        out.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ParseError(lineno, "bad number '" + cell + "' in " + path);
      }
      ++c;
    }
    if (rows == 0) cols = c;
    if (c != cols) throw ParseError(lineno, "ragged row in " + path);
    ++rows;
  }
  if (rows != cols) throw ParseError(lineno, path + " is not square");
  return rows;
}

/// Writes <prefix>.csv (P, 12 significant digits) and <prefix>.json
/// ({"s", "K", "cut_value", "off_block_mass"}).
inline AttentionExport export_attention(const FigModel& model, const Graph& g, const std::string& prefix) {
  const auto rec = attention_record(g, model);
  AttentionExport out;
  out.csv_path = prefix + ".csv";
  out.json_path = prefix + ".json";
  out.t = rec.t();
  out.p.assign(rec.p.data().begin(), rec.p.data().end());
  out.s = rec.s;
  out.k = rec.k;
  out.cut_value = rec.cut_value();
  out.off_block_mass = out.cut_value / static_cast<double>(out.t);

  std::ofstream csv(out.csv_path, std::ios::binary);
  if (!csv) throw IoError("cannot write " + out.csv_path);
  csv << format_csv_matrix(out.p, out.t);
  if (!csv) throw IoError("write failed for " + out.csv_path);

  nlohmann::json side{{"s", out.s}, {"K", out.k}, {"cut_value", out.cut_value}, {"off_block_mass", out.off_block_mass}};
  std::ofstream js(out.json_path, std::ios::binary);
  if (!js) throw IoError("cannot write " + out.json_path);
  js << side.dump(2) << '\n';
  if (!js) throw IoError("write failed for " + out.json_path);
  return out;
}

/// Mean over graphs of cut(P, s) / t on each graph's own environment.
inline double mean_off_block_mass(const Dataset& data, const FigModel& model) {
  if (data.empty()) throw ArgumentError("mean_off_block_mass: empty dataset");
  double s = 0.0;
  for (const auto& g : data.graphs) {
    const auto rec = attention_record(g, model);
    s += rec.cut_value() / static_cast<double>(rec.t());
  }
  return s / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Synthetic benchmark and the regularization experiment

struct Splits {
  Dataset train, val, test;
};

/// Consecutive train/val/test slices of one generated motif dataset.
inline Splits motif_benchmark(MotifConfig cfg, std::size_t n_train = 500, std::size_t n_val = 100,
                              std::size_t n_test = 100) {
  if (n_train < 1 || n_val < 1 || n_test < 1) throw ConfigError("motif_benchmark: every split needs a graph");
  cfg.num_graphs = n_train + n_val + n_test;
  const Dataset all = gen_motif_dataset(cfg);
  return {all.subset(0, n_train), all.subset(n_train, n_train + n_val), all.subset(n_train + n_val, cfg.num_graphs)};
}

struct RegEffectRow {
  std::uint64_t seed = 0;
  double beta_hat = 0.0;
  double off_block_mass = 0.0;
  double test_metric = 0.0;
};

struct RegEffectOptions {
  TrainConfig config;  // its beta_hat is the regularized arm
  MotifConfig data;    // seed is replaced by each run's seed
  std::vector<std::uint64_t> seeds;
  std::size_t n_train = 500, n_val = 100, n_test = 100;
};

/// Per seed, trains an unregularized (beta_hat = 0) and a regularized arm on the
/// same data and initialization. Two rows per seed, unregularized first.
inline std::vector<RegEffectRow> reg_effect_experiment(const RegEffectOptions& opt,
                                                       const std::function<void(const RegEffectRow&)>& on_row = {}) {
  if (opt.seeds.size() < 3) throw ConfigError("reg_effect_experiment: need at least 3 seeds");
  if (!(opt.config.beta_hat > 0.0)) throw ConfigError("reg_effect_experiment: regularized arm needs beta_hat > 0");
  std::vector<RegEffectRow> rows;
  for (auto seed : opt.seeds) {
    MotifConfig mc = opt.data;
    mc.seed = seed;
    const Splits data = motif_benchmark(mc, opt.n_train, opt.n_val, opt.n_test);
    for (double beta_hat : {0.0, opt.config.beta_hat}) {
      TrainConfig cfg = opt.config;
      cfg.seed = seed;
      cfg.beta_hat = beta_hat;
      const auto res = train(cfg, data.train, data.val);
      RegEffectRow row{seed, beta_hat, mean_off_block_mass(data.test, res.model), test_metric(data.test, res.model).value};
      rows.push_back(row);
      if (on_row) on_row(row);
    }
  }
  return rows;
}

inline std::string reg_effect_csv(const std::vector<RegEffectRow>& rows) {
  std::string out = "seed,beta_hat,off_block_mass,test_metric\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%llu,%.12g,%.12g,%.12g\n", static_cast<unsigned long long>(r.seed), r.beta_hat,
                  r.off_block_mass, r.test_metric);
    out += buf;
  }
  return out;
}

}  // namespace fig
