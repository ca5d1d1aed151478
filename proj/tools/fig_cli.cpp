// Command-line front end: data generation, training, evaluation, attention
// export, gradient checks and the regularization experiment.
//
// Exit codes: 0 success, 1 usage, 2 invalid input or data, 3 numerical divergence.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fig/fig.hpp"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitDiverged = 3;

fig::TrainConfig load_config(const std::string& path, std::optional<std::uint64_t> seed) {
  fig::TrainConfig cfg;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw fig::IoError("cannot open " + path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw fig::ConfigError(path + ": " + e.what());
    }
    cfg = fig::parse_config(j);
  }
  if (seed) cfg.seed = *seed;
  cfg.validate();
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw fig::IoError("cannot write " + path);
  out << text;
  if (!out) throw fig::IoError("write failed for " + path);
}

nlohmann::json evaluate(const fig::FigModel& model, const fig::Dataset& data) {
  nlohmann::json out;
  const auto p = fig::predict_dataset(data, model);
  out["n_samples"] = data.size();
  if (model.config.task == fig::Task::regression) {
    const auto m = fig::regression_metrics(p.score, p.target);
    out["rmse"] = m.rmse;
    out["mae"] = m.mae;
  } else {
    out["accuracy"] = fig::accuracy(p);
    try {
      out["auc"] = fig::roc_auc(p.score, p.target);
    } catch (const fig::UndefinedMetricError&) {
      out["auc"] = nullptr;
    }
  }
  bool has_truth = model.config.variant == fig::Variant::fig_n;
  for (const auto& g : data.graphs) has_truth = has_truth && g.rationale.has_value();
  if (has_truth) out["recovery"] = fig::rationale_recovery(model, data);
  out["off_block_mass"] = fig::mean_off_block_mass(data, model);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rationale discovery with adversarial attention interventions"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  std::string config_path;
  std::optional<std::uint64_t> seed;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic motif dataset as JSONL");
  fig::MotifConfig motif;
  std::string gen_out = "-";
  std::string env_model = "tree";
  gen->add_option("--num-graphs", motif.num_graphs, "Number of graphs")->capture_default_str();
  gen->add_option("--seed", motif.seed, "Random seed")->capture_default_str();
  gen->add_option("--env-min", motif.env_min, "Smallest environment size")->capture_default_str();
  gen->add_option("--env-max", motif.env_max, "Largest environment size")->capture_default_str();
  gen->add_option("--noise", motif.noise, "Feature noise standard deviation")->capture_default_str();
  gen->add_option("--env-model", env_model, "Environment generator")
      ->check(CLI::IsMember({"tree", "random"}))
      ->capture_default_str();
  gen->add_option("-o,--out", gen_out, "Output path, - for stdout")->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "Train a model and write its best checkpoint");
  std::string train_path, val_path, ckpt_out, log_out;
  tr->add_option("--train", train_path, "Training JSONL")->required()->check(CLI::ExistingFile);
  tr->add_option("--val", val_path, "Validation JSONL")->required()->check(CLI::ExistingFile);
  tr->add_option("--config", config_path, "Training config JSON")->check(CLI::ExistingFile);
  tr->add_option("--seed", seed, "Overrides the config seed");
  tr->add_option("-o,--out", ckpt_out, "Checkpoint path")->required();
  tr->add_option("--log", log_out, "Per-epoch JSONL log");
  bool quiet = false;
  tr->add_flag("-q,--quiet", quiet, "No per-epoch output");

  // eval
  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a dataset");
  std::string ckpt_in, data_path, eval_out = "-";
  ev->add_option("--checkpoint", ckpt_in, "Checkpoint JSON")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data_path, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  ev->add_option("-o,--out", eval_out, "Report path, - for stdout")->capture_default_str();

  // export-attention
  auto* ex = app.add_subcommand("export-attention", "Write one graph's attention matrix as CSV plus JSON");
  std::size_t graph_index = 0;
  std::string prefix;
  ex->add_option("--checkpoint", ckpt_in, "Checkpoint JSON")->required()->check(CLI::ExistingFile);
  ex->add_option("--data", data_path, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  ex->add_option("--index", graph_index, "Graph index in the dataset")->capture_default_str();
  ex->add_option("-o,--out", prefix, "Output prefix; writes <prefix>.csv and <prefix>.json")->required();

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of the full objective");
  fig::GradCheckSetup gcs;
  std::string variant = "fig_n";
  double tolerance = 1e-4;
  gc->add_option("--seed", gcs.seed, "Random seed")->capture_default_str();
  gc->add_option("--variant", variant, "fig_n or fig_vn")->check(CLI::IsMember({"fig_n", "fig_vn"}))->capture_default_str();
  gc->add_option("--d", gcs.d, "Hidden width")->capture_default_str();
  gc->add_option("--r", gcs.r, "Virtual nodes (fig_vn)")->capture_default_str();
  gc->add_option("--step", gcs.h, "Central-difference step")->capture_default_str();
  gc->add_option("--tolerance", tolerance, "Maximum relative error")->capture_default_str();

  // reg-effect
  auto* re = app.add_subcommand("reg-effect", "Paired runs with and without the cut regularizer");
  std::uint64_t first_seed = 1;
  std::size_t runs = 5;
  std::string re_out = "-";
  re->add_option("--config", config_path, "Training config JSON")->check(CLI::ExistingFile);
  re->add_option("--seed", first_seed, "First seed")->capture_default_str();
  re->add_option("--runs", runs, "Number of consecutive seeds (at least 3)")->capture_default_str();
  re->add_option("-o,--out", re_out, "CSV path, - for stdout")->capture_default_str();

  if (argc < 2) {
    std::cerr << app.help();
    return kExitUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen) {
      motif.env_model = env_model == "random" ? fig::EnvModel::random : fig::EnvModel::tree;
      std::ostringstream text;
      fig::write_jsonl(text, fig::gen_motif_dataset(motif));
      write_text(gen_out, text.str());
    } else if (*tr) {
      const auto cfg = load_config(config_path, seed);
      const auto train_set = fig::load_jsonl(train_path);
      const auto val_set = fig::load_jsonl(val_path);
      std::ofstream log;
      if (!log_out.empty()) {
        log.open(log_out, std::ios::binary);
        if (!log) throw fig::IoError("cannot write " + log_out);
      }
      auto res = fig::train(cfg, train_set, val_set, [&](const fig::EpochLog& e) {
        const std::string line = nlohmann::json(e).dump();
        if (log.is_open()) log << line << '\n';
        if (!quiet) std::cerr << line << '\n';
      });
      fig::save_checkpoint(ckpt_out, res.model);
      std::cout << nlohmann::json{{"best_epoch", res.best_epoch}, {"best_val", res.best_val}, {"checkpoint", ckpt_out}}.dump()
                << '\n';
    } else if (*ev) {
      const auto model = fig::load_checkpoint(ckpt_in);
      const auto data = fig::load_jsonl(data_path);
      write_text(eval_out, evaluate(model, data).dump(2) + "\n");
    } else if (*ex) {
      const auto model = fig::load_checkpoint(ckpt_in);
      const auto data = fig::load_jsonl(data_path);
      if (graph_index >= data.size())
        throw fig::ArgumentError("graph index " + std::to_string(graph_index) + " out of range for " +
                                 std::to_string(data.size()) + " graphs");
      const auto res = fig::export_attention(model, data.graphs[graph_index], prefix);
      std::cout << nlohmann::json{{"csv", res.csv_path}, {"json", res.json_path}, {"t", res.t}, {"K", res.k},
                                  {"cut_value", res.cut_value}}
                       .dump()
                << '\n';
    } else if (*gc) {
      gcs.variant = variant == "fig_vn" ? fig::Variant::fig_vn : fig::Variant::fig_n;
      const auto res = fig::grad_check_small(gcs);
      const bool pass = res.max_rel_error < tolerance;
      std::cout << "max relative error " << res.max_rel_error << " (" << res.worst_param << ", " << res.coordinates
                << " coordinates) " << (pass ? "PASS" : "FAIL") << '\n';
      return pass ? 0 : kExitDiverged;
    } else if (*re) {
      fig::RegEffectOptions opt;
      opt.config = load_config(config_path, std::nullopt);
      for (std::size_t i = 0; i < runs; ++i) opt.seeds.push_back(first_seed + i);
      const auto rows = fig::reg_effect_experiment(opt, [](const fig::RegEffectRow& r) {
        std::cerr << "seed " << r.seed << " beta_hat " << r.beta_hat << " off_block_mass " << r.off_block_mass
                  << " test_metric " << r.test_metric << '\n';
      });
      write_text(re_out, fig::reg_effect_csv(rows));
    }
  } catch (const fig::NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return 0;
}
