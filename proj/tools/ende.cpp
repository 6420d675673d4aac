// ende: command-line driver for few-shot nested NER experiments.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ende/corpus.hpp"
#include "ende/error.hpp"
#include "ende/eval.hpp"
#include "ende/experiment.hpp"
#include "ende/serialize.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kDomainError = 1;
constexpr int kUsageError = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("no such file: " + path);
}

ende::ExperimentConfig load_config(const std::string& config_path, const std::vector<std::string>& overrides,
                                   const std::string& out) {
  ende::ExperimentConfig cfg;
  if (!config_path.empty()) {
    require_file(config_path);
    cfg = ende::ExperimentConfig::load(config_path);
  }
  for (const auto& o : overrides) cfg.set_assignment(o);
  if (!out.empty()) cfg.set("out", out);
  return cfg;
}

ende::Json stats_json(const ende::NestingStats& s) {
  return {{"sentences", s.sentences},
          {"tokens", s.tokens},
          {"entities", s.entities},
          {"disjoint_pairs", s.disjoint_pairs},
          {"overlapping_pairs", s.overlapping_pairs},
          {"nested_pairs", s.nested_pairs},
          {"sentences_with_overlap", s.sentences_with_overlap},
          {"label_counts", s.label_counts}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ende: retrieval-augmented few-shot nested NER"};
  app.require_subcommand(1);

  std::string data;
  auto* validate = app.add_subcommand("validate", "Load and validate a dataset");
  validate->add_option("data", data, "JSONL dataset")->required();

  auto* stats = app.add_subcommand("stats", "Print nesting statistics as JSON");
  stats->add_option("data", data, "JSONL dataset")->required();

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "Experiment config file");
    cmd->add_option("--set", overrides, "Override a config key (key=value)");
    cmd->add_option("-o,--out", out, "Output directory");
  };
  auto* train = app.add_subcommand("train", "Train the retriever encoders");
  add_config(train);
  auto* run = app.add_subcommand("run", "Retrieve, prompt, parse and score over all seeds");
  add_config(run);
  auto* sweep = app.add_subcommand("sweep", "Repeat `run` along one config axis");
  add_config(sweep);
  std::string axis;
  std::vector<std::string> values;
  sweep->add_option("--axis", axis, "k, m or backend")->required();
  sweep->add_option("--values", values, "Axis values")->required()->delimiter(',');

  std::string gold_path;
  std::string pred_path;
  auto* score = app.add_subcommand("score", "Score a predictions file against a gold dataset");
  score->add_option("gold", gold_path, "Gold JSONL dataset")->required();
  score->add_option("predictions", pred_path, "Predictions JSONL")->required();
  bool as_table = false;
  score->add_flag("--table", as_table, "Print a plain-text table instead of JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*validate) {
      require_file(data);
      const auto ds = ende::load_dataset(data);
      std::cout << "ok: " << ds.examples.size() << " sentences, " << ds.labels.size() << " labels\n";
    } else if (*stats) {
      require_file(data);
      const auto ds = ende::load_dataset(data);
      std::cout << stats_json(ende::nesting_stats(ds.examples, ds.labels)).dump(2) << "\n";
    } else if (*train) {
      const auto cfg = load_config(config_path, overrides, out);
      const auto trace = ende::run_training(cfg, &std::cerr);
      std::cout << "trained " << trace.size() << " epochs; final total loss "
                << (trace.empty() ? 0.0 : trace.back().total) << "\n";
    } else if (*run) {
      const auto cfg = load_config(config_path, overrides, out);
      const auto outcome = ende::run_experiment(cfg, &std::cerr);
      std::ifstream table(cfg.out_dir() / "table.txt");
      std::cout << table.rdbuf();
    } else if (*sweep) {
      const auto cfg = load_config(config_path, overrides, out);
      const auto rows = ende::run_sweep(cfg, axis, values, &std::cerr);
      std::cout << ende::format_sweep_table(axis, rows);
      for (const auto& row : rows) {
        if (!row.summary) return kDomainError;
      }
    } else if (*score) {
      require_file(gold_path);
      require_file(pred_path);
      const auto ds = ende::load_dataset(gold_path);
      ende::SpanSets gold;
      for (const auto& ex : ds.examples) gold[ex.id()] = ex.entities;
      const auto report = ende::score(gold, ende::load_predictions(pred_path));
      if (as_table) {
        std::cout << ende::format_table({{fs::path(pred_path).filename().string(), report}});
      } else {
        std::cout << ende::to_json(report).dump(2) << "\n";
      }
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const ende::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDomainError;
  }
  return 0;
}
