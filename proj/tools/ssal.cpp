// ssal: command-line front end for dataset generation, training, selection,
// active-learning runs, evaluation and ablation grids.
//
// Exit codes: 0 success, 2 config error, 3 data-format error, 4 runtime error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ssal/harness.hpp"

namespace fs = std::filesystem;
using namespace ssal;

namespace {

enum Exit { kOk = 0, kConfig = 2, kData = 3, kRuntime = 4 };

struct Globals {
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  bool strict_determinism = false;
  bool verbose = false;

  harness::RunOptions options() const {
    harness::RunOptions o;
    o.threads = strict_determinism ? 1 : threads;
    o.verbose = verbose;
    return o;
  }
};

harness::ExperimentConfig load_config(const std::string& path, const Globals& g) {
  harness::ExperimentConfig c = path.empty() ? harness::ExperimentConfig{} : harness::config_load_validate(path);
  if (g.seed) c.seed = *g.seed;
  return c;
}

// Rebuilds an experiment from a checkpoint and an on-disk dataset.
harness::ALExperiment from_checkpoint(const std::string& ckpt_path, const std::string& data_dir, const Globals& g) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  if (!ck.state.contains("config")) throw ValidationError("state.config", "checkpoint carries no config");
  harness::ExperimentConfig c = harness::config_from_json(ck.state.at("config"));
  c.data.dir = data_dir;
  c.output_dir.clear();
  return harness::ALExperiment::resume(c, harness::load_or_generate(c), ck, g.options());
}

void print_metrics(const std::vector<harness::RoundLog>& logs) { std::cout << harness::metrics_csv(logs); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised active learning for video action detection"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Override the experiment seed");
  app.add_option("--threads", g.threads, "Worker threads for scoring and evaluation")->check(CLI::PositiveNumber);
  app.add_flag("--strict-determinism", g.strict_determinism, "Run everything on one thread");
  app.add_flag("-v,--verbose", g.verbose, "Per-round progress on stderr");

  std::string config, data, out, checkpoint, grid, selector = "noiseaug", resume;
  std::size_t k = 0;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  gen->add_option("--config", config, "Experiment config (JSON)");
  gen->add_option("--out", out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train one model on the initial labeled pool");
  train->add_option("--config", config, "Experiment config (JSON)");
  train->add_option("--data", data, "Dataset directory")->required();
  train->add_option("--out", out, "Output directory")->required();

  auto* sel = app.add_subcommand("select", "Score the unlabeled pool and pick the top K");
  sel->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  sel->add_option("--data", data, "Dataset directory")->required();
  sel->add_option("--k", k, "Number of videos to select")->required();
  sel->add_option("--selector", selector, "random, entropy, noiseaug or strongweak");
  sel->add_option("--out", out, "Write the score CSV here");

  auto* al = app.add_subcommand("al-run", "Run the full active-learning cycle");
  al->add_option("--config", config, "Experiment config (JSON)")->required();
  al->add_option("--resume", resume, "Continue from a round checkpoint");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ev->add_option("--data", data, "Dataset directory")->required();

  auto* abl = app.add_subcommand("ablate", "Run an ablation grid");
  abl->add_option("--config", config, "Base experiment config (JSON)")->required();
  abl->add_option("--grid", grid, "Grid file (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }
  if (seed_opt->count()) g.seed = seed_value;

  try {
    if (*gen) {
      const auto c = load_config(config, g);
      synthvid::write_dataset(synthvid::gen_dataset(c.data.gen, mix_seed(c.seed, c.data.seed)), out);
      std::cout << "wrote " << c.data.gen.n_train + c.data.gen.n_test << " videos to " << out << "\n";
    } else if (*train) {
      auto c = load_config(config, g);
      c.data.dir = data;
      c.output_dir = out;
      c.al.rounds = 0;
      harness::ALExperiment e(c, harness::load_or_generate(c), g.options());
      e.run_all();
      print_metrics(e.logs());
    } else if (*sel) {
      harness::ALExperiment e = from_checkpoint(checkpoint, data, g);
      harness::ExperimentConfig c = e.config();
      c.al.selector = alselect::parse_selector(selector);
      const harness::ALExperiment b = e.branch(c);
      const auto selection = b.select_next(k, mix_seed(c.seed, e.next_round(), 0x5E1));
      for (auto id : selection.ids) std::cout << id << "\n";
      if (!out.empty()) {
        harness::write_text(out, alselect::score_csv({{e.next_round(), selection}}, c.al.R));
      }
    } else if (*al) {
      const auto c = load_config(config, g);
      if (resume.empty()) {
        print_metrics(harness::run_al_experiment(c, g.options()));
      } else {
        auto e = harness::ALExperiment::resume(c, harness::load_or_generate(c), load_checkpoint(resume), g.options());
        print_metrics(e.run_all());
      }
    } else if (*ev) {
      const harness::ALExperiment e = from_checkpoint(checkpoint, data, g);
      const auto rep = e.evaluate(*e.student());
      const auto& last = e.logs().back();
      std::cout << evalmetrics::metrics_csv({{last.round, last.pct_labeled, rep}});
    } else if (*abl) {
      const auto c = load_config(config, g);
      std::ifstream in(grid);
      if (!in) throw ConfigError("grid", "cannot open " + grid);
      nlohmann::json gj;
      try {
        gj = nlohmann::json::parse(in);
      } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("grid", e.what());
      }
      const auto cells = harness::run_ablation(c, harness::grid_from_json(gj, c), g.options());
      const std::string table = harness::ablation_csv(cells);
      if (!c.output_dir.empty()) {
        fs::create_directories(c.output_dir);
        harness::write_text(fs::path(c.output_dir) / "ablation.csv", table);
        harness::write_text(fs::path(c.output_dir) / "ablation_summary.csv", harness::ablation_summary_csv(cells));
      }
      std::cout << table;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const FormatError& e) {
    std::cerr << "data format error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}
