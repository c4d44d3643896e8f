#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "ssal/harness.hpp"

namespace ssal {
namespace {

using namespace ssal::harness;
namespace fs = std::filesystem;

template <class F>
std::string config_error_field(F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<no error>";
}

// Small enough for a few seconds per run.
ExperimentConfig tiny(std::uint64_t seed = 0) {
  ExperimentConfig c;
  c.data.gen.n_train = 20;
  c.data.gen.n_test = 4;
  c.train.epochs = 1;
  c.train.steps_per_epoch = 2;
  c.train.batch_size = 4;
  c.al.initial_fraction = 0.2;
  c.al.increment = 0.2;
  c.al.rounds = 2;
  c.al.R = 2;
  c.seed = seed;
  return c;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

TEST(Config, EmptyObjectGivesDefaults) {
  const ExperimentConfig c = config_from_json(json::object());
  EXPECT_EQ(to_json(c), to_json(ExperimentConfig{}));
  EXPECT_EQ(c.train.adam.lr, kDefaultLr);
  EXPECT_EQ(c.ssl.ema_rate, 0.996);
  EXPECT_EQ(c.al.R, 8u);
  EXPECT_EQ(c.arm, Arm::mean_teacher_fft);
}

TEST(Config, RoundTripIsIdempotent) {
  ExperimentConfig c = tiny(7);
  c.arm = Arm::consistency;
  c.ssl.fft_source = ssltrain::FftSource::mean;
  c.al.selector = alselect::SelectorKind::entropy;
  const json j = to_json(c);
  EXPECT_EQ(to_json(config_from_json(j)), j);
  EXPECT_EQ(config_hash(config_from_json(j)), config_hash(c));
}

TEST(Config, ErrorsNameTheField) {
  EXPECT_EQ(config_error_field([] { config_from_json({{"ssl", {{"ema_rate", 1.5}}}}); }), "ssl.ema_rate");
  EXPECT_EQ(config_error_field([] { config_from_json({{"ssl", {{"pseudo_margin", 0.5}}}}); }), "ssl.pseudo_margin");
  EXPECT_EQ(config_error_field([] { config_from_json({{"ssl", {{"bogus", 1}}}}); }), "ssl.bogus");
  EXPECT_EQ(config_error_field([] { config_from_json({{"train", {{"epochs", "ten"}}}}); }), "train.epochs");
  EXPECT_EQ(config_error_field([] { config_from_json({{"al", {{"rounds", 10}}}}); }), "al.rounds");
  EXPECT_EQ(config_error_field([] { config_from_json({{"al", {{"selector", "mc"}}}}); }), "al.selector");
  EXPECT_EQ(config_error_field([] { config_from_json({{"al", {{"t_win", 2}}}}); }), "al.t_win");
  EXPECT_EQ(config_error_field([] { config_from_json({{"arm", "fully"}}); }), "arm");
  EXPECT_EQ(config_error_field([] { config_from_json(json::array()); }), "config");
  EXPECT_NO_THROW(config_from_json({{"ssl", {{"bogus", 1}}}}, false));
}

TEST(Config, LoadFromFile) {
  const fs::path p = fs::temp_directory_path() / "ssal_harness_cfg.json";
  std::ofstream(p) << R"({"seed": 4, "al": {"R": 3}})";
  const ExperimentConfig c = config_load_validate(p);
  EXPECT_EQ(c.seed, 4u);
  EXPECT_EQ(c.al.R, 3u);
  std::ofstream(p) << "{oops";
  EXPECT_EQ(config_error_field([&] { config_load_validate(p); }), "config");
  fs::remove(p);
  EXPECT_EQ(config_error_field([&] { config_load_validate(p); }), "config");
}

TEST(Config, HashIgnoresOutputLocation) {
  ExperimentConfig a = tiny(), b = tiny();
  b.output_dir = "/tmp/elsewhere";
  b.data.dir = "/tmp/data";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.ssl.radius = 0.2;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, ArmWiring) {
  ExperimentConfig c;
  c.arm = Arm::supervised;
  EXPECT_FALSE(ssl_for(c).use_unlabeled);
  c.arm = Arm::consistency;
  EXPECT_FALSE(ssl_for(c).ema_teacher);
  EXPECT_FALSE(ssl_for(c).pseudo_labels);
  EXPECT_EQ(ssl_for(c).consistency, ssltrain::ConsistencyKind::plain);
  c.arm = Arm::mean_teacher;
  EXPECT_TRUE(ssl_for(c).pseudo_labels);
  EXPECT_EQ(ssl_for(c).consistency, ssltrain::ConsistencyKind::plain);
  c.arm = Arm::mean_teacher_fft;
  EXPECT_EQ(ssl_for(c).consistency, ssltrain::ConsistencyKind::hpf);
  for (Arm a : {Arm::supervised, Arm::consistency, Arm::mean_teacher, Arm::mean_teacher_fft})
    EXPECT_EQ(parse_arm(arm_name(a)), a);
}

TEST(Experiment, PoolInvariantsAcrossRounds) {
  const ExperimentConfig cfg = tiny(1);
  ALExperiment e(cfg, load_or_generate(cfg));
  const auto test = e.test_ids();
  std::set<std::uint32_t> test_set(test.begin(), test.end());
  EXPECT_EQ(test.size(), 4u);
  EXPECT_EQ(e.labeled_ids().size(), 4u);
  std::vector<std::uint32_t> before = e.labeled_ids();
  while (!e.done()) {
    const auto unl = e.unlabeled_ids();
    const RoundLog& log = e.run_round();
    const auto lab = e.labeled_ids();
    EXPECT_EQ(log.labeled_count, lab.size());
    if (log.round == 0) {
      EXPECT_EQ(lab.size(), before.size());
    } else {
      EXPECT_EQ(lab.size(), before.size() + 4);
      ASSERT_EQ(log.selected.size(), 4u);
      for (auto id : log.selected) {
        EXPECT_TRUE(std::count(unl.begin(), unl.end(), id)) << id;
        EXPECT_FALSE(test_set.count(id)) << id;
      }
      EXPECT_EQ(log.scores.size(), unl.size());
    }
    const auto u = e.unlabeled_ids();
    for (auto id : lab) {
      EXPECT_FALSE(std::count(u.begin(), u.end(), id));
      EXPECT_FALSE(test_set.count(id));
    }
    EXPECT_EQ(lab.size() + u.size(), 20u);
    EXPECT_EQ(e.test_ids(), test);
    before = lab;
  }
  EXPECT_EQ(e.logs().size(), 3u);
  EXPECT_NEAR(e.logs().back().pct_labeled, 0.6, 1e-12);
  EXPECT_THROW(e.run_round(), std::logic_error);
}

TEST(Experiment, DeterministicCsvs) {
  const ExperimentConfig cfg = tiny(2);
  const auto a = run_al_experiment(cfg), b = run_al_experiment(cfg);
  EXPECT_EQ(metrics_csv(a), metrics_csv(b));
  EXPECT_EQ(scores_csv(a, cfg.al.R), scores_csv(b, cfg.al.R));
  EXPECT_EQ(logs_to_json(a), logs_to_json(b));
}

TEST(Experiment, ResumeReproducesUninterruptedRun) {
  const ExperimentConfig cfg = tiny(3);
  const auto ds = load_or_generate(cfg);
  ALExperiment full(cfg, ds);
  full.run_all();

  ALExperiment first(cfg, ds);
  first.run_round();
  const Checkpoint ck = decode_checkpoint(encode_checkpoint(first.checkpoint()));
  ALExperiment resumed = ALExperiment::resume(cfg, ds, ck);
  EXPECT_EQ(resumed.next_round(), 1u);
  EXPECT_EQ(resumed.labeled_ids(), first.labeled_ids());
  resumed.run_all();
  EXPECT_EQ(logs_to_json(resumed.logs()), logs_to_json(full.logs()));
  EXPECT_EQ(metrics_csv(resumed.logs()), metrics_csv(full.logs()));
  EXPECT_EQ(*resumed.student(), *full.student());
  EXPECT_EQ(resumed.total_steps(), full.total_steps());

  ExperimentConfig other = cfg;
  other.ssl.radius = 0.3;
  EXPECT_THROW(ALExperiment::resume(other, ds, ck), ConfigError);
}

TEST(Experiment, OutputsAndReEmission) {
  ExperimentConfig cfg = tiny(4);
  cfg.al.rounds = 1;
  cfg.debug_pgm = true;
  cfg.output_dir = (fs::temp_directory_path() / "ssal_harness_out").string();
  fs::remove_all(cfg.output_dir);
  const auto logs = run_al_experiment(cfg);
  const fs::path dir = cfg.output_dir;
  for (const char* f : {"metrics.csv", "scores.csv", "losses_round0.csv", "losses_round1.csv", "rounds.json",
                        "config.json", "round0.ckpt", "round1.ckpt"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_TRUE(fs::exists(dir / "pgm"));
  const std::string metrics = read_file(dir / "metrics.csv");
  EXPECT_EQ(metrics, metrics_csv(logs));
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 3);

  // Round logs survive JSON and re-emit byte-identical CSVs.
  const auto back = logs_from_json(json::parse(read_file(dir / "rounds.json")));
  const fs::path again = dir / "again";
  emit_csvs(back, again, cfg.al.R);
  EXPECT_EQ(read_file(again / "metrics.csv"), metrics);
  EXPECT_EQ(read_file(again / "scores.csv"), read_file(dir / "scores.csv"));
  EXPECT_EQ(read_file(again / "losses_round1.csv"), read_file(dir / "losses_round1.csv"));

  const Checkpoint ck = load_checkpoint(dir / "round1.ckpt");
  EXPECT_EQ(ck.config_hash, config_hash(cfg));
  EXPECT_EQ(ck.state.at("next_round").get<std::size_t>(), 2u);
  fs::remove_all(dir);
}

TEST(Experiment, ZeroRoundsTrainsOnce) {
  ExperimentConfig cfg = tiny(5);
  cfg.al.rounds = 0;
  const auto logs = run_al_experiment(cfg);
  ASSERT_EQ(logs.size(), 1u);
  EXPECT_TRUE(logs[0].selected.empty());
  EXPECT_EQ(logs[0].losses.size(), 2u);
}

TEST(Experiment, BranchOnlyChangesSelector) {
  const ExperimentConfig cfg = tiny(6);
  ALExperiment e(cfg, load_or_generate(cfg));
  e.run_round();
  ExperimentConfig sel = cfg;
  sel.al.selector = alselect::SelectorKind::random;
  EXPECT_NO_THROW(e.branch(sel));
  ExperimentConfig bad = cfg;
  bad.train.epochs = 2;
  EXPECT_THROW(e.branch(bad), ConfigError);
}

TEST(Experiment, DatasetMismatchRejected) {
  ExperimentConfig cfg = tiny();
  auto ds = load_or_generate(cfg);
  cfg.data.gen.n_train = 30;
  cfg.al.initial_fraction = 0.1;
  cfg.al.increment = 0.1;
  EXPECT_THROW(ALExperiment(cfg, ds), ValidationError);
}

TEST(Ablation, GridParsing) {
  const ExperimentConfig base = tiny();
  const auto g = grid_from_json({{"arm", {"supervised", "mt"}}, {"seed", {1, 2, 3}}}, base);
  EXPECT_EQ(g.size(), 6u);
  EXPECT_EQ(g.selectors, std::vector<alselect::SelectorKind>{base.al.selector});
  EXPECT_EQ(config_error_field([&] { grid_from_json({{"lr", {0.1}}}, base); }), "grid.lr");
  EXPECT_EQ(config_error_field([&] { grid_from_json({{"seed", json::array()}}, base); }), "grid.seed");
  EXPECT_EQ(config_error_field([&] { grid_from_json({{"arm", {"nope"}}}, base); }), "grid.arm");
}

TEST(Ablation, OneRowPerCellAndSharedPrefixMatchesStandalone) {
  ExperimentConfig base = tiny(8);
  base.al.rounds = 1;
  const auto grid = grid_from_json({{"selector", {"random", "noiseaug"}}, {"seed", {8}}}, base);
  const auto cells = run_ablation(base, grid);
  ASSERT_EQ(cells.size(), 2u);
  const std::string csv = ablation_csv(cells);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  const std::string summary = ablation_summary_csv(cells);
  EXPECT_EQ(std::count(summary.begin(), summary.end(), '\n'), 3);

  ExperimentConfig solo = base;
  solo.al.selector = alselect::SelectorKind::noiseaug;
  const auto logs = run_al_experiment(solo);
  EXPECT_EQ(logs_to_json({cells[1].final_round}), logs_to_json({logs.back()}));
}

TEST(Parallel, ThreadCountDoesNotChangeResults) {
  const ExperimentConfig cfg = tiny(9);
  const auto ds = load_or_generate(cfg);
  ALExperiment one(cfg, ds), four(cfg, ds, RunOptions{4, false, false});
  one.run_round();
  four.run_round();
  const auto a = one.select_next(4, 11), b = four.select_next(4, 11);
  EXPECT_EQ(a.ids, b.ids);
  EXPECT_EQ(a.scores, b.scores);
  EXPECT_EQ(one.logs().back().metrics.f_map50, four.logs().back().metrics.f_map50);
}

}  // namespace
}  // namespace ssal
