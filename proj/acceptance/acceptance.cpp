// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails.
//
//   acceptance [--only 1,4,...] [--seeds N] [--al-epochs E] [--csv DIR]
//
// Tolerances and budgets are pinned below. The learning criteria (4, 5)
// train real models and dominate the runtime.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "../tests/grad_cases.hpp"
#include "../tests/oracles.hpp"
#include "ssal/alselect.hpp"
#include "ssal/checkpoint.hpp"
#include "ssal/evalmetrics.hpp"
#include "ssal/fftattn.hpp"
#include "ssal/harness.hpp"
#include "ssal/ssltrain.hpp"

namespace fs = std::filesystem;
using namespace ssal;
using ndgrad::Shape;
using ndgrad::Tensor;
using ssal::testing::random_tensor;

namespace {

// Pinned tolerances.
constexpr double kOracleTol = 1e-9;
constexpr double kGradTol = 1e-4;
constexpr double kEmaTol = 1e-12;
constexpr double kDcTol = 1e-9;
constexpr double kMetricTol = 1e-9;
constexpr int kOracleInstances = 50;
constexpr double kPlateauFraction = 0.9;
constexpr double kPlateauDistance = 2.0;
constexpr std::size_t kMinImproved = 4;  // out of 5 seeds

// Wall-clock budgets in seconds.
constexpr double kBudget1 = 60, kBudget2 = 120, kBudget4 = 1200, kBudget5 = 1800;

struct Options {
  std::size_t seeds = 5;
  std::size_t al_epochs = 10;
  std::string csv_dir;
};

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Accumulates a worst-case error and the number of checks behind it.
struct Worst {
  double err = 0.0;
  int n = 0;
  void add(double e) {
    err = std::max(err, std::isfinite(e) ? e : 1e300);
    ++n;
  }
};

std::vector<double> as_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Uniform random field in [0,1].
Tensor field(Shape s, Rng& rng) { return random_tensor(std::move(s), rng, 0.0, 1.0); }

oracle::Source to_oracle(ssltrain::FftSource s) {
  switch (s) {
    case ssltrain::FftSource::student: return oracle::Source::student;
    case ssltrain::FftSource::teacher: return oracle::Source::teacher;
    case ssltrain::FftSource::mean: return oracle::Source::mean;
    case ssltrain::FftSource::both: break;
  }
  return oracle::Source::both;
}

// --- 1 ----------------------------------------------------------------------

Outcome oracle_equivalence(const Options&) {
  Worst dft, tavg, unc, var, cons, weight, fc, pipe;
  for (int c = 0; c < kOracleInstances; ++c) {
    Rng rng(mix_seed(101, c));

    const Tensor f = random_tensor({8, 8}, rng);
    const auto spec = fftattn::fft2d(f);
    const auto ref = oracle::dft2(oracle::CField(f.values().begin(), f.values().end()), 8, 8, -1);
    for (std::size_t i = 0; i < 64; ++i) dft.add(std::abs(spec.bins[i] - ref[i]));

    const std::size_t t_win = 1 + 2 * std::size_t(c % 3);
    const Tensor maps = field({6, 5, 7}, rng);
    for (std::size_t i = 0; i < 6; ++i) {
      const auto got = detector::temporal_average(maps, i, t_win);
      const auto want = oracle::temporal_avg(as_vec(maps), 6, 5, 7, int(i), int(t_win));
      for (std::size_t p = 0; p < want.size(); ++p) tavg.add(std::abs(got[p] - want[p]));
    }
    const double u = alselect::uncertainty_from_map(maps, t_win);
    unc.add(std::abs(u - oracle::uncertainty(as_vec(maps), 6, 5, 7, int(t_win))) / std::max(1.0, u));

    std::vector<double> us(8);
    for (double& x : us) x = uniform(rng, 0, 500);
    var.add(std::abs(alselect::informativeness(us) - oracle::variance(us)) / std::max(1.0, oracle::variance(us)));

    const Tensor s = field({1, 6, 8, 8}, rng), t = field({1, 6, 8, 8}, rng);
    cons.add(std::abs(ssltrain::consistency_plain(s, t) - oracle::consistency_plain(as_vec(s), as_vec(t), 6, 8, 8)));

    const double r = uniform(rng, 0.0, 0.5);
    const Tensor frame = field({8, 8}, rng);
    const auto w = fftattn::hpf_weight_map(frame, r);
    const auto w_ref = oracle::hpf_weight(as_vec(frame), 8, 8, r);
    for (std::size_t p = 0; p < 64; ++p) weight.add(std::abs(w[p] - w_ref[p]));

    const Tensor fs_ = field({8, 8}, rng), ft_ = field({8, 8}, rng), wm = field({8, 8}, rng);
    fc.add(std::abs(ssltrain::frame_consistency(fs_, ft_, wm) -
                    oracle::frame_consistency(as_vec(fs_), as_vec(ft_), as_vec(wm))));

    ssltrain::SSLConfig cfg;
    cfg.fft_source = static_cast<ssltrain::FftSource>(c % 4);
    cfg.temporal_consistency = (c / 4) % 2 == 0;
    cfg.radius = r;
    cfg.lambda1 = uniform(rng, 0.0, 1.0);
    cfg.lambda2 = uniform(rng, 0.0, 1.0);
    pipe.add(std::abs(ssltrain::hpf_consistency(s, t, cfg) -
                      oracle::hpf_consistency(as_vec(s), as_vec(t), 6, 8, 8, cfg.radius, to_oracle(cfg.fft_source),
                                              cfg.lambda1, cfg.lambda2, cfg.temporal_consistency, 3)));
  }
  Outcome o;
  std::string d;
  for (auto [name, w] : {std::pair{"dft", &dft}, {"tavg", &tavg}, {"uncert", &unc}, {"var", &var}, {"mse", &cons},
                         {"hpf", &weight}, {"fc", &fc}, {"pipeline", &pipe}}) {
    o.pass = o.pass && w->err <= kOracleTol;
    d += fmt("%s %.1e ", name, w->err);
  }
  o.detail = d + fmt("(%d instances each, tol %.0e)", kOracleInstances, kOracleTol);
  return o;
}

// --- 2 ----------------------------------------------------------------------

Outcome gradient_suite(const Options&) {
  namespace gc = ssal::testing::grad_cases;
  Outcome o;
  double worst = 0.0;
  std::string worst_name;
  std::size_t families = 0;
  for (const auto& f : gc::families()) {
    ++families;
    for (int c = 0; c < gc::kCases; ++c) {
      const auto r = f.run(c);
      if (r.checked == 0) o.pass = false;
      if (!(r.max_rel_error <= worst)) {
        worst = r.max_rel_error;
        worst_name = f.name;
      }
    }
  }
  o.pass = o.pass && worst < kGradTol;
  o.detail = fmt("%zu families x %d cases, worst rel err %.2e (%s), tol %.0e", families, gc::kCases, worst,
                 worst_name.c_str(), kGradTol);
  return o;
}

// --- 3 ----------------------------------------------------------------------

Outcome algebraic_identities(const Options&) {
  Worst lin, both, ema, dc;
  for (int c = 0; c < kOracleInstances; ++c) {
    Rng rng(mix_seed(301, c));
    const Tensor fs_ = field({16, 16}, rng), ft_ = field({16, 16}, rng);
    const Tensor w1 = field({16, 16}, rng), w2 = field({16, 16}, rng);
    const double a = uniform(rng, -2, 2), b = uniform(rng, -2, 2);
    Tensor mix({16, 16});
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * w1[i] + b * w2[i];
    lin.add(std::abs(ssltrain::frame_consistency(fs_, ft_, mix) -
                     (a * ssltrain::frame_consistency(fs_, ft_, w1) + b * ssltrain::frame_consistency(fs_, ft_, w2))));

    const Tensor s = field({2, 4, 8, 8}, rng), t = field({2, 4, 8, 8}, rng);
    ssltrain::SSLConfig halves, mean;
    halves.fft_source = ssltrain::FftSource::both;
    halves.lambda1 = halves.lambda2 = 0.5;
    mean.fft_source = ssltrain::FftSource::mean;
    halves.temporal_consistency = mean.temporal_consistency = c % 2 == 0;
    both.add(std::abs(ssltrain::hpf_consistency(s, t, halves) - ssltrain::hpf_consistency(s, t, mean)));

    const Tensor g = random_tensor({12, 12}, rng, -3, 3);
    std::complex<double> total = 0.0;
    for (const auto& v : fftattn::highpass_reconstruct(g, uniform(rng, 0.0, 0.6))) total += v;
    dc.add(std::abs(total));
  }
  for (int c = 0; c < 5; ++c) {
    Rng rng(mix_seed(302, c));
    ndgrad::ParamStore teacher, student;
    teacher.add("w", random_tensor({4, 5}, rng));
    student.add("w", random_tensor({4, 5}, rng));
    const ndgrad::ParamStore t0 = teacher;
    const double alpha = uniform(rng, 0.5, 0.999);
    for (int k = 1; k <= 40; ++k) {
      ssltrain::ema_update(teacher, student, alpha);
      const double f = std::pow(alpha, k);
      for (std::size_t j = 0; j < 20; ++j) {
        ema.add(std::abs((teacher.at("w")[j] - student.at("w")[j]) - f * (t0.at("w")[j] - student.at("w")[j])));
      }
    }
  }
  Outcome o;
  o.pass = lin.err <= kOracleTol && both.err <= kOracleTol && ema.err <= kEmaTol && dc.err <= kDcTol;
  o.detail = fmt("FC linearity %.1e, halves=mean %.1e (tol %.0e); EMA closed form %.1e (tol %.0e); zero DC %.1e (tol %.0e)",
                 lin.err, both.err, kOracleTol, ema.err, kEmaTol, dc.err, kDcTol);
  return o;
}

// --- 4, 5 -------------------------------------------------------------------

std::vector<std::uint64_t> seed_list(const Options& opt) {
  std::vector<std::uint64_t> s;
  for (std::uint64_t i = 0; i < opt.seeds; ++i) s.push_back(i);
  return s;
}

void maybe_write(const Options& opt, const char* name, const std::string& text) {
  if (opt.csv_dir.empty()) return;
  fs::create_directories(opt.csv_dir);
  harness::write_text(fs::path(opt.csv_dir) / name, text);
}

// f-mAP@0.5 per seed for each value of a grid axis, in grid order.
template <class Key>
std::vector<std::vector<double>> by_seed(const std::vector<harness::AblationCell>& cells, const std::vector<Key>& keys,
                                         Key harness::AblationCell::*field, std::size_t seeds) {
  std::vector<std::vector<double>> out(keys.size(), std::vector<double>(seeds));
  for (const auto& c : cells) {
    const auto k = std::size_t(std::find(keys.begin(), keys.end(), c.*field) - keys.begin());
    out[k][c.seed] = c.final_round.metrics.f_map50;
  }
  return out;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

std::size_t improved(const std::vector<double>& a, const std::vector<double>& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += a[i] > b[i];
  return n;
}

std::string per_seed(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += fmt("%s%.3f", s.empty() ? "" : " ", x);
  return s;
}

Outcome ssl_beats_supervised(const Options& opt) {
  harness::ExperimentConfig base;  // default benchmark, 10% labels
  base.al.rounds = 0;
  harness::AblationGrid grid;
  grid.arms = {harness::Arm::supervised, harness::Arm::mean_teacher, harness::Arm::mean_teacher_fft};
  grid.selectors = {base.al.selector};
  grid.fft_sources = {base.ssl.fft_source};
  grid.radii = {base.ssl.radius};
  grid.seeds = seed_list(opt);
  const auto cells = harness::run_ablation(base, grid);
  maybe_write(opt, "ssl_vs_supervised.csv", harness::ablation_csv(cells));
  const auto f = by_seed(cells, grid.arms, &harness::AblationCell::arm, opt.seeds);
  const double sup = mean(f[0]), mt = mean(f[1]), fft = mean(f[2]);
  const std::size_t wins = improved(f[2], f[0]);
  Outcome o;
  o.pass = sup < mt && mt < fft && wins >= kMinImproved;
  o.detail = fmt("mean f-mAP@0.5 sup %.4f, mt %.4f, mt_fft %.4f; mt_fft > sup on %zu/%zu seeds (need %zu) "
                 "[sup %s | mt %s | mt_fft %s]",
                 sup, mt, fft, wins, opt.seeds, kMinImproved, per_seed(f[0]).c_str(), per_seed(f[1]).c_str(),
                 per_seed(f[2]).c_str());
  return o;
}

Outcome noiseaug_beats_random(const Options& opt) {
  harness::ExperimentConfig base;
  base.al.initial_fraction = 0.1;
  base.al.increment = 0.1;
  base.al.rounds = 2;
  base.train.epochs = opt.al_epochs;
  harness::AblationGrid grid;
  grid.arms = {base.arm};
  grid.selectors = {alselect::SelectorKind::noiseaug, alselect::SelectorKind::random,
                    alselect::SelectorKind::strongweak};
  grid.fft_sources = {base.ssl.fft_source};
  grid.radii = {base.ssl.radius};
  grid.seeds = seed_list(opt);
  const auto cells = harness::run_ablation(base, grid);
  maybe_write(opt, "selectors.csv", harness::ablation_csv(cells));
  const auto f = by_seed(cells, grid.selectors, &harness::AblationCell::selector, opt.seeds);
  const double na = mean(f[0]), rnd = mean(f[1]), sw = mean(f[2]);
  const std::size_t wins = improved(f[0], f[1]);
  Outcome o;
  o.pass = na >= rnd && na >= sw && wins >= kMinImproved;
  o.detail = fmt("after 2 rounds (30%%), %zu epochs: mean f-mAP@0.5 noiseaug %.4f, random %.4f, strongweak %.4f; "
                 "noiseaug > random on %zu/%zu seeds (need %zu) [na %s | rnd %s | sw %s]",
                 opt.al_epochs, na, rnd, sw, wins, opt.seeds, kMinImproved, per_seed(f[0]).c_str(),
                 per_seed(f[1]).c_str(), per_seed(f[2]).c_str());
  return o;
}

// --- 6 ----------------------------------------------------------------------

Outcome weight_map_sanity(const Options&) {
  constexpr int n = 32;
  Tensor f({n, n}, 0.1);
  std::vector<bool> region(n * n, false);
  for (int y = 12; y < 20; ++y)
    for (int x = 12; x < 20; ++x) {
      f[y * n + x] = 0.9;
      region[y * n + x] = true;
    }
  const Tensor w = fftattn::hpf_weight_map(f);
  const auto dist = oracle::boundary_distance(region, n, n);
  std::vector<double> sorted = as_vec(w);
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const double cut = sorted[sorted.size() / 10 - 1];
  int top = 0, near = 0;
  for (int i = 0; i < n * n; ++i) {
    if (w[i] < cut) continue;
    ++top;
    near += dist[i] <= kPlateauDistance;
  }
  const double frac = double(near) / top;

  bool uniform_ok = true;
  for (double v : {0.0, 0.3, 1.0}) {
    const Tensor u = fftattn::hpf_weight_map(Tensor({16, 16}, v));
    for (double x : u.values()) uniform_ok = uniform_ok && x == 1.0;
  }
  Outcome o;
  o.pass = frac >= kPlateauFraction && uniform_ok;
  o.detail = fmt("%d/%d top-decile pixels within %.0f px of the boundary (%.1f%%, need %.0f%%); constant maps %s",
                 near, top, kPlateauDistance, 100 * frac, 100 * kPlateauFraction,
                 uniform_ok ? "uniform" : "NOT uniform");
  return o;
}

// --- 7 ----------------------------------------------------------------------

Outcome metrics_fixtures(const Options&) {
  using evalmetrics::ScoredDetection;
  auto to_dets = [](const std::vector<std::pair<double, bool>>& xs) {
    std::vector<ScoredDetection> out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      ScoredDetection d;
      d.confidence = xs[i].first;
      d.key = i;
      if (xs[i].second) {
        d.iou = 0.9;
        d.gt_id = long(i);
      }
      out.push_back(d);
    }
    return out;
  };
  Worst ap;
  const std::vector<std::pair<double, bool>> hand{{.9, true}, {.8, false}, {.7, true}, {.6, true}, {.5, false}};
  const double hand_ap = evalmetrics::average_precision(to_dets(hand), 3, 0.5).ap;
  ap.add(std::abs(hand_ap - 2.5 / 3.0));
  ap.add(std::abs(hand_ap - oracle::average_precision(hand, 3)));
  for (int c = 0; c < kOracleInstances; ++c) {
    Rng rng(mix_seed(701, c));
    std::vector<std::pair<double, bool>> xs;
    int tp = 0;
    for (int i = uniform_int(rng, 1, 12); i > 0; --i) {
      const bool hit = uniform(rng, 0, 1) < 0.5;
      tp += hit;
      xs.push_back({uniform(rng, 0.01, 1.0), hit});
    }
    const int gt = tp + uniform_int(rng, 1, 3);
    ap.add(std::abs(evalmetrics::average_precision(to_dets(xs), gt, 0.5).ap - oracle::average_precision(xs, gt)));
  }

  const Box b{2, 2, 6, 6};
  std::vector<Box> gt(8, b), partial(8, Box::none());
  for (int i = 0; i < 6; ++i) partial[i] = b;
  const double tube = evalmetrics::tube_iou(partial, gt);

  // Ground truth replayed as predictions on a generated test split.
  synthvid::GenConfig g;
  g.n_train = 1;
  g.n_test = 12;
  const auto ds = synthvid::gen_dataset(g, 7);
  std::vector<detector::DetOutput> outs;
  std::vector<const synthvid::VideoSample*> vids;
  for (const auto& v : ds.videos)
    if (ds.is_test(v.id)) vids.push_back(&v);
  outs.reserve(vids.size());
  std::vector<evalmetrics::EvalItem> items;
  for (const auto* v : vids) {
    const auto& d = v->dims;
    detector::DetOutput out;
    out.det_map = Tensor({d.T, d.H, d.W});
    for (std::size_t i = 0; i < d.mask_values(); ++i) out.det_map[i] = v->annotation.masks[i] ? 0.95 : 0.05;
    std::vector<double> cs(synthvid::kNumClasses, 0.0);
    cs[std::size_t(v->annotation.class_id)] = 1.0;
    const std::size_t k = cs.size();
    out.class_scores = Tensor({k}, std::move(cs));
    outs.push_back(std::move(out));
    items.push_back({v->id, &outs.back(), &v->annotation});
  }
  const auto rep = evalmetrics::report(items, synthvid::kNumClasses);
  const bool perfect = rep.f_map50 == 1.0 && rep.v_map20 == 1.0 && rep.v_map50 == 1.0 && rep.mask_iou == 1.0;

  Outcome o;
  o.pass = ap.err <= kMetricTol && std::abs(tube - 0.75) <= kMetricTol && perfect;
  o.detail = fmt("AP fixture %.6f (2.5/3), AP vs oracle max err %.1e over %d cases; tube IoU %.6f (0.75); "
                 "perfect predictions f50 %g v20 %g v50 %g mIoU %g",
                 hand_ap, ap.err, ap.n, tube, rep.f_map50, rep.v_map20, rep.v_map50, rep.mask_iou);
  return o;
}

// --- 8, 9 -------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

harness::ExperimentConfig small_run(std::uint64_t seed) {
  harness::ExperimentConfig c;
  c.seed = seed;
  c.data.gen.n_train = 40;
  c.data.gen.n_test = 8;
  c.train.epochs = 2;
  c.train.steps_per_epoch = 3;
  c.al.initial_fraction = 0.1;
  c.al.increment = 0.1;
  c.al.rounds = 2;
  c.al.R = 3;
  return c;
}

Outcome determinism(const Options&) {
  const fs::path root = fs::temp_directory_path() / "ssal_acceptance_det";
  fs::remove_all(root);
  harness::ExperimentConfig cfg = small_run(11);
  std::string files[2];
  for (int i = 0; i < 2; ++i) {
    cfg.output_dir = (root / ("run" + std::to_string(i))).string();
    harness::run_al_experiment(cfg);
    files[i] = slurp(fs::path(cfg.output_dir) / "metrics.csv") +
               slurp(fs::path(cfg.output_dir) / "scores.csv");
  }
  const bool same = files[0] == files[1];

  // Resume from the on-disk round-0 checkpoint of run0.
  harness::ExperimentConfig rc = cfg;
  rc.output_dir = (root / "resumed").string();
  const auto ck = load_checkpoint(root / "run0" / "round0.ckpt");
  auto resumed = harness::ALExperiment::resume(rc, harness::load_or_generate(rc), ck);
  resumed.run_all();
  const std::string resumed_files = slurp(fs::path(rc.output_dir) / "metrics.csv") +
                                    slurp(fs::path(rc.output_dir) / "scores.csv");
  const bool resume_ok = resumed_files == files[0];

  harness::RunOptions two;
  two.threads = 2;
  two.write_outputs = false;
  cfg.output_dir.clear();
  const bool threads_ok = harness::metrics_csv(harness::run_al_experiment(cfg, two)) ==
                          slurp(root / "run0" / "metrics.csv");
  fs::remove_all(root);

  Outcome o;
  o.pass = same && resume_ok && threads_ok;
  o.detail = fmt("repeat run CSVs %s; resume from round 0 %s; 2 threads %s", same ? "byte-identical" : "DIFFER",
                 resume_ok ? "bitwise equal" : "DIFFERS", threads_ok ? "identical" : "DIFFERS");
  return o;
}

Outcome pool_invariants(const Options&) {
  int violations = 0;
  std::size_t rounds = 0;
  std::string first;
  auto fail = [&](const std::string& what) {
    if (!violations++) first = what;
  };
  for (auto sel : {alselect::SelectorKind::noiseaug, alselect::SelectorKind::random, alselect::SelectorKind::entropy,
                   alselect::SelectorKind::strongweak}) {
    harness::ExperimentConfig cfg;  // default pool sizes, near-zero training
    cfg.seed = 21;
    cfg.train.epochs = 1;
    cfg.train.steps_per_epoch = 1;
    cfg.al.rounds = 3;
    cfg.al.R = 2;
    cfg.al.selector = sel;
    harness::ALExperiment e(cfg, harness::load_or_generate(cfg));
    const auto test = e.test_ids();
    const std::set<std::uint32_t> test_set(test.begin(), test.end());
    const std::size_t K = harness::per_round_count(cfg), n_train = std::size_t(cfg.data.gen.n_train);
    std::size_t before = e.labeled_ids().size();
    while (!e.done()) {
      const auto unl = e.unlabeled_ids();
      const std::set<std::uint32_t> unl_set(unl.begin(), unl.end());
      const auto& log = e.run_round();
      ++rounds;
      const auto lab = e.labeled_ids(), u = e.unlabeled_ids();
      if (log.round > 0 && lab.size() != before + K) fail(fmt("round %zu grew by %zu", log.round, lab.size() - before));
      if (log.round > 0 && log.selected.size() != K) fail("selection size");
      for (auto id : log.selected) {
        if (!unl_set.count(id)) fail(fmt("selected %u outside the unlabeled pool", id));
        if (test_set.count(id)) fail(fmt("selected test video %u", id));
      }
      const std::set<std::uint32_t> ls(lab.begin(), lab.end());
      for (auto id : u)
        if (ls.count(id)) fail(fmt("video %u in both pools", id));
      for (auto id : lab)
        if (test_set.count(id)) fail(fmt("test video %u labeled", id));
      if (lab.size() + u.size() != n_train) fail("pools do not cover the train split");
      if (e.test_ids() != test) fail("test split changed");
      before = lab.size();
    }
  }
  Outcome o;
  o.pass = violations == 0;
  o.detail = fmt("%zu rounds over 4 selectors, %d violations%s%s", rounds, violations, violations ? ": " : "",
                 first.c_str());
  return o;
}

struct Criterion {
  int id;
  const char* name;
  double budget;  // seconds; 0 = no runtime clause
  std::function<Outcome(const Options&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  Options opt;
  std::vector<int> only;
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  app.add_option("--seeds", opt.seeds, "Seeds for the learning criteria")->check(CLI::Range(1, 100));
  app.add_option("--al-epochs", opt.al_epochs, "Epochs per AL round in criterion 5")->check(CLI::PositiveNumber);
  app.add_option("--csv", opt.csv_dir, "Write per-seed tables for criteria 4 and 5 here");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all = {
      {1, "oracle equivalence", kBudget1, oracle_equivalence},
      {2, "gradient suite", kBudget2, gradient_suite},
      {3, "algebraic identities", 0, algebraic_identities},
      {4, "SSL beats supervised", kBudget4, ssl_beats_supervised},
      {5, "NoiseAug beats random selection", kBudget5, noiseaug_beats_random},
      {6, "weight-map sanity", 0, weight_map_sanity},
      {7, "metrics correctness", 0, metrics_fixtures},
      {8, "determinism and persistence", 0, determinism},
      {9, "budget and pool invariants", 0, pool_invariants},
  };

  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(opt);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string timing = fmt("%.1fs", secs);
    if (c.budget > 0) {
      timing += fmt(" of %.0fs", c.budget);
      if (secs > c.budget) {
        o.pass = false;
        timing += " OVER BUDGET";
      }
    }
    failed += !o.pass;
    std::printf("[%s] criterion %d %s: %s [%s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                timing.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
