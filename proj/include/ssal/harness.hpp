#pragma once

// Experiment orchestration: configuration, the active-learning cycle
// (train, score, select, annotate, repeat), ablation grids, persistence and
// CSV emission.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ssal/alselect.hpp"
#include "ssal/checkpoint.hpp"
#include "ssal/detector.hpp"
#include "ssal/errors.hpp"
#include "ssal/evalmetrics.hpp"
#include "ssal/fftattn.hpp"
#include "ssal/rng.hpp"
#include "ssal/ssltrain.hpp"
#include "ssal/synthvid.hpp"

namespace ssal::harness {

using nlohmann::json;
using ndgrad::ParamStore;
using ndgrad::Tensor;

// Adam step size used unless the config overrides it.
inline constexpr double kDefaultLr = 3e-3;

// ---------------------------------------------------------------------------
// Configuration

enum class Arm { supervised, consistency, mean_teacher, mean_teacher_fft };

inline const char* arm_name(Arm a) {
  switch (a) {
    case Arm::supervised: return "supervised";
    case Arm::consistency: return "c";
    case Arm::mean_teacher: return "mt";
    case Arm::mean_teacher_fft: return "mt_fft";
  }
  return "?";
}

inline Arm parse_arm(const std::string& s) {
  if (s == "supervised") return Arm::supervised;
  if (s == "c") return Arm::consistency;
  if (s == "mt") return Arm::mean_teacher;
  if (s == "mt_fft") return Arm::mean_teacher_fft;
  throw ConfigError("arm", "unknown arm '" + s + "' (supervised, c, mt, mt_fft)");
}

inline const char* fft_source_name(ssltrain::FftSource s) {
  switch (s) {
    case ssltrain::FftSource::student: return "student";
    case ssltrain::FftSource::teacher: return "teacher";
    case ssltrain::FftSource::mean: return "mean";
    case ssltrain::FftSource::both: return "both";
  }
  return "?";
}

inline ssltrain::FftSource parse_fft_source(const std::string& s) {
  if (s == "student") return ssltrain::FftSource::student;
  if (s == "teacher") return ssltrain::FftSource::teacher;
  if (s == "mean") return ssltrain::FftSource::mean;
  if (s == "both") return ssltrain::FftSource::both;
  throw ConfigError("ssl.fft_source", "unknown filter source '" + s + "'");
}

inline const char* noise_mode_name(alselect::NoiseMode m) {
  return m == alselect::NoiseMode::multiplicative ? "multiplicative" : "additive";
}

inline alselect::NoiseMode parse_noise_mode(const std::string& s) {
  if (s == "multiplicative") return alselect::NoiseMode::multiplicative;
  if (s == "additive") return alselect::NoiseMode::additive;
  throw ConfigError("al.noise_mode", "unknown noise mode '" + s + "'");
}

struct DataConfig {
  synthvid::GenConfig gen;
  std::uint64_t seed = 0;  // mixed with the experiment seed
  std::string dir;         // load from disk instead of generating when set
};

struct ModelConfig {
  std::size_t enc1 = 8;
  std::size_t enc2 = 16;
  std::size_t enc3 = 32;
  double head_bias = -2.0;
};

struct ALConfig {
  double initial_fraction = 0.1;
  double increment = 0.1;
  std::size_t rounds = 3;
  std::size_t R = 8;
  std::size_t t_win = 3;
  alselect::SelectorKind selector = alselect::SelectorKind::noiseaug;
  alselect::NoiseMode noise_mode = alselect::NoiseMode::multiplicative;
  double additive_sigma = 0.1;
  bool reinit = true;  // false: fine-tune the previous round's student
};

struct ExperimentConfig {
  DataConfig data;
  ModelConfig model;
  ssltrain::TrainConfig train;
  Arm arm = Arm::mean_teacher_fft;
  ssltrain::SSLConfig ssl;
  ALConfig al;
  double threshold = 0.5;  // detection-map binarization for evaluation
  std::uint64_t seed = 0;
  std::string output_dir;
  bool debug_pgm = false;

  ExperimentConfig() { train.adam.lr = kDefaultLr; }
};

inline json to_json(const ExperimentConfig& c) {
  const auto& g = c.data.gen;
  const auto& a = c.train.aug;
  return json{
      {"data",
       {{"T", g.dims.T},
        {"H", g.dims.H},
        {"W", g.dims.W},
        {"C", g.dims.C},
        {"n_train", g.n_train},
        {"n_test", g.n_test},
        {"min_size", g.min_size},
        {"max_size", g.max_size},
        {"max_distractors", g.max_distractors},
        {"texture", g.texture},
        {"texture_amplitude", g.texture_amplitude},
        {"noise_sigma", g.noise_sigma},
        {"min_speed", g.min_speed},
        {"max_speed", g.max_speed},
        {"zigzag_min_amplitude", g.zigzag_min_amplitude},
        {"zigzag_max_amplitude", g.zigzag_max_amplitude},
        {"actor_min_intensity", g.actor_min_intensity},
        {"actor_max_intensity", g.actor_max_intensity},
        {"distractor_min_intensity", g.distractor_min_intensity},
        {"distractor_max_intensity", g.distractor_max_intensity},
        {"background_max", g.background_max},
        {"seed", c.data.seed},
        {"dir", c.data.dir}}},
      {"model",
       {{"enc1", c.model.enc1}, {"enc2", c.model.enc2}, {"enc3", c.model.enc3}, {"head_bias", c.model.head_bias}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"steps_per_epoch", c.train.steps_per_epoch},
        {"lr", c.train.adam.lr},
        {"beta1", c.train.adam.beta1},
        {"beta2", c.train.adam.beta2},
        {"eps", c.train.adam.eps},
        {"aug",
         {{"enabled", a.enabled},
          {"hflip", a.hflip},
          {"max_shift", a.max_shift},
          {"gain_min", a.gain_min},
          {"gain_max", a.gain_max},
          {"bias_min", a.bias_min},
          {"bias_max", a.bias_max},
          {"noise_max", a.noise_max}}}}},
      {"arm", arm_name(c.arm)},
      {"ssl",
       {{"lambda1", c.ssl.lambda1},
        {"lambda2", c.ssl.lambda2},
        {"lambda_start", c.ssl.lambda_start},
        {"lambda_end", c.ssl.lambda_end},
        {"warmup_fraction", c.ssl.warmup_fraction},
        {"ema_rate", c.ssl.ema_rate},
        {"ema_warmup", c.ssl.ema_warmup},
        {"fft_source", fft_source_name(c.ssl.fft_source)},
        {"temporal_consistency", c.ssl.temporal_consistency},
        {"radius", c.ssl.radius},
        {"pseudo_margin", c.ssl.pseudo_margin}}},
      {"al",
       {{"initial_fraction", c.al.initial_fraction},
        {"increment", c.al.increment},
        {"rounds", c.al.rounds},
        {"R", c.al.R},
        {"t_win", c.al.t_win},
        {"selector", alselect::selector_name(c.al.selector)},
        {"noise_mode", noise_mode_name(c.al.noise_mode)},
        {"additive_sigma", c.al.additive_sigma},
        {"reinit", c.al.reinit}}},
      {"threshold", c.threshold},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"debug_pgm", c.debug_pgm},
  };
}

namespace detail {

inline std::string join_path(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

// Checks `in` against the shape of the default document: known keys only (in
// strict mode) and a value kind compatible with each default.
inline void check_against(const json& in, const json& ref, const std::string& path, bool strict) {
  if (!in.is_object()) throw ConfigError(path.empty() ? "config" : path, "expected an object");
  for (const auto& [key, value] : in.items()) {
    const std::string p = join_path(path, key);
    if (!ref.contains(key)) {
      if (strict) throw ConfigError(p, "unknown field");
      continue;
    }
    const json& r = ref.at(key);
    if (r.is_object()) {
      check_against(value, r, p, strict);
    } else if (r.is_boolean()) {
      if (!value.is_boolean()) throw ConfigError(p, "expected a boolean");
    } else if (r.is_string()) {
      if (!value.is_string()) throw ConfigError(p, "expected a string");
    } else if (r.is_number_unsigned()) {
      if (!value.is_number_unsigned()) throw ConfigError(p, "expected a nonnegative integer");
    } else if (r.is_number_integer()) {
      if (!value.is_number_integer()) throw ConfigError(p, "expected an integer");
    } else if (r.is_number()) {
      if (!value.is_number()) throw ConfigError(p, "expected a number");
    }
  }
}

inline void drop_unknown(json& in, const json& ref) {
  for (auto it = in.begin(); it != in.end();) {
    if (!ref.contains(it.key())) {
      it = in.erase(it);
      continue;
    }
    if (it->is_object()) drop_unknown(*it, ref.at(it.key()));
    ++it;
  }
}

inline ExperimentConfig from_filled(const json& j) {
  ExperimentConfig c;
  const json& d = j.at("data");
  auto& g = c.data.gen;
  g.dims = {d.at("T").get<std::uint32_t>(), d.at("H").get<std::uint32_t>(), d.at("W").get<std::uint32_t>(),
            d.at("C").get<std::uint32_t>()};
  g.n_train = d.at("n_train").get<int>();
  g.n_test = d.at("n_test").get<int>();
  g.min_size = d.at("min_size").get<int>();
  g.max_size = d.at("max_size").get<int>();
  g.max_distractors = d.at("max_distractors").get<int>();
  g.texture = d.at("texture").get<bool>();
  g.texture_amplitude = d.at("texture_amplitude").get<double>();
  g.noise_sigma = d.at("noise_sigma").get<double>();
  g.min_speed = d.at("min_speed").get<double>();
  g.max_speed = d.at("max_speed").get<double>();
  g.zigzag_min_amplitude = d.at("zigzag_min_amplitude").get<double>();
  g.zigzag_max_amplitude = d.at("zigzag_max_amplitude").get<double>();
  g.actor_min_intensity = d.at("actor_min_intensity").get<double>();
  g.actor_max_intensity = d.at("actor_max_intensity").get<double>();
  g.distractor_min_intensity = d.at("distractor_min_intensity").get<double>();
  g.distractor_max_intensity = d.at("distractor_max_intensity").get<double>();
  g.background_max = d.at("background_max").get<double>();
  c.data.seed = d.at("seed").get<std::uint64_t>();
  c.data.dir = d.at("dir").get<std::string>();

  const json& m = j.at("model");
  c.model.enc1 = m.at("enc1").get<std::size_t>();
  c.model.enc2 = m.at("enc2").get<std::size_t>();
  c.model.enc3 = m.at("enc3").get<std::size_t>();
  c.model.head_bias = m.at("head_bias").get<double>();

  const json& t = j.at("train");
  c.train.epochs = t.at("epochs").get<std::size_t>();
  c.train.batch_size = t.at("batch_size").get<std::size_t>();
  c.train.steps_per_epoch = t.at("steps_per_epoch").get<std::size_t>();
  c.train.adam.lr = t.at("lr").get<double>();
  c.train.adam.beta1 = t.at("beta1").get<double>();
  c.train.adam.beta2 = t.at("beta2").get<double>();
  c.train.adam.eps = t.at("eps").get<double>();
  const json& a = t.at("aug");
  c.train.aug.enabled = a.at("enabled").get<bool>();
  c.train.aug.hflip = a.at("hflip").get<bool>();
  c.train.aug.max_shift = a.at("max_shift").get<int>();
  c.train.aug.gain_min = a.at("gain_min").get<double>();
  c.train.aug.gain_max = a.at("gain_max").get<double>();
  c.train.aug.bias_min = a.at("bias_min").get<double>();
  c.train.aug.bias_max = a.at("bias_max").get<double>();
  c.train.aug.noise_max = a.at("noise_max").get<double>();

  c.arm = parse_arm(j.at("arm").get<std::string>());
  const json& s = j.at("ssl");
  c.ssl.lambda1 = s.at("lambda1").get<double>();
  c.ssl.lambda2 = s.at("lambda2").get<double>();
  c.ssl.lambda_start = s.at("lambda_start").get<double>();
  c.ssl.lambda_end = s.at("lambda_end").get<double>();
  c.ssl.warmup_fraction = s.at("warmup_fraction").get<double>();
  c.ssl.ema_rate = s.at("ema_rate").get<double>();
  c.ssl.ema_warmup = s.at("ema_warmup").get<bool>();
  c.ssl.fft_source = parse_fft_source(s.at("fft_source").get<std::string>());
  c.ssl.temporal_consistency = s.at("temporal_consistency").get<bool>();
  c.ssl.radius = s.at("radius").get<double>();
  c.ssl.pseudo_margin = s.at("pseudo_margin").get<double>();

  const json& l = j.at("al");
  c.al.initial_fraction = l.at("initial_fraction").get<double>();
  c.al.increment = l.at("increment").get<double>();
  c.al.rounds = l.at("rounds").get<std::size_t>();
  c.al.R = l.at("R").get<std::size_t>();
  c.al.t_win = l.at("t_win").get<std::size_t>();
  try {
    c.al.selector = alselect::parse_selector(l.at("selector").get<std::string>());
  } catch (const ConfigError& e) {
    throw ConfigError("al.selector", e.what());
  }
  c.al.noise_mode = parse_noise_mode(l.at("noise_mode").get<std::string>());
  c.al.additive_sigma = l.at("additive_sigma").get<double>();
  c.al.reinit = l.at("reinit").get<bool>();

  c.threshold = j.at("threshold").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.output_dir = j.at("output_dir").get<std::string>();
  c.debug_pgm = j.at("debug_pgm").get<bool>();
  return c;
}

}  // namespace detail

// Labeled-pool sizes implied by the budget schedule.
inline std::size_t initial_count(const ExperimentConfig& c) {
  return static_cast<std::size_t>(std::llround(c.al.initial_fraction * c.data.gen.n_train));
}

inline std::size_t per_round_count(const ExperimentConfig& c) {
  return static_cast<std::size_t>(std::llround(c.al.increment * c.data.gen.n_train));
}

// Arm wiring on top of the shared SSL hyperparameters.
inline ssltrain::SSLConfig ssl_for(const ExperimentConfig& c) {
  ssltrain::SSLConfig s = c.ssl;
  s.t_win = c.al.t_win;
  switch (c.arm) {
    case Arm::supervised:
      s.use_unlabeled = false;
      s.pseudo_labels = false;
      s.consistency = ssltrain::ConsistencyKind::none;
      break;
    case Arm::consistency:
      s.use_unlabeled = true;
      s.pseudo_labels = false;
      s.ema_teacher = false;
      s.consistency = ssltrain::ConsistencyKind::plain;
      break;
    case Arm::mean_teacher:
      s.use_unlabeled = true;
      s.pseudo_labels = true;
      s.ema_teacher = true;
      s.consistency = ssltrain::ConsistencyKind::plain;
      break;
    case Arm::mean_teacher_fft:
      s.use_unlabeled = true;
      s.pseudo_labels = true;
      s.ema_teacher = true;
      s.consistency = ssltrain::ConsistencyKind::hpf;
      break;
  }
  return s;
}

inline void validate(const ExperimentConfig& c) {
  auto in_unit = [](double v) { return v > 0.0 && v <= 1.0; };
  const auto& g = c.data.gen;
  if (g.dims.T == 0 || g.dims.H == 0 || g.dims.W == 0 || g.dims.C == 0) {
    throw ConfigError("data.T", "all clip dimensions must be positive");
  }
  if (g.dims.H % 4 != 0 || g.dims.W % 4 != 0) throw ConfigError("data.H", "H and W must be multiples of 4");
  if (g.n_train < 1) throw ConfigError("data.n_train", "must be >= 1");
  if (g.n_test < 1) throw ConfigError("data.n_test", "must be >= 1");
  if (g.min_size < 1 || g.max_size < g.min_size) throw ConfigError("data.min_size", "invalid actor size range");
  if (g.max_size > static_cast<int>(std::min(g.dims.H, g.dims.W))) {
    throw ConfigError("data.max_size", "actor larger than the frame");
  }
  if (g.max_distractors < 0) throw ConfigError("data.max_distractors", "must be >= 0");
  if (c.model.enc1 == 0) throw ConfigError("model.enc1", "must be >= 1");
  if (c.model.enc2 == 0) throw ConfigError("model.enc2", "must be >= 1");
  if (c.model.enc3 == 0) throw ConfigError("model.enc3", "must be >= 1");
  if (c.train.epochs == 0) throw ConfigError("train.epochs", "must be >= 1");
  if (c.train.batch_size < 2) throw ConfigError("train.batch_size", "must be >= 2");
  if (!(c.train.adam.lr > 0.0)) throw ConfigError("train.lr", "must be > 0");
  if (!(c.train.adam.beta1 >= 0.0 && c.train.adam.beta1 < 1.0)) throw ConfigError("train.beta1", "must lie in [0,1)");
  if (!(c.train.adam.beta2 >= 0.0 && c.train.adam.beta2 < 1.0)) throw ConfigError("train.beta2", "must lie in [0,1)");
  if (!(c.train.adam.eps > 0.0)) throw ConfigError("train.eps", "must be > 0");
  if (c.train.aug.max_shift < 0) throw ConfigError("train.aug.max_shift", "must be >= 0");
  if (c.train.aug.gain_max < c.train.aug.gain_min) throw ConfigError("train.aug.gain_max", "below gain_min");
  if (c.train.aug.bias_max < c.train.aug.bias_min) throw ConfigError("train.aug.bias_max", "below bias_min");
  if (c.train.aug.noise_max < 0.0) throw ConfigError("train.aug.noise_max", "must be >= 0");
  try {
    ssl_for(c).validate();
  } catch (const ConfigError& e) {
    const std::string field = e.field() == "t_win" ? "al.t_win" : "ssl." + e.field();
    throw ConfigError(field, std::string(e.what()).substr(e.field().size() + 2));
  }
  if (c.al.R < 2) throw ConfigError("al.R", "need at least 2 noise variants");
  if (!(c.al.additive_sigma >= 0.0)) throw ConfigError("al.additive_sigma", "must be >= 0");
  if (!in_unit(c.al.initial_fraction)) throw ConfigError("al.initial_fraction", "must lie in (0,1]");
  if (c.al.rounds > 0 && !in_unit(c.al.increment)) throw ConfigError("al.increment", "must lie in (0,1]");
  if (c.al.initial_fraction + static_cast<double>(c.al.rounds) * c.al.increment > 1.0 + 1e-12) {
    throw ConfigError("al.rounds", "initial_fraction + rounds * increment exceeds 1 (budget exhausts the pool)");
  }
  if (initial_count(c) == 0) throw ConfigError("al.initial_fraction", "selects no videos");
  if (c.al.rounds > 0 && per_round_count(c) == 0) throw ConfigError("al.increment", "selects no videos per round");
  if (initial_count(c) + c.al.rounds * per_round_count(c) > static_cast<std::size_t>(g.n_train)) {
    throw ConfigError("al.rounds", "rounded budget exceeds the training split");
  }
  if (!(c.threshold > 0.0 && c.threshold < 1.0)) throw ConfigError("threshold", "must lie in (0,1)");
}

// Fills defaults for missing fields, rejects unknown fields in strict mode,
// then validates every invariant.
inline ExperimentConfig config_from_json(const json& in, bool strict = true) {
  json filled = to_json(ExperimentConfig{});
  detail::check_against(in, filled, "", strict);
  json pruned = in;
  if (!strict) detail::drop_unknown(pruned, filled);
  filled.merge_patch(pruned);
  ExperimentConfig c = detail::from_filled(filled);
  validate(c);
  return c;
}

inline ExperimentConfig config_load_validate(const std::filesystem::path& path, bool strict = true) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", e.what());
  }
  return config_from_json(j, strict);
}

// Hash of every setting that influences results. Output location and the
// dataset directory (checked against dims and splits on load) are excluded.
inline std::string config_hash(const ExperimentConfig& c) {
  json j = to_json(c);
  j.erase("output_dir");
  j.erase("debug_pgm");
  j["data"].erase("dir");
  return fnv1a_hex(j.dump());
}

inline detector::DetectorConfig detector_config(const ExperimentConfig& c) {
  detector::DetectorConfig d = detector::config_for(c.data.gen.dims, synthvid::kNumClasses);
  d.enc1 = c.model.enc1;
  d.enc2 = c.model.enc2;
  d.enc3 = c.model.enc3;
  d.head_bias = c.model.head_bias;
  return d;
}

// Dataset named by the config: loaded from `data.dir` or generated from the
// data seed mixed with the experiment seed.
inline synthvid::Dataset load_or_generate(const ExperimentConfig& c) {
  if (!c.data.dir.empty()) {
    synthvid::Dataset ds = synthvid::read_dataset(c.data.dir);
    if (!(ds.manifest.dims == c.data.gen.dims)) {
      throw ValidationError("dims", "dataset dims differ from the config");
    }
    if (ds.manifest.n_train != c.data.gen.n_train || ds.manifest.n_test != c.data.gen.n_test) {
      throw ValidationError("splits", "dataset split sizes differ from the config");
    }
    return ds;
  }
  return synthvid::gen_dataset(c.data.gen, mix_seed(c.seed, c.data.seed));
}

// ---------------------------------------------------------------------------
// Round logs

struct RoundLog {
  std::size_t round = 0;
  double pct_labeled = 0.0;
  std::size_t labeled_count = 0;
  std::vector<std::uint32_t> selected;     // selection order
  std::vector<alselect::ALScore> scores;   // ascending id; empty at round 0
  ssltrain::LossRecord final_losses;       // mean over the last epoch
  std::vector<ssltrain::LossRecord> losses;
  evalmetrics::MetricsReport metrics;
};

inline json loss_to_json(const ssltrain::LossRecord& r) {
  return json::array({r.epoch, r.step, r.l_cls, r.l_det, r.l_pseudo, r.l_cons, r.lambda_unsup});
}

inline ssltrain::LossRecord loss_from_json(const json& j) {
  return {j.at(0).get<std::size_t>(), j.at(1).get<std::size_t>(), j.at(2).get<double>(), j.at(3).get<double>(),
          j.at(4).get<double>(),      j.at(5).get<double>(),      j.at(6).get<double>()};
}

inline json to_json(const RoundLog& r) {
  json scores = json::array();
  for (const auto& s : r.scores) scores.push_back({{"id", s.id}, {"u", s.uncertainties}, {"score", s.score}});
  json losses = json::array();
  for (const auto& l : r.losses) losses.push_back(loss_to_json(l));
  json per_class = json::array();
  for (const auto& pc : r.metrics.per_class) {
    per_class.push_back({{"class_id", pc.class_id}, {"f_ap50", pc.f_ap50}, {"v_ap20", pc.v_ap20}, {"v_ap50", pc.v_ap50}});
  }
  return json{
      {"round", r.round},
      {"pct_labeled", r.pct_labeled},
      {"labeled_count", r.labeled_count},
      {"selected", r.selected},
      {"scores", scores},
      {"final_losses", loss_to_json(r.final_losses)},
      {"losses", losses},
      {"metrics",
       {{"f_map50", r.metrics.f_map50},
        {"v_map20", r.metrics.v_map20},
        {"v_map50", r.metrics.v_map50},
        {"mask_iou", r.metrics.mask_iou},
        {"per_class", per_class}}},
  };
}

inline RoundLog round_log_from_json(const json& j) {
  RoundLog r;
  try {
    r.round = j.at("round").get<std::size_t>();
    r.pct_labeled = j.at("pct_labeled").get<double>();
    r.labeled_count = j.at("labeled_count").get<std::size_t>();
    r.selected = j.at("selected").get<std::vector<std::uint32_t>>();
    for (const auto& s : j.at("scores")) {
      r.scores.push_back({s.at("id").get<std::uint32_t>(), s.at("u").get<std::vector<double>>(),
                          s.at("score").get<double>()});
    }
    r.final_losses = loss_from_json(j.at("final_losses"));
    for (const auto& l : j.at("losses")) r.losses.push_back(loss_from_json(l));
    const json& m = j.at("metrics");
    r.metrics.f_map50 = m.at("f_map50").get<double>();
    r.metrics.v_map20 = m.at("v_map20").get<double>();
    r.metrics.v_map50 = m.at("v_map50").get<double>();
    r.metrics.mask_iou = m.at("mask_iou").get<double>();
    for (const auto& pc : m.at("per_class")) {
      r.metrics.per_class.push_back({pc.at("class_id").get<int>(), pc.at("f_ap50").get<double>(),
                                     pc.at("v_ap20").get<double>(), pc.at("v_ap50").get<double>()});
    }
  } catch (const json::exception& e) {
    throw ValidationError("round_log", e.what());
  }
  return r;
}

inline json logs_to_json(const std::vector<RoundLog>& logs) {
  json a = json::array();
  for (const auto& l : logs) a.push_back(to_json(l));
  return a;
}

inline std::vector<RoundLog> logs_from_json(const json& j) {
  std::vector<RoundLog> logs;
  for (const auto& e : j) logs.push_back(round_log_from_json(e));
  return logs;
}

// ---------------------------------------------------------------------------
// CSV emission

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("short write to " + path.string());
}

inline std::string metrics_csv(const std::vector<RoundLog>& logs) {
  std::vector<evalmetrics::MetricsRow> rows;
  for (const auto& l : logs) rows.push_back({l.round, l.pct_labeled, l.metrics});
  return evalmetrics::metrics_csv(rows);
}

inline std::string scores_csv(const std::vector<RoundLog>& logs, std::size_t R) {
  std::vector<std::pair<std::size_t, alselect::Selection>> rounds;
  for (const auto& l : logs) {
    if (l.round == 0) continue;
    rounds.push_back({l.round, alselect::Selection{l.selected, l.scores}});
  }
  return alselect::score_csv(rounds, R);
}

// Files: metrics.csv (round,pct_labeled,f_map50,v_map20,v_map50,mask_iou),
// scores.csv (round,sample_id,u_1..u_R,score,selected), and
// losses_round<k>.csv (epoch,step,l_cls,l_det,l_pseudo,l_cons,lambda_unsup).
inline void emit_csvs(const std::vector<RoundLog>& logs, const std::filesystem::path& dir, std::size_t R) {
  if (logs.empty()) throw std::invalid_argument("emit_csvs: no round logs");
  std::filesystem::create_directories(dir);
  write_text(dir / "metrics.csv", metrics_csv(logs));
  write_text(dir / "scores.csv", scores_csv(logs, R));
  for (const auto& l : logs) {
    write_text(dir / ("losses_round" + std::to_string(l.round) + ".csv"), ssltrain::loss_csv(l.losses));
  }
}

// ---------------------------------------------------------------------------
// Parallel map over frozen snapshots: results land in per-index slots so the
// outcome does not depend on scheduling.

inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Active-learning experiment

struct RunOptions {
  std::size_t threads = 1;
  bool verbose = false;
  bool write_outputs = true;  // CSVs, logs and per-round checkpoints when output_dir is set
};

class ALExperiment {
 public:
  ALExperiment(ExperimentConfig cfg, synthvid::Dataset ds, RunOptions opts = {})
      : cfg_(std::move(cfg)), ds_(std::move(ds)), opts_(opts) {
    validate(cfg_);
    dc_ = detector_config(cfg_);
    if (ds_.manifest.n_train != cfg_.data.gen.n_train || !(ds_.manifest.dims == cfg_.data.gen.dims)) {
      throw ValidationError("splits", "dataset does not match the config");
    }
    for (auto& v : ds_.videos)
      if (v.pool == synthvid::Pool::labeled) v.pool = synthvid::Pool::unlabeled;
    clips_.reserve(ds_.videos.size());
    for (const auto& v : ds_.videos) clips_.push_back(v.clip());

    std::vector<std::uint32_t> train_ids(static_cast<std::size_t>(ds_.manifest.n_train));
    for (std::size_t i = 0; i < train_ids.size(); ++i) train_ids[i] = static_cast<std::uint32_t>(i);
    Rng rng(mix_seed(cfg_.seed, 0x1AB));
    std::shuffle(train_ids.begin(), train_ids.end(), rng);
    synthvid::AnnotationOracle oracle(ds_);
    for (std::size_t i = 0; i < initial_count(cfg_); ++i) oracle.annotate(train_ids[i]);
  }

  // Continues from a checkpoint written after some round.
  static ALExperiment resume(ExperimentConfig cfg, synthvid::Dataset ds, const Checkpoint& ck, RunOptions opts = {}) {
    if (ck.config_hash != config_hash(cfg)) {
      throw ConfigError("config", "checkpoint config hash " + ck.config_hash + " does not match " + config_hash(cfg));
    }
    ALExperiment e(std::move(cfg), std::move(ds), opts);
    try {
      for (auto& v : e.ds_.videos)
        if (v.pool == synthvid::Pool::labeled) v.pool = synthvid::Pool::unlabeled;
      synthvid::AnnotationOracle oracle(e.ds_);
      for (auto id : ck.state.at("labeled").get<std::vector<std::uint32_t>>()) oracle.annotate(id);
      e.next_round_ = ck.state.at("next_round").get<std::size_t>();
      e.logs_ = logs_from_json(ck.state.at("logs"));
    } catch (const json::exception& err) {
      throw ValidationError("state", err.what());
    }
    e.student_ = ck.store("student");
    e.teacher_ = ck.store("teacher");
    e.steps_ = ck.step;
    return e;
  }

  // Same state, different selection settings. Only the selector fields may
  // differ, which is what lets arms share a trained round-0 prefix.
  ALExperiment branch(const ExperimentConfig& other) const {
    auto strip = [](ExperimentConfig c) {
      c.al.selector = alselect::SelectorKind::random;
      c.al.noise_mode = alselect::NoiseMode::multiplicative;
      c.al.additive_sigma = 0.0;
      c.output_dir.clear();
      c.debug_pgm = false;
      return to_json(c);
    };
    if (strip(cfg_) != strip(other)) throw ConfigError("al.selector", "branch may only change selector settings");
    validate(other);
    ALExperiment e = *this;
    e.cfg_ = other;
    return e;
  }

  bool done() const { return next_round_ > cfg_.al.rounds; }
  std::size_t next_round() const { return next_round_; }
  const std::vector<RoundLog>& logs() const { return logs_; }
  const ExperimentConfig& config() const { return cfg_; }
  const synthvid::Dataset& dataset() const { return ds_; }
  const detector::DetectorConfig& detector() const { return dc_; }
  const std::optional<ParamStore>& student() const { return student_; }
  std::uint64_t total_steps() const { return steps_; }

  std::vector<std::uint32_t> labeled_ids() const { return oracle().labeled(); }
  std::vector<std::uint32_t> unlabeled_ids() const { return oracle().unlabeled(); }
  std::vector<std::uint32_t> test_ids() const { return oracle().test(); }

  // Scores the unlabeled pool with the current student.
  alselect::Selection select_next(std::size_t K, std::uint64_t seed) const {
    if (!student_) throw std::logic_error("select_next: no trained student yet");
    const auto pool = unlabeled_ids();
    if (K > pool.size()) {
      throw PoolError("select: K=" + std::to_string(K) + " exceeds pool size " + std::to_string(pool.size()));
    }
    const alselect::SelectConfig sc = select_config();
    alselect::Selection sel;
    sel.scores.resize(pool.size());
    parallel_for(pool.size(), opts_.threads, [&](std::size_t i) {
      sel.scores[i] = alselect::score_sample(*student_, {pool[i], &clips_[pool[i]]}, dc_, sc, seed);
    });
    sel.ids = alselect::select_topk(sel.scores, K);
    return sel;
  }

  evalmetrics::MetricsReport evaluate(const ParamStore& params) const {
    const auto ids = test_ids();
    std::vector<detector::DetOutput> outs(ids.size());
    constexpr std::size_t kChunk = 8;
    const std::size_t chunks = (ids.size() + kChunk - 1) / kChunk;
    parallel_for(chunks, opts_.threads, [&](std::size_t c) {
      std::vector<const Tensor*> batch;
      for (std::size_t i = c * kChunk; i < std::min(ids.size(), (c + 1) * kChunk); ++i) batch.push_back(&clips_[ids[i]]);
      auto res = detector::predict_batch(params, batch, dc_);
      for (std::size_t k = 0; k < res.size(); ++k) outs[c * kChunk + k] = std::move(res[k]);
    });
    std::vector<evalmetrics::EvalItem> items;
    for (std::size_t i = 0; i < ids.size(); ++i) items.push_back({ids[i], &outs[i], &ds_.videos[ids[i]].annotation});
    return evalmetrics::report(items, synthvid::kNumClasses, cfg_.threshold);
  }

  const RoundLog& run_round() {
    if (done()) throw std::logic_error("run_round: all rounds finished");
    const std::size_t r = next_round_;
    const auto t0 = std::chrono::steady_clock::now();
    RoundLog log;
    log.round = r;
    if (r > 0) {
      alselect::Selection sel = select_next(per_round_count(cfg_), mix_seed(cfg_.seed, r, 0x5E1));
      synthvid::AnnotationOracle orc(ds_);
      for (auto id : sel.ids) orc.annotate(id);
      log.selected = std::move(sel.ids);
      log.scores = std::move(sel.scores);
    }

    ssltrain::Pools pools;
    for (auto id : labeled_ids()) pools.labeled.push_back({&clips_[id], &ds_.videos[id].annotation});
    for (auto id : unlabeled_ids()) pools.unlabeled.push_back(&clips_[id]);
    ParamStore init = (cfg_.al.reinit || !student_) ? detector::init_params(dc_, mix_seed(cfg_.seed, 0x1417))
                                                    : *student_;
    ssltrain::TrainState st(std::move(init), cfg_.train.adam, mix_seed(cfg_.seed, r, 0x7A1));
    const ssltrain::SSLConfig ssl = ssl_for(cfg_);
    log.losses = ssltrain::train(st, pools, dc_, cfg_.train, ssl);
    steps_ += log.losses.size();
    log.final_losses = last_epoch_mean(log.losses);
    log.labeled_count = pools.labeled.size();
    log.pct_labeled = static_cast<double>(pools.labeled.size()) / static_cast<double>(ds_.manifest.n_train);
    log.metrics = evaluate(st.student);
    student_ = std::move(st.student);
    teacher_ = std::move(st.teacher);
    logs_.push_back(std::move(log));
    ++next_round_;

    if (opts_.verbose) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const auto& l = logs_.back();
      std::fprintf(stderr, "[%s/%s seed %llu] round %zu  labeled %zu  f-mAP@0.5 %.4f  v-mAP@0.5 %.4f  (%.1fs)\n",
                   arm_name(cfg_.arm), alselect::selector_name(cfg_.al.selector),
                   static_cast<unsigned long long>(cfg_.seed), r, l.labeled_count, l.metrics.f_map50,
                   l.metrics.v_map50, secs);
    }
    if (opts_.write_outputs && !cfg_.output_dir.empty()) write_round_outputs();
    return logs_.back();
  }

  Checkpoint checkpoint() const {
    if (!student_) throw std::logic_error("checkpoint: nothing trained yet");
    Checkpoint ck;
    ck.stores = {{"student", *student_}, {"teacher", *teacher_}};
    ck.step = steps_;
    ck.config_hash = config_hash(cfg_);
    ck.state = {{"next_round", next_round_},
                {"labeled", labeled_ids()},
                {"config", to_json(cfg_)},
                {"logs", logs_to_json(logs_)}};
    return ck;
  }

  std::vector<RoundLog> run_all() {
    while (!done()) run_round();
    return logs_;
  }

 private:
  synthvid::AnnotationOracle oracle() const { return synthvid::AnnotationOracle(const_cast<synthvid::Dataset&>(ds_)); }

  alselect::SelectConfig select_config() const {
    alselect::SelectConfig sc;
    sc.kind = cfg_.al.selector;
    sc.R = cfg_.al.R;
    sc.t_win = cfg_.al.t_win;
    sc.noise_mode = cfg_.al.noise_mode;
    sc.additive_sigma = cfg_.al.additive_sigma;
    sc.aug = cfg_.train.aug;
    return sc;
  }

  static ssltrain::LossRecord last_epoch_mean(const std::vector<ssltrain::LossRecord>& losses) {
    ssltrain::LossRecord m;
    if (losses.empty()) return m;
    m.epoch = losses.back().epoch;
    double n = 0.0;
    for (const auto& l : losses) {
      if (l.epoch != m.epoch) continue;
      m.l_cls += l.l_cls;
      m.l_det += l.l_det;
      m.l_pseudo += l.l_pseudo;
      m.l_cons += l.l_cons;
      m.lambda_unsup = l.lambda_unsup;
      n += 1.0;
    }
    m.step = static_cast<std::size_t>(n);
    m.l_cls /= n;
    m.l_det /= n;
    m.l_pseudo /= n;
    m.l_cons /= n;
    return m;
  }

  void write_round_outputs() const {
    const std::filesystem::path dir = cfg_.output_dir;
    emit_csvs(logs_, dir, cfg_.al.R);
    write_text(dir / "rounds.json", logs_to_json(logs_).dump(1) + "\n");
    write_text(dir / "config.json", to_json(cfg_).dump(2) + "\n");
    const std::size_t r = logs_.back().round;
    save_checkpoint(dir / ("round" + std::to_string(r) + ".ckpt"), checkpoint());
    if (cfg_.debug_pgm) dump_weight_maps(dir / "pgm", r);
  }

  // High-pass weight masks of the student's map on the first test video.
  void dump_weight_maps(const std::filesystem::path& dir, std::size_t r) const {
    std::filesystem::create_directories(dir);
    const auto ids = test_ids();
    const auto out = detector::predict(*student_, clips_[ids.front()], dc_);
    const Tensor avg = detector::temporal_average_all(out.det_map, cfg_.al.t_win);
    const Tensor w = fftattn::hpf_weight_maps(avg, cfg_.ssl.radius);
    const std::size_t plane = dc_.height * dc_.width;
    for (std::size_t t = 0; t < dc_.frames; ++t) {
      const std::string stem = "round" + std::to_string(r) + "_video" + std::to_string(ids.front()) + "_frame" +
                               std::to_string(t);
      Tensor wf({dc_.height, dc_.width}, std::vector<double>(w.raw() + t * plane, w.raw() + (t + 1) * plane));
      Tensor df({dc_.height, dc_.width},
                std::vector<double>(out.det_map.raw() + t * plane, out.det_map.raw() + (t + 1) * plane));
      fftattn::write_pgm(dir / (stem + "_weights.pgm"), wf);
      fftattn::write_pgm(dir / (stem + "_map.pgm"), df);
    }
  }

  ExperimentConfig cfg_;
  synthvid::Dataset ds_;
  RunOptions opts_;
  detector::DetectorConfig dc_;
  std::vector<Tensor> clips_;
  std::size_t next_round_ = 0;
  std::vector<RoundLog> logs_;
  std::optional<ParamStore> student_;
  std::optional<ParamStore> teacher_;
  std::uint64_t steps_ = 0;
};

inline std::vector<RoundLog> run_al_experiment(const ExperimentConfig& cfg, RunOptions opts = {}) {
  ALExperiment e(cfg, load_or_generate(cfg), opts);
  return e.run_all();
}

// ---------------------------------------------------------------------------
// Ablation grid

struct AblationCell {
  Arm arm = Arm::mean_teacher_fft;
  alselect::SelectorKind selector = alselect::SelectorKind::noiseaug;
  ssltrain::FftSource fft_source = ssltrain::FftSource::both;
  double radius = fftattn::kDefaultRadius;
  std::uint64_t seed = 0;
  RoundLog final_round;
};

struct AblationGrid {
  std::vector<Arm> arms;
  std::vector<alselect::SelectorKind> selectors;
  std::vector<ssltrain::FftSource> fft_sources;
  std::vector<double> radii;
  std::vector<std::uint64_t> seeds;

  std::size_t size() const {
    return arms.size() * selectors.size() * fft_sources.size() * radii.size() * seeds.size();
  }
};

// Keys: arm, selector, fft_source, radius, seed (each a nonempty array).
// Missing keys fall back to the base config's single value.
inline AblationGrid grid_from_json(const json& j, const ExperimentConfig& base) {
  if (!j.is_object()) throw ConfigError("grid", "expected an object");
  static const std::vector<std::string> known = {"arm", "selector", "fft_source", "radius", "seed"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("grid." + key, "unknown grid key");
    if (!value.is_array() || value.empty()) throw ConfigError("grid." + key, "expected a nonempty array");
  }
  AblationGrid g;
  try {
    if (j.contains("arm")) {
      for (const auto& v : j["arm"]) g.arms.push_back(parse_arm(v.get<std::string>()));
    } else {
      g.arms = {base.arm};
    }
    if (j.contains("selector")) {
      for (const auto& v : j["selector"]) g.selectors.push_back(alselect::parse_selector(v.get<std::string>()));
    } else {
      g.selectors = {base.al.selector};
    }
    if (j.contains("fft_source")) {
      for (const auto& v : j["fft_source"]) g.fft_sources.push_back(parse_fft_source(v.get<std::string>()));
    } else {
      g.fft_sources = {base.ssl.fft_source};
    }
    if (j.contains("radius")) {
      for (const auto& v : j["radius"]) g.radii.push_back(v.get<double>());
    } else {
      g.radii = {base.ssl.radius};
    }
    if (j.contains("seed")) {
      for (const auto& v : j["seed"]) g.seeds.push_back(v.get<std::uint64_t>());
    } else {
      g.seeds = {base.seed};
    }
  } catch (const json::exception& e) {
    throw ConfigError("grid", e.what());
  } catch (const ConfigError& e) {
    throw ConfigError("grid." + e.field(), e.what());
  }
  return g;
}

inline ExperimentConfig cell_config(const ExperimentConfig& base, const AblationCell& cell) {
  ExperimentConfig c = base;
  c.arm = cell.arm;
  c.al.selector = cell.selector;
  c.ssl.fft_source = cell.fft_source;
  c.ssl.radius = cell.radius;
  c.seed = cell.seed;
  return c;
}

// One run per cell. Cells that differ only in the selector share the trained
// round-0 model, which is identical for all of them.
inline std::vector<AblationCell> run_ablation(const ExperimentConfig& base, const AblationGrid& grid,
                                              RunOptions opts = {}) {
  std::vector<AblationCell> cells;
  for (Arm arm : grid.arms)
    for (auto fs : grid.fft_sources)
      for (double r : grid.radii)
        for (auto seed : grid.seeds)
          for (auto sel : grid.selectors) cells.push_back({arm, sel, fs, r, seed, {}});

  std::map<std::uint64_t, synthvid::Dataset> datasets;
  std::optional<ALExperiment> prefix;
  std::string prefix_key;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    ExperimentConfig c = cell_config(base, cells[i]);
    if (!base.output_dir.empty()) {
      char name[128];
      std::snprintf(name, sizeof name, "%s_%s_%s_r%g_s%llu", arm_name(c.arm), alselect::selector_name(c.al.selector),
                    fft_source_name(c.ssl.fft_source), c.ssl.radius, static_cast<unsigned long long>(c.seed));
      c.output_dir = (std::filesystem::path(base.output_dir) / name).string();
    }
    validate(c);
    ExperimentConfig key_cfg = c;
    key_cfg.al.selector = alselect::SelectorKind::random;
    key_cfg.output_dir.clear();
    const std::string key = config_hash(key_cfg);
    if (!prefix || key != prefix_key) {
      const std::uint64_t data_seed = mix_seed(c.seed, c.data.seed);
      if (!c.data.dir.empty() || !datasets.count(data_seed)) datasets[data_seed] = load_or_generate(c);
      RunOptions quiet = opts;
      quiet.write_outputs = false;
      prefix.emplace(c, datasets[data_seed], quiet);
      prefix->run_round();
      prefix_key = key;
    }
    ALExperiment e = prefix->branch(c);
    while (!e.done()) e.run_round();
    if (opts.write_outputs && !c.output_dir.empty()) {
      emit_csvs(e.logs(), c.output_dir, c.al.R);
      write_text(std::filesystem::path(c.output_dir) / "rounds.json", logs_to_json(e.logs()).dump(1) + "\n");
    }
    cells[i].final_round = e.logs().back();
  }
  return cells;
}

inline std::string ablation_csv(const std::vector<AblationCell>& cells) {
  std::string out = "arm,selector,fft_source,radius,seed,round,pct_labeled,f_map50,v_map20,v_map50,mask_iou\n";
  char buf[512];
  for (const auto& c : cells) {
    const auto& r = c.final_round;
    std::snprintf(buf, sizeof buf, "%s,%s,%s,%g,%llu,%zu,%.6g,%.10g,%.10g,%.10g,%.10g\n", arm_name(c.arm),
                  alselect::selector_name(c.selector), fft_source_name(c.fft_source), c.radius,
                  static_cast<unsigned long long>(c.seed), r.round, r.pct_labeled, r.metrics.f_map50,
                  r.metrics.v_map20, r.metrics.v_map50, r.metrics.mask_iou);
    out += buf;
  }
  return out;
}

// Seed-averaged comparison: one row per (arm, selector, fft_source, radius).
inline std::string ablation_summary_csv(const std::vector<AblationCell>& cells) {
  struct Acc {
    std::size_t n = 0;
    double f50 = 0, v20 = 0, v50 = 0, miou = 0;
  };
  std::vector<std::string> order;
  std::map<std::string, Acc> acc;
  char key[256];
  for (const auto& c : cells) {
    std::snprintf(key, sizeof key, "%s,%s,%s,%g", arm_name(c.arm), alselect::selector_name(c.selector),
                  fft_source_name(c.fft_source), c.radius);
    if (!acc.count(key)) order.push_back(key);
    Acc& a = acc[key];
    ++a.n;
    a.f50 += c.final_round.metrics.f_map50;
    a.v20 += c.final_round.metrics.v_map20;
    a.v50 += c.final_round.metrics.v_map50;
    a.miou += c.final_round.metrics.mask_iou;
  }
  std::string out = "arm,selector,fft_source,radius,seeds,f_map50,v_map20,v_map50,mask_iou\n";
  char buf[512];
  for (const auto& k : order) {
    const Acc& a = acc[k];
    const double n = static_cast<double>(a.n);
    std::snprintf(buf, sizeof buf, "%s,%zu,%.10g,%.10g,%.10g,%.10g\n", k.c_str(), a.n, a.f50 / n, a.v20 / n,
                  a.v50 / n, a.miou / n);
    out += buf;
  }
  return out;
}

}  // namespace ssal::harness
