#pragma once

// Active-learning selection: noise variants of a clip, per-variant
// uncertainty over temporally averaged detection maps, variance across
// variants as the informativeness score, and top-K / baseline selectors.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "ssal/detector.hpp"
#include "ssal/errors.hpp"
#include "ssal/ndgrad.hpp"
#include "ssal/rng.hpp"
#include "ssal/ssltrain.hpp"

namespace ssal::alselect {

using detector::DetectorConfig;
using ndgrad::ParamStore;
using ndgrad::Tensor;

enum class NoiseMode { multiplicative, additive };
enum class SelectorKind { random, entropy, noiseaug, strongweak };

inline const char* selector_name(SelectorKind k) {
  switch (k) {
    case SelectorKind::random: return "random";
    case SelectorKind::entropy: return "entropy";
    case SelectorKind::noiseaug: return "noiseaug";
    case SelectorKind::strongweak: return "strongweak";
  }
  return "?";
}

inline SelectorKind parse_selector(const std::string& s) {
  if (s == "random") return SelectorKind::random;
  if (s == "entropy") return SelectorKind::entropy;
  if (s == "noiseaug") return SelectorKind::noiseaug;
  if (s == "strongweak") return SelectorKind::strongweak;
  throw ConfigError("selector", "unknown selector '" + s + "'");
}

struct NoiseVariantSet {
  std::uint32_t sample_id = 0;
  std::vector<Tensor> variants;
  std::vector<std::uint64_t> seeds;
};

// R noisy copies of a clip. Multiplicative: clip * N(0,1) per element, no
// clamping. Additive: clamp(clip + sigma * N(0,1), 0, 1).
inline NoiseVariantSet noise_variants(const Tensor& clip, std::size_t R, std::uint64_t seed,
                                      NoiseMode mode = NoiseMode::multiplicative, double sigma = 0.1,
                                      std::uint32_t sample_id = 0) {
  if (R < 2) throw std::invalid_argument("noise_variants: need R >= 2, got " + std::to_string(R));
  NoiseVariantSet set;
  set.sample_id = sample_id;
  for (std::size_t i = 0; i < R; ++i) {
    const std::uint64_t s = mix_seed(seed, i);
    Rng rng(s);
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor v(clip.shape());
    for (std::size_t j = 0; j < clip.size(); ++j) {
      const double n = normal(rng);
      v[j] = mode == NoiseMode::multiplicative ? clip[j] * n : std::clamp(clip[j] + sigma * n, 0.0, 1.0);
    }
    set.variants.push_back(std::move(v));
    set.seeds.push_back(s);
  }
  return set;
}

// U = sum over frames and pixels of -log(clamp(Avg, eps, 1)) on a [T,H,W] map.
inline double uncertainty_from_map(const Tensor& det_map, std::size_t t_win) {
  const Tensor avg = detector::temporal_average_all(det_map, t_win);
  double u = 0.0;
  for (double v : avg.values()) u -= std::log(std::clamp(v, ndgrad::kProbEps, 1.0));
  return u;
}

// Sum of binary entropies of the temporally averaged map.
inline double entropy_from_map(const Tensor& det_map, std::size_t t_win) {
  const Tensor avg = detector::temporal_average_all(det_map, t_win);
  double h = 0.0;
  for (double v : avg.values()) {
    const double p = std::clamp(v, ndgrad::kProbEps, 1.0 - ndgrad::kProbEps);
    h -= p * std::log(p) + (1.0 - p) * std::log(1.0 - p);
  }
  return h;
}

inline double sample_uncertainty(const ParamStore& params, const Tensor& variant, const DetectorConfig& dc,
                                 std::size_t t_win = 3) {
  return uncertainty_from_map(detector::predict(params, variant, dc).det_map, t_win);
}

// Population variance (two-pass).
inline double informativeness(const std::vector<double>& u) {
  if (u.size() < 2) throw std::invalid_argument("informativeness: need at least 2 values");
  const double mean = std::accumulate(u.begin(), u.end(), 0.0) / static_cast<double>(u.size());
  double ss = 0.0;
  for (double v : u) ss += (v - mean) * (v - mean);
  return ss / static_cast<double>(u.size());
}

struct ALScore {
  std::uint32_t id = 0;
  std::vector<double> uncertainties;
  double score = 0.0;

  friend bool operator==(const ALScore&, const ALScore&) = default;
};

// Descending score, ascending id on ties.
inline std::vector<std::uint32_t> select_topk(std::vector<ALScore> scores, std::size_t K) {
  if (K > scores.size()) {
    throw PoolError("select_topk: K=" + std::to_string(K) + " exceeds pool size " + std::to_string(scores.size()));
  }
  std::sort(scores.begin(), scores.end(), [](const ALScore& a, const ALScore& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  std::vector<std::uint32_t> ids;
  for (std::size_t i = 0; i < K; ++i) ids.push_back(scores[i].id);
  return ids;
}

struct SelectConfig {
  SelectorKind kind = SelectorKind::noiseaug;
  std::size_t R = 8;
  std::size_t t_win = 3;
  NoiseMode noise_mode = NoiseMode::multiplicative;
  double additive_sigma = 0.1;
  ssltrain::AugConfig aug;
};

struct PoolItem {
  std::uint32_t id;
  const Tensor* clip;
};

// Scores one sample with a frozen snapshot. The random selector gets a
// seeded uniform draw as its score.
inline ALScore score_sample(const ParamStore& params, const PoolItem& item, const DetectorConfig& dc,
                            const SelectConfig& cfg, std::uint64_t seed) {
  ALScore s;
  s.id = item.id;
  const std::uint64_t sample_seed = mix_seed(seed, item.id);
  switch (cfg.kind) {
    case SelectorKind::random: {
      Rng rng(sample_seed);
      s.score = uniform(rng, 0.0, 1.0);
      return s;
    }
    case SelectorKind::entropy:
      s.score = entropy_from_map(detector::predict(params, *item.clip, dc).det_map, cfg.t_win);
      return s;
    case SelectorKind::noiseaug:
    case SelectorKind::strongweak: {
      std::vector<Tensor> views;
      if (cfg.kind == SelectorKind::noiseaug) {
        views = noise_variants(*item.clip, cfg.R, sample_seed, cfg.noise_mode, cfg.additive_sigma, item.id).variants;
      } else {
        if (cfg.R < 2) throw std::invalid_argument("strongweak: need R >= 2");
        for (std::size_t i = 0; i < cfg.R; ++i) {
          views.push_back(ssltrain::make_aug_pair(*item.clip, mix_seed(sample_seed, i), cfg.aug).strong);
        }
      }
      std::vector<const Tensor*> ptrs;
      for (const auto& v : views) ptrs.push_back(&v);
      for (const auto& out : detector::predict_batch(params, ptrs, dc)) {
        s.uncertainties.push_back(uncertainty_from_map(out.det_map, cfg.t_win));
      }
      s.score = informativeness(s.uncertainties);
      return s;
    }
  }
  throw std::logic_error("score_sample: unknown selector");
}

struct Selection {
  std::vector<std::uint32_t> ids;  // in selection order
  std::vector<ALScore> scores;     // ascending id
};

inline Selection select(const ParamStore& params, std::vector<PoolItem> pool, std::size_t K,
                        const DetectorConfig& dc, const SelectConfig& cfg, std::uint64_t seed) {
  if (K > pool.size()) {
    throw PoolError("select: K=" + std::to_string(K) + " exceeds pool size " + std::to_string(pool.size()));
  }
  std::sort(pool.begin(), pool.end(), [](const PoolItem& a, const PoolItem& b) { return a.id < b.id; });
  Selection sel;
  for (const auto& item : pool) sel.scores.push_back(score_sample(params, item, dc, cfg, seed));
  sel.ids = select_topk(sel.scores, K);
  return sel;
}

// Audit CSV: round,sample_id,u_1..u_R,score,selected. Baselines leave the
// u columns empty.
inline std::string score_csv(const std::vector<std::pair<std::size_t, Selection>>& rounds, std::size_t R) {
  std::string out = "round,sample_id";
  for (std::size_t i = 1; i <= R; ++i) out += ",u_" + std::to_string(i);
  out += ",score,selected\n";
  char buf[64];
  for (const auto& [round, sel] : rounds) {
    std::vector<std::uint32_t> chosen = sel.ids;
    std::sort(chosen.begin(), chosen.end());
    for (const auto& s : sel.scores) {
      out += std::to_string(round) + "," + std::to_string(s.id);
      for (std::size_t i = 0; i < R; ++i) {
        out += ",";
        if (i < s.uncertainties.size()) {
          std::snprintf(buf, sizeof buf, "%.10g", s.uncertainties[i]);
          out += buf;
        }
      }
      std::snprintf(buf, sizeof buf, ",%.10g,%d\n", s.score,
                    std::binary_search(chosen.begin(), chosen.end(), s.id) ? 1 : 0);
      out += buf;
    }
  }
  return out;
}

}  // namespace ssal::alselect
