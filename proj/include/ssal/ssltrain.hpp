#pragma once

// Mean-teacher training: paired weak/strong augmentation, EMA teacher,
// thresholded pseudo-labels, plain and high-pass-weighted consistency, and the
// epoch loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "ssal/detector.hpp"
#include "ssal/fftattn.hpp"
#include "ssal/ndgrad.hpp"
#include "ssal/rng.hpp"
#include "ssal/synthvid.hpp"

namespace ssal::ssltrain {

using detector::DetectorConfig;
using ndgrad::ParamStore;
using ndgrad::Tape;
using ndgrad::Tensor;
using ndgrad::Var;

// ---------------------------------------------------------------------------
// Augmentation

enum class Strength { weak, strong };

struct AugSpec {
  bool hflip = false;
  int dx = 0;
  int dy = 0;
  double gain = 1.0;
  double bias = 0.0;
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;
  Strength strength = Strength::weak;
};

struct AugConfig {
  bool hflip = true;
  int max_shift = 2;
  double gain_min = 0.8;
  double gain_max = 1.2;
  double bias_min = -0.1;
  double bias_max = 0.1;
  double noise_max = 0.1;
  bool enabled = true;
};

// Flip then shift of every frame of a [T,H,W,C] clip; vacated pixels are 0.
inline Tensor apply_geometric(const Tensor& clip, bool hflip, int dx, int dy) {
  if (clip.rank() != 4) throw DimensionError("apply_geometric: expected [T,H,W,C]");
  const int T = static_cast<int>(clip.dim(0)), H = static_cast<int>(clip.dim(1));
  const int W = static_cast<int>(clip.dim(2)), C = static_cast<int>(clip.dim(3));
  Tensor out = Tensor::zeros(clip.shape());
  for (int t = 0; t < T; ++t)
    for (int y = 0; y < H; ++y) {
      const int sy = y - dy;
      if (sy < 0 || sy >= H) continue;
      for (int x = 0; x < W; ++x) {
        int sx = x - dx;
        if (sx < 0 || sx >= W) continue;
        if (hflip) sx = W - 1 - sx;
        const double* src = clip.raw() + ((static_cast<std::size_t>(t) * H + sy) * W + sx) * C;
        double* dst = out.raw() + ((static_cast<std::size_t>(t) * H + y) * W + x) * C;
        std::copy(src, src + C, dst);
      }
    }
  return out;
}

// Same transform on [T,H,W] binary masks.
inline std::vector<std::uint8_t> apply_geometric(const std::vector<std::uint8_t>& masks, const synthvid::Dims& d,
                                                 bool hflip, int dx, int dy) {
  const int T = static_cast<int>(d.T), H = static_cast<int>(d.H), W = static_cast<int>(d.W);
  std::vector<std::uint8_t> out(masks.size(), 0);
  for (int t = 0; t < T; ++t)
    for (int y = 0; y < H; ++y) {
      const int sy = y - dy;
      if (sy < 0 || sy >= H) continue;
      for (int x = 0; x < W; ++x) {
        int sx = x - dx;
        if (sx < 0 || sx >= W) continue;
        if (hflip) sx = W - 1 - sx;
        out[(static_cast<std::size_t>(t) * H + y) * W + x] = masks[(static_cast<std::size_t>(t) * H + sy) * W + sx];
      }
    }
  return out;
}

inline Tensor apply_photometric(const Tensor& clip, const AugSpec& s) {
  Tensor out(clip.shape());
  Rng rng(s.noise_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < clip.size(); ++i) {
    double v = s.gain * clip[i] + s.bias;
    if (s.noise_sigma > 0.0) v += s.noise_sigma * normal(rng);
    out[i] = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

inline Tensor apply_aug(const Tensor& clip, const AugSpec& s) {
  const bool identity = !s.hflip && s.dx == 0 && s.dy == 0;
  Tensor geo = identity ? clip : apply_geometric(clip, s.hflip, s.dx, s.dy);
  if (s.strength == Strength::weak) return geo;
  return apply_photometric(geo, s);
}

struct AugPair {
  Tensor weak;
  Tensor strong;
  AugSpec weak_spec;
  AugSpec strong_spec;
};

// Shares the geometric draw across the pair; photometric terms only on strong.
inline std::pair<AugSpec, AugSpec> sample_aug_specs(std::uint64_t seed, const AugConfig& cfg = {}) {
  AugSpec weak;
  if (cfg.enabled) {
    Rng rng(seed);
    weak.hflip = cfg.hflip && uniform(rng, 0.0, 1.0) < 0.5;
    weak.dx = uniform_int(rng, -cfg.max_shift, cfg.max_shift);
    weak.dy = uniform_int(rng, -cfg.max_shift, cfg.max_shift);
    AugSpec strong = weak;
    strong.strength = Strength::strong;
    strong.gain = uniform(rng, cfg.gain_min, cfg.gain_max);
    strong.bias = uniform(rng, cfg.bias_min, cfg.bias_max);
    strong.noise_sigma = uniform(rng, 0.0, cfg.noise_max);
    strong.noise_seed = mix_seed(seed, 0x5EED);
    return {weak, strong};
  }
  AugSpec strong = weak;
  strong.strength = Strength::strong;
  return {weak, strong};
}

inline AugPair make_aug_pair(const Tensor& clip, std::uint64_t seed, const AugConfig& cfg = {}) {
  auto [ws, ss] = sample_aug_specs(seed, cfg);
  AugPair p;
  p.weak = apply_aug(clip, ws);
  p.strong = apply_aug(clip, ss);
  p.weak_spec = ws;
  p.strong_spec = ss;
  return p;
}

inline synthvid::Annotation transform_annotation(const synthvid::Annotation& ann, const synthvid::Dims& d,
                                                 const AugSpec& s) {
  synthvid::Annotation out;
  out.class_id = ann.class_id;
  out.masks = apply_geometric(ann.masks, d, s.hflip, s.dx, s.dy);
  out.boxes = synthvid::boxes_from_masks(out.masks, d);
  return out;
}

// ---------------------------------------------------------------------------
// Teacher update and losses

inline void ema_update(ParamStore& teacher, const ParamStore& student, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("ema_update: rate must lie in [0,1]");
  teacher.require_aligned(student, "ema_update");
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    Tensor& t = teacher.at(i);
    const Tensor& s = student.at(i);
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = alpha * t[j] + (1.0 - alpha) * s[j];
  }
}

// Mean squared difference over all frames and pixels.
inline Var consistency_plain(Var student, const Tensor& teacher) {
  return ndgrad::weighted_sq_error(student, teacher, Tensor::ones(teacher.shape()));
}

inline double consistency_plain(const Tensor& a, const Tensor& b) {
  ndgrad::require_same_shape(a, b, "consistency_plain");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += (a[i] - b[i]) * (a[i] - b[i]);
  return total / static_cast<double>(a.size());
}

// Weighted squared difference of one [H,W] frame pair.
inline double frame_consistency(const Tensor& f_s, const Tensor& f_t, const Tensor& w) {
  ndgrad::require_same_shape(f_s, f_t, "frame_consistency");
  ndgrad::require_same_shape(f_s, w, "frame_consistency weights");
  double total = 0.0;
  for (std::size_t i = 0; i < f_s.size(); ++i) total += (f_s[i] - f_t[i]) * (f_s[i] - f_t[i]) * w[i];
  return total / static_cast<double>(f_s.size());
}

enum class FftSource { student, teacher, mean, both };
enum class ConsistencyKind { none, plain, hpf };

struct SSLConfig {
  double lambda1 = 0.5;
  double lambda2 = 0.5;
  double lambda_start = 0.01;
  double lambda_end = 0.1;
  double warmup_fraction = 0.25;
  double ema_rate = 0.996;
  bool ema_warmup = true;  // rate min(ema_rate, 1 - 1/(step+1)) so the teacher tracks early training
  FftSource fft_source = FftSource::both;
  bool temporal_consistency = true;
  double radius = fftattn::kDefaultRadius;
  double pseudo_margin = 0.2;
  std::size_t t_win = 3;
  // Arm wiring.
  bool use_unlabeled = true;
  bool pseudo_labels = true;
  bool ema_teacher = true;  // false: teacher is the detached current student
  ConsistencyKind consistency = ConsistencyKind::hpf;

  void validate() const {
    if (lambda1 < 0.0) throw ConfigError("lambda1", "must be >= 0");
    if (lambda2 < 0.0) throw ConfigError("lambda2", "must be >= 0");
    if (!(ema_rate >= 0.0 && ema_rate <= 1.0)) throw ConfigError("ema_rate", "must lie in [0,1]");
    if (!(pseudo_margin >= 0.0 && pseudo_margin < 0.5)) throw ConfigError("pseudo_margin", "must lie in [0,0.5)");
    if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) {
      throw ConfigError("warmup_fraction", "must lie in [0,1]");
    }
    if (lambda_start < 0.0 || lambda_end < 0.0) throw ConfigError("lambda_start", "ramp values must be >= 0");
    if (!(radius >= 0.0)) throw ConfigError("radius", "must be >= 0");
    if (t_win < 1 || t_win % 2 == 0) throw ConfigError("t_win", "must be odd and >= 1");
  }
};

// Maps entering the high-pass pipeline: temporal averages when enabled.
struct HpfInputs {
  Var student;
  Tensor teacher;
};

inline HpfInputs hpf_inputs(Var student, const Tensor& teacher, const SSLConfig& cfg) {
  ndgrad::require_same_shape(student.value(), teacher, "hpf_consistency");
  if (!cfg.temporal_consistency) return {student, teacher};
  return {detector::temporal_average(student, cfg.t_win), detector::temporal_average_all(teacher, cfg.t_win)};
}

// Weighted consistency over [...,T,H,W] maps. Weight masks are treated as
// constants; the teacher side is never differentiated.
inline Var hpf_consistency(Var student, const Tensor& teacher, const SSLConfig& cfg) {
  const HpfInputs in = hpf_inputs(student, teacher, cfg);
  const Tensor w_s = fftattn::hpf_weight_maps(in.student.value(), cfg.radius);
  const Tensor w_t = fftattn::hpf_weight_maps(in.teacher, cfg.radius);
  switch (cfg.fft_source) {
    case FftSource::both: {
      Var a = ndgrad::scale(ndgrad::weighted_sq_error(in.student, in.teacher, w_s), cfg.lambda1);
      Var b = ndgrad::scale(ndgrad::weighted_sq_error(in.student, in.teacher, w_t), cfg.lambda2);
      return ndgrad::add(a, b);
    }
    case FftSource::student:
      return ndgrad::weighted_sq_error(in.student, in.teacher, w_s);
    case FftSource::teacher:
      return ndgrad::weighted_sq_error(in.student, in.teacher, w_t);
    case FftSource::mean:
      return ndgrad::weighted_sq_error(in.student, in.teacher,
                                       fftattn::combine_filters(w_s, w_t, fftattn::FilterSource::mean));
  }
  throw std::logic_error("hpf_consistency: unknown filter source");
}

inline double hpf_consistency(const Tensor& student, const Tensor& teacher, const SSLConfig& cfg) {
  Tape tape;
  return hpf_consistency(tape.constant(student), teacher, cfg).value().item();
}

struct PseudoLabels {
  Tensor target;  // 1 where the teacher map exceeds 0.5
  Tensor valid;   // 0 inside the (0.5-delta, 0.5+delta) band
};

inline PseudoLabels pseudo_label(const Tensor& teacher_map, double delta) {
  if (!(delta >= 0.0 && delta < 0.5)) throw std::invalid_argument("pseudo_label: margin must lie in [0,0.5)");
  PseudoLabels p{Tensor(teacher_map.shape()), Tensor(teacher_map.shape())};
  for (std::size_t i = 0; i < teacher_map.size(); ++i) {
    const double v = teacher_map[i];
    p.target[i] = v > 0.5 ? 1.0 : 0.0;
    p.valid[i] = (v > 0.5 - delta && v < 0.5 + delta) ? 0.0 : 1.0;
  }
  return p;
}

// BCE over valid pixels, averaged within each [H,W] frame and then over all
// frames; a frame without valid pixels contributes 0.
inline Var pseudo_label_loss(Var pred, const PseudoLabels& pl) {
  const Tensor& p = pred.value();
  ndgrad::require_same_shape(p, pl.target, "pseudo_label_loss");
  if (p.rank() < 2) throw DimensionError("pseudo_label_loss: expected [...,H,W]");
  const std::size_t plane = p.dim(p.rank() - 2) * p.dim(p.rank() - 1);
  const std::size_t frames = p.size() / plane;
  std::vector<double> inv(frames, 0.0);
  double total = 0.0;
  for (std::size_t f = 0; f < frames; ++f) {
    double sum = 0.0, count = 0.0;
    for (std::size_t i = f * plane; i < (f + 1) * plane; ++i) {
      if (pl.valid[i] == 0.0) continue;
      sum += ndgrad::detail::bce_term(p[i], pl.target[i]);
      count += 1.0;
    }
    if (count > 0.0) {
      inv[f] = 1.0 / count;
      total += sum * inv[f];
    }
  }
  const double inv_frames = 1.0 / static_cast<double>(frames);
  return pred.tape->record("pseudo_label_loss", Tensor::scalar(total * inv_frames), {pred},
                           [pl, inv = std::move(inv), plane, inv_frames](Tape& t, std::size_t self) {
                             const double g = t.grad(self)[0] * inv_frames;
                             const std::size_t in = t.input(self, 0);
                             const Tensor& pv = t.value(in);
                             Tensor& gi = t.grad_sink(in);
                             for (std::size_t i = 0; i < pv.size(); ++i) {
                               if (pl.valid[i] == 0.0) continue;
                               gi[i] += g * inv[i / plane] * ndgrad::detail::bce_grad(pv[i], pl.target[i]);
                             }
                           });
}

// EMA rate after `step` optimizer steps (1-based).
inline double effective_ema_rate(const SSLConfig& cfg, std::uint64_t step) {
  if (!cfg.ema_warmup) return cfg.ema_rate;
  return std::min(cfg.ema_rate, 1.0 - 1.0 / static_cast<double>(step + 1));
}

// Linear ramp from lambda_start to lambda_end over the first warmup_fraction
// of the epochs, then constant.
inline double lambda_unsup(std::size_t epoch, std::size_t total_epochs, const SSLConfig& cfg) {
  const double warm = cfg.warmup_fraction * static_cast<double>(total_epochs);
  const double e = static_cast<double>(epoch);
  if (warm <= 0.0 || e >= warm) return cfg.lambda_end;
  return cfg.lambda_start + (cfg.lambda_end - cfg.lambda_start) * e / warm;
}

// ---------------------------------------------------------------------------
// Epoch loop

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 8;       // split evenly between labeled and unlabeled
  std::size_t steps_per_epoch = 0;  // 0: one pass over labeled + unlabeled videos
  ndgrad::AdamConfig adam;
  AugConfig aug;
};

struct LabeledItem {
  const Tensor* clip;
  const synthvid::Annotation* annotation;
};

struct Pools {
  std::vector<LabeledItem> labeled;
  std::vector<const Tensor*> unlabeled;
};

struct LossRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double l_cls = 0.0;
  double l_det = 0.0;
  double l_pseudo = 0.0;
  double l_cons = 0.0;
  double lambda_unsup = 0.0;

  friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

struct TrainState {
  ParamStore student;
  ParamStore teacher;
  ndgrad::Adam adam;
  std::uint64_t seed = 0;

  TrainState(ParamStore init, const ndgrad::AdamConfig& adam_cfg, std::uint64_t seed_)
      : student(init), teacher(std::move(init)), adam(student, adam_cfg), seed(seed_) {
    teacher.set_role(ndgrad::StoreRole::teacher);
  }
};

inline std::size_t steps_per_epoch(const Pools& pools, const TrainConfig& cfg) {
  if (cfg.steps_per_epoch > 0) return cfg.steps_per_epoch;
  const std::size_t seen = pools.labeled.size() + pools.unlabeled.size();
  return std::max<std::size_t>(1, (seen + cfg.batch_size - 1) / cfg.batch_size);
}

namespace detail {

// `count` indices drawn as consecutive shuffled passes over [0, n).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> out;
  if (n == 0) return out;
  Rng rng(seed);
  std::vector<std::size_t> pass(n);
  while (out.size() < count) {
    std::iota(pass.begin(), pass.end(), std::size_t{0});
    std::shuffle(pass.begin(), pass.end(), rng);
    out.insert(out.end(), pass.begin(), pass.end());
  }
  out.resize(count);
  return out;
}

}  // namespace detail

// One epoch. Per step: supervised loss on strong labeled views; pseudo-label
// BCE plus ramped consistency on unlabeled views (student strong, teacher
// weak); Adam on the student; EMA into the teacher.
inline std::vector<LossRecord> train_epoch(TrainState& st, const Pools& pools, const DetectorConfig& dc,
                                           const TrainConfig& tc, const SSLConfig& ssl, std::size_t epoch) {
  if (pools.labeled.empty()) throw std::invalid_argument("train_epoch: labeled pool is empty");
  const std::size_t half = std::max<std::size_t>(1, tc.batch_size / 2);
  const std::size_t steps = steps_per_epoch(pools, tc);
  const bool unsup = ssl.use_unlabeled && !pools.unlabeled.empty();
  const double lam = unsup ? lambda_unsup(epoch, tc.epochs, ssl) : 0.0;
  const auto lab_order = detail::epoch_order(pools.labeled.size(), steps * half, mix_seed(st.seed, epoch, 1));
  const auto unl_order =
      unsup ? detail::epoch_order(pools.unlabeled.size(), steps * half, mix_seed(st.seed, epoch, 2))
            : std::vector<std::size_t>{};
  const synthvid::Dims dims{static_cast<std::uint32_t>(dc.frames), static_cast<std::uint32_t>(dc.height),
                            static_cast<std::uint32_t>(dc.width), static_cast<std::uint32_t>(dc.channels)};

  std::vector<LossRecord> log;
  log.reserve(steps);
  for (std::size_t step = 0; step < steps; ++step) {
    const std::uint64_t step_seed = mix_seed(st.seed, epoch, 1000 + step);
    LossRecord rec{epoch, step, 0, 0, 0, 0, lam};

    // Labeled half.
    std::vector<Tensor> lab_views;
    std::vector<synthvid::Annotation> lab_anns;
    for (std::size_t k = 0; k < half; ++k) {
      const LabeledItem& item = pools.labeled[lab_order[step * half + k]];
      const auto [ws, ss] = sample_aug_specs(mix_seed(step_seed, k), tc.aug);
      lab_views.push_back(apply_aug(*item.clip, ss));
      lab_anns.push_back(transform_annotation(*item.annotation, dims, ss));
    }
    std::vector<const Tensor*> lab_ptrs;
    std::vector<const synthvid::Annotation*> ann_ptrs;
    for (std::size_t k = 0; k < half; ++k) {
      lab_ptrs.push_back(&lab_views[k]);
      ann_ptrs.push_back(&lab_anns[k]);
    }

    Tape tape;
    auto vars = st.student.bind(tape);
    const auto lab_out = detector::forward(vars, tape.constant(detector::pack_clips(lab_ptrs)), dc);
    const auto sup = detector::supervised_loss(lab_out, ann_ptrs, dc);
    Var total = sup.total;
    rec.l_cls = sup.l_cls.value().item();
    rec.l_det = sup.l_det.value().item();

    // Unlabeled half.
    if (unsup) {
      std::vector<Tensor> weak, strong;
      for (std::size_t k = 0; k < half; ++k) {
        const Tensor& clip = *pools.unlabeled[unl_order[step * half + k]];
        const auto [ws, ss] = sample_aug_specs(mix_seed(step_seed, half + k), tc.aug);
        weak.push_back(apply_aug(clip, ws));
        strong.push_back(apply_aug(clip, ss));
      }
      std::vector<const Tensor*> weak_ptrs, strong_ptrs;
      for (std::size_t k = 0; k < half; ++k) {
        weak_ptrs.push_back(&weak[k]);
        strong_ptrs.push_back(&strong[k]);
      }
      const ParamStore& teacher = ssl.ema_teacher ? st.teacher : st.student;
      Tape teacher_tape;
      auto tvars = teacher.bind(teacher_tape, false);
      const Tensor t_map =
          detector::forward(tvars, teacher_tape.constant(detector::pack_clips(weak_ptrs)), dc).det_map.value();

      const auto unl_out = detector::forward(vars, tape.constant(detector::pack_clips(strong_ptrs)), dc);
      if (ssl.pseudo_labels) {
        Var lp = pseudo_label_loss(unl_out.det_map, pseudo_label(t_map, ssl.pseudo_margin));
        rec.l_pseudo = lp.value().item();
        total = ndgrad::add(total, lp);
      }
      if (ssl.consistency != ConsistencyKind::none) {
        Var lc = ssl.consistency == ConsistencyKind::plain ? consistency_plain(unl_out.det_map, t_map)
                                                           : hpf_consistency(unl_out.det_map, t_map, ssl);
        rec.l_cons = lc.value().item();
        total = ndgrad::add(total, ndgrad::scale(lc, lam));
      }
    }

    const ParamStore grads = ndgrad::backprop(tape, total, st.student);
    st.adam.step(st.student, grads);
    if (ssl.ema_teacher) ema_update(st.teacher, st.student, effective_ema_rate(ssl, st.adam.steps()));
    log.push_back(rec);
  }
  if (!ssl.ema_teacher) st.teacher = st.student;
  return log;
}

inline std::vector<LossRecord> train(TrainState& st, const Pools& pools, const DetectorConfig& dc,
                                     const TrainConfig& tc, const SSLConfig& ssl) {
  ssl.validate();
  std::vector<LossRecord> log;
  for (std::size_t e = 0; e < tc.epochs; ++e) {
    auto ep = train_epoch(st, pools, dc, tc, ssl, e);
    log.insert(log.end(), ep.begin(), ep.end());
  }
  return log;
}

inline std::string loss_csv(const std::vector<LossRecord>& log) {
  std::string out = "epoch,step,l_cls,l_det,l_pseudo,l_cons,lambda_unsup\n";
  char buf[256];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.10g,%.10g,%.10g,%.10g,%.10g\n", r.epoch, r.step, r.l_cls, r.l_det,
                  r.l_pseudo, r.l_cons, r.lambda_unsup);
    out += buf;
  }
  return out;
}

}  // namespace ssal::ssltrain
