#pragma once

// Tiny 3-D conv encoder/decoder: clip -> per-pixel foreground probability map
// plus clip-level class scores. Also the temporal averaging operator, box
// extraction from maps, and the supervised loss.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ssal/box.hpp"
#include "ssal/ndgrad.hpp"
#include "ssal/rng.hpp"
#include "ssal/synthvid.hpp"

namespace ssal::detector {

using ndgrad::ParamStore;
using ndgrad::Shape;
using ndgrad::Tape;
using ndgrad::Tensor;
using ndgrad::Var;

struct DetectorConfig {
  std::size_t frames = 8;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  std::size_t num_classes = 6;
  std::size_t enc1 = 8;   // channels after the first stride-2 stage
  std::size_t enc2 = 16;  // channels after the second stride-2 stage
  std::size_t enc3 = 32;  // classifier trunk, strided in time as well
  double head_bias = -2.0;

  friend bool operator==(const DetectorConfig&, const DetectorConfig&) = default;
};

inline DetectorConfig config_for(const synthvid::Dims& d, std::size_t num_classes) {
  DetectorConfig c;
  c.frames = d.T;
  c.height = d.H;
  c.width = d.W;
  c.channels = d.C;
  c.num_classes = num_classes;
  return c;
}

namespace detail {

struct LayerDef {
  const char* name;
  Shape kernel;  // [Co,Ci,KT,KH,KW] or [O,I] for the classifier
};

inline std::vector<LayerDef> layers(const DetectorConfig& c) {
  return {
      {"enc1", {c.enc1, c.channels, 3, 3, 3}},
      {"enc2", {c.enc2, c.enc1, 3, 3, 3}},
      {"enc3", {c.enc3, c.enc2, 3, 3, 3}},
      {"dec1", {c.enc1, c.enc2, 1, 3, 3}},
      {"head", {1, c.enc1 + c.channels, 1, 3, 3}},
      {"cls", {c.num_classes, c.enc3}},
  };
}

}  // namespace detail

// He-uniform weights from a seeded stream, zero biases (head bias biased
// towards background).
inline ParamStore init_params(const DetectorConfig& c, std::uint64_t seed) {
  ParamStore p(ndgrad::StoreRole::student);
  Rng rng(seed);
  for (const auto& layer : detail::layers(c)) {
    Tensor w(layer.kernel);
    const std::size_t fan_in = w.size() / layer.kernel[0];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : w.data()) v = uniform(rng, -bound, bound);
    p.add(std::string(layer.name) + ".w", std::move(w));
    Tensor b = Tensor::zeros({layer.kernel[0]});
    if (std::string(layer.name) == "head") b.fill(c.head_bias);
    p.add(std::string(layer.name) + ".b", std::move(b));
  }
  return p;
}

inline ParamStore zero_params(const DetectorConfig& c) {
  ParamStore p = init_params(c, 0);
  for (std::size_t i = 0; i < p.size(); ++i) p.at(i).fill(0.0);
  return p;
}

// Batched forward result: det_map [N,T,H,W], class_scores [N,K].
struct DetVars {
  Var det_map;
  Var class_scores;
};

// Single-clip inference output: det_map [T,H,W], class_scores [K].
struct DetOutput {
  Tensor det_map;
  Tensor class_scores;
};

// Packs clips [T,H,W,C] into a batch [N,C,T,H,W].
inline Tensor pack_clips(const std::vector<const Tensor*>& clips) {
  if (clips.empty()) throw DimensionError("pack_clips: empty batch");
  const Shape s = clips.front()->shape();
  if (s.size() != 4) throw DimensionError("pack_clips: clip must be [T,H,W,C], got " + ndgrad::to_string(s));
  const std::size_t T = s[0], H = s[1], W = s[2], C = s[3], plane = T * H * W;
  Tensor out({clips.size(), C, T, H, W});
  for (std::size_t n = 0; n < clips.size(); ++n) {
    if (clips[n]->shape() != s) {
      throw DimensionError("pack_clips: clip " + std::to_string(n) + " has shape " +
                           ndgrad::to_string(clips[n]->shape()));
    }
    const double* src = clips[n]->raw();
    double* dst = out.raw() + n * C * plane;
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t ch = 0; ch < C; ++ch) dst[ch * plane + p] = src[p * C + ch];
  }
  return out;
}

inline void check_input(const Shape& s, const DetectorConfig& c) {
  if (s.size() != 5 || s[1] != c.channels || s[2] != c.frames || s[3] != c.height || s[4] != c.width) {
    throw DimensionError("detector: input " + ndgrad::to_string(s) + " does not match configured [N," +
                         std::to_string(c.channels) + "," + std::to_string(c.frames) + "," +
                         std::to_string(c.height) + "," + std::to_string(c.width) + "]");
  }
  if (c.height % 4 != 0 || c.width % 4 != 0) {
    throw DimensionError("detector: H and W must be multiples of 4");
  }
}

// x: [N,C,T,H,W]. `vars` holds the bound parameters (see ParamStore::bind).
inline DetVars forward(const std::map<std::string, Var>& vars, Var x, const DetectorConfig& c) {
  using namespace ndgrad;
  check_input(x.shape(), c);
  auto conv = [&](Var in, const char* name, Conv3dSpec spec) {
    const std::string n(name);
    return add_channel_bias(conv3d(in, vars.at(n + ".w"), spec), vars.at(n + ".b"));
  };
  const Conv3dSpec down{{1, 2, 2}, {1, 1, 1}};
  const Conv3dSpec same_space{{1, 1, 1}, {0, 1, 1}};

  Var e1 = relu(conv(x, "enc1", down));   // [N,enc1,T,H/2,W/2]
  Var e2 = relu(conv(e1, "enc2", down));  // [N,enc2,T,H/4,W/4]

  Var e3 = relu(conv(e2, "enc3", {{2, 2, 2}, {1, 1, 1}}));  // [N,enc3,T/2,H/8,W/8]
  Var pooled = global_avg_pool(e3);
  Var scores = sigmoid(linear(pooled, vars.at("cls.w"), vars.at("cls.b")));

  // Decoder: refine at quarter resolution, merge the half-resolution skip by
  // addition, then a full-resolution head that also sees the raw clip.
  Var d1 = relu(add(upsample_nearest(conv(e2, "dec1", same_space), {1, 2, 2}), e1));
  Var logits = conv(concat_channels(upsample_nearest(d1, {1, 2, 2}), x), "head", same_space);
  const Shape& ls = logits.shape();
  Var det = reshape(sigmoid(logits), {ls[0], ls[2], ls[3], ls[4]});
  return {det, scores};
}

// Inference on a batch of clips; one output per clip.
inline std::vector<DetOutput> predict_batch(const ParamStore& params, const std::vector<const Tensor*>& clips,
                                            const DetectorConfig& c) {
  Tape tape;
  auto vars = params.bind(tape, false);
  DetVars out = forward(vars, tape.constant(pack_clips(clips)), c);
  const Tensor& det = out.det_map.value();
  const Tensor& sc = out.class_scores.value();
  const std::size_t plane = c.frames * c.height * c.width;
  std::vector<DetOutput> res;
  res.reserve(clips.size());
  for (std::size_t n = 0; n < clips.size(); ++n) {
    DetOutput o;
    o.det_map = Tensor({c.frames, c.height, c.width},
                       std::vector<double>(det.raw() + n * plane, det.raw() + (n + 1) * plane));
    o.class_scores = Tensor({c.num_classes}, std::vector<double>(sc.raw() + n * c.num_classes,
                                                                 sc.raw() + (n + 1) * c.num_classes));
    res.push_back(std::move(o));
  }
  return res;
}

inline DetOutput predict(const ParamStore& params, const Tensor& clip, const DetectorConfig& c) {
  return std::move(predict_batch(params, {&clip}, c).front());
}

// ---------------------------------------------------------------------------
// Temporal average over a window of t_win frames centred on each frame,
// truncated at the clip ends.

inline void check_window(std::size_t t_win) {
  if (t_win < 1 || t_win % 2 == 0) {
    throw std::invalid_argument("temporal_average: window must be odd and >= 1, got " + std::to_string(t_win));
  }
}

inline std::pair<std::size_t, std::size_t> window_bounds(std::size_t i, std::size_t T, std::size_t t_win) {
  const std::size_t half = t_win / 2;
  return {i >= half ? i - half : 0, std::min(T, i + half + 1)};
}

// maps: [T,H,W]; returns the [H,W] average around frame i.
inline Tensor temporal_average(const Tensor& maps, std::size_t i, std::size_t t_win) {
  check_window(t_win);
  if (maps.rank() != 3) throw DimensionError("temporal_average: expected [T,H,W], got " + ndgrad::to_string(maps.shape()));
  const std::size_t T = maps.dim(0), HW = maps.dim(1) * maps.dim(2);
  if (t_win > T) throw std::invalid_argument("temporal_average: window longer than the clip");
  if (i >= T) throw std::out_of_range("temporal_average: frame index out of range");
  const auto [lo, hi] = window_bounds(i, T, t_win);
  Tensor out = Tensor::zeros({maps.dim(1), maps.dim(2)});
  for (std::size_t j = lo; j < hi; ++j)
    for (std::size_t p = 0; p < HW; ++p) out[p] += maps[j * HW + p];
  const double inv = 1.0 / static_cast<double>(hi - lo);
  for (double& v : out.data()) v *= inv;
  return out;
}

// Every frame at once: [...,T,H,W] -> same shape.
inline Tensor temporal_average_all(const Tensor& maps, std::size_t t_win) {
  check_window(t_win);
  if (maps.rank() < 3) throw DimensionError("temporal_average: expected [...,T,H,W]");
  const std::size_t r = maps.rank();
  const std::size_t T = maps.dim(r - 3), HW = maps.dim(r - 2) * maps.dim(r - 1);
  if (t_win > T) throw std::invalid_argument("temporal_average: window longer than the clip");
  const std::size_t clips = maps.size() / (T * HW);
  Tensor out = Tensor::zeros(maps.shape());
  for (std::size_t n = 0; n < clips; ++n)
    for (std::size_t i = 0; i < T; ++i) {
      const auto [lo, hi] = window_bounds(i, T, t_win);
      const double inv = 1.0 / static_cast<double>(hi - lo);
      double* o = out.raw() + (n * T + i) * HW;
      for (std::size_t j = lo; j < hi; ++j) {
        const double* src = maps.raw() + (n * T + j) * HW;
        for (std::size_t p = 0; p < HW; ++p) o[p] += src[p];
      }
      for (std::size_t p = 0; p < HW; ++p) o[p] *= inv;
    }
  return out;
}

// Differentiable version for use inside the consistency losses.
inline Var temporal_average(Var maps, std::size_t t_win) {
  Tensor out = temporal_average_all(maps.value(), t_win);
  const std::size_t r = maps.value().rank();
  const std::size_t T = maps.value().dim(r - 3);
  const std::size_t HW = maps.value().dim(r - 2) * maps.value().dim(r - 1);
  return maps.tape->record("temporal_average", std::move(out), {maps},
                           [T, HW, t_win](Tape& t, std::size_t self) {
                             const Tensor& g = t.grad(self);
                             Tensor& gi = t.grad_sink(t.input(self, 0));
                             const std::size_t clips = g.size() / (T * HW);
                             for (std::size_t n = 0; n < clips; ++n)
                               for (std::size_t i = 0; i < T; ++i) {
                                 const auto [lo, hi] = window_bounds(i, T, t_win);
                                 const double inv = 1.0 / static_cast<double>(hi - lo);
                                 const double* go = g.raw() + (n * T + i) * HW;
                                 for (std::size_t j = lo; j < hi; ++j) {
                                   double* dst = gi.raw() + (n * T + j) * HW;
                                   for (std::size_t p = 0; p < HW; ++p) dst[p] += inv * go[p];
                                 }
                               }
                           });
}

// ---------------------------------------------------------------------------
// Map -> box extraction.

struct FrameDetection {
  int frame = 0;
  Box box;
  double confidence = 0.0;
  int class_id = 0;
};

// Largest 4-connected component of a binary H x W mask (first in raster
// order on ties). Returns the component's pixel mask.
inline std::vector<std::uint8_t> largest_component(const std::vector<std::uint8_t>& mask, int H, int W) {
  std::vector<int> label(mask.size(), 0);
  std::vector<int> stack;
  int best_label = 0;
  std::size_t best_size = 0;
  int next = 0;
  for (int start = 0; start < H * W; ++start) {
    if (!mask[static_cast<std::size_t>(start)] || label[static_cast<std::size_t>(start)]) continue;
    ++next;
    std::size_t size = 0;
    stack.assign(1, start);
    label[static_cast<std::size_t>(start)] = next;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      ++size;
      const int y = p / W, x = p % W;
      const int nbr[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
      for (const auto& q : nbr) {
        if (q[0] < 0 || q[1] < 0 || q[0] >= W || q[1] >= H) continue;
        const std::size_t qi = static_cast<std::size_t>(q[1]) * W + q[0];
        if (mask[qi] && !label[qi]) {
          label[qi] = next;
          stack.push_back(static_cast<int>(qi));
        }
      }
    }
    if (size > best_size) {
      best_size = size;
      best_label = next;
    }
  }
  std::vector<std::uint8_t> out(mask.size(), 0);
  if (best_label == 0) return out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = label[i] == best_label ? 1 : 0;
  return out;
}

// One detection per frame whose binarized map is nonempty.
inline std::vector<FrameDetection> detect_boxes(const DetOutput& out, double thresh = 0.5) {
  const Tensor& m = out.det_map;
  if (m.rank() != 3) throw DimensionError("detect_boxes: det_map must be [T,H,W]");
  const int T = static_cast<int>(m.dim(0)), H = static_cast<int>(m.dim(1)), W = static_cast<int>(m.dim(2));
  const auto& sc = out.class_scores.values();
  const auto best = std::max_element(sc.begin(), sc.end());
  const double class_score = best == sc.end() ? 0.0 : *best;
  const int class_id = best == sc.end() ? 0 : static_cast<int>(best - sc.begin());
  std::vector<FrameDetection> dets;
  std::vector<std::uint8_t> bin(static_cast<std::size_t>(H) * W);
  for (int t = 0; t < T; ++t) {
    const double* f = m.raw() + static_cast<std::size_t>(t) * H * W;
    bool any = false;
    for (std::size_t p = 0; p < bin.size(); ++p) {
      bin[p] = f[p] > thresh ? 1 : 0;
      any = any || bin[p];
    }
    if (!any) continue;
    const Box box = tight_box(largest_component(bin, H, W), H, W);
    double total = 0.0;
    for (int y = box.y0; y <= box.y1; ++y)
      for (int x = box.x0; x <= box.x1; ++x) total += f[static_cast<std::size_t>(y) * W + x];
    dets.push_back({t, box, total / static_cast<double>(box.area()) * class_score, class_id});
  }
  return dets;
}

// ---------------------------------------------------------------------------
// Supervised loss.

struct LossParts {
  Var total;
  Var l_cls;
  Var l_det;
};

// Stacks annotation masks into a [N,T,H,W] target.
inline Tensor mask_targets(const std::vector<const synthvid::Annotation*>& anns, const DetectorConfig& c) {
  const std::size_t plane = c.frames * c.height * c.width;
  Tensor out({anns.size(), c.frames, c.height, c.width});
  for (std::size_t n = 0; n < anns.size(); ++n) {
    if (anns[n]->masks.size() != plane) throw DimensionError("mask_targets: annotation size mismatch");
    std::copy(anns[n]->masks.begin(), anns[n]->masks.end(), out.raw() + n * plane);
  }
  return out;
}

inline Tensor one_hot(const std::vector<int>& class_ids, std::size_t num_classes) {
  Tensor out({class_ids.size(), num_classes});
  for (std::size_t n = 0; n < class_ids.size(); ++n) {
    if (class_ids[n] < 0 || static_cast<std::size_t>(class_ids[n]) >= num_classes) {
      throw std::invalid_argument("one_hot: class id out of range");
    }
    out[n * num_classes + static_cast<std::size_t>(class_ids[n])] = 1.0;
  }
  return out;
}

// L_det (BCE against the masks) + L_cls (margin loss), batch-averaged.
inline LossParts supervised_loss(const DetVars& out, const Tensor& masks, const Tensor& labels) {
  using namespace ndgrad;
  Var l_det = bce_loss(out.det_map, masks);
  Var l_cls = margin_loss(out.class_scores, labels);
  return {add(l_cls, l_det), l_cls, l_det};
}

inline LossParts supervised_loss(const DetVars& out, const std::vector<const synthvid::Annotation*>& anns,
                                 const DetectorConfig& c) {
  std::vector<int> ids;
  for (const auto* a : anns) ids.push_back(a->class_id);
  return supervised_loss(out, mask_targets(anns, c), one_hot(ids, c.num_classes));
}

}  // namespace ssal::detector
