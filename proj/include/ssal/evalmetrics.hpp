#pragma once

// Frame IoU, tube IoU, all-point average precision, and the f-mAP / v-mAP
// report over a test split.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "ssal/box.hpp"
#include "ssal/detector.hpp"
#include "ssal/synthvid.hpp"

namespace ssal::evalmetrics {

using ndgrad::Tensor;

inline void require_wellformed(const Box& b) {
  if (b.empty() ? !(b == Box::none()) : (b.x0 < 0 || b.y0 < 0)) {
    throw std::invalid_argument("malformed box (" + std::to_string(b.x0) + "," + std::to_string(b.y0) + "," +
                                std::to_string(b.x1) + "," + std::to_string(b.y1) + ")");
  }
}

// Intersection over union of two inclusive pixel boxes; 0 if either is empty.
inline double frame_iou(const Box& a, const Box& b) {
  require_wellformed(a);
  require_wellformed(b);
  if (a.empty() || b.empty()) return 0.0;
  const long iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0) + 1;
  const long ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0) + 1;
  const long inter = iw > 0 && ih > 0 ? iw * ih : 0;
  return static_cast<double>(inter) / static_cast<double>(a.area() + b.area() - inter);
}

// Temporal IoU times mean spatial IoU over frames where both tubes exist.
// Empty boxes mark frames a tube does not cover.
inline double tube_iou(const std::vector<Box>& pred, const std::vector<Box>& gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("tube_iou: tubes have different lengths");
  std::size_t both = 0, either = 0;
  double iou_sum = 0.0;
  for (std::size_t f = 0; f < pred.size(); ++f) {
    const bool p = !pred[f].empty(), g = !gt[f].empty();
    if (p || g) ++either;
    if (p && g) {
      ++both;
      iou_sum += frame_iou(pred[f], gt[f]);
    }
  }
  if (both == 0) return 0.0;
  return static_cast<double>(both) / static_cast<double>(either) * (iou_sum / static_cast<double>(both));
}

struct ScoredDetection {
  double confidence = 0.0;
  double iou = 0.0;          // IoU with its candidate ground truth
  long gt_id = -1;           // candidate ground truth, -1 if none
  std::uint64_t key = 0;     // deterministic tie-break among equal confidences
};

struct APResult {
  int class_id = 0;
  std::vector<double> recall;
  std::vector<double> precision;
  double ap = 0.0;
  bool counted = true;  // false when the class has neither ground truth nor detections
};

// Greedy matching in descending confidence, all-point interpolated area under
// the precision/recall curve.
inline APResult average_precision(std::vector<ScoredDetection> dets, std::size_t gt_count, double tau,
                                  int class_id = 0) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("average_precision: tau must lie in (0,1)");
  APResult r;
  r.class_id = class_id;
  if (gt_count == 0) {
    r.counted = !dets.empty();
    return r;
  }
  std::sort(dets.begin(), dets.end(), [](const ScoredDetection& a, const ScoredDetection& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.key < b.key;
  });
  std::vector<long> matched;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const auto& d = dets[i];
    if (d.gt_id >= 0 && d.iou >= tau && std::find(matched.begin(), matched.end(), d.gt_id) == matched.end()) {
      matched.push_back(d.gt_id);
      ++tp;
    }
    r.recall.push_back(static_cast<double>(tp) / static_cast<double>(gt_count));
    r.precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  std::vector<double> envelope = r.precision;
  for (std::size_t i = envelope.size(); i-- > 1;) envelope[i - 1] = std::max(envelope[i - 1], envelope[i]);
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < envelope.size(); ++i) {
    r.ap += (r.recall[i] - prev_recall) * envelope[i];
    prev_recall = r.recall[i];
  }
  r.ap = std::clamp(r.ap, 0.0, 1.0);
  return r;
}

struct ClassMetrics {
  int class_id = 0;
  double f_ap50 = 0.0;
  double v_ap20 = 0.0;
  double v_ap50 = 0.0;
};

struct MetricsReport {
  double f_map50 = 0.0;
  double v_map20 = 0.0;
  double v_map50 = 0.0;
  double mask_iou = 0.0;
  std::vector<ClassMetrics> per_class;
};

struct EvalItem {
  std::uint32_t id = 0;
  const detector::DetOutput* output = nullptr;
  const synthvid::Annotation* truth = nullptr;
};

namespace detail {

inline double mean_counted(const std::vector<APResult>& rs) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : rs) {
    if (!r.counted) continue;
    sum += r.ap;
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

// Whole-clip IoU of thresholded maps against the masks; 1 when both are empty.
inline double mask_iou(const Tensor& det, const std::vector<std::uint8_t>& masks, double thresh) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const bool p = det[i] > thresh, g = masks[i] != 0;
    inter += p && g;
    uni += p || g;
  }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
}

}  // namespace detail

inline MetricsReport report(std::vector<EvalItem> items, int num_classes, double thresh = 0.5) {
  if (items.empty()) throw std::invalid_argument("report: empty test split");
  std::sort(items.begin(), items.end(), [](const EvalItem& a, const EvalItem& b) { return a.id < b.id; });
  const std::size_t K = static_cast<std::size_t>(num_classes);
  std::vector<std::vector<ScoredDetection>> frame_dets(K), tube_dets(K);
  std::vector<std::size_t> frame_gt(K, 0), video_gt(K, 0);
  double mask_total = 0.0;

  for (const auto& it : items) {
    const auto& truth = *it.truth;
    const std::size_t T = truth.boxes.size();
    const std::size_t gt_class = static_cast<std::size_t>(truth.class_id);
    for (const Box& b : truth.boxes) frame_gt[gt_class] += b.empty() ? 0 : 1;
    ++video_gt[gt_class];
    mask_total += detail::mask_iou(it.output->det_map, truth.masks, thresh);

    const auto dets = detector::detect_boxes(*it.output, thresh);
    std::vector<Box> tube(T, Box::none());
    double conf_sum = 0.0;
    for (const auto& d : dets) {
      const std::size_t f = static_cast<std::size_t>(d.frame);
      tube[f] = d.box;
      conf_sum += d.confidence;
      ScoredDetection sd;
      sd.confidence = d.confidence;
      sd.key = (static_cast<std::uint64_t>(it.id) << 16) | f;
      if (static_cast<std::size_t>(d.class_id) == gt_class && !truth.boxes[f].empty()) {
        sd.iou = frame_iou(d.box, truth.boxes[f]);
        sd.gt_id = static_cast<long>(sd.key);
      }
      frame_dets[static_cast<std::size_t>(d.class_id)].push_back(sd);
    }
    if (!dets.empty()) {
      ScoredDetection sd;
      sd.confidence = conf_sum / static_cast<double>(dets.size());
      sd.key = it.id;
      const int cls = dets.front().class_id;
      if (static_cast<std::size_t>(cls) == gt_class) {
        sd.iou = tube_iou(tube, truth.boxes);
        sd.gt_id = it.id;
      }
      tube_dets[static_cast<std::size_t>(cls)].push_back(sd);
    }
  }

  MetricsReport rep;
  std::vector<APResult> f50, v20, v50;
  for (std::size_t c = 0; c < K; ++c) {
    const int ci = static_cast<int>(c);
    f50.push_back(average_precision(frame_dets[c], frame_gt[c], 0.5, ci));
    v20.push_back(average_precision(tube_dets[c], video_gt[c], 0.2, ci));
    v50.push_back(average_precision(tube_dets[c], video_gt[c], 0.5, ci));
    rep.per_class.push_back({ci, f50.back().ap, v20.back().ap, v50.back().ap});
  }
  rep.f_map50 = detail::mean_counted(f50);
  rep.v_map20 = detail::mean_counted(v20);
  rep.v_map50 = detail::mean_counted(v50);
  rep.mask_iou = mask_total / static_cast<double>(items.size());
  return rep;
}

struct MetricsRow {
  std::size_t round = 0;
  double pct_labeled = 0.0;
  MetricsReport report;
};

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = "round,pct_labeled,f_map50,v_map20,v_map50,mask_iou\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.6g,%.10g,%.10g,%.10g,%.10g\n", r.round, r.pct_labeled,
                  r.report.f_map50, r.report.v_map20, r.report.v_map50, r.report.mask_iou);
    out += buf;
  }
  return out;
}

}  // namespace ssal::evalmetrics
