#include <gtest/gtest.h>

#include <numeric>

#include "ssal/detector.hpp"
#include "test_util.hpp"

namespace ssal {
namespace {

using namespace ssal::testing;
using namespace ssal::detector;

DetectorConfig small_detector() {
  DetectorConfig c;
  c.frames = 4;
  c.height = 8;
  c.width = 8;
  c.enc1 = 3;
  c.enc2 = 4;
  c.enc3 = 4;
  return c;
}

// Union-find labelling, independent of the flood fill under test.
std::vector<int> component_sizes(const std::vector<std::uint8_t>& m, int H, int W, std::vector<int>* root_of) {
  std::vector<int> parent(m.size());
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int a) { return parent[a] == a ? a : parent[a] = find(parent[a]); };
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int p = y * W + x;
      if (!m[p]) continue;
      if (x + 1 < W && m[p + 1]) parent[find(p)] = find(p + 1);
      if (y + 1 < H && m[p + W]) parent[find(p)] = find(p + W);
    }
  std::vector<int> size(m.size(), 0);
  root_of->assign(m.size(), -1);
  for (std::size_t p = 0; p < m.size(); ++p) {
    if (!m[p]) continue;
    (*root_of)[p] = find(int(p));
    ++size[(*root_of)[p]];
  }
  return size;
}

TEST(Forward, ZeroParametersGiveHalf) {
  const DetectorConfig c;
  Rng rng(1);
  const Tensor clip = random_tensor({8, 32, 32, 1}, rng, 0, 1);
  const DetOutput out = predict(zero_params(c), clip, c);
  EXPECT_EQ(out.det_map.shape(), (Shape{8, 32, 32}));
  EXPECT_EQ(out.class_scores.shape(), (Shape{6}));
  for (double v : out.det_map.data()) EXPECT_EQ(v, 0.5);
  for (double v : out.class_scores.data()) EXPECT_EQ(v, 0.5);
}

TEST(Forward, ShapesRangeAndSize) {
  const DetectorConfig c;
  const ParamStore p = init_params(c, 3);
  EXPECT_GT(p.parameter_count(), 15000u);
  EXPECT_LT(p.parameter_count(), 25000u);
  Rng rng(2);
  std::vector<Tensor> clips;
  for (int i = 0; i < 3; ++i) clips.push_back(random_tensor({8, 32, 32, 1}, rng, 0, 1));
  const auto batch = predict_batch(p, {&clips[0], &clips[1], &clips[2]}, c);
  ASSERT_EQ(batch.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    for (double v : batch[i].det_map.data()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
    const DetOutput one = predict(p, clips[i], c);
    EXPECT_EQ(one.det_map, batch[i].det_map);
    EXPECT_EQ(one.class_scores, batch[i].class_scores);
  }
}

TEST(Forward, DimensionMismatch) {
  const DetectorConfig c;
  const Tensor wrong({8, 16, 32, 1});
  EXPECT_THROW(predict(init_params(c, 1), wrong, c), DimensionError);
}

TEST(Forward, InitIsSeedDeterministic) {
  const DetectorConfig c;
  EXPECT_EQ(init_params(c, 9), init_params(c, 9));
  EXPECT_NE(init_params(c, 9), init_params(c, 10));
}

TEST(TemporalAverage, ConstantAndIdentity) {
  Rng rng(4);
  const Tensor frame = random_tensor({1, 5, 5}, rng);
  Tensor maps({6, 5, 5});
  for (std::size_t t = 0; t < 6; ++t) std::copy(frame.data().begin(), frame.data().end(), maps.raw() + t * 25);
  for (std::size_t i = 0; i < 6; ++i) {
    const Tensor avg = temporal_average(maps, i, 3);
    for (std::size_t p = 0; p < 25; ++p) EXPECT_NEAR(avg[p], frame[p], 1e-15);
  }
  const Tensor r = random_tensor({6, 5, 5}, rng);
  for (std::size_t i = 0; i < 6; ++i) {
    const Tensor avg = temporal_average(r, i, 1);
    for (std::size_t p = 0; p < 25; ++p) EXPECT_EQ(avg[p], r[i * 25 + p]);
  }
}

TEST(TemporalAverage, MatchesScalarOracle) {
  Rng rng(5);
  const Tensor maps = random_tensor({8, 6, 7}, rng, 0, 1);
  const std::size_t plane = 42;
  auto oracle = [&](std::vector<std::size_t> frames, std::size_t p) {
    double s = 0.0;
    for (auto f : frames) s += maps[f * plane + p];
    return s / double(frames.size());
  };
  const Tensor a0 = temporal_average(maps, 0, 3), a4 = temporal_average(maps, 4, 3), a7 = temporal_average(maps, 7, 5);
  for (std::size_t p = 0; p < plane; ++p) {
    EXPECT_NEAR(a0[p], oracle({0, 1}, p), 1e-12);
    EXPECT_NEAR(a4[p], oracle({3, 4, 5}, p), 1e-12);
    EXPECT_NEAR(a7[p], oracle({5, 6, 7}, p), 1e-12);
  }
  const Tensor all = temporal_average_all(maps, 3);
  for (std::size_t i = 0; i < 8; ++i) {
    const Tensor one = temporal_average(maps, i, 3);
    for (std::size_t p = 0; p < plane; ++p) EXPECT_EQ(all[i * plane + p], one[p]);
  }
}

TEST(TemporalAverage, LinearAndBounded) {
  Rng rng(6);
  const Tensor x = random_tensor({7, 4, 4}, rng), y = random_tensor({7, 4, 4}, rng);
  const double a = 0.7, b = -1.3;
  Tensor z(x.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = a * x[i] + b * y[i];
  for (std::size_t i = 0; i < 7; ++i) {
    const Tensor ax = temporal_average(x, i, 3), ay = temporal_average(y, i, 3), az = temporal_average(z, i, 3);
    const auto [lo, hi] = std::pair{i == 0 ? 0 : i - 1, std::min<std::size_t>(6, i + 1)};
    for (std::size_t p = 0; p < 16; ++p) {
      EXPECT_NEAR(az[p], a * ax[p] + b * ay[p], 1e-12);
      double mn = 1e9, mx = -1e9;
      for (std::size_t t = lo; t <= hi; ++t) {
        mn = std::min(mn, x[t * 16 + p]);
        mx = std::max(mx, x[t * 16 + p]);
      }
      EXPECT_GE(ax[p], mn - 1e-15);
      EXPECT_LE(ax[p], mx + 1e-15);
    }
  }
}

TEST(TemporalAverage, BadWindow) {
  const Tensor maps({4, 2, 2});
  EXPECT_THROW(temporal_average(maps, 0, 2), std::invalid_argument);
  EXPECT_THROW(temporal_average(maps, 0, 0), std::invalid_argument);
}

DetOutput single_frame(const std::vector<double>& frame, int H, int W, std::vector<double> scores) {
  const std::size_t k = scores.size();
  return {Tensor({1, std::size_t(H), std::size_t(W)}, frame), Tensor({k}, std::move(scores))};
}

TEST(DetectBoxes, BelowThresholdIsEmpty) {
  const auto dets = detect_boxes(single_frame(std::vector<double>(64, 0.3), 8, 8, {0.9, 0.1}));
  EXPECT_TRUE(dets.empty());
}

TEST(DetectBoxes, SolidBlock) {
  std::vector<double> f(64, 0.0);
  for (int y = 2; y <= 4; ++y)
    for (int x = 3; x <= 5; ++x) f[y * 8 + x] = 1.0;
  const auto dets = detect_boxes(single_frame(f, 8, 8, {0.0, 1.0, 0.0}));
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_EQ(dets[0].box, (Box{3, 2, 5, 4}));
  EXPECT_EQ(dets[0].confidence, 1.0);
  EXPECT_EQ(dets[0].class_id, 1);
}

TEST(DetectBoxes, LargestComponentMatchesUnionFind) {
  const int H = 10, W = 10;
  std::vector<double> f(H * W, 0.1);
  // Five pixels in an L, nine in a 3x3 block.
  for (int p : {11, 12, 13, 21, 31}) f[p] = 0.8;
  for (int y = 5; y < 8; ++y)
    for (int x = 5; x < 8; ++x) f[y * W + x] = 0.7;
  std::vector<std::uint8_t> bin(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) bin[i] = f[i] > 0.5;
  std::vector<int> root;
  const auto sizes = component_sizes(bin, H, W, &root);
  const int best = int(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  EXPECT_EQ(sizes[best], 9);
  std::vector<std::uint8_t> expect(bin.size());
  for (std::size_t i = 0; i < bin.size(); ++i) expect[i] = root[i] == best;
  EXPECT_EQ(largest_component(bin, H, W), expect);
  const auto dets = detect_boxes(single_frame(f, H, W, {1.0}));
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_EQ(dets[0].box, (Box{5, 5, 7, 7}));
}

TEST(DetectBoxes, RandomMasksAgreeWithUnionFind) {
  Rng rng(7);
  for (int c = 0; c < 50; ++c) {
    const int H = uniform_int(rng, 3, 12), W = uniform_int(rng, 3, 12);
    std::vector<std::uint8_t> bin(std::size_t(H * W));
    for (auto& b : bin) b = uniform(rng, 0, 1) < 0.45;
    std::vector<int> root;
    const auto sizes = component_sizes(bin, H, W, &root);
    const int best_size = *std::max_element(sizes.begin(), sizes.end());
    const auto got = largest_component(bin, H, W);
    const int n = std::accumulate(got.begin(), got.end(), 0);
    EXPECT_EQ(n, best_size) << "case " << c;
  }
}

TEST(DetectBoxes, InvariantUnderThresholdPreservingRescale) {
  Rng rng(8);
  const Tensor m = random_tensor({3, 8, 8}, rng, 0, 1);
  Tensor m2(m.shape());
  // Monotone map fixing 0.5: x -> 0.5 + sign * |x - 0.5|^0.5 * sqrt(0.5).
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double d = m[i] - 0.5;
    m2[i] = 0.5 + (d < 0 ? -1 : 1) * std::sqrt(std::abs(d) * 0.5);
  }
  const Tensor sc({2}, std::vector<double>{0.2, 0.7});
  const auto a = detect_boxes({m, sc}), b = detect_boxes({m2, sc});
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].box, b[i].box);
    EXPECT_EQ(a[i].frame, b[i].frame);
    EXPECT_EQ(a[i].class_id, b[i].class_id);
  }
}

TEST(SupervisedLoss, NearZeroForPerfectOutputs) {
  const DetectorConfig c = small_detector();
  Rng rng(9);
  synthvid::Annotation ann;
  ann.class_id = 2;
  ann.masks.resize(4 * 8 * 8);
  for (auto& m : ann.masks) m = uniform(rng, 0, 1) < 0.3;
  Tensor det({1, 4, 8, 8}), sc({1, 6}, 0.1);
  for (std::size_t i = 0; i < det.size(); ++i) det[i] = ann.masks[i] ? 1.0 - 1e-7 : 1e-7;
  sc[2] = 0.9;
  Tape tape;
  const auto loss = supervised_loss({tape.leaf(det), tape.leaf(sc)}, {&ann}, c);
  EXPECT_LE(loss.total.value().item(), 1e-5);
  EXPECT_GE(loss.total.value().item(), 0.0);
}

TEST(SupervisedLoss, IsSumOfParts) {
  const DetectorConfig c = small_detector();
  Rng rng(10);
  synthvid::Annotation ann;
  ann.class_id = 4;
  ann.masks.resize(4 * 8 * 8);
  for (auto& m : ann.masks) m = uniform(rng, 0, 1) < 0.3;
  const Tensor det = random_tensor({1, 4, 8, 8}, rng, 0.05, 0.95), sc = random_tensor({1, 6}, rng, 0.05, 0.95);
  Tape tape;
  const auto loss = supervised_loss({tape.leaf(det), tape.leaf(sc)}, {&ann}, c);
  Tensor masks({1, 4, 8, 8});
  for (std::size_t i = 0; i < masks.size(); ++i) masks[i] = ann.masks[i];
  const double bce = ndgrad::bce_loss(tape.leaf(det), masks).value().item();
  const double margin = ndgrad::margin_loss(tape.leaf(sc), one_hot({4}, 6)).value().item();
  EXPECT_DOUBLE_EQ(loss.total.value().item(), bce + margin);
  EXPECT_EQ(loss.l_det.value().item(), bce);
  EXPECT_EQ(loss.l_cls.value().item(), margin);
}

TEST(Overfit, FourVideosTwoHundredSteps) {
  synthvid::GenConfig g;
  g.n_train = 4;
  g.n_test = 0;
  const auto ds = synthvid::gen_dataset(g, 21);
  const DetectorConfig c = config_for(g.dims, synthvid::kNumClasses);
  std::vector<Tensor> clips;
  std::vector<const synthvid::Annotation*> anns;
  for (const auto& v : ds.videos) {
    clips.push_back(v.clip());
    anns.push_back(&v.annotation);
  }
  const Tensor batch = pack_clips({&clips[0], &clips[1], &clips[2], &clips[3]});
  ParamStore p = init_params(c, 5);
  ndgrad::Adam opt(p, {3e-3});
  double last = 0.0;
  for (int step = 0; step < 200; ++step) {
    Tape tape;
    auto vars = p.bind(tape);
    const auto loss = supervised_loss(forward(vars, tape.constant(batch), c), anns, c);
    last = loss.total.value().item();
    opt.step(p, ndgrad::backprop(tape, loss.total, p));
  }
  EXPECT_LT(last, 0.05);
}

}  // namespace
}  // namespace ssal
