#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "ssal/synthvid.hpp"

namespace ssal {
namespace {

using namespace ssal::synthvid;
namespace fs = std::filesystem;

GenConfig small_config(int n_train = 24, int n_test = 6) {
  GenConfig c;
  c.n_train = n_train;
  c.n_test = n_test;
  return c;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ssal_synthvid_" + name);
  fs::remove_all(p);
  return p;
}

TEST(GenDataset, DeterministicUnderSeed) {
  const auto a = gen_dataset(small_config(), 11);
  const auto b = gen_dataset(small_config(), 11);
  const auto c = gen_dataset(small_config(), 12);
  EXPECT_EQ(a.videos, b.videos);
  EXPECT_NE(a.videos, c.videos);
}

TEST(GenDataset, ClassBalanceCountsExactly) {
  GenConfig cfg;
  cfg.n_test = 0;
  const auto ds = gen_dataset(cfg, 3);
  std::map<int, int> counts;
  for (const auto& v : ds.videos) ++counts[v.annotation.class_id];
  ASSERT_EQ(counts.size(), 6u);
  for (const auto& [k, n] : counts) EXPECT_EQ(n, 40) << "class " << k;
}

TEST(GenDataset, PixelsMasksAndBoxesAreConsistent) {
  const auto ds = gen_dataset(small_config(30, 0), 4);
  for (const auto& v : ds.videos) {
    const Dims& d = v.dims;
    ASSERT_EQ(v.frames.size(), d.clip_values());
    for (float f : v.frames) {
      ASSERT_GE(f, 0.0f);
      ASSERT_LE(f, 1.0f);
    }
    int nonempty = 0;
    for (std::uint32_t t = 0; t < d.T; ++t) {
      const std::span<const std::uint8_t> m(v.annotation.masks.data() + t * d.frame_pixels(), d.frame_pixels());
      // Recompute the tight box by brute force.
      Box ref{int(d.W), int(d.H), -1, -1};
      bool any = false;
      for (std::uint32_t y = 0; y < d.H; ++y)
        for (std::uint32_t x = 0; x < d.W; ++x) {
          const auto bit = m[y * d.W + x];
          ASSERT_LE(bit, 1);
          if (!bit) continue;
          any = true;
          ref = {std::min(ref.x0, int(x)), std::min(ref.y0, int(y)), std::max(ref.x1, int(x)), std::max(ref.y1, int(y))};
        }
      EXPECT_EQ(v.annotation.boxes[t], any ? ref : Box::none());
      nonempty += any;
    }
    EXPECT_GE(nonempty, int(0.8 * d.T));
  }
}

TEST(GenDataset, ForegroundEqualsMaskWithoutClutter) {
  GenConfig cfg = small_config(6, 0);
  cfg.max_distractors = 0;
  cfg.texture = false;
  cfg.force_class = 0;  // square
  const auto ds = gen_dataset(cfg, 5);
  for (const auto& v : ds.videos) {
    for (std::size_t p = 0; p < v.annotation.masks.size(); ++p) {
      const bool fg = v.frames[p] >= cfg.actor_min_intensity;
      EXPECT_EQ(fg, v.annotation.masks[p] == 1) << "video " << v.id << " pixel " << p;
      if (!fg) {
        EXPECT_LE(v.frames[p], cfg.background_max);
      }
    }
  }
}

TEST(GenDataset, ImpossibleActorFails) {
  GenConfig cfg = small_config(1, 0);
  cfg.min_size = cfg.max_size = 40;
  EXPECT_THROW(gen_dataset(cfg, 1), std::runtime_error);
}

TEST(Render, ZigzagMotionRule) {
  GenConfig cfg;
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const Pose p = sample_pose(cfg, 1, rng);
    ASSERT_EQ(class_motion(1), MotionKind::zigzag);
    for (int t = 0; t + 1 < int(cfg.dims.T); ++t) {
      const auto a = actor_offset(p, MotionKind::zigzag, t), b = actor_offset(p, MotionKind::zigzag, t + 1);
      if (p.vx > 0) EXPECT_GT(b[0], a[0]);
      else EXPECT_LT(b[0], a[0]);
      const long dy = b[1] - a[1];
      if ((t / 2) % 2 == 0) EXPECT_GT(dy, 0) << "t=" << t;
      else EXPECT_LT(dy, 0) << "t=" << t;
    }
  }
}

TEST(Render, RigidTranslationKeepsMaskSize) {
  GenConfig cfg;
  Rng rng(22);
  for (int cls = 0; cls < kNumClasses; ++cls) {
    const Pose p = sample_pose(cfg, cls, rng);
    const auto r = render_video(cfg, cls, p, 99);
    std::set<long> counts;
    for (std::uint32_t t = 0; t < cfg.dims.T; ++t) {
      long n = 0;
      for (std::size_t i = 0; i < cfg.dims.frame_pixels(); ++i) n += r.masks[t * cfg.dims.frame_pixels() + i];
      counts.insert(n);
    }
    EXPECT_EQ(counts.size(), 1u) << "class " << cls;
  }
}

TEST(Render, BoxCentersFollowPoseVelocity) {
  const GenConfig cfg = small_config(36, 0);
  const std::uint64_t seed = 8;
  const auto ds = gen_dataset(cfg, seed);
  for (const auto& v : ds.videos) {
    // Re-derive the pose from the per-video stream.
    Rng rng(mix_seed(seed, v.id));
    const Pose p = sample_pose(cfg, v.annotation.class_id, rng);
    const auto& boxes = v.annotation.boxes;
    for (std::uint32_t t = 1; t < cfg.dims.T; ++t) {
      double ey = p.vy * t;
      if (class_motion(v.annotation.class_id) == MotionKind::zigzag) {
        ey = 0.0;
        for (std::uint32_t s = 0; s < t; ++s) ey += ((s / 2) % 2 == 0 ? 1.0 : -1.0) * p.zigzag_amplitude;
      }
      EXPECT_NEAR(boxes[t].center_x() - boxes[0].center_x(), p.vx * t, 1.0) << "video " << v.id;
      EXPECT_NEAR(boxes[t].center_y() - boxes[0].center_y(), ey, 1.0) << "video " << v.id;
    }
  }
}

TEST(Render, InvalidClassRejected) {
  EXPECT_THROW(render_video(GenConfig{}, 6, Pose{}, 1), std::invalid_argument);
  EXPECT_THROW(render_video(GenConfig{}, -1, Pose{}, 1), std::invalid_argument);
}

TEST(DatasetIO, RoundTripIsBitwise) {
  const auto ds = gen_dataset(small_config(8, 4), 13);
  const auto dir = scratch_dir("roundtrip");
  write_dataset(ds, dir);
  const auto back = read_dataset(dir);
  EXPECT_EQ(back.videos, ds.videos);
  EXPECT_EQ(manifest_to_json(back.manifest), manifest_to_json(ds.manifest));
  fs::remove_all(dir);
}

TEST(DatasetIO, SvbLayout) {
  const auto ds = gen_dataset(small_config(1, 0), 14);
  const std::string b = encode_svb(ds.videos[0]);
  const Dims d = ds.videos[0].dims;
  EXPECT_EQ(b.substr(0, 4), "SSAL");
  EXPECT_EQ(b.size(), 4 + 2 + 5 * 4 + 4 * d.clip_values() + d.mask_values());
}

TEST(DatasetIO, CorruptMagic) {
  const auto ds = gen_dataset(small_config(2, 0), 15);
  const auto dir = scratch_dir("magic");
  write_dataset(ds, dir);
  {
    std::fstream f(dir / "videos" / "1.svb", std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  EXPECT_THROW(read_dataset(dir), MagicMismatchError);
  fs::remove_all(dir);
}

TEST(DatasetIO, TruncatedFile) {
  const auto ds = gen_dataset(small_config(2, 0), 16);
  const auto dir = scratch_dir("trunc");
  write_dataset(ds, dir);
  const auto path = dir / "videos" / "0.svb";
  fs::resize_file(path, fs::file_size(path) - 10);
  EXPECT_THROW(read_dataset(dir), TruncatedError);
  fs::remove_all(dir);
}

TEST(DatasetIO, DimensionMismatch) {
  auto ds = gen_dataset(small_config(2, 0), 17);
  const auto dir = scratch_dir("dims");
  write_dataset(ds, dir);
  auto j = manifest_to_json(ds.manifest);
  j["dims"]["H"] = 16;
  std::ofstream(dir / "manifest.json") << j.dump();
  EXPECT_THROW(read_dataset(dir), FormatError);
  fs::remove_all(dir);
}

TEST(DatasetIO, WrongManifestCountNamesField) {
  const auto ds = gen_dataset(small_config(3, 1), 18);
  const auto dir = scratch_dir("count");
  write_dataset(ds, dir);
  auto j = manifest_to_json(ds.manifest);
  j["splits"]["train"] = 5;
  std::ofstream(dir / "manifest.json") << j.dump();
  try {
    read_dataset(dir);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.field(), "splits");
  }
  j = manifest_to_json(ds.manifest);
  j.erase("K");
  std::ofstream(dir / "manifest.json") << j.dump();
  try {
    read_dataset(dir);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.field(), "K");
  }
  fs::remove_all(dir);
}

TEST(Oracle, PoolBookkeeping) {
  auto ds = gen_dataset(small_config(10, 3), 19);
  AnnotationOracle oracle(ds);
  const std::size_t pool = oracle.labeled().size() + oracle.unlabeled().size();
  EXPECT_EQ(oracle.test().size(), 3u);
  for (std::uint32_t id : {2u, 5u, 7u}) EXPECT_EQ(oracle.annotate(id), ds.videos[id].annotation);
  EXPECT_EQ(oracle.labeled(), (std::vector<std::uint32_t>{2, 5, 7}));
  EXPECT_EQ(oracle.labeled().size() + oracle.unlabeled().size(), pool);
  EXPECT_THROW(oracle.annotate(5), PoolError);
  EXPECT_THROW(oracle.annotate(11), PoolError);
  EXPECT_THROW(oracle.annotate(99), PoolError);
  for (auto id : oracle.labeled()) {
    const auto u = oracle.unlabeled();
    EXPECT_EQ(std::count(u.begin(), u.end(), id), 0);
  }
}

}  // namespace
}  // namespace ssal
