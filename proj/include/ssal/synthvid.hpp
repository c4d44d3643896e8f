#pragma once

// Synthetic action-detection videos: one moving actor (shape x motion class)
// over a textured background with static distractors, plus exact per-frame
// masks, and the on-disk dataset format.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssal/box.hpp"
#include "ssal/errors.hpp"
#include "ssal/ndgrad/tensor.hpp"
#include "ssal/rng.hpp"

namespace ssal::synthvid {

enum class ShapeKind { square, circle, triangle };
enum class MotionKind { linear, zigzag };
enum class Pool : std::uint8_t { labeled, unlabeled, test };

inline constexpr std::array<ShapeKind, 3> kShapes{ShapeKind::square, ShapeKind::circle, ShapeKind::triangle};
inline constexpr std::array<MotionKind, 2> kMotions{MotionKind::linear, MotionKind::zigzag};
inline constexpr int kNumClasses = static_cast<int>(kShapes.size() * kMotions.size());
inline constexpr std::uint16_t kFormatVersion = 1;

inline const char* shape_name(ShapeKind s) {
  switch (s) {
    case ShapeKind::square: return "square";
    case ShapeKind::circle: return "circle";
    case ShapeKind::triangle: return "triangle";
  }
  return "?";
}

inline const char* motion_name(MotionKind m) { return m == MotionKind::linear ? "linear" : "zigzag"; }

inline ShapeKind class_shape(int class_id) { return kShapes.at(static_cast<std::size_t>(class_id) / kMotions.size()); }
inline MotionKind class_motion(int class_id) { return kMotions.at(static_cast<std::size_t>(class_id) % kMotions.size()); }

inline std::vector<std::string> class_names() {
  std::vector<std::string> names;
  for (ShapeKind s : kShapes)
    for (MotionKind m : kMotions) names.push_back(std::string(shape_name(s)) + "-" + motion_name(m));
  return names;
}

struct Dims {
  std::uint32_t T = 8;
  std::uint32_t H = 32;
  std::uint32_t W = 32;
  std::uint32_t C = 1;

  std::size_t frame_pixels() const { return std::size_t{H} * W; }
  std::size_t clip_values() const { return std::size_t{T} * H * W * C; }
  std::size_t mask_values() const { return std::size_t{T} * H * W; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

struct GenConfig {
  Dims dims;
  int n_train = 240;
  int n_test = 60;
  int min_size = 6;
  int max_size = 12;
  int max_distractors = 3;
  bool texture = true;
  double texture_amplitude = 0.08;
  double noise_sigma = 0.02;
  double min_speed = 1.0;
  double max_speed = 2.0;
  double zigzag_min_amplitude = 1.5;
  double zigzag_max_amplitude = 2.5;
  double actor_min_intensity = 0.7;
  double actor_max_intensity = 1.0;
  double distractor_min_intensity = 0.45;
  double distractor_max_intensity = 0.85;
  double background_max = 0.4;
  // Forces the actor class for every video when >= 0 (fixtures only).
  int force_class = -1;
};

// Starting pose of the actor: stencil box top-left at frame 0, per-frame
// velocity, and the zigzag step amplitude (unused for linear motion).
struct Pose {
  int size = 8;
  double x = 0.0;
  double y = 0.0;
  double vx = 1.0;
  double vy = 0.0;
  double zigzag_amplitude = 0.0;
  double intensity = 0.85;
};

struct Annotation {
  int class_id = 0;
  std::vector<std::uint8_t> masks;  // [T,H,W], 0/1
  std::vector<Box> boxes;           // one per frame, recomputed from masks

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct VideoSample {
  std::uint32_t id = 0;
  Dims dims;
  std::vector<float> frames;  // [T,H,W,C], values in [0,1]
  Annotation annotation;
  Pool pool = Pool::unlabeled;

  // Frames as a double tensor of shape [T,H,W,C].
  ndgrad::Tensor clip() const {
    std::vector<double> v(frames.begin(), frames.end());
    return ndgrad::Tensor({dims.T, dims.H, dims.W, dims.C}, std::move(v));
  }

  friend bool operator==(const VideoSample&, const VideoSample&) = default;
};

struct DatasetManifest {
  int version = kFormatVersion;
  Dims dims;
  int num_classes = kNumClasses;
  std::vector<std::string> class_names = synthvid::class_names();
  int n_train = 0;
  int n_test = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<VideoSample> videos;  // indexed by id; train ids first, then test

  bool is_test(std::uint32_t id) const { return id >= static_cast<std::uint32_t>(manifest.n_train); }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// ---------------------------------------------------------------------------
// Rendering

// Pixel stencil of a shape inside its size x size box (row-major, 0/1).
inline std::vector<std::uint8_t> shape_stencil(ShapeKind kind, int size) {
  std::vector<std::uint8_t> st(static_cast<std::size_t>(size) * size, 0);
  const double half = 0.5 * size;
  for (int v = 0; v < size; ++v)
    for (int u = 0; u < size; ++u) {
      const double cx = u + 0.5 - half, cy = v + 0.5 - half;
      bool in = false;
      switch (kind) {
        case ShapeKind::square: in = true; break;
        case ShapeKind::circle: in = cx * cx + cy * cy <= half * half; break;
        case ShapeKind::triangle: in = std::abs(cx) <= 0.5 * (v + 0.5); break;
      }
      st[static_cast<std::size_t>(v) * size + u] = in ? 1 : 0;
    }
  return st;
}

// Integer top-left of the actor's box on frame t.
inline std::array<long, 2> actor_offset(const Pose& pose, MotionKind motion, int t) {
  double y = pose.y;
  if (motion == MotionKind::zigzag) {
    for (int s = 0; s < t; ++s) y += ((s / 2) % 2 == 0 ? 1.0 : -1.0) * pose.zigzag_amplitude;
  } else {
    y += pose.vy * t;
  }
  return {std::lround(pose.x + pose.vx * t), std::lround(y)};
}

inline bool pose_fits(const Pose& pose, MotionKind motion, const Dims& dims) {
  for (int t = 0; t < static_cast<int>(dims.T); ++t) {
    const auto [x, y] = actor_offset(pose, motion, t);
    if (x < 0 || y < 0 || x + pose.size > static_cast<long>(dims.W) ||
        y + pose.size > static_cast<long>(dims.H)) {
      return false;
    }
  }
  return true;
}

// Draws a pose whose whole trajectory stays inside the frame.
inline Pose sample_pose(const GenConfig& cfg, int class_id, Rng& rng) {
  const MotionKind motion = class_motion(class_id);
  for (int attempt = 0; attempt <= 100; ++attempt) {
    Pose p;
    p.size = uniform_int(rng, cfg.min_size, cfg.max_size);
    p.intensity = uniform(rng, cfg.actor_min_intensity, cfg.actor_max_intensity);
    const double speed = uniform(rng, cfg.min_speed, cfg.max_speed);
    if (motion == MotionKind::linear) {
      const double angle = uniform(rng, 0.0, 2.0 * M_PI);
      p.vx = speed * std::cos(angle);
      p.vy = speed * std::sin(angle);
    } else {
      p.vx = uniform(rng, 0.0, 1.0) < 0.5 ? -speed : speed;
      p.vy = 0.0;
      p.zigzag_amplitude = uniform(rng, cfg.zigzag_min_amplitude, cfg.zigzag_max_amplitude);
    }
    const double span_x = static_cast<double>(cfg.dims.W) - p.size;
    const double span_y = static_cast<double>(cfg.dims.H) - p.size;
    if (span_x < 0 || span_y < 0) continue;
    p.x = uniform(rng, 0.0, span_x);
    p.y = uniform(rng, 0.0, span_y);
    if (pose_fits(p, motion, cfg.dims)) return p;
  }
  throw std::runtime_error("synthvid: actor does not fit in the frame after 100 retries");
}

struct Rendered {
  std::vector<float> frames;        // [T,H,W,C]
  std::vector<std::uint8_t> masks;  // [T,H,W]
};

// Renders one clip. `seed` drives the background, noise, and distractors.
inline Rendered render_video(const GenConfig& cfg, int class_id, const Pose& pose, std::uint64_t seed) {
  if (class_id < 0 || class_id >= kNumClasses) {
    throw std::invalid_argument("render_video: invalid class id " + std::to_string(class_id));
  }
  const Dims& d = cfg.dims;
  const int H = static_cast<int>(d.H), W = static_cast<int>(d.W);
  Rng rng(seed);

  // Static background: base level plus a few low-amplitude sinusoids.
  std::vector<double> background(d.frame_pixels());
  const double base = uniform(rng, 0.1, 0.2);
  std::array<std::array<double, 3>, 3> waves{};
  for (auto& w : waves) w = {uniform(rng, 0.2, 1.2), uniform(rng, 0.2, 1.2), uniform(rng, 0.0, 2.0 * M_PI)};
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double v = base;
      if (cfg.texture) {
        double s = 0.0;
        for (const auto& w : waves) s += std::sin(w[0] * x + w[1] * y + w[2]);
        v += cfg.texture_amplitude * s / 3.0;
      }
      background[static_cast<std::size_t>(y) * W + x] = std::clamp(v, 0.0, cfg.background_max);
    }

  // Static distractors.
  std::vector<double> static_layer(d.frame_pixels(), -1.0);
  const int n_distractors = cfg.max_distractors > 0 ? uniform_int(rng, 0, cfg.max_distractors) : 0;
  for (int k = 0; k < n_distractors; ++k) {
    const ShapeKind kind = kShapes[static_cast<std::size_t>(uniform_int(rng, 0, 2))];
    const int size = uniform_int(rng, cfg.min_size, cfg.max_size);
    const int x0 = uniform_int(rng, 0, std::max(0, W - size));
    const int y0 = uniform_int(rng, 0, std::max(0, H - size));
    const double level = uniform(rng, cfg.distractor_min_intensity, cfg.distractor_max_intensity);
    const auto st = shape_stencil(kind, size);
    for (int v = 0; v < size; ++v)
      for (int u = 0; u < size; ++u) {
        const int x = x0 + u, y = y0 + v;
        if (x >= W || y >= H || !st[static_cast<std::size_t>(v) * size + u]) continue;
        static_layer[static_cast<std::size_t>(y) * W + x] = level;
      }
  }

  const MotionKind motion = class_motion(class_id);
  const auto stencil = shape_stencil(class_shape(class_id), pose.size);
  Rendered out;
  out.frames.resize(d.clip_values());
  out.masks.assign(d.mask_values(), 0);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int t = 0; t < static_cast<int>(d.T); ++t) {
    std::uint8_t* mask = out.masks.data() + static_cast<std::size_t>(t) * d.frame_pixels();
    const auto [ax, ay] = actor_offset(pose, motion, t);
    for (int v = 0; v < pose.size; ++v)
      for (int u = 0; u < pose.size; ++u) {
        const long x = ax + u, y = ay + v;
        if (x < 0 || y < 0 || x >= W || y >= H || !stencil[static_cast<std::size_t>(v) * pose.size + u]) continue;
        mask[y * W + x] = 1;
      }
    for (int p = 0; p < H * W; ++p) {
      double value;
      if (mask[p]) {
        value = pose.intensity;
      } else if (static_layer[static_cast<std::size_t>(p)] >= 0.0) {
        value = static_layer[static_cast<std::size_t>(p)];
      } else {
        const double n = cfg.noise_sigma > 0.0 ? cfg.noise_sigma * noise(rng) : 0.0;
        value = std::clamp(background[static_cast<std::size_t>(p)] + n, 0.0, cfg.background_max);
      }
      float* px = out.frames.data() + (static_cast<std::size_t>(t) * d.frame_pixels() + p) * d.C;
      for (std::uint32_t c = 0; c < d.C; ++c) px[c] = static_cast<float>(value);
    }
  }
  return out;
}

inline std::vector<Box> boxes_from_masks(std::span<const std::uint8_t> masks, const Dims& d) {
  std::vector<Box> boxes;
  boxes.reserve(d.T);
  for (std::uint32_t t = 0; t < d.T; ++t) {
    boxes.push_back(tight_box(masks.subspan(t * d.frame_pixels(), d.frame_pixels()),
                              static_cast<int>(d.H), static_cast<int>(d.W)));
  }
  return boxes;
}

inline Dataset gen_dataset(const GenConfig& cfg, std::uint64_t seed) {
  if (cfg.n_train < 0 || cfg.n_test < 0) throw ConfigError("n_train", "split counts must be nonnegative");
  if (cfg.min_size < 1 || cfg.max_size < cfg.min_size) throw ConfigError("min_size", "invalid actor size range");
  if (cfg.dims.T == 0 || cfg.dims.H == 0 || cfg.dims.W == 0 || cfg.dims.C == 0) {
    throw ConfigError("dims", "all dimensions must be positive");
  }
  Dataset ds;
  ds.manifest.dims = cfg.dims;
  ds.manifest.n_train = cfg.n_train;
  ds.manifest.n_test = cfg.n_test;
  ds.manifest.seed = seed;
  const int total = cfg.n_train + cfg.n_test;
  ds.videos.reserve(static_cast<std::size_t>(total));
  for (int id = 0; id < total; ++id) {
    const bool test = id >= cfg.n_train;
    const int local = test ? id - cfg.n_train : id;
    const int class_id = cfg.force_class >= 0 ? cfg.force_class : local % kNumClasses;
    const std::uint64_t video_seed = mix_seed(seed, static_cast<std::uint64_t>(id));
    Rng rng(video_seed);
    const Pose pose = sample_pose(cfg, class_id, rng);
    Rendered r = render_video(cfg, class_id, pose, mix_seed(video_seed, 1));
    VideoSample s;
    s.id = static_cast<std::uint32_t>(id);
    s.dims = cfg.dims;
    s.frames = std::move(r.frames);
    s.annotation.class_id = class_id;
    s.annotation.boxes = boxes_from_masks(r.masks, cfg.dims);
    s.annotation.masks = std::move(r.masks);
    s.pool = test ? Pool::test : Pool::unlabeled;
    ds.videos.push_back(std::move(s));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// On-disk format

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>(v >> 8));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string where) : bytes_(bytes), where_(std::move(where)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(static_cast<unsigned char>(bytes_[pos_]) |
                                              (static_cast<unsigned char>(bytes_[pos_ + 1]) << 8));
    pos_ += 2;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, sizeof f);
    return f;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw TruncatedError(where_ + ": truncated file");
  }
  const std::string& bytes_;
  std::string where_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

}  // namespace detail

inline std::string encode_svb(const VideoSample& s) {
  std::string out = "SSAL";
  detail::put_u16(out, kFormatVersion);
  detail::put_u32(out, s.dims.T);
  detail::put_u32(out, s.dims.H);
  detail::put_u32(out, s.dims.W);
  detail::put_u32(out, s.dims.C);
  detail::put_u32(out, static_cast<std::uint32_t>(s.annotation.class_id));
  for (float f : s.frames) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    detail::put_u32(out, bits);
  }
  for (std::uint8_t m : s.annotation.masks) out.push_back(static_cast<char>(m));
  return out;
}

// Decodes one .svb payload; `expect` are the manifest dimensions.
inline VideoSample decode_svb(const std::string& bytes, const Dims& expect, int num_classes,
                              const std::string& where) {
  detail::ByteReader r(bytes, where);
  if (bytes.size() < 4 || r.raw(4) != "SSAL") throw MagicMismatchError(where + ": bad magic (expected SSAL)");
  const std::uint16_t version = r.u16();
  if (version != kFormatVersion) throw FormatError(where + ": unsupported version " + std::to_string(version));
  VideoSample s;
  s.dims.T = r.u32();
  s.dims.H = r.u32();
  s.dims.W = r.u32();
  s.dims.C = r.u32();
  if (!(s.dims == expect)) throw FormatError(where + ": dimension mismatch with manifest");
  s.annotation.class_id = static_cast<int>(r.u32());
  if (s.annotation.class_id < 0 || s.annotation.class_id >= num_classes) {
    throw FormatError(where + ": class id out of range");
  }
  s.frames.resize(s.dims.clip_values());
  for (float& f : s.frames) f = r.f32();
  s.annotation.masks.resize(s.dims.mask_values());
  for (std::uint8_t& m : s.annotation.masks) {
    m = r.u8();
    if (m > 1) throw FormatError(where + ": mask value not binary");
  }
  if (r.remaining() != 0) throw FormatError(where + ": trailing bytes");
  s.annotation.boxes = boxes_from_masks(s.annotation.masks, s.dims);
  return s;
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  return nlohmann::json{
      {"version", m.version},
      {"dims", {{"T", m.dims.T}, {"H", m.dims.H}, {"W", m.dims.W}, {"C", m.dims.C}}},
      {"K", m.num_classes},
      {"class_names", m.class_names},
      {"splits", {{"train", m.n_train}, {"test", m.n_test}}},
      {"seed", m.seed},
  };
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  auto field = [&](const nlohmann::json& obj, const char* key, const std::string& path) -> const nlohmann::json& {
    if (!obj.is_object() || !obj.contains(key)) throw ValidationError(path, "missing field");
    return obj.at(key);
  };
  DatasetManifest m;
  try {
    m.version = field(j, "version", "version").get<int>();
    const auto& dims = field(j, "dims", "dims");
    m.dims.T = field(dims, "T", "dims.T").get<std::uint32_t>();
    m.dims.H = field(dims, "H", "dims.H").get<std::uint32_t>();
    m.dims.W = field(dims, "W", "dims.W").get<std::uint32_t>();
    m.dims.C = field(dims, "C", "dims.C").get<std::uint32_t>();
    m.num_classes = field(j, "K", "K").get<int>();
    m.class_names = field(j, "class_names", "class_names").get<std::vector<std::string>>();
    const auto& splits = field(j, "splits", "splits");
    m.n_train = field(splits, "train", "splits.train").get<int>();
    m.n_test = field(splits, "test", "splits.test").get<int>();
    m.seed = field(j, "seed", "seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("manifest", e.what());
  }
  if (m.version != kFormatVersion) throw ValidationError("version", "unsupported manifest version");
  if (m.dims.T == 0 || m.dims.H == 0 || m.dims.W == 0 || m.dims.C == 0) {
    throw ValidationError("dims", "all dimensions must be positive");
  }
  if (m.num_classes <= 0 || static_cast<std::size_t>(m.num_classes) != m.class_names.size()) {
    throw ValidationError("K", "does not match class_names");
  }
  if (m.n_train < 0 || m.n_test < 0) throw ValidationError("splits", "negative split count");
  return m;
}

inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "videos");
  detail::write_file(dir / "manifest.json", manifest_to_json(ds.manifest).dump(2) + "\n");
  for (const VideoSample& s : ds.videos) {
    detail::write_file(dir / "videos" / (std::to_string(s.id) + ".svb"), encode_svb(s));
  }
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("manifest.json: ") + e.what());
  }
  Dataset ds;
  ds.manifest = manifest_from_json(j);
  const std::size_t total = static_cast<std::size_t>(ds.manifest.n_train) + ds.manifest.n_test;
  std::size_t present = 0;
  if (std::filesystem::is_directory(dir / "videos")) {
    for (const auto& e : std::filesystem::directory_iterator(dir / "videos")) {
      if (e.path().extension() == ".svb") ++present;
    }
  }
  if (present != total) {
    throw ValidationError("splits", "train+test = " + std::to_string(total) + " but " +
                                        std::to_string(present) + " video files present");
  }
  ds.videos.reserve(total);
  for (std::size_t id = 0; id < total; ++id) {
    const auto path = dir / "videos" / (std::to_string(id) + ".svb");
    if (!std::filesystem::exists(path)) throw ValidationError("splits", "missing " + path.filename().string());
    VideoSample s = decode_svb(detail::read_file(path), ds.manifest.dims, ds.manifest.num_classes,
                               path.filename().string());
    s.id = static_cast<std::uint32_t>(id);
    s.pool = ds.is_test(s.id) ? Pool::test : Pool::unlabeled;
    ds.videos.push_back(std::move(s));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Annotation oracle: reveals stored ground truth and moves the sample into
// the labeled pool.

class AnnotationOracle {
 public:
  explicit AnnotationOracle(Dataset& ds) : ds_(ds) {}

  const Annotation& annotate(std::uint32_t id) {
    if (id >= ds_.videos.size()) throw PoolError("annotate: unknown id " + std::to_string(id));
    VideoSample& s = ds_.videos[id];
    if (s.pool == Pool::test) throw PoolError("annotate: id " + std::to_string(id) + " is in the test split");
    if (s.pool == Pool::labeled) throw PoolError("annotate: id " + std::to_string(id) + " is already labeled");
    s.pool = Pool::labeled;
    return s.annotation;
  }

  std::vector<std::uint32_t> ids_in(Pool pool) const {
    std::vector<std::uint32_t> ids;
    for (const auto& s : ds_.videos)
      if (s.pool == pool) ids.push_back(s.id);
    return ids;
  }

  std::vector<std::uint32_t> labeled() const { return ids_in(Pool::labeled); }
  std::vector<std::uint32_t> unlabeled() const { return ids_in(Pool::unlabeled); }
  std::vector<std::uint32_t> test() const { return ids_in(Pool::test); }

 private:
  Dataset& ds_;
};

}  // namespace ssal::synthvid
