#pragma once

// Deterministic shapes-performing-motions clip generator. Trajectories are
// closed-form functions of the frame index and all randomness flows from
// explicit seeds, so every mask has an exact analytic oracle.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsvos/core/types.hpp"
#include "fsvos/util/fs.hpp"
#include "fsvos/util/rng.hpp"

namespace fsvos::synth {

enum class TrajectoryKind : int {
  kLinear = 0,
  kCircular,
  kZigzag,
  kOscillate,
  kSpiral,
  kPulseScale,
  kShake,
  kDriftStop,
};
inline constexpr int kNumTrajectoryKinds = 8;

inline const char* trajectory_name(TrajectoryKind k) {
  switch (k) {
    case TrajectoryKind::kLinear: return "linear";
    case TrajectoryKind::kCircular: return "circular";
    case TrajectoryKind::kZigzag: return "zigzag";
    case TrajectoryKind::kOscillate: return "oscillate";
    case TrajectoryKind::kSpiral: return "spiral";
    case TrajectoryKind::kPulseScale: return "pulse-scale";
    case TrajectoryKind::kShake: return "shake";
    case TrajectoryKind::kDriftStop: return "drift-and-stop";
  }
  return "?";
}

enum class Geometry : int { kDisk = 0, kSquare, kTriangle, kStar, kBar };
inline constexpr int kNumGeometries = 5;

inline const char* geometry_name(Geometry g) {
  switch (g) {
    case Geometry::kDisk: return "disk";
    case Geometry::kSquare: return "square";
    case Geometry::kTriangle: return "triangle";
    case Geometry::kStar: return "star";
    case Geometry::kBar: return "bar";
  }
  return "?";
}

struct MotionSpec {
  int motion_class = 0;
  TrajectoryKind kind = TrajectoryKind::kLinear;
  double amplitude = 12.0;  // pixels
  double period = 8.0;      // frames
  double phase = 0.0;       // radians
};

struct ShapeSpec {
  int object_class = 0;
  Geometry geometry = Geometry::kDisk;
  double size = 14.0;  // nominal diameter in pixels
  std::array<float, 3> color = {0.8f, 0.2f, 0.2f};
  uint64_t texture_seed = 0;
};

// Every motion class maps to exactly one trajectory kind; classes beyond the
// eight base kinds reuse a kind with a scaled parameter range.
inline TrajectoryKind kind_for_motion_class(int motion_class) {
  return static_cast<TrajectoryKind>(motion_class % kNumTrajectoryKinds);
}

inline Geometry geometry_for_object_class(int object_class) {
  return static_cast<Geometry>(object_class % kNumGeometries);
}

inline ParentArea parent_area_for_motion_class(int motion_class) {
  return static_cast<ParentArea>(motion_class % 4);
}

// Samples an instance within the class's fixed parameter range. Amplitudes
// are sized so each class moves several pixels per frame: temporal
// differences must stay visible at 1/4 feature resolution after frame
// subsampling.
inline MotionSpec motion_spec_for_class(int motion_class, Rng& rng, double scale = 1.0) {
  MotionSpec m;
  m.motion_class = motion_class;
  m.kind = kind_for_motion_class(motion_class);
  double band = 1.0 + 0.25 * (motion_class / kNumTrajectoryKinds);
  switch (m.kind) {
    case TrajectoryKind::kLinear:
    case TrajectoryKind::kZigzag:
    case TrajectoryKind::kDriftStop:
      m.amplitude = scale * band * rand_uniform(rng, 22.0, 32.0);  // one-sided drift
      break;
    case TrajectoryKind::kCircular:
    case TrajectoryKind::kOscillate:
    case TrajectoryKind::kSpiral:
      m.amplitude = scale * band * rand_uniform(rng, 11.0, 16.0);  // two-sided span
      break;
    case TrajectoryKind::kShake:
      m.amplitude = scale * band * rand_uniform(rng, 4.0, 6.0);  // high frequency
      break;
    case TrajectoryKind::kPulseScale:
      // Swing stays below the smallest shape radius so objects never
      // vanish mid-clip.
      m.amplitude = scale * rand_uniform(rng, 2.0, 2.8);
      break;
  }
  m.period = rand_uniform(rng, 7.0, 9.0);
  m.phase = rand_uniform(rng, 0.0, 2.0 * M_PI);
  return m;
}

inline std::array<float, 3> base_color_for_object_class(int object_class) {
  static const std::array<float, 3> palette[] = {
      {0.90f, 0.25f, 0.20f}, {0.20f, 0.55f, 0.90f}, {0.25f, 0.80f, 0.30f},
      {0.90f, 0.80f, 0.20f}, {0.75f, 0.30f, 0.85f}, {0.95f, 0.55f, 0.15f},
      {0.20f, 0.85f, 0.80f}, {0.85f, 0.45f, 0.60f}};
  return palette[object_class % 8];
}

inline ShapeSpec shape_spec_for_class(int object_class, Rng& rng, double scale = 1.0) {
  ShapeSpec s;
  s.object_class = object_class;
  s.geometry = geometry_for_object_class(object_class);
  double band = 1.0 + 0.2 * (object_class / kNumGeometries);
  s.size = scale * band * rand_uniform(rng, 12.0, 17.0);
  auto base = base_color_for_object_class(object_class);
  for (int c = 0; c < 3; ++c) {
    float v = base[c] + static_cast<float>(rand_uniform(rng, -0.06, 0.06));
    s.color[c] = v < 0.05f ? 0.05f : (v > 0.98f ? 0.98f : v);
  }
  s.texture_seed = rng();
  return s;
}

// Offset from the start position at frame t. All kinds are normalized so
// the offset (and the pulse-scale radius delta) is exactly zero at t = 0.
inline std::array<double, 2> trajectory_offset(const MotionSpec& m, int t) {
  const double A = m.amplitude, P = m.period, ph = m.phase;
  const double u = 2.0 * M_PI * t / P;
  switch (m.kind) {
    case TrajectoryKind::kLinear:
      return {A * t / P * std::cos(ph), A * t / P * std::sin(ph)};
    case TrajectoryKind::kCircular:
      return {A * (std::cos(u + ph) - std::cos(ph)), A * (std::sin(u + ph) - std::sin(ph))};
    case TrajectoryKind::kZigzag: {
      auto tri = [](double v) {
        v = v - std::floor(v);
        return v < 0.5 ? 4.0 * v - 1.0 : 3.0 - 4.0 * v;
      };
      double w0 = tri(ph / (2.0 * M_PI));
      return {0.5 * A * t / P, A * 0.5 * (tri(double(t) / P + ph / (2.0 * M_PI)) - w0)};
    }
    case TrajectoryKind::kOscillate:
      return {0.0, A * (std::sin(u + ph) - std::sin(ph))};
    case TrajectoryKind::kSpiral: {
      double r = A * t / P;
      return {r * std::cos(u + ph), r * std::sin(u + ph)};
    }
    case TrajectoryKind::kPulseScale:
      return {0.0, 0.0};
    case TrajectoryKind::kShake:
      return {A * 0.7 * (std::sin(2.0 * u + ph) - std::sin(ph)),
              A * 0.7 * (std::cos(3.0 * u + ph) - std::cos(ph))};
    case TrajectoryKind::kDriftStop: {
      double s = std::min(double(t), P / 2.0) / (P / 2.0);
      return {A * s * std::cos(ph), A * s * std::sin(ph)};
    }
  }
  return {0.0, 0.0};
}

// Additive radius delta; nonzero only for pulse-scale.
inline double radius_delta(const MotionSpec& m, int t) {
  if (m.kind != TrajectoryKind::kPulseScale) return 0.0;
  const double u = 2.0 * M_PI * t / m.period + m.phase;
  return m.amplitude * (std::sin(u) - std::sin(m.phase));
}

namespace detail {

inline bool point_in_polygon(const std::vector<std::array<double, 2>>& poly, double x, double y) {
  bool inside = false;
  size_t n = poly.size();
  for (size_t i = 0, j = n - 1; i < n; j = i++) {
    double xi = poly[i][0], yi = poly[i][1], xj = poly[j][0], yj = poly[j][1];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) inside = !inside;
  }
  return inside;
}

inline std::vector<std::array<double, 2>> star_polygon(double cx, double cy, double r) {
  std::vector<std::array<double, 2>> poly;
  for (int i = 0; i < 10; ++i) {
    double rad = (i % 2 == 0) ? r : 0.45 * r;
    double a = -M_PI / 2.0 + i * M_PI / 5.0;
    poly.push_back({cx + rad * std::cos(a), cy + rad * std::sin(a)});
  }
  return poly;
}

inline float hash_unit(uint64_t seed, int64_t key) {
  return static_cast<float>((derive_seed(seed, static_cast<uint64_t>(key)) >> 11) *
                            (1.0 / 9007199254740992.0));
}

}  // namespace detail

// Pixel-center footprint test for a shape centered at integer (cx, cy).
// Exactly analytic: a pulse-scale shrink below zero radius leaves an empty
// footprint, never a clamped remnant.
inline bool inside_shape(const ShapeSpec& s, double radius_extra, int cx, int cy, int x, int y) {
  double r = s.size / 2.0 + radius_extra;
  if (r <= 0.0) return false;
  double dx = x - cx, dy = y - cy;
  switch (s.geometry) {
    case Geometry::kDisk:
      return dx * dx + dy * dy <= r * r;
    case Geometry::kSquare:
      return std::abs(dx) <= r && std::abs(dy) <= r * 0.999;  // break y/x tie ambiguity
    case Geometry::kTriangle: {
      std::vector<std::array<double, 2>> tri = {
          {double(cx), cy - r}, {cx - 0.9 * r, cy + 0.62 * r}, {cx + 0.9 * r, cy + 0.62 * r}};
      return detail::point_in_polygon(tri, x, y);
    }
    case Geometry::kStar:
      return detail::point_in_polygon(detail::star_polygon(cx, cy, r), x, y);
    case Geometry::kBar:
      return std::abs(dx) <= r && std::abs(dy) <= r / 3.0;
  }
  return false;
}

inline double max_radius(const ShapeSpec& s, const MotionSpec& m) {
  double extra = m.kind == TrajectoryKind::kPulseScale ? 2.0 * m.amplitude : 0.0;
  return s.size / 2.0 + extra + 1.0;
}

struct SceneObject {
  ShapeSpec shape;
  MotionSpec motion;
  std::optional<std::array<double, 2>> start;  // (x, y); auto-placed when absent
};

struct RenderOptions {
  int clutter_count = 2;
  float noise_amplitude = 0.08f;
  float bg_level = 0.45f;
};

struct RenderOutput {
  VideoClip clip;
  std::vector<MaskSequence> masks;          // primary first, then distractors
  std::vector<CategoryInfo> categories;     // aligned with masks
  std::vector<std::array<int, 2>> centers0;  // rounded start centers
};

namespace detail {

inline std::array<double, 2> auto_place(const SceneObject& obj, int T, int H, int W, Rng& rng) {
  double lo_dx = 0, hi_dx = 0, lo_dy = 0, hi_dy = 0;
  for (int t = 0; t < T; ++t) {
    auto off = trajectory_offset(obj.motion, t);
    lo_dx = std::min(lo_dx, off[0]);
    hi_dx = std::max(hi_dx, off[0]);
    lo_dy = std::min(lo_dy, off[1]);
    hi_dy = std::max(hi_dy, off[1]);
  }
  double r = max_radius(obj.shape, obj.motion);
  double x0 = r - lo_dx, x1 = W - 1 - r - hi_dx;
  double y0 = r - lo_dy, y1 = H - 1 - r - hi_dy;
  if (x0 > x1 || y0 > y1)
    throw std::runtime_error("render_clip: no feasible start position for trajectory (canvas " +
                             std::to_string(W) + "x" + std::to_string(H) + ")");
  return {rand_uniform(rng, x0, x1), rand_uniform(rng, y0, y1)};
}

}  // namespace detail

inline RenderOutput render_clip(const SceneObject& primary,
                                const std::vector<SceneObject>& distractors, int T, int H, int W,
                                uint64_t bg_seed, const RenderOptions& opt = {}) {
  if (T < 2) throw std::runtime_error("render_clip: T must be >= 2");

  std::vector<SceneObject> objs;
  objs.push_back(primary);
  objs.insert(objs.end(), distractors.begin(), distractors.end());

  // Resolve start positions; auto-placement draws from a seeded stream.
  std::vector<std::array<double, 2>> starts(objs.size());
  for (size_t i = 0; i < objs.size(); ++i) {
    if (objs[i].start) {
      starts[i] = *objs[i].start;
    } else {
      Rng prng = make_rng(derive_seed(bg_seed, 101 + i));
      starts[i] = detail::auto_place(objs[i], T, H, W, prng);
    }
  }

  // Static background: seeded noise plus clutter shapes drawn below all
  // moving objects.
  Frame bg;
  bg.h = H; bg.w = W;
  bg.pix.resize(size_t(H) * W * 3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      float n = opt.bg_level +
                opt.noise_amplitude * (detail::hash_unit(bg_seed, int64_t(y) * W + x) - 0.5f);
      for (int c = 0; c < 3; ++c) bg.at(y, x, c) = n;
    }
  Rng crng = make_rng(derive_seed(bg_seed, 7));
  for (int i = 0; i < opt.clutter_count; ++i) {
    ShapeSpec cs;
    cs.geometry = static_cast<Geometry>(rand_int(crng, 0, kNumGeometries - 1));
    cs.size = rand_uniform(crng, 6.0, 11.0);
    float lum = static_cast<float>(rand_uniform(crng, 0.3, 0.62));
    cs.color = {lum, lum, lum};
    int cx = rand_int(crng, 4, W - 5), cy = rand_int(crng, 4, H - 5);
    for (int y = std::max(0, cy - int(cs.size)); y <= std::min(H - 1, cy + int(cs.size)); ++y)
      for (int x = std::max(0, cx - int(cs.size)); x <= std::min(W - 1, cx + int(cs.size)); ++x)
        if (inside_shape(cs, 0.0, cx, cy, x, y))
          for (int c = 0; c < 3; ++c) bg.at(y, x, c) = cs.color[c];
  }
  for (float& v : bg.pix) v = std::clamp(v, 0.0f, 1.0f);

  RenderOutput out;
  out.clip.source_id = "synth_" + std::to_string(bg_seed);
  out.clip.frames.reserve(T);
  out.masks.resize(objs.size());
  for (size_t i = 0; i < objs.size(); ++i) {
    out.masks[i].object_id = static_cast<int>(i) + 1;
    out.masks[i].masks.reserve(T);
    CategoryInfo ci;
    ci.motion_class = objs[i].motion.motion_class;
    ci.object_class = objs[i].shape.object_class;
    ci.parent_area = parent_area_for_motion_class(objs[i].motion.motion_class);
    out.categories.push_back(ci);
  }

  std::vector<int> owner(size_t(H) * W);
  for (int t = 0; t < T; ++t) {
    Frame frame = bg;
    std::fill(owner.begin(), owner.end(), -1);

    // Primary is drawn last so it stays topmost; distractors stack in
    // reverse list order beneath it.
    for (size_t step = 0; step < objs.size(); ++step) {
      size_t i = objs.size() - 1 - step;
      const SceneObject& obj = objs[i];
      auto off = trajectory_offset(obj.motion, t);
      double rx = radius_delta(obj.motion, t);
      int cx = static_cast<int>(std::lround(starts[i][0] + off[0]));
      int cy = static_cast<int>(std::lround(starts[i][1] + off[1]));
      double reach = max_radius(obj.shape, obj.motion);
      if (cx - reach < -0.5 || cx + reach > W - 0.5 || cy - reach < -0.5 || cy + reach > H - 0.5)
        throw std::runtime_error("render_clip: object " + std::to_string(i) +
                                 " escapes canvas at frame " + std::to_string(t));
      if (t == 0) {
        if (out.centers0.size() <= i) out.centers0.resize(objs.size());
        out.centers0[i] = {cx, cy};
      }
      int rad = static_cast<int>(std::ceil(reach));
      for (int y = cy - rad; y <= cy + rad; ++y)
        for (int x = cx - rad; x <= cx + rad; ++x) {
          if (y < 0 || y >= H || x < 0 || x >= W) continue;
          if (!inside_shape(obj.shape, rx, cx, cy, x, y)) continue;
          owner[size_t(y) * W + x] = static_cast<int>(i);
          // Texture rides in object-local coordinates.
          float tex = 0.88f + 0.12f * detail::hash_unit(obj.shape.texture_seed,
                                                        int64_t(y - cy + 512) * 1024 + (x - cx + 512));
          for (int c = 0; c < 3; ++c)
            frame.at(y, x, c) = std::clamp(obj.shape.color[c] * tex, 0.0f, 1.0f);
        }
    }

    // Quantize to the 8-bit grid so on-disk round trips are exact.
    for (float& v : frame.pix) v = std::round(v * 255.0f) / 255.0f;
    out.clip.frames.push_back(std::move(frame));

    for (size_t i = 0; i < objs.size(); ++i) {
      Mask m;
      m.h = H; m.w = W;
      m.v.resize(size_t(H) * W);
      for (size_t p = 0; p < m.v.size(); ++p) m.v[p] = owner[p] == static_cast<int>(i) ? 1 : 0;
      out.masks[i].masks.push_back(std::move(m));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset builder

struct DatasetConfig {
  int num_motion_classes = 4;
  int num_object_classes = 3;
  int clips_per_pair = 5;
  int frames = 8;   // T
  int height = 128;
  int width = 128;
  uint64_t seed = 1;
  int distractors_per_clip = 1;
  int clutter_count = 2;
  bool overwrite = false;
};

// Objects shrink slower than the canvas so small canvases keep a usable
// moving-pixel budget at 1/4 feature resolution.
inline double canvas_scale(const DatasetConfig& cfg) {
  return std::sqrt(std::min(cfg.height, cfg.width) / 128.0);
}

inline std::string clip_name(int object_class, int motion_class, int index) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "o%d_m%d_%03d", object_class, motion_class, index);
  return buf;
}

// Writes frames/, masks/, meta.json and manifest.json under cfg-specified
// root. Mask pixels carry the object id (primary = 1).
inline void build_synthetic_dataset(const DatasetConfig& cfg, const fs::path& root) {
  if (cfg.num_motion_classes < 4)
    throw std::runtime_error("build_synthetic_dataset: need >= 4 motion classes");
  if (cfg.num_object_classes < 3)
    throw std::runtime_error("build_synthetic_dataset: need >= 3 object classes");
  if (dir_nonempty(root) && !cfg.overwrite)
    throw std::runtime_error("build_synthetic_dataset: output directory " + root.string() +
                             " is not empty (pass overwrite to replace)");

  StagedDir staged(root);
  const fs::path& out = staged.path();
  const double scale = canvas_scale(cfg);

  nlohmann::json meta;
  meta["format_version"] = 1;
  nlohmann::json motion_vocab = nlohmann::json::array();
  for (int m = 0; m < cfg.num_motion_classes; ++m) {
    std::string name = trajectory_name(kind_for_motion_class(m));
    if (m >= kNumTrajectoryKinds) name += "_v" + std::to_string(m / kNumTrajectoryKinds);
    motion_vocab.push_back({{"id", m},
                            {"name", name},
                            {"parent_area", parent_area_name(parent_area_for_motion_class(m))}});
  }
  meta["motion_vocab"] = motion_vocab;
  nlohmann::json object_vocab = nlohmann::json::array();
  for (int o = 0; o < cfg.num_object_classes; ++o) {
    std::string name = geometry_name(geometry_for_object_class(o));
    if (o >= kNumGeometries) name += "_v" + std::to_string(o / kNumGeometries);
    object_vocab.push_back({{"id", o}, {"name", name}});
  }
  meta["object_vocab"] = object_vocab;

  nlohmann::json clips = nlohmann::json::array();
  nlohmann::json manifest = nlohmann::json::array();
  int clip_counter = 0;
  for (int o = 0; o < cfg.num_object_classes; ++o)
    for (int m = 0; m < cfg.num_motion_classes; ++m)
      for (int i = 0; i < cfg.clips_per_pair; ++i, ++clip_counter) {
        uint64_t clip_seed = derive_seed(cfg.seed, static_cast<uint64_t>(clip_counter));
        Rng rng = make_rng(clip_seed);

        SceneObject primary;
        primary.shape = shape_spec_for_class(o, rng, scale);
        primary.motion = motion_spec_for_class(m, rng, scale);

        // Odd clip indices carry moving distractors; even ones are clean
        // single-object demonstrations of the motion.
        std::vector<SceneObject> distractors;
        int dcount = (i % 2 == 1) ? cfg.distractors_per_clip : 0;
        for (int dnum = 0; dnum < dcount; ++dnum) {
          // Round-robin over the other classes so every pair of motion
          // classes co-occurs in some clip.
          int dm = (m + 1 + (i + dnum) % (cfg.num_motion_classes - 1)) % cfg.num_motion_classes;
          int dobj = (o + 1 + (i + dnum) % (cfg.num_object_classes - 1)) % cfg.num_object_classes;
          SceneObject d;
          d.shape = shape_spec_for_class(dobj, rng, scale);
          d.motion = motion_spec_for_class(dm, rng, scale);
          distractors.push_back(d);
        }

        RenderOptions opt;
        opt.clutter_count = cfg.clutter_count;
        RenderOutput r =
            render_clip(primary, distractors, cfg.frames, cfg.height, cfg.width, clip_seed, opt);

        std::string name = clip_name(o, m, i);
        for (int t = 0; t < cfg.frames; ++t) {
          png::write(out / "frames" / name / frame_filename(t), r.clip.frames[t].to_u8());
          png::ImageU8 idmask;
          idmask.h = cfg.height; idmask.w = cfg.width; idmask.c = 1;
          idmask.pix.assign(size_t(cfg.height) * cfg.width, 0);
          for (size_t obj = 0; obj < r.masks.size(); ++obj) {
            const Mask& mk = r.masks[obj].masks[t];
            for (size_t p = 0; p < mk.v.size(); ++p)
              if (mk.v[p]) idmask.pix[p] = static_cast<uint8_t>(obj + 1);
          }
          png::write(out / "masks" / name / frame_filename(t), idmask);
        }

        nlohmann::json objects = nlohmann::json::array();
        for (size_t obj = 0; obj < r.categories.size(); ++obj)
          objects.push_back({{"object_id", int(obj + 1)},
                             {"object_class", r.categories[obj].object_class},
                             {"motion_class", r.categories[obj].motion_class}});
        clips.push_back({{"id", name},
                         {"frame_count", cfg.frames},
                         {"height", cfg.height},
                         {"width", cfg.width},
                         {"objects", objects}});
        manifest.push_back(
            {{"clip", name}, {"object_class", o}, {"motion_class", m}});
      }

  meta["clips"] = clips;
  write_file_text(out / "meta.json", meta.dump(2));
  write_file_text(out / "manifest.json", manifest.dump(2));
  staged.commit();
}

}  // namespace fsvos::synth
