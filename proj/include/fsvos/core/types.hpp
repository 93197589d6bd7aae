#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fsvos/io/png.hpp"

namespace fsvos {

// One H×W×3 frame with pixel values in [0,1]. Integer inputs are divided by
// 255 at ingestion so the rest of the pipeline sees a single pixel domain.
struct Frame {
  int h = 0, w = 0;
  std::vector<float> pix;  // h*w*3, interleaved RGB

  float& at(int y, int x, int ch) { return pix[(static_cast<size_t>(y) * w + x) * 3 + ch]; }
  float at(int y, int x, int ch) const { return pix[(static_cast<size_t>(y) * w + x) * 3 + ch]; }

  static Frame from_u8(const png::ImageU8& img) {
    png::Decoded d;
    d.image = img;
    return from_rgb_u8(png::to_rgb(d));
  }
  static Frame from_rgb_u8(const png::ImageU8& rgb) {
    Frame f;
    f.h = rgb.h; f.w = rgb.w;
    f.pix.resize(size_t(rgb.h) * rgb.w * 3);
    for (size_t i = 0; i < f.pix.size(); ++i) f.pix[i] = rgb.pix[i] / 255.0f;
    return f;
  }
  png::ImageU8 to_u8() const {
    png::ImageU8 img;
    img.h = h; img.w = w; img.c = 3;
    img.pix.resize(pix.size());
    for (size_t i = 0; i < pix.size(); ++i) {
      float v = pix[i] * 255.0f + 0.5f;
      img.pix[i] = static_cast<uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v));
    }
    return img;
  }
};

struct VideoClip {
  std::vector<Frame> frames;
  std::string source_id;

  int frame_count() const { return static_cast<int>(frames.size()); }
  int height() const { return frames.empty() ? 0 : frames[0].h; }
  int width() const { return frames.empty() ? 0 : frames[0].w; }
};

// Binary masks aligned 1:1 with a clip's frames. All-zero sequences are
// legal: empty-target episodes rely on them.
struct Mask {
  int h = 0, w = 0;
  std::vector<uint8_t> v;  // exactly {0,1}

  uint8_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  uint8_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
  int64_t area() const {
    int64_t a = 0;
    for (uint8_t b : v) a += b;
    return a;
  }
  bool empty_fg() const { return area() == 0; }
};

struct MaskSequence {
  std::vector<Mask> masks;
  int object_id = 0;

  int frame_count() const { return static_cast<int>(masks.size()); }
  bool all_empty() const {
    for (const auto& m : masks)
      if (!m.empty_fg()) return false;
    return true;
  }
};

enum class ParentArea : int { kDaily = 0, kSports = 1, kEntertainment = 2, kSpecial = 3 };

inline const char* parent_area_name(ParentArea a) {
  switch (a) {
    case ParentArea::kDaily: return "daily";
    case ParentArea::kSports: return "sports";
    case ParentArea::kEntertainment: return "entertainment";
    case ParentArea::kSpecial: return "special";
  }
  return "?";
}

inline ParentArea parent_area_from_name(const std::string& s) {
  if (s == "daily") return ParentArea::kDaily;
  if (s == "sports") return ParentArea::kSports;
  if (s == "entertainment") return ParentArea::kEntertainment;
  if (s == "special") return ParentArea::kSpecial;
  throw std::runtime_error("unknown parent area: " + s);
}

struct CategoryInfo {
  int motion_class = -1;
  int object_class = -1;
  ParentArea parent_area = ParentArea::kDaily;
};

struct SupportItem {
  VideoClip clip;
  MaskSequence mask;
  CategoryInfo category;
};

struct QueryObject {
  MaskSequence mask;
  CategoryInfo category;
};

// target_way == kNoTargetWay encodes the empty-foreground queries used by
// the N-Acc protocol.
inline constexpr int kNoTargetWay = -1;

struct Episode {
  std::vector<std::vector<SupportItem>> support;  // N ways × K shots
  VideoClip query;
  std::vector<QueryObject> query_objects;
  int target_way = kNoTargetWay;

  int ways() const { return static_cast<int>(support.size()); }
  int shots() const { return support.empty() ? 0 : static_cast<int>(support[0].size()); }
  int way_motion_class(int way) const { return support[way][0].category.motion_class; }

  // Union of all query objects carrying the way's motion class.
  MaskSequence way_ground_truth(int way) const {
    int cls = way_motion_class(way);
    MaskSequence out;
    out.object_id = 0;
    out.masks.resize(query.frames.size());
    for (size_t t = 0; t < query.frames.size(); ++t) {
      Mask& m = out.masks[t];
      m.h = query.height();
      m.w = query.width();
      m.v.assign(static_cast<size_t>(m.h) * m.w, 0);
    }
    for (const auto& qo : query_objects) {
      if (qo.category.motion_class != cls) continue;
      for (size_t t = 0; t < out.masks.size() && t < qo.mask.masks.size(); ++t)
        for (size_t i = 0; i < out.masks[t].v.size(); ++i)
          out.masks[t].v[i] |= qo.mask.masks[t].v[i];
    }
    return out;
  }
};

struct WayPrediction {
  std::vector<std::vector<float>> soft_masks;  // T_q maps at input resolution, values in [0,1]
  int mask_h = 0, mask_w = 0;
  float match_score = 0.0f;  // within [-1,1]
  bool is_empty = false;
};

struct Prediction {
  std::vector<WayPrediction> ways;
};

namespace detail {

inline void check_clip(const VideoClip& clip, const std::string& who,
                       std::vector<std::string>& out) {
  if (clip.frame_count() < 2) out.push_back(who + ": clip shorter than 2 frames");
  int h = clip.height(), w = clip.width();
  for (int t = 0; t < clip.frame_count(); ++t) {
    const Frame& f = clip.frames[t];
    if (f.h != h || f.w != w) {
      out.push_back(who + ": frames differ in size");
      break;
    }
    if (f.pix.size() != static_cast<size_t>(f.h) * f.w * 3) {
      out.push_back(who + ": frame buffer size mismatch");
      break;
    }
  }
  for (int t = 0; t < clip.frame_count(); ++t)
    for (float v : clip.frames[t].pix)
      if (!(v >= 0.0f && v <= 1.0f)) {
        out.push_back(who + ": pixel outside [0,1]");
        return;
      }
}

inline void check_mask_pairing(const VideoClip& clip, const MaskSequence& seq,
                               const std::string& who, std::vector<std::string>& out) {
  if (seq.frame_count() != clip.frame_count())
    out.push_back(who + ": mask count differs from frame count");
  for (const Mask& m : seq.masks) {
    if (m.h != clip.height() || m.w != clip.width()) {
      out.push_back(who + ": mask size differs from frame size");
      break;
    }
  }
  for (const Mask& m : seq.masks)
    for (uint8_t b : m.v)
      if (b > 1) {
        out.push_back(who + ": mask values not in {0,1}");
        return;
      }
}

}  // namespace detail

// Returns every invariant violation found; an empty list means the episode
// is well formed. Violations are data, not exceptions.
inline std::vector<std::string> validate_episode(const Episode& ep) {
  std::vector<std::string> out;
  if (ep.support.empty()) out.push_back("episode has zero ways");

  std::vector<int> way_classes;
  std::vector<std::string> source_ids;
  for (size_t way = 0; way < ep.support.size(); ++way) {
    const auto& shots = ep.support[way];
    std::string who = "support way " + std::to_string(way);
    if (shots.empty()) {
      out.push_back(who + ": zero shots");
      continue;
    }
    int cls = shots[0].category.motion_class;
    way_classes.push_back(cls);
    for (size_t k = 0; k < shots.size(); ++k) {
      std::string skw = who + " shot " + std::to_string(k);
      detail::check_clip(shots[k].clip, skw, out);
      detail::check_mask_pairing(shots[k].clip, shots[k].mask, skw, out);
      if (shots[k].category.motion_class != cls)
        out.push_back(who + ": shots disagree on motion class");
      source_ids.push_back(shots[k].clip.source_id);
    }
  }
  for (size_t i = 0; i < way_classes.size(); ++i)
    for (size_t j = i + 1; j < way_classes.size(); ++j)
      if (way_classes[i] == way_classes[j]) {
        out.push_back("duplicate way motion class");
        i = way_classes.size();
        break;
      }
  for (size_t i = 0; i < source_ids.size(); ++i)
    for (size_t j = i + 1; j < source_ids.size(); ++j)
      if (source_ids[i] == source_ids[j]) {
        out.push_back("support clips share a source video");
        i = source_ids.size();
        break;
      }

  detail::check_clip(ep.query, "query", out);
  for (size_t i = 0; i < ep.query_objects.size(); ++i)
    detail::check_mask_pairing(ep.query, ep.query_objects[i].mask,
                               "query object " + std::to_string(i), out);

  if (ep.target_way != kNoTargetWay &&
      (ep.target_way < 0 || ep.target_way >= static_cast<int>(ep.support.size())))
    out.push_back("target_way out of range");
  if (ep.target_way == kNoTargetWay) {
    for (const auto& qo : ep.query_objects)
      for (int cls : way_classes)
        if (qo.category.motion_class == cls && !qo.mask.all_empty()) {
          out.push_back("empty-target episode but query carries a support motion class");
          return out;
        }
  }
  return out;
}

}  // namespace fsvos
