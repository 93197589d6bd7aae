#pragma once

// Canonical on-disk episode dump: a directory with `episode.json` plus
// frame/mask PNGs. Used by test fixtures and the prediction dumper.

#include <string>
#include <vector>

#include <json.hpp>

#include "fsvos/core/types.hpp"
#include "fsvos/io/png.hpp"
#include "fsvos/util/fs.hpp"

namespace fsvos {

namespace detail {

inline void save_clip_frames(const VideoClip& clip, const fs::path& dir) {
  for (int t = 0; t < clip.frame_count(); ++t)
    png::write(dir / frame_filename(t), clip.frames[t].to_u8());
}

inline void save_binary_masks(const MaskSequence& seq, const fs::path& dir) {
  for (int t = 0; t < seq.frame_count(); ++t) {
    const Mask& m = seq.masks[t];
    png::ImageU8 img;
    img.h = m.h; img.w = m.w; img.c = 1;
    img.pix.resize(m.v.size());
    for (size_t i = 0; i < m.v.size(); ++i) img.pix[i] = m.v[i] ? 255 : 0;
    png::write(dir / frame_filename(t), img);
  }
}

inline VideoClip load_clip_frames(const fs::path& dir, int count, const std::string& source_id) {
  VideoClip clip;
  clip.source_id = source_id;
  clip.frames.reserve(count);
  for (int t = 0; t < count; ++t)
    clip.frames.push_back(Frame::from_rgb_u8(png::to_rgb(png::read(dir / frame_filename(t)))));
  return clip;
}

// Anti-aliased annotation exports are tolerated: binarize at 0.5.
inline Mask binarize_mask_u8(const png::ImageU8& img) {
  Mask m;
  m.h = img.h; m.w = img.w;
  m.v.resize(img.pix.size() / img.c);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      m.v[static_cast<size_t>(y) * img.w + x] = img.at(y, x, 0) >= 128 ? 1 : 0;
  return m;
}

inline MaskSequence load_binary_masks(const fs::path& dir, int count, int object_id) {
  MaskSequence seq;
  seq.object_id = object_id;
  seq.masks.reserve(count);
  for (int t = 0; t < count; ++t)
    seq.masks.push_back(binarize_mask_u8(png::to_gray_ids(png::read(dir / frame_filename(t)))));
  return seq;
}

inline nlohmann::json category_to_json(const CategoryInfo& c) {
  return {{"motion_class", c.motion_class},
          {"object_class", c.object_class},
          {"parent_area", parent_area_name(c.parent_area)}};
}

inline CategoryInfo category_from_json(const nlohmann::json& j) {
  CategoryInfo c;
  c.motion_class = j.at("motion_class").get<int>();
  c.object_class = j.at("object_class").get<int>();
  c.parent_area = parent_area_from_name(j.at("parent_area").get<std::string>());
  return c;
}

}  // namespace detail

inline void save_episode(const Episode& ep, const fs::path& target_dir) {
  StagedDir staged(target_dir);
  const fs::path& root = staged.path();

  nlohmann::json meta;
  meta["format_version"] = 1;
  meta["target_way"] = ep.target_way;
  nlohmann::json ways = nlohmann::json::array();
  for (size_t w = 0; w < ep.support.size(); ++w) {
    nlohmann::json shots = nlohmann::json::array();
    for (size_t k = 0; k < ep.support[w].size(); ++k) {
      const SupportItem& s = ep.support[w][k];
      std::string rel = "support/w" + std::to_string(w) + "_k" + std::to_string(k);
      detail::save_clip_frames(s.clip, root / rel / "frames");
      detail::save_binary_masks(s.mask, root / rel / "masks");
      nlohmann::json shot;
      shot["dir"] = rel;
      shot["source_id"] = s.clip.source_id;
      shot["frame_count"] = s.clip.frame_count();
      shot["object_id"] = s.mask.object_id;
      shot["category"] = detail::category_to_json(s.category);
      shots.push_back(shot);
    }
    ways.push_back({{"shots", shots}});
  }
  meta["ways"] = ways;

  detail::save_clip_frames(ep.query, root / "query" / "frames");
  nlohmann::json qobjs = nlohmann::json::array();
  for (size_t i = 0; i < ep.query_objects.size(); ++i) {
    std::string rel = "query/obj" + std::to_string(i);
    detail::save_binary_masks(ep.query_objects[i].mask, root / rel);
    nlohmann::json o;
    o["dir"] = rel;
    o["object_id"] = ep.query_objects[i].mask.object_id;
    o["category"] = detail::category_to_json(ep.query_objects[i].category);
    qobjs.push_back(o);
  }
  meta["query"] = {{"source_id", ep.query.source_id},
                   {"frame_count", ep.query.frame_count()},
                   {"objects", qobjs}};

  write_file_text(root / "episode.json", meta.dump(2));
  staged.commit();
}

inline Episode load_episode(const fs::path& dir) {
  nlohmann::json meta = nlohmann::json::parse(read_file_text(dir / "episode.json"));
  Episode ep;
  ep.target_way = meta.at("target_way").get<int>();
  for (const auto& way : meta.at("ways")) {
    std::vector<SupportItem> shots;
    for (const auto& shot : way.at("shots")) {
      SupportItem s;
      std::string rel = shot.at("dir").get<std::string>();
      int count = shot.at("frame_count").get<int>();
      s.clip = detail::load_clip_frames(dir / rel / "frames", count,
                                        shot.at("source_id").get<std::string>());
      s.mask = detail::load_binary_masks(dir / rel / "masks", count,
                                         shot.at("object_id").get<int>());
      s.category = detail::category_from_json(shot.at("category"));
      shots.push_back(std::move(s));
    }
    ep.support.push_back(std::move(shots));
  }
  const auto& q = meta.at("query");
  int qcount = q.at("frame_count").get<int>();
  ep.query = detail::load_clip_frames(dir / "query" / "frames", qcount,
                                      q.at("source_id").get<std::string>());
  for (const auto& o : q.at("objects")) {
    QueryObject qo;
    qo.mask = detail::load_binary_masks(dir / o.at("dir").get<std::string>(), qcount,
                                        o.at("object_id").get<int>());
    qo.category = detail::category_from_json(o.at("category"));
    ep.query_objects.push_back(std::move(qo));
  }
  return ep;
}

}  // namespace fsvos
