#pragma once

// Dataset ingestion and the OS/NS category folds.
//
// On-disk layout:
//   <root>/meta.json          vocabularies + per-clip object categories
//   <root>/frames/<clip>/<t>.png   RGB frames
//   <root>/masks/<clip>/<t>.png    8-bit masks, pixel value = object id
//
// meta.json schema (see README for the full key list):
//   format_version, motion_vocab[{id,name,parent_area}],
//   object_vocab[{id,name}],
//   clips[{id, frame_count, height, width, source?, objects[{object_id,
//   object_class, motion_class}]}]

#include <algorithm>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsvos/core/types.hpp"
#include "fsvos/io/png.hpp"
#include "fsvos/util/fs.hpp"
#include "fsvos/util/rng.hpp"

namespace fsvos::data {

struct MotionVocabEntry {
  int id = 0;
  std::string name;
  ParentArea parent_area = ParentArea::kDaily;
};

struct ObjectVocabEntry {
  int id = 0;
  std::string name;
};

struct ClipObject {
  int object_id = 0;  // mask pixel value
  CategoryInfo category;
};

struct ClipEntry {
  std::string id;
  std::string source;  // distinct source video; defaults to the clip id
  int frame_count = 0, height = 0, width = 0;
  std::vector<ClipObject> objects;

  bool has_motion_class(int cls) const {
    for (const auto& o : objects)
      if (o.category.motion_class == cls) return true;
    return false;
  }
};

struct DatasetIndex {
  fs::path root;
  std::vector<MotionVocabEntry> motion_vocab;  // indexed by id
  std::vector<ObjectVocabEntry> object_vocab;
  std::vector<ClipEntry> clips;
  std::map<std::string, int> clip_index_by_id;

  fs::path frame_path(int clip, int t) const {
    return root / "frames" / clips[clip].id / frame_filename(t);
  }
  fs::path mask_path(int clip, int t) const {
    return root / "masks" / clips[clip].id / frame_filename(t);
  }
  int num_motion_classes() const { return static_cast<int>(motion_vocab.size()); }
  int num_object_classes() const { return static_cast<int>(object_vocab.size()); }
};

// Clip counts per motion class (a clip counts for every class it contains).
inline std::vector<int> clips_per_motion_class(const DatasetIndex& index) {
  std::vector<int> counts(index.motion_vocab.size(), 0);
  for (const auto& clip : index.clips)
    for (size_t c = 0; c < counts.size(); ++c)
      if (clip.has_motion_class(static_cast<int>(c))) ++counts[c];
  return counts;
}

// Validates structure eagerly (files exist, PNG headers parse, ids in
// vocabulary bounds); pixel decoding stays lazy.
inline DatasetIndex load_index(const fs::path& root) {
  if (!fs::exists(root / "meta.json"))
    throw std::runtime_error("load_index: missing meta.json under " + root.string());
  nlohmann::json meta = nlohmann::json::parse(read_file_text(root / "meta.json"));

  DatasetIndex index;
  index.root = root;
  for (const auto& v : meta.at("motion_vocab")) {
    MotionVocabEntry e;
    e.id = v.at("id").get<int>();
    e.name = v.at("name").get<std::string>();
    e.parent_area = parent_area_from_name(v.at("parent_area").get<std::string>());
    if (e.id != static_cast<int>(index.motion_vocab.size()))
      throw std::runtime_error("load_index: motion vocabulary ids must be dense from 0");
    index.motion_vocab.push_back(e);
  }
  for (const auto& v : meta.at("object_vocab")) {
    ObjectVocabEntry e;
    e.id = v.at("id").get<int>();
    e.name = v.at("name").get<std::string>();
    if (e.id != static_cast<int>(index.object_vocab.size()))
      throw std::runtime_error("load_index: object vocabulary ids must be dense from 0");
    index.object_vocab.push_back(e);
  }

  for (const auto& c : meta.at("clips")) {
    ClipEntry e;
    e.id = c.at("id").get<std::string>();
    e.source = c.contains("source") ? c.at("source").get<std::string>() : e.id;
    e.frame_count = c.at("frame_count").get<int>();
    e.height = c.at("height").get<int>();
    e.width = c.at("width").get<int>();
    if (e.frame_count < 2)
      throw std::runtime_error("load_index: clip " + e.id + " has fewer than 2 frames");
    for (const auto& o : c.at("objects")) {
      ClipObject co;
      co.object_id = o.at("object_id").get<int>();
      co.category.object_class = o.at("object_class").get<int>();
      co.category.motion_class = o.at("motion_class").get<int>();
      if (co.category.motion_class < 0 ||
          co.category.motion_class >= static_cast<int>(index.motion_vocab.size()))
        throw std::runtime_error("load_index: clip " + e.id + " motion class " +
                                 std::to_string(co.category.motion_class) +
                                 " outside vocabulary");
      if (co.category.object_class < 0 ||
          co.category.object_class >= static_cast<int>(index.object_vocab.size()))
        throw std::runtime_error("load_index: clip " + e.id + " object class " +
                                 std::to_string(co.category.object_class) +
                                 " outside vocabulary");
      co.category.parent_area = index.motion_vocab[co.category.motion_class].parent_area;
      e.objects.push_back(co);
    }
    index.clip_index_by_id[e.id] = static_cast<int>(index.clips.size());
    index.clips.push_back(std::move(e));
  }

  // Every referenced file must exist and carry a sane PNG header of the
  // declared size. A frame/mask count mismatch shows up as a missing file.
  for (size_t ci = 0; ci < index.clips.size(); ++ci) {
    const ClipEntry& e = index.clips[ci];
    for (int t = 0; t < e.frame_count; ++t) {
      for (const char* kind : {"frames", "masks"}) {
        fs::path p = index.root / kind / e.id / frame_filename(t);
        if (!fs::exists(p))
          throw std::runtime_error("load_index: clip " + e.id + " is missing " + kind + " file " +
                                   p.string());
        png::HeaderInfo h = png::read_header(read_file_prefix(p, 64), p.string());
        if (h.width != e.width || h.height != e.height)
          throw std::runtime_error("load_index: clip " + e.id + " file " + p.string() +
                                   " has size " + std::to_string(h.width) + "x" +
                                   std::to_string(h.height) + ", expected " +
                                   std::to_string(e.width) + "x" + std::to_string(e.height));
      }
    }
  }
  return index;
}

// Lazy pixel loaders -------------------------------------------------------

inline Frame load_frame(const DatasetIndex& index, int clip, int t) {
  return Frame::from_rgb_u8(png::to_rgb(png::read(index.frame_path(clip, t))));
}

inline Mask load_object_mask(const DatasetIndex& index, int clip, int t, int object_id) {
  png::ImageU8 ids = png::to_gray_ids(png::read(index.mask_path(clip, t)),
                                      index.mask_path(clip, t).string());
  Mask m;
  m.h = ids.h; m.w = ids.w;
  m.v.resize(ids.pix.size());
  for (size_t i = 0; i < ids.pix.size(); ++i) m.v[i] = ids.pix[i] == object_id ? 1 : 0;
  return m;
}

// ---------------------------------------------------------------------------
// Fold splits

enum class SplitStrategy : int { kOverlapping = 0, kNonOverlapping = 1 };

inline const char* split_strategy_name(SplitStrategy s) {
  return s == SplitStrategy::kOverlapping ? "OS" : "NS";
}

inline SplitStrategy split_strategy_from_name(const std::string& s) {
  if (s == "OS" || s == "os") return SplitStrategy::kOverlapping;
  if (s == "NS" || s == "ns") return SplitStrategy::kNonOverlapping;
  throw std::runtime_error("unknown split strategy: " + s);
}

inline constexpr int kNumFolds = 4;

struct FoldSplit {
  SplitStrategy strategy = SplitStrategy::kOverlapping;
  uint64_t seed = 0;
  std::vector<int> fold_of_class;  // motion_class -> fold in [0,4)

  int fold(int motion_class) const { return fold_of_class.at(motion_class); }
  std::vector<int> classes_in_fold(int f) const {
    std::vector<int> out;
    for (size_t c = 0; c < fold_of_class.size(); ++c)
      if (fold_of_class[c] == f) out.push_back(static_cast<int>(c));
    return out;
  }
};

namespace detail {

// Greedy balance: heaviest groups first, each to the lightest fold.
// `groups` maps group -> member classes; weight = clip count.
inline std::vector<int> assign_groups(const std::vector<std::vector<int>>& groups,
                                      const std::vector<int>& class_weights, int num_classes,
                                      Rng& rng) {
  std::vector<int> order(groups.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int64_t> weight_of_group(groups.size(), 0);
  for (size_t g = 0; g < groups.size(); ++g)
    for (int c : groups[g]) weight_of_group[g] += class_weights[c];
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return weight_of_group[a] > weight_of_group[b]; });

  std::vector<int64_t> fold_weight(kNumFolds, 0);
  std::vector<int> fold_of_class(num_classes, -1);
  for (int g : order) {
    int best = 0;
    for (int f = 1; f < kNumFolds; ++f)
      if (fold_weight[f] < fold_weight[best]) best = f;
    for (int c : groups[g]) fold_of_class[c] = best;
    fold_weight[best] += weight_of_group[g];
  }
  return fold_of_class;
}

}  // namespace detail

inline FoldSplit make_folds(const DatasetIndex& index, SplitStrategy strategy, uint64_t seed) {
  const int num_classes = index.num_motion_classes();
  if (num_classes < kNumFolds)
    throw std::runtime_error("make_folds: need at least 4 motion classes, got " +
                             std::to_string(num_classes));
  std::vector<int> weights = clips_per_motion_class(index);
  Rng rng = make_rng(derive_seed(seed, strategy == SplitStrategy::kOverlapping ? 0 : 1));

  FoldSplit split;
  split.strategy = strategy;
  split.seed = seed;

  if (strategy == SplitStrategy::kOverlapping) {
    // Sibling categories may land in different folds; only clip-count
    // balance matters.
    std::vector<std::vector<int>> singletons(num_classes);
    for (int c = 0; c < num_classes; ++c) singletons[c] = {c};
    split.fold_of_class = detail::assign_groups(singletons, weights, num_classes, rng);
    return split;
  }

  // NS: keep each parent area within one fold when the area count permits;
  // with fewer than 4 areas fall back to the finest level (single classes).
  std::map<ParentArea, std::vector<int>> by_area;
  for (int c = 0; c < num_classes; ++c)
    by_area[index.motion_vocab[c].parent_area].push_back(c);
  if (by_area.size() >= static_cast<size_t>(kNumFolds)) {
    std::vector<std::vector<int>> groups;
    for (auto& [area, classes] : by_area) groups.push_back(classes);
    split.fold_of_class = detail::assign_groups(groups, weights, num_classes, rng);
  } else {
    std::vector<std::vector<int>> singletons(num_classes);
    for (int c = 0; c < num_classes; ++c) singletons[c] = {c};
    split.fold_of_class = detail::assign_groups(singletons, weights, num_classes, rng);
  }
  return split;
}

inline void save_split(const FoldSplit& split, const fs::path& path) {
  nlohmann::json j;
  j["strategy"] = split_strategy_name(split.strategy);
  j["seed"] = split.seed;
  nlohmann::json folds = nlohmann::json::object();
  for (size_t c = 0; c < split.fold_of_class.size(); ++c)
    folds[std::to_string(c)] = split.fold_of_class[c];
  j["folds"] = folds;
  write_file_atomic(path, j.dump(2));
}

inline FoldSplit load_split(const fs::path& path) {
  nlohmann::json j = nlohmann::json::parse(read_file_text(path));
  FoldSplit split;
  split.strategy = split_strategy_from_name(j.at("strategy").get<std::string>());
  split.seed = j.at("seed").get<uint64_t>();
  const auto& folds = j.at("folds");
  split.fold_of_class.resize(folds.size(), -1);
  for (auto it = folds.begin(); it != folds.end(); ++it) {
    int cls = std::stoi(it.key());
    if (cls < 0 || cls >= static_cast<int>(split.fold_of_class.size()))
      throw std::runtime_error("load_split: class id out of range in " + path.string());
    split.fold_of_class[cls] = it.value().get<int>();
  }
  return split;
}

}  // namespace fsvos::data
