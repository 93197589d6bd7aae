#pragma once

// N-way-K-shot episode sampling. Sampling is split into a cheap plan stage
// (indices only, no pixels) and a materialize stage that decodes frames, so
// hygiene checks over many thousands of episodes stay fast.

#include <functional>
#include <optional>
#include <set>
#include <stdexcept>
#include <vector>

#include "fsvos/data/dataset.hpp"

namespace fsvos::data {

struct SamplerConfig {
  int ways = 2;            // N
  int shots = 1;           // K
  int support_frames = 4;  // T_s
  int query_frames = 4;    // T_q
  double empty_rate = 0.2;
  int max_retries = 64;
};

// Restricts which (object_class, motion_class) cells may serve as support
// objects / query targets; used for held-out-combination experiments.
using CellFilter = std::function<bool(int object_class, int motion_class)>;

struct SupportPick {
  int clip = -1;
  int object_id = 0;
  std::vector<int> frame_indices;
};

struct QueryPick {
  int clip = -1;
  std::vector<int> frame_indices;
};

struct EpisodePlan {
  std::vector<int> way_classes;                    // N motion classes
  std::vector<std::vector<SupportPick>> support;   // N × K
  QueryPick query;
  int target_way = kNoTargetWay;
};

// test_fold < 0 disables fold-based filtering (all classes in both phases);
// used by combination-holdout runs where folds are not the split axis.
inline constexpr int kNoTestFold = -1;

enum class Phase { kTrain, kTest };

namespace detail {

// Uniform-stride subsampling; random phase at train, fixed phase 0 at test.
inline std::vector<int> subsample_frames(int available, int wanted, Phase phase, Rng& rng) {
  if (available < wanted)
    throw std::runtime_error("sample_episode: clip has " + std::to_string(available) +
                             " frames, need " + std::to_string(wanted));
  int stride = available / wanted;
  int span = stride * (wanted - 1) + 1;
  int max_phase = available - span;
  int start = phase == Phase::kTrain && max_phase > 0 ? rand_int(rng, 0, max_phase) : 0;
  std::vector<int> out(wanted);
  for (int i = 0; i < wanted; ++i) out[i] = start + i * stride;
  return out;
}

}  // namespace detail

class EpisodeSampler {
 public:
  EpisodeSampler(const DatasetIndex& index, const FoldSplit& split, int test_fold,
                 SamplerConfig config, CellFilter filter = nullptr)
      : index_(index), split_(split), test_fold_(test_fold), cfg_(config),
        filter_(std::move(filter)) {
    if (test_fold_ >= kNumFolds)
      throw std::runtime_error("EpisodeSampler: test fold out of range");
  }

  const SamplerConfig& config() const { return cfg_; }

  std::vector<int> eligible_classes(Phase phase) const {
    std::vector<int> out;
    for (int c = 0; c < index_.num_motion_classes(); ++c) {
      if (test_fold_ >= 0) {
        bool in_test = split_.fold(c) == test_fold_;
        if (phase == Phase::kTrain && in_test) continue;
        if (phase == Phase::kTest && !in_test) continue;
      }
      if (support_candidates(c).size() >= static_cast<size_t>(cfg_.shots + 1)) out.push_back(c);
    }
    return out;
  }

  EpisodePlan sample_plan(Phase phase, Rng& rng) const {
    std::string last_error = "no eligible motion classes";
    for (int attempt = 0; attempt < cfg_.max_retries; ++attempt) {
      try {
        return try_sample(phase, rng);
      } catch (const std::runtime_error& e) {
        last_error = e.what();
      }
    }
    throw std::runtime_error("sample_episode: giving up after " +
                             std::to_string(cfg_.max_retries) + " retries: " + last_error);
  }

  Episode materialize(const EpisodePlan& plan) const {
    Episode ep;
    ep.target_way = plan.target_way;
    ep.support.resize(plan.support.size());
    for (size_t w = 0; w < plan.support.size(); ++w) {
      for (const SupportPick& pick : plan.support[w]) {
        SupportItem item;
        item.clip = load_clip(pick.clip, pick.frame_indices);
        item.mask.object_id = pick.object_id;
        for (int t : pick.frame_indices)
          item.mask.masks.push_back(load_object_mask(index_, pick.clip, t, pick.object_id));
        item.category = category_of(pick.clip, pick.object_id);
        item.category.motion_class = plan.way_classes[w];
        ep.support[w].push_back(std::move(item));
      }
    }
    ep.query = load_clip(plan.query.clip, plan.query.frame_indices);
    for (const ClipObject& obj : index_.clips[plan.query.clip].objects) {
      QueryObject qo;
      qo.category = obj.category;
      qo.mask.object_id = obj.object_id;
      for (int t : plan.query.frame_indices)
        qo.mask.masks.push_back(load_object_mask(index_, plan.query.clip, t, obj.object_id));
      ep.query_objects.push_back(std::move(qo));
    }
    return ep;
  }

  Episode sample_episode(Phase phase, Rng& rng) const {
    return materialize(sample_plan(phase, rng));
  }

 private:
  struct Candidate {
    int clip;
    int object_id;
    int object_class;
  };

  std::vector<Candidate> support_candidates(int motion_class) const {
    std::vector<Candidate> out;
    for (size_t ci = 0; ci < index_.clips.size(); ++ci) {
      for (const ClipObject& obj : index_.clips[ci].objects) {
        if (obj.category.motion_class != motion_class) continue;
        if (filter_ && !filter_(obj.category.object_class, motion_class)) continue;
        if (index_.clips[ci].frame_count < cfg_.support_frames) continue;
        out.push_back({static_cast<int>(ci), obj.object_id, obj.category.object_class});
        break;  // one support object per clip is enough
      }
    }
    return out;
  }

  CategoryInfo category_of(int clip, int object_id) const {
    for (const ClipObject& obj : index_.clips[clip].objects)
      if (obj.object_id == object_id) return obj.category;
    throw std::runtime_error("sampler: object id not found in clip " + index_.clips[clip].id);
  }

  VideoClip load_clip(int clip, const std::vector<int>& frame_indices) const {
    VideoClip out;
    out.source_id = index_.clips[clip].source;
    for (int t : frame_indices) out.frames.push_back(load_frame(index_, clip, t));
    return out;
  }

  EpisodePlan try_sample(Phase phase, Rng& rng) const {
    std::vector<int> classes = eligible_classes(phase);
    if (static_cast<int>(classes.size()) < cfg_.ways)
      throw std::runtime_error("not enough eligible motion classes (" +
                               std::to_string(classes.size()) + " available, " +
                               std::to_string(cfg_.ways) + " ways)");

    EpisodePlan plan;
    std::shuffle(classes.begin(), classes.end(), rng);
    plan.way_classes.assign(classes.begin(), classes.begin() + cfg_.ways);

    std::set<std::string> used_sources;
    plan.support.resize(cfg_.ways);
    for (int w = 0; w < cfg_.ways; ++w) {
      std::vector<Candidate> cands = support_candidates(plan.way_classes[w]);
      std::shuffle(cands.begin(), cands.end(), rng);
      for (const Candidate& c : cands) {
        if (static_cast<int>(plan.support[w].size()) >= cfg_.shots) break;
        const std::string& src = index_.clips[c.clip].source;
        if (used_sources.count(src)) continue;
        used_sources.insert(src);
        SupportPick pick;
        pick.clip = c.clip;
        pick.object_id = c.object_id;
        pick.frame_indices = detail::subsample_frames(index_.clips[c.clip].frame_count,
                                                      cfg_.support_frames, phase, rng);
        plan.support[w].push_back(std::move(pick));
      }
      if (static_cast<int>(plan.support[w].size()) < cfg_.shots)
        throw std::runtime_error("class " + std::to_string(plan.way_classes[w]) +
                                 " has too few support clips from distinct videos");
    }

    bool want_empty = rand_uniform(rng) < cfg_.empty_rate;
    std::vector<int> query_cands;
    for (size_t ci = 0; ci < index_.clips.size(); ++ci) {
      if (index_.clips[ci].frame_count < cfg_.query_frames) continue;
      if (used_sources.count(index_.clips[ci].source)) continue;
      bool has_way_class = false;
      bool has_target = false;
      for (const ClipObject& obj : index_.clips[ci].objects) {
        for (int w = 0; w < cfg_.ways; ++w)
          if (obj.category.motion_class == plan.way_classes[w]) {
            has_way_class = true;
            if (!filter_ || filter_(obj.category.object_class, obj.category.motion_class))
              has_target = true;
          }
      }
      if (want_empty ? !has_way_class : has_target) query_cands.push_back(static_cast<int>(ci));
    }
    if (query_cands.empty())
      throw std::runtime_error(want_empty ? "no empty-target query clip available"
                                          : "no query clip contains a sampled class");
    plan.query.clip = query_cands[rand_int(rng, 0, static_cast<int>(query_cands.size()) - 1)];
    plan.query.frame_indices = detail::subsample_frames(
        index_.clips[plan.query.clip].frame_count, cfg_.query_frames, phase, rng);

    if (want_empty) {
      plan.target_way = kNoTargetWay;
    } else {
      // The sampled guaranteed-present way; other ways may incidentally
      // also appear in the query.
      std::vector<int> present;
      for (int w = 0; w < cfg_.ways; ++w)
        for (const ClipObject& obj : index_.clips[plan.query.clip].objects)
          if (obj.category.motion_class == plan.way_classes[w] &&
              (!filter_ || filter_(obj.category.object_class, obj.category.motion_class))) {
            present.push_back(w);
            break;
          }
      plan.target_way = present[rand_int(rng, 0, static_cast<int>(present.size()) - 1)];
    }
    return plan;
  }

  const DatasetIndex& index_;
  const FoldSplit& split_;
  int test_fold_;
  SamplerConfig cfg_;
  CellFilter filter_;
};

}  // namespace fsvos::data
