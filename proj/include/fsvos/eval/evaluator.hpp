#pragma once

// Episodic evaluation: sample test episodes, predict, score per way, and
// aggregate J&F / T-Acc / N-Acc. Episodes are presampled serially (so the
// result is independent of thread count) and evaluated in parallel.

#include <omp.h>

#include "fsvos/data/sampler.hpp"
#include "fsvos/metrics/metrics.hpp"
#include "fsvos/model/fusion.hpp"

namespace fsvos::eval {

struct EvalOptions {
  int episodes = 2000;  // desk-scale default (the full protocol uses 20k)
  uint64_t seed = 7;
  // Oracle harness switches.
  bool oracle_mask = false;    // replace predictions with ground-truth masks
  bool oracle_motion = false;  // perfect way selection (gt emptiness bits)
  bool never_empty = false;    // degenerate predictor that never flags empty
  double boundary_tolerance = -1.0;  // <0: DAVIS-style default from image size
  bool parallel = true;
};

struct EvalResult {
  metrics::Summary summary;
  std::vector<metrics::EvalRecord> records;
  int episodes = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["episodes"] = episodes;
    j["jf"] = summary.jf;
    j["j"] = summary.j;
    j["f"] = summary.f;
    j["t_acc"] = summary.t_acc;
    if (summary.n_acc)
      j["n_acc"] = *summary.n_acc;
    else
      j["n_acc"] = nullptr;
    j["non_empty_ways"] = summary.non_empty_ways;
    j["empty_ways"] = summary.empty_ways;
    return j;
  }
};

template <typename S>
inline void score_episode(const model::DmaNet<S>& net, const Episode& ep, const EvalOptions& opt,
                          std::vector<metrics::EvalRecord>& out_records) {
  Prediction pred = net.predict_episode(ep);
  for (int way = 0; way < ep.ways(); ++way) {
    MaskSequence gt = ep.way_ground_truth(way);
    double tol = opt.boundary_tolerance > 0
                     ? opt.boundary_tolerance
                     : metrics::default_boundary_tolerance(ep.query.height(), ep.query.width());
    std::vector<Mask> pred_masks =
        opt.oracle_mask ? gt.masks : model::prediction_masks(pred.ways[way]);
    bool empty_pred = pred.ways[way].is_empty;
    if (opt.oracle_motion) empty_pred = gt.all_empty();
    if (opt.never_empty) empty_pred = false;
    out_records.push_back(metrics::evaluate_way(pred_masks, gt.masks, empty_pred, tol));
  }
}

template <typename S>
EvalResult evaluate(const model::DmaNet<S>& net, const data::EpisodeSampler& sampler,
                    const EvalOptions& opt) {
  // Deterministic plan stream regardless of worker count.
  std::vector<data::EpisodePlan> plans;
  plans.reserve(opt.episodes);
  Rng rng = make_rng(derive_seed(opt.seed, 0xE7A1));
  for (int e = 0; e < opt.episodes; ++e) plans.push_back(sampler.sample_plan(data::Phase::kTest, rng));

  const int ways = sampler.config().ways;
  std::vector<metrics::EvalRecord> records(size_t(opt.episodes) * ways);

#pragma omp parallel for schedule(dynamic) if (opt.parallel)
  for (int e = 0; e < opt.episodes; ++e) {
    Episode ep = sampler.materialize(plans[e]);
    std::vector<metrics::EvalRecord> local;
    score_episode(net, ep, opt, local);
    for (int w = 0; w < ways; ++w) records[size_t(e) * ways + w] = local[w];
  }

  EvalResult result;
  result.records = std::move(records);
  result.episodes = opt.episodes;
  result.summary = metrics::accumulate(result.records);
  return result;
}

// Table in the benchmark layout: J&F, T-Acc, N-Acc, then per-fold J&F
// columns (folds not evaluated in this run print as "-").
inline std::string format_table(const EvalResult& result, int fold) {
  char buf[256];
  std::string out;
  out += "| J&F   | T-Acc | N-Acc | Fold 1 | Fold 2 | Fold 3 | Fold 4 |\n";
  out += "|-------|-------|-------|--------|--------|--------|--------|\n";
  std::string nacc = result.summary.n_acc
                         ? (std::snprintf(buf, sizeof(buf), "%5.1f", *result.summary.n_acc * 100),
                            std::string(buf))
                         : std::string("    -");
  std::string folds[4] = {"     -", "     -", "     -", "     -"};
  if (fold >= 0 && fold < 4) {
    std::snprintf(buf, sizeof(buf), "%6.1f", result.summary.jf * 100);
    folds[fold] = buf;
  }
  std::snprintf(buf, sizeof(buf), "| %5.1f | %5.1f | %s | %s | %s | %s | %s |\n",
                result.summary.jf * 100, result.summary.t_acc * 100, nacc.c_str(),
                folds[0].c_str(), folds[1].c_str(), folds[2].c_str(), folds[3].c_str());
  out += buf;
  return out;
}

// Per-episode prediction dump: soft-mask PNGs plus a scores JSON.
template <typename S>
inline void dump_prediction(const Prediction& pred, const Episode& ep, const fs::path& dir) {
  StagedDir staged(dir);
  nlohmann::json scores = nlohmann::json::array();
  for (size_t way = 0; way < pred.ways.size(); ++way) {
    const WayPrediction& wp = pred.ways[way];
    for (size_t t = 0; t < wp.soft_masks.size(); ++t) {
      png::ImageU8 img;
      img.h = wp.mask_h;
      img.w = wp.mask_w;
      img.c = 1;
      img.pix.resize(wp.soft_masks[t].size());
      for (size_t i = 0; i < img.pix.size(); ++i)
        img.pix[i] = static_cast<uint8_t>(std::lround(wp.soft_masks[t][i] * 255.0f));
      png::write(staged.path() / ("way" + std::to_string(way)) / frame_filename(int(t)), img);
    }
    scores.push_back({{"way", way},
                      {"match_score", wp.match_score},
                      {"is_empty", wp.is_empty},
                      {"motion_class", ep.way_motion_class(int(way))}});
  }
  write_file_text(staged.path() / "scores.json", nlohmann::json({{"ways", scores}}).dump(2));
  staged.commit();
}

}  // namespace fsvos::eval
