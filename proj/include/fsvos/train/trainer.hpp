#pragma once

// Episodic optimization: one episode per step, adaptive-moment updates with
// a cosine-annealed learning rate, line-delimited JSON logging, checkpoint
// save/resume.

#include <chrono>
#include <fstream>
#include <iostream>

#include "fsvos/data/sampler.hpp"
#include "fsvos/nn/checkpoint.hpp"
#include "fsvos/nn/optim.hpp"
#include "fsvos/train/loss.hpp"

namespace fsvos::train {

struct TrainConfig {
  int ways = 2;            // N
  int shots = 1;           // K
  int support_frames = 4;  // T_s
  int query_frames = 4;    // T_q
  double empty_rate = 0.15;
  int episodes = 3000;     // desk-scale default
  double lr = 1e-5;        // cosine-annealed
  double min_lr_fraction = 0.01;
  uint64_t seed = 1;
  int test_fold = 0;
  data::SplitStrategy split = data::SplitStrategy::kOverlapping;
  int log_every = 50;
  LossWeights weights;

  // Documented short keys: N, K, T_s, T_q, lr, episodes, fold, split, seed.
  nlohmann::json to_json() const {
    return {{"N", ways},
            {"K", shots},
            {"T_s", support_frames},
            {"T_q", query_frames},
            {"empty_rate", empty_rate},
            {"episodes", episodes},
            {"lr", lr},
            {"min_lr_fraction", min_lr_fraction},
            {"seed", seed},
            {"fold", test_fold},
            {"split", data::split_strategy_name(split)},
            {"log_every", log_every},
            {"weights",
             {{"mask_ce", weights.mask_ce},
              {"mask_iou", weights.mask_iou},
              {"proposal_ce", weights.proposal_ce},
              {"proposal_iou", weights.proposal_iou},
              {"aux_object_ce", weights.aux_object_ce},
              {"aux_motion_ce", weights.aux_motion_ce},
              {"match_ce", weights.match_ce}}}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.ways = j.value("N", c.ways);
    c.shots = j.value("K", c.shots);
    c.support_frames = j.value("T_s", c.support_frames);
    c.query_frames = j.value("T_q", c.query_frames);
    c.empty_rate = j.value("empty_rate", c.empty_rate);
    c.episodes = j.value("episodes", c.episodes);
    c.lr = j.value("lr", c.lr);
    c.min_lr_fraction = j.value("min_lr_fraction", c.min_lr_fraction);
    c.seed = j.value("seed", c.seed);
    c.test_fold = j.value("fold", c.test_fold);
    if (j.contains("split"))
      c.split = data::split_strategy_from_name(j.at("split").get<std::string>());
    c.log_every = j.value("log_every", c.log_every);
    if (j.contains("weights")) {
      const auto& w = j.at("weights");
      c.weights.mask_ce = w.value("mask_ce", c.weights.mask_ce);
      c.weights.mask_iou = w.value("mask_iou", c.weights.mask_iou);
      c.weights.proposal_ce = w.value("proposal_ce", c.weights.proposal_ce);
      c.weights.proposal_iou = w.value("proposal_iou", c.weights.proposal_iou);
      c.weights.aux_object_ce = w.value("aux_object_ce", c.weights.aux_object_ce);
      c.weights.aux_motion_ce = w.value("aux_motion_ce", c.weights.aux_motion_ce);
      c.weights.match_ce = w.value("match_ce", c.weights.match_ce);
    }
    return c;
  }

  data::SamplerConfig sampler_config() const {
    data::SamplerConfig sc;
    sc.ways = ways;
    sc.shots = shots;
    sc.support_frames = support_frames;
    sc.query_frames = query_frames;
    sc.empty_rate = empty_rate;
    return sc;
  }
};

struct TrainStats {
  int64_t episodes_run = 0;
  double last_total = 0;
  double mean_total_last_100 = 0;
};

template <typename S>
class Trainer {
 public:
  Trainer(model::DmaNet<S>& net, const TrainConfig& cfg, const data::EpisodeSampler& sampler,
          fs::path out_dir)
      : net_(net), cfg_(cfg), sampler_(sampler), out_dir_(std::move(out_dir)),
        optimizer_(net.params(), cfg.lr) {
    fs::create_directories(out_dir_);
    schedule_.base_lr = cfg_.lr;
    schedule_.min_lr = cfg_.lr * cfg_.min_lr_fraction;
    schedule_.total_steps = cfg_.episodes;
  }

  nn::Adam<S>& optimizer() { return optimizer_; }
  int64_t step() const { return step_; }

  void resume_from(const nn::Checkpoint<S>& ck) {
    nn::ParamList<S> params = optimizer_.params();  // tensors share storage
    nn::restore(ck, params);
    step_ = ck.step;
    optimizer_.set_step_count(ck.step);
    for (size_t i = 0; i < params.size(); ++i) {
      for (const auto& [name, vec] : ck.opt_state) {
        if (name == params[i].first + ".m" && vec.size() == optimizer_.moment1()[i].size())
          optimizer_.moment1()[i] = vec;
        if (name == params[i].first + ".v" && vec.size() == optimizer_.moment2()[i].size())
          optimizer_.moment2()[i] = vec;
      }
    }
  }

  // Runs `episodes` additional steps (bounded by the schedule length).
  TrainStats run(int episodes, std::ostream* console = nullptr) {
    std::ofstream log(out_dir_ / "train_log.jsonl", std::ios::app);
    std::vector<double> recent;
    TrainStats stats;
    auto t0 = std::chrono::steady_clock::now();

    for (int e = 0; e < episodes && step_ < cfg_.episodes; ++e) {
      Rng rng = make_rng(derive_seed(cfg_.seed, 0xE9150DE + step_));
      Episode ep = sampler_.sample_episode(data::Phase::kTrain, rng);

      optimizer_.set_lr(schedule_.lr_at(step_));
      optimizer_.zero_grad();
      model::EpisodeOutputs<S> out = net_.forward_episode(ep);
      LossReport<S> losses = compute_losses(ep, out, net_.config(), cfg_.weights);
      if (!losses.finite()) {
        nlohmann::json diag = losses.to_json();
        diag["episode"] = step_;
        diag["target_way"] = ep.target_way;
        write_file_atomic(out_dir_ / "diagnostic.json", diag.dump(2));
        throw std::runtime_error("training aborted: non-finite loss at episode " +
                                 std::to_string(step_) + " (diagnostic.json written)");
      }
      losses.total_tensor.backward();
      optimizer_.step();
      ++step_;

      recent.push_back(losses.total);
      if (recent.size() > 100) recent.erase(recent.begin());
      stats.last_total = losses.total;

      if (cfg_.log_every > 0 && (step_ % cfg_.log_every == 0 || step_ == cfg_.episodes)) {
        double mean = 0;
        for (double v : recent) mean += v;
        mean /= double(recent.size());
        auto now = std::chrono::steady_clock::now();
        nlohmann::json line = losses.to_json();
        line["episode"] = step_;
        line["lr"] = optimizer_.lr();
        line["mean_total_100"] = mean;
        line["elapsed_s"] =
            std::chrono::duration_cast<std::chrono::milliseconds>(now - t0).count() / 1000.0;
        log << line.dump() << "\n";
        log.flush();
        if (console)
          (*console) << "episode " << step_ << "/" << cfg_.episodes << " loss " << mean
                     << " lr " << optimizer_.lr() << "\n";
      }
    }
    stats.episodes_run = step_;
    double mean = 0;
    for (double v : recent) mean += v;
    stats.mean_total_last_100 = recent.empty() ? 0 : mean / double(recent.size());
    return stats;
  }

  void save(const fs::path& path, const nlohmann::json& extra_config = {}) {
    nlohmann::json cfg;
    cfg["model"] = net_.config().to_json();
    cfg["train"] = cfg_.to_json();
    for (auto it = extra_config.begin(); it != extra_config.end(); ++it) cfg[it.key()] = *it;
    nn::Checkpoint<S> ck = nn::snapshot(optimizer_.params(), cfg, step_);
    for (size_t i = 0; i < optimizer_.moment1().size(); ++i) {
      ck.opt_state.emplace_back(optimizer_.params()[i].first + ".m", optimizer_.moment1()[i]);
      ck.opt_state.emplace_back(optimizer_.params()[i].first + ".v", optimizer_.moment2()[i]);
    }
    nn::save_checkpoint(ck, path);
  }

 private:
  model::DmaNet<S>& net_;
  TrainConfig cfg_;
  const data::EpisodeSampler& sampler_;
  fs::path out_dir_;
  nn::Adam<S> optimizer_;
  nn::CosineSchedule schedule_;
  int64_t step_ = 0;
};

}  // namespace fsvos::train
