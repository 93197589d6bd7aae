#pragma once

#include <string>

#include <json.hpp>

namespace fsvos::model {

enum class MotionExtractor : int { kDifferencing = 0, kMaskPool = 1 };
enum class MotionPool : int { kAverage = 0, kMax = 1 };
enum class IndivisiblePolicy : int { kError = 0, kResize = 1 };

struct ModelConfig {
  int d = 64;             // pyramid / prototype width (64 for tests, 256 for full runs)
  int stem_width = 16;    // backbone stem channels
  int num_queries = 8;    // Q learnable queries
  int dma_layers = 3;     // L transformer layers in the prototype refiner
  int fusion_layers = 2;  // prototype attention layers
  int heads = 4;
  int ffn_mult = 2;
  int num_object_classes = 0;  // C_o
  int num_motion_classes = 0;  // C_m

  // Ablation axes.
  bool use_motion = true;
  bool use_appearance = true;
  bool aux_object = true;
  bool aux_motion = true;
  MotionExtractor motion_extractor = MotionExtractor::kDifferencing;
  // Spatial pooling over the 3D-conv output. Max by default: the spatial
  // average of a difference field telescopes to ~0 for translating objects
  // (feature mass is conserved frame to frame), which starves the motion
  // branch; peak responses survive. Average remains as an ablation.
  MotionPool motion_pool = MotionPool::kMax;

  bool temporal_pe = true;
  bool backbone_bias = true;
  IndivisiblePolicy on_indivisible = IndivisiblePolicy::kError;

  // Inference-time decisions.
  float proposal_threshold = 0.5f;  // ties go to foreground
  float empty_tau = 0.5f;           // on (S_match+1)/2
  float empty_area_eps = 0.001f;    // fraction of H*W

  nlohmann::json to_json() const {
    return {{"d", d},
            {"stem_width", stem_width},
            {"num_queries", num_queries},
            {"dma_layers", dma_layers},
            {"fusion_layers", fusion_layers},
            {"heads", heads},
            {"ffn_mult", ffn_mult},
            {"num_object_classes", num_object_classes},
            {"num_motion_classes", num_motion_classes},
            {"use_motion", use_motion},
            {"use_appearance", use_appearance},
            {"aux_object", aux_object},
            {"aux_motion", aux_motion},
            {"motion_extractor", motion_extractor == MotionExtractor::kDifferencing
                                     ? "differencing"
                                     : "mask-pool"},
            {"motion_pool", motion_pool == MotionPool::kAverage ? "avg" : "max"},
            {"temporal_pe", temporal_pe},
            {"backbone_bias", backbone_bias},
            {"proposal_threshold", proposal_threshold},
            {"empty_tau", empty_tau},
            {"empty_area_eps", empty_area_eps}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.d = j.value("d", c.d);
    c.stem_width = j.value("stem_width", c.stem_width);
    c.num_queries = j.value("num_queries", c.num_queries);
    c.dma_layers = j.value("dma_layers", c.dma_layers);
    c.fusion_layers = j.value("fusion_layers", c.fusion_layers);
    c.heads = j.value("heads", c.heads);
    c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
    c.num_object_classes = j.value("num_object_classes", c.num_object_classes);
    c.num_motion_classes = j.value("num_motion_classes", c.num_motion_classes);
    c.use_motion = j.value("use_motion", c.use_motion);
    c.use_appearance = j.value("use_appearance", c.use_appearance);
    c.aux_object = j.value("aux_object", c.aux_object);
    c.aux_motion = j.value("aux_motion", c.aux_motion);
    if (j.contains("motion_extractor"))
      c.motion_extractor = j.at("motion_extractor").get<std::string>() == "mask-pool"
                               ? MotionExtractor::kMaskPool
                               : MotionExtractor::kDifferencing;
    if (j.contains("motion_pool"))
      c.motion_pool =
          j.at("motion_pool").get<std::string>() == "max" ? MotionPool::kMax : MotionPool::kAverage;
    c.temporal_pe = j.value("temporal_pe", c.temporal_pe);
    c.backbone_bias = j.value("backbone_bias", c.backbone_bias);
    c.proposal_threshold = j.value("proposal_threshold", c.proposal_threshold);
    c.empty_tau = j.value("empty_tau", c.empty_tau);
    c.empty_area_eps = j.value("empty_area_eps", c.empty_area_eps);
    return c;
  }

  // Named ablations exposed by the training CLI.
  void apply_ablation(const std::string& name) {
    if (name.empty() || name == "none") return;
    if (name == "appearance-only") {
      use_motion = false;
    } else if (name == "motion-only") {
      use_appearance = false;
    } else if (name == "no-aux-object") {
      aux_object = false;
    } else if (name == "no-aux-motion") {
      aux_motion = false;
    } else if (name == "mask-pool-motion") {
      motion_extractor = MotionExtractor::kMaskPool;
    } else {
      throw std::runtime_error("unknown ablation: " + name);
    }
  }
};

}  // namespace fsvos::model
