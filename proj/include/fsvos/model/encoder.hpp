#pragma once

// Shared multi-scale encoder: a small four-stage convolutional backbone
// (trained from scratch) plus top-down feature pyramid fusion to a common
// width d. Frames are processed independently; all temporal modeling lives
// downstream.

#include <array>
#include <functional>

#include "fsvos/core/types.hpp"
#include "fsvos/model/config.hpp"
#include "fsvos/nn/layers.hpp"

namespace fsvos::model {

using nn::ParamList;
using nn::Tensor;

template <typename S>
struct FeaturePyramid {
  Tensor<S> l1, l2, l3, l4;  // [T, d, H/4..H/32, ...]

  int frames() const { return l1.dim(0); }
  int width() const { return l1.dim(1); }
};

// [T,3,H,W] tensor from a clip (HWC -> CHW per frame).
template <typename S>
inline Tensor<S> clip_to_tensor(const VideoClip& clip) {
  const int T = clip.frame_count(), H = clip.height(), W = clip.width();
  Tensor<S> out = Tensor<S>::zeros({T, 3, H, W});
  S* po = out.ptr();
  for (int t = 0; t < T; ++t) {
    const float* src = clip.frames[t].pix.data();
    for (int c = 0; c < 3; ++c) {
      S* dst = po + (int64_t(t) * 3 + c) * H * W;
      for (int64_t i = 0; i < int64_t(H) * W; ++i) dst[i] = static_cast<S>(src[i * 3 + c]);
    }
  }
  return out;
}

enum class BackboneKind { kTinyConv, kExternal };

// External backbones plug in behind the same pyramid contract: a callable
// emitting 4 stages at strides {4, 8, 16, 32} with declared widths.
template <typename S>
struct ExternalBackboneSpec {
  std::array<int, 4> widths = {0, 0, 0, 0};
  std::function<std::array<Tensor<S>, 4>(const Tensor<S>& frames)> run;
};

template <typename S>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int c0 = cfg.stem_width;
    widths_ = {c0 * 2, c0 * 3, c0 * 4, c0 * 4};
    const bool bias = cfg.backbone_bias;
    stem_ = nn::Conv2d<S>(3, c0, 3, 2, 1, rng, bias);
    down_[0] = nn::Conv2d<S>(c0, widths_[0], 3, 2, 1, rng, bias);
    down_[1] = nn::Conv2d<S>(widths_[0], widths_[1], 3, 2, 1, rng, bias);
    down_[2] = nn::Conv2d<S>(widths_[1], widths_[2], 3, 2, 1, rng, bias);
    down_[3] = nn::Conv2d<S>(widths_[2], widths_[3], 3, 2, 1, rng, bias);
    for (int i = 0; i < 4; ++i)
      refine_[i] = nn::Conv2d<S>(widths_[i], widths_[i], 3, 1, 1, rng, bias);
    build_fpn(rng, widths_);
    fpn_rng_state_ = rng();
  }

  const ModelConfig& config() const { return cfg_; }

  // Rewires to the builtin backbone or an external one. The pyramid
  // contract is validated with a probe frame; mismatches throw.
  void set_backbone(BackboneKind kind, const ExternalBackboneSpec<S>* ext = nullptr) {
    if (kind == BackboneKind::kTinyConv) {
      if (kind_ == BackboneKind::kTinyConv) return;
      kind_ = BackboneKind::kTinyConv;
      Rng rng = make_rng(fpn_rng_state_);
      build_fpn(rng, widths_);
      return;
    }
    if (!ext || !ext->run) throw std::runtime_error("set_backbone: external spec missing");
    constexpr int kProbe = 64;
    Tensor<S> probe = Tensor<S>::zeros({1, 3, kProbe, kProbe});
    std::array<Tensor<S>, 4> stages;
    {
      nn::NoGrad ng;
      stages = ext->run(probe);
    }
    for (int i = 0; i < 4; ++i) {
      int stride = 4 << i;
      if (stages[i].rank() != 4 || stages[i].dim(2) != kProbe / stride ||
          stages[i].dim(3) != kProbe / stride)
        throw std::runtime_error("set_backbone: stage " + std::to_string(i + 1) +
                                 " does not sit at stride " + std::to_string(stride));
      if (stages[i].dim(1) != ext->widths[i])
        throw std::runtime_error("set_backbone: stage " + std::to_string(i + 1) +
                                 " width differs from declared");
    }
    kind_ = BackboneKind::kExternal;
    external_ = *ext;
    Rng rng = make_rng(fpn_rng_state_);
    build_fpn(rng, ext->widths);
  }

  FeaturePyramid<S> encode(const VideoClip& clip) const {
    Tensor<S> frames = clip_to_tensor<S>(clip);
    return encode_frames(frames);
  }

  FeaturePyramid<S> encode_frames(const Tensor<S>& frames_in) const {
    Tensor<S> frames = frames_in;
    int H = frames.dim(2), W = frames.dim(3);
    if (H % 32 != 0 || W % 32 != 0) {
      if (cfg_.on_indivisible == IndivisiblePolicy::kError)
        throw std::runtime_error("encode: input " + std::to_string(W) + "x" + std::to_string(H) +
                                 " not divisible by 32 (set resize policy to allow)");
      int H2 = (H + 31) / 32 * 32, W2 = (W + 31) / 32 * 32;
      frames = nn::upsample_bilinear(frames, H2, W2);
    }

    std::array<Tensor<S>, 4> stages;
    if (kind_ == BackboneKind::kTinyConv) {
      Tensor<S> x = nn::relu(stem_.forward(frames));
      for (int i = 0; i < 4; ++i) {
        x = nn::relu(down_[i].forward(x));
        x = nn::relu(refine_[i].forward(x));
        stages[i] = x;
      }
    } else {
      stages = external_.run(frames);
    }

    // Top-down lateral fusion to equal width d.
    Tensor<S> p4 = lateral_[3].forward(stages[3]);
    Tensor<S> p3 = nn::add(lateral_[2].forward(stages[2]), nn::upsample_nearest2x(p4));
    Tensor<S> p2 = nn::add(lateral_[1].forward(stages[1]), nn::upsample_nearest2x(p3));
    Tensor<S> p1 = nn::add(lateral_[0].forward(stages[0]), nn::upsample_nearest2x(p2));

    FeaturePyramid<S> pyr;
    pyr.l1 = smooth_[0].forward(p1);
    pyr.l2 = smooth_[1].forward(p2);
    pyr.l3 = smooth_[2].forward(p3);
    pyr.l4 = smooth_[3].forward(p4);
    return pyr;
  }

  void params(ParamList<S>& out, const std::string& prefix) const {
    if (kind_ == BackboneKind::kTinyConv) {
      stem_.params(out, prefix + ".stem");
      for (int i = 0; i < 4; ++i) {
        down_[i].params(out, prefix + ".down" + std::to_string(i + 1));
        refine_[i].params(out, prefix + ".refine" + std::to_string(i + 1));
      }
    }
    for (int i = 0; i < 4; ++i) {
      lateral_[i].params(out, prefix + ".lateral" + std::to_string(i + 1));
      smooth_[i].params(out, prefix + ".smooth" + std::to_string(i + 1));
    }
  }

 private:
  void build_fpn(Rng& rng, const std::array<int, 4>& widths) {
    const bool bias = cfg_.backbone_bias;
    for (int i = 0; i < 4; ++i) {
      lateral_[i] = nn::Conv2d<S>(widths[i], cfg_.d, 1, 1, 0, rng, bias);
      smooth_[i] = nn::Conv2d<S>(cfg_.d, cfg_.d, 3, 1, 1, rng, bias);
    }
  }

  ModelConfig cfg_;
  BackboneKind kind_ = BackboneKind::kTinyConv;
  std::array<int, 4> widths_ = {0, 0, 0, 0};
  nn::Conv2d<S> stem_;
  std::array<nn::Conv2d<S>, 4> down_, refine_, lateral_, smooth_;
  ExternalBackboneSpec<S> external_;
  uint64_t fpn_rng_state_ = 0;
};

}  // namespace fsvos::model
