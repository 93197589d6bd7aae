#pragma once

// Decoupled motion-appearance prototype extraction. One shared module
// serves both branches: the support side pools with annotated masks, the
// query side with binarized proposals.
//
// Appearance prototypes: per-frame mask pooling of 1/4-scale features.
// Motion prototypes: adjacent-frame feature differences (zero-padded at the
// last step), one 3x3x3 convolution, then spatial pooling per time step.
// Both feed auxiliary classifiers and a transformer refiner over learnable
// queries plus a [CLS] summary token.

#include <optional>
#include <vector>

#include "fsvos/model/config.hpp"
#include "fsvos/model/encoder.hpp"

namespace fsvos::model {

template <typename S>
struct PrototypeSet {
  Tensor<S> appearance;       // P_a [T, d]
  Tensor<S> motion;           // P_m [T, d]; undefined when the branch is off
  Tensor<S> differences;      // D [T, d, h, w]; only for the differencing extractor
  Tensor<S> refined;          // P_dma [Q, d]
  Tensor<S> cls;              // [d]
  Tensor<S> object_logits;    // p_o [C_o]
  Tensor<S> motion_logits;    // p_m [C_m]
  std::vector<uint8_t> empty_mask_frames;
};

enum class Branch { kSupport, kQuery };

// Two-layer auxiliary classification head.
template <typename S>
struct AuxHead {
  nn::Linear<S> hidden, out;

  AuxHead() = default;
  AuxHead(int d, int classes, Rng& rng) : hidden(d, d, rng), out(d, classes, rng) {}

  Tensor<S> forward(const Tensor<S>& x) const {
    return out.forward(nn::relu(hidden.forward(x)));
  }

  void params(nn::ParamList<S>& list, const std::string& prefix) const {
    hidden.params(list, prefix + ".hidden");
    out.params(list, prefix + ".out");
  }
};

template <typename S>
class DmaModule {
 public:
  DmaModule() = default;
  DmaModule(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int d = cfg.d;
    motion_conv_ = nn::Conv3d<S>(d, d, 3, rng);
    object_head_ = AuxHead<S>(d, cfg.num_object_classes, rng);
    motion_head_ = AuxHead<S>(d, cfg.num_motion_classes, rng);
    tokens_ = Tensor<S>::randn({cfg.num_queries + 1, d}, rng, S(0.02), true);
    for (int l = 0; l < cfg.dma_layers; ++l) {
      cross_motion_.emplace_back(d, cfg.heads, rng);
      cross_appearance_.emplace_back(d, cfg.heads, rng);
      self_attn_.emplace_back(d, cfg.heads, rng);
      ffn_.emplace_back(d, d * cfg.ffn_mult, rng);
    }
    final_ln_ = nn::LayerNorm<S>(d);
  }

  const ModelConfig& config() const { return cfg_; }
  nn::Conv3d<S>& motion_conv() { return motion_conv_; }

  // Eq-2-style mask pooling: P_a[t] = sum(F ⊙ M) / sum(M). Support-side
  // empty frames stay zero (and are flagged); query-side empty frames fall
  // back to global average pooling.
  Tensor<S> appearance_prototype(const Tensor<S>& f_l1, const Tensor<S>& mask, Branch branch,
                                 std::vector<uint8_t>* empty_flags = nullptr) const {
    auto policy = branch == Branch::kSupport ? nn::EmptyMaskPolicy::kZero
                                             : nn::EmptyMaskPolicy::kGlobalAveragePool;
    return nn::mask_pool(f_l1, mask, policy, empty_flags);
  }

  // Adjacent-frame differences with a zero-padded final slot, 3D conv,
  // spatial pooling to [T, d].
  std::pair<Tensor<S>, Tensor<S>> motion_prototype(const Tensor<S>& f_l1) const {
    const int T = f_l1.dim(0);
    if (T < 2) throw std::runtime_error("motion_prototype: need at least 2 frames");
    Tensor<S> next = nn::slice(f_l1, 0, 1, T - 1);
    Tensor<S> prev = nn::slice(f_l1, 0, 0, T - 1);
    Tensor<S> diff = nn::sub(next, prev);
    Tensor<S> pad = Tensor<S>::zeros({1, f_l1.dim(1), f_l1.dim(2), f_l1.dim(3)});
    Tensor<S> d_vol = nn::concat<S>({diff, pad}, 0);  // [T, d, h, w]

    Tensor<S> x = nn::permute(d_vol, {1, 0, 2, 3});  // [d, T, h, w] = [C, D, H, W]
    Tensor<S> y = motion_conv_.forward(x);
    Tensor<S> pm = cfg_.motion_pool == MotionPool::kAverage ? nn::spatial_mean_tc(y)
                                                            : nn::spatial_max_tc(y);
    return {d_vol, pm};
  }

  // Auxiliary heads on temporally averaged prototypes (unnormalized logits).
  std::pair<Tensor<S>, Tensor<S>> classify_prototypes(const Tensor<S>& p_a,
                                                      const Tensor<S>& p_m) const {
    Tensor<S> p_o, p_mcls;
    if (p_a.defined()) p_o = object_head_.forward(nn::reshape(nn::mean_rows(p_a), {1, cfg_.d}));
    if (p_m.defined())
      p_mcls = motion_head_.forward(nn::reshape(nn::mean_rows(p_m), {1, cfg_.d}));
    if (p_o.defined()) p_o = nn::reshape(p_o, {cfg_.num_object_classes});
    if (p_mcls.defined()) p_mcls = nn::reshape(p_mcls, {cfg_.num_motion_classes});
    return {p_o, p_mcls};
  }

  // L transformer layers over Q learnable queries + [CLS]: cross-attention
  // to motion prototypes, cross-attention to appearance prototypes,
  // self-attention, FFN. Returns (P_dma [Q,d], cls [d]).
  std::pair<Tensor<S>, Tensor<S>> refine(const Tensor<S>& p_a, const Tensor<S>& p_m) const {
    Tensor<S> x = tokens_;
    Tensor<S> ka, km;
    if (cfg_.use_motion && p_m.defined()) km = with_pe(p_m);
    if (cfg_.use_appearance && p_a.defined()) ka = with_pe(p_a);
    for (size_t l = 0; l < cross_motion_.size(); ++l) {
      if (km.defined()) x = cross_motion_[l].forward_cross(x, km);
      if (ka.defined()) x = cross_appearance_[l].forward_cross(x, ka);
      x = self_attn_[l].forward_self(x);
      x = ffn_[l].forward(x);
    }
    x = final_ln_.forward(x);
    Tensor<S> cls = nn::reshape(nn::slice(x, 0, 0, 1), {cfg_.d});
    Tensor<S> refined = nn::slice(x, 0, 1, cfg_.num_queries);
    return {refined, cls};
  }

  // Full pipeline; identical code path for both branches.
  PrototypeSet<S> extract(const Tensor<S>& f_l1, const Tensor<S>& mask, Branch branch) const {
    PrototypeSet<S> out;
    if (cfg_.use_appearance || cfg_.motion_extractor == MotionExtractor::kMaskPool)
      out.appearance = appearance_prototype(f_l1, mask, branch, &out.empty_mask_frames);
    if (cfg_.use_motion) {
      if (cfg_.motion_extractor == MotionExtractor::kDifferencing) {
        auto [d_vol, pm] = motion_prototype(f_l1);
        out.differences = d_vol;
        out.motion = pm;
      } else {
        // Ablation: the motion branch fed by mask pooling instead of
        // temporal differencing.
        out.motion = out.appearance;
      }
    }
    auto [p_o, p_m_logits] = classify_prototypes(
        cfg_.use_appearance ? out.appearance : Tensor<S>(), out.motion);
    out.object_logits = p_o;
    out.motion_logits = p_m_logits;
    auto [refined, cls] = refine(cfg_.use_appearance ? out.appearance : Tensor<S>(), out.motion);
    out.refined = refined;
    out.cls = cls;
    return out;
  }

  void params(ParamList<S>& out, const std::string& prefix) const {
    if (cfg_.use_motion && cfg_.motion_extractor == MotionExtractor::kDifferencing)
      motion_conv_.params(out, prefix + ".motion_conv");
    if (cfg_.use_appearance) object_head_.params(out, prefix + ".object_head");
    if (cfg_.use_motion) motion_head_.params(out, prefix + ".motion_head");
    nn::add_param(out, prefix + ".tokens", tokens_);
    for (size_t l = 0; l < cross_motion_.size(); ++l) {
      std::string lp = prefix + ".layer" + std::to_string(l);
      if (cfg_.use_motion) cross_motion_[l].params(out, lp + ".cross_motion");
      if (cfg_.use_appearance) cross_appearance_[l].params(out, lp + ".cross_appearance");
      self_attn_[l].params(out, lp + ".self");
      ffn_[l].params(out, lp + ".ffn");
    }
    final_ln_.params(out, prefix + ".final_ln");
  }

  // Test hook: silences the appearance cross-attention output projection so
  // refine() becomes a function of P_m only.
  void zero_appearance_attention() {
    for (auto& block : cross_appearance_) {
      std::fill(block.attn.wo.w.vec().begin(), block.attn.wo.w.vec().end(), S(0));
      std::fill(block.attn.wo.b.vec().begin(), block.attn.wo.b.vec().end(), S(0));
    }
  }

 private:
  Tensor<S> with_pe(const Tensor<S>& rows) const {
    if (!cfg_.temporal_pe) return rows;
    return nn::add(rows, nn::sinusoidal_rows<S>(rows.dim(0), cfg_.d));
  }

  ModelConfig cfg_;
  nn::Conv3d<S> motion_conv_;
  AuxHead<S> object_head_, motion_head_;
  Tensor<S> tokens_;
  std::vector<nn::AttnBlock<S>> cross_motion_, cross_appearance_, self_attn_;
  std::vector<nn::FfnBlock<S>> ffn_;
  nn::LayerNorm<S> final_ln_;
};

}  // namespace fsvos::model
