#pragma once

// Support-query prototype attention, multi-scale mask decoding and the
// [CLS] matching score, plus the end-to-end network container. Ways are
// processed independently; no information flows between them.

#include <optional>

#include "fsvos/model/dma.hpp"
#include "fsvos/model/proposal.hpp"

namespace fsvos::model {

// Cross-attention where query-side prototypes attend over the concatenated
// K-shot support prototypes, then self-attention; repeated for L' layers.
template <typename S>
class PrototypeAttention {
 public:
  PrototypeAttention() = default;
  PrototypeAttention(const ModelConfig& cfg, Rng& rng) {
    for (int l = 0; l < cfg.fusion_layers; ++l) {
      cross_.emplace_back(cfg.d, cfg.heads, rng);
      self_.emplace_back(cfg.d, cfg.heads, rng);
      ffn_.emplace_back(cfg.d, cfg.d * cfg.ffn_mult, rng);
    }
  }

  // p_q: [Q, d]; p_s: [K*Q, d] (supports concatenated along the key axis).
  Tensor<S> forward(const Tensor<S>& p_q, const Tensor<S>& p_s) const {
    Tensor<S> x = p_q;
    for (size_t l = 0; l < cross_.size(); ++l) {
      x = cross_[l].forward_cross(x, p_s);
      x = self_[l].forward_self(x);
      x = ffn_[l].forward(x);
    }
    return x;
  }

  void params(ParamList<S>& out, const std::string& prefix) const {
    for (size_t l = 0; l < cross_.size(); ++l) {
      std::string lp = prefix + ".layer" + std::to_string(l);
      cross_[l].params(out, lp + ".cross");
      self_[l].params(out, lp + ".self");
      ffn_[l].params(out, lp + ".ffn");
    }
  }

 private:
  std::vector<nn::AttnBlock<S>> cross_, self_;
  std::vector<nn::FfnBlock<S>> ffn_;
};

// Enhances each pyramid level by letting pixels attend to the fused
// prototypes, fuses top-down (1/32 -> 1/4), and emits one soft mask per
// frame at input resolution.
template <typename S>
class MaskDecoder {
 public:
  MaskDecoder() = default;
  MaskDecoder(const ModelConfig& cfg, Rng& rng) : d_(cfg.d) {
    for (int i = 0; i < 4; ++i) {
      pixel_attn_.emplace_back(cfg.d, cfg.heads, rng);
      smooth_.emplace_back(cfg.d, cfg.d, 3, 1, 1, rng);
    }
    head_ = nn::Conv2d<S>(cfg.d, 1, 1, 1, 0, rng);
  }

  // Returns mask logits [T, 1, H, W] at input resolution.
  Tensor<S> decode(const FeaturePyramid<S>& pyr, const Tensor<S>& fused, int out_h,
                   int out_w) const {
    std::array<Tensor<S>, 4> levels = {pyr.l1, pyr.l2, pyr.l3, pyr.l4};
    std::array<Tensor<S>, 4> enhanced;
    for (int i = 0; i < 4; ++i) enhanced[i] = enhance(levels[i], fused, i);

    Tensor<S> y = smooth_[3].forward(enhanced[3]);
    y = smooth_[2].forward(nn::add(enhanced[2], nn::upsample_nearest2x(y)));
    y = smooth_[1].forward(nn::add(enhanced[1], nn::upsample_nearest2x(y)));
    y = smooth_[0].forward(nn::add(enhanced[0], nn::upsample_nearest2x(y)));
    Tensor<S> logits = head_.forward(nn::relu(y));  // [T, 1, H/4, W/4]
    return nn::upsample_bilinear(logits, out_h, out_w);
  }

  void params(ParamList<S>& out, const std::string& prefix) const {
    for (int i = 0; i < 4; ++i) {
      pixel_attn_[i].params(out, prefix + ".attn" + std::to_string(i + 1));
      smooth_[i].params(out, prefix + ".smooth" + std::to_string(i + 1));
    }
    head_.params(out, prefix + ".head");
  }

 private:
  Tensor<S> enhance(const Tensor<S>& level, const Tensor<S>& fused, int i) const {
    const int T = level.dim(0), H = level.dim(2), W = level.dim(3);
    Tensor<S> tokens = nn::reshape(nn::permute(level, {0, 2, 3, 1}), {T * H * W, d_});
    tokens = pixel_attn_[i].forward_cross(tokens, fused);
    return nn::permute(nn::reshape(tokens, {T, H, W, d_}), {0, 3, 1, 2});
  }

  int d_ = 0;
  std::vector<nn::AttnBlock<S>> pixel_attn_;
  std::vector<nn::Conv2d<S>> smooth_;
  nn::Conv2d<S> head_;
};

// Eq-6 matching: cosine similarity of the two [CLS] tokens, in [-1, 1];
// zero vectors map to score 0.
template <typename S>
inline Tensor<S> match_score(const Tensor<S>& cls_s, const Tensor<S>& cls_q) {
  return nn::cosine(cls_s, cls_q);
}

// ---------------------------------------------------------------------------
// Full network

template <typename S>
struct EpisodeOutputs {
  ProposalOutput<S> proposals;  // on the query pyramid
  std::vector<std::vector<PrototypeSet<S>>> support;  // N x K prototype sets
  PrototypeSet<S> query;
  std::vector<Tensor<S>> way_mask_logits;  // per way [T_q, 1, H, W]
  std::vector<Tensor<S>> way_scores;       // per way scalar
  std::vector<uint8_t> query_empty_proposal_frames;
};

struct ForwardOptions {
  // Oracle/testing hook: pool the query branch with the union of its
  // annotated masks instead of binarized proposals.
  bool use_gt_query_masks = false;
};

template <typename S>
class DmaNet {
 public:
  DmaNet() = default;
  DmaNet(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    Rng rng = make_rng(derive_seed(seed, 0xD3A));
    encoder_ = Encoder<S>(cfg, rng);
    proposals_ = ProposalGenerator<S>(cfg, rng);
    dma_ = DmaModule<S>(cfg, rng);
    proto_attn_ = PrototypeAttention<S>(cfg, rng);
    decoder_ = MaskDecoder<S>(cfg, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  Encoder<S>& encoder() { return encoder_; }
  const Encoder<S>& encoder() const { return encoder_; }
  ProposalGenerator<S>& proposal_generator() { return proposals_; }
  DmaModule<S>& dma() { return dma_; }
  const DmaModule<S>& dma() const { return dma_; }
  PrototypeAttention<S>& prototype_attention() { return proto_attn_; }
  MaskDecoder<S>& mask_decoder() { return decoder_; }

  ParamList<S> params() const {
    ParamList<S> out;
    encoder_.params(out, "encoder");
    proposals_.params(out, "proposals");
    dma_.params(out, "dma");
    proto_attn_.params(out, "proto_attn");
    decoder_.params(out, "decoder");
    return out;
  }

  // Query-side masks for DMA pooling: binarized proposals upsampled to 1/4
  // by nearest neighbor (or the gt union under the oracle hook).
  Tensor<S> query_dma_masks(const Episode& ep, const ProposalOutput<S>& props,
                            const ForwardOptions& opt) const {
    if (opt.use_gt_query_masks) {
      std::vector<Mask> unions(ep.query.frame_count());
      for (int t = 0; t < ep.query.frame_count(); ++t) {
        Mask m;
        m.h = ep.query.height();
        m.w = ep.query.width();
        m.v.assign(size_t(m.h) * m.w, 0);
        for (const auto& qo : ep.query_objects)
          for (size_t i = 0; i < m.v.size(); ++i) m.v[i] |= qo.mask.masks[t].v[i];
        unions[t] = std::move(m);
      }
      return masks_to_tensor_downsampled<S>(unions, 4);
    }
    std::vector<Mask> bin = binarize(props.probs, cfg_.proposal_threshold);
    std::vector<Mask> up(bin.size());
    for (size_t t = 0; t < bin.size(); ++t) up[t] = upsample_mask_nearest2x(bin[t]);
    return masks_to_tensor<S>(up);
  }

  EpisodeOutputs<S> forward_episode(const Episode& ep, const ForwardOptions& opt = {}) const {
    EpisodeOutputs<S> out;
    const int H = ep.query.height(), W = ep.query.width();

    FeaturePyramid<S> query_pyr = encoder_.encode(ep.query);
    out.proposals = proposals_.propose(query_pyr);

    Tensor<S> query_masks = query_dma_masks(ep, out.proposals, opt);
    out.query = dma_.extract(query_pyr.l1, query_masks, Branch::kQuery);
    out.query_empty_proposal_frames = out.query.empty_mask_frames;

    out.support.resize(ep.ways());
    for (int way = 0; way < ep.ways(); ++way) {
      for (const SupportItem& item : ep.support[way]) {
        FeaturePyramid<S> pyr = encoder_.encode(item.clip);
        Tensor<S> mask = masks_to_tensor_downsampled<S>(item.mask.masks, 4);
        out.support[way].push_back(dma_.extract(pyr.l1, mask, Branch::kSupport));
      }
    }

    for (int way = 0; way < ep.ways(); ++way) {
      const auto& shots = out.support[way];
      // K-shot: prototypes concatenate along the key axis, cls tokens
      // average.
      std::vector<Tensor<S>> proto_parts;
      Tensor<S> cls_sum;
      for (const auto& shot : shots) {
        proto_parts.push_back(shot.refined);
        cls_sum = cls_sum.defined() ? nn::add(cls_sum, shot.cls) : shot.cls;
      }
      Tensor<S> support_protos = proto_parts.size() == 1 ? proto_parts[0]
                                                         : nn::concat<S>(proto_parts, 0);
      Tensor<S> cls_s = nn::muls(cls_sum, S(1) / S(shots.size()));

      Tensor<S> fused = proto_attn_.forward(out.query.refined, support_protos);
      out.way_mask_logits.push_back(decoder_.decode(query_pyr, fused, H, W));
      out.way_scores.push_back(match_score(cls_s, out.query.cls));
    }
    return out;
  }

  // Inference: no tape, soft masks in [0,1], per-way empty decision
  // (S_match remapped below tau, or negligible binarized area).
  Prediction predict_episode(const Episode& ep, const ForwardOptions& opt = {}) const {
    nn::NoGrad ng;
    EpisodeOutputs<S> outs = forward_episode(ep, opt);
    const int H = ep.query.height(), W = ep.query.width();
    const int Tq = ep.query.frame_count();

    Prediction pred;
    for (int way = 0; way < ep.ways(); ++way) {
      WayPrediction wp;
      wp.mask_h = H;
      wp.mask_w = W;
      wp.match_score = static_cast<float>(outs.way_scores[way].item());
      Tensor<S> probs = nn::sigmoid(outs.way_mask_logits[way]);
      wp.soft_masks.resize(Tq);
      int64_t area = 0;
      const S* p = probs.ptr();
      for (int t = 0; t < Tq; ++t) {
        wp.soft_masks[t].resize(size_t(H) * W);
        for (int64_t i = 0; i < int64_t(H) * W; ++i) {
          float v = static_cast<float>(p[int64_t(t) * H * W + i]);
          v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
          wp.soft_masks[t][i] = v;
          if (v >= cfg_.proposal_threshold) ++area;
        }
      }
      double remapped = (wp.match_score + 1.0) / 2.0;
      double min_area = double(cfg_.empty_area_eps) * H * W * Tq;
      wp.is_empty = remapped < cfg_.empty_tau || area < min_area;
      pred.ways.push_back(std::move(wp));
    }
    return pred;
  }

 private:
  ModelConfig cfg_;
  Encoder<S> encoder_;
  ProposalGenerator<S> proposals_;
  DmaModule<S> dma_;
  PrototypeAttention<S> proto_attn_;
  MaskDecoder<S> decoder_;
};

// Binarized masks from a way prediction (threshold 0.5, ties foreground).
inline std::vector<Mask> prediction_masks(const WayPrediction& wp, float threshold = 0.5f) {
  std::vector<Mask> out(wp.soft_masks.size());
  for (size_t t = 0; t < wp.soft_masks.size(); ++t) {
    out[t].h = wp.mask_h;
    out[t].w = wp.mask_w;
    out[t].v.resize(wp.soft_masks[t].size());
    for (size_t i = 0; i < out[t].v.size(); ++i)
      out[t].v[i] = wp.soft_masks[t][i] >= threshold ? 1 : 0;
  }
  return out;
}

}  // namespace fsvos::model
