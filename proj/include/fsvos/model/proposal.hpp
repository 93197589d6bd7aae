#pragma once

// Class-agnostic moving-foreground proposals for the query video: three
// residual convolutional blocks at 1/32, 1/16 and 1/8 with progressive
// upsample-and-fuse, and a single-channel head.

#include "fsvos/core/types.hpp"
#include "fsvos/model/encoder.hpp"

namespace fsvos::model {

template <typename S>
struct ResBlock {
  nn::Conv2d<S> a, b;

  ResBlock() = default;
  ResBlock(int ch, Rng& rng) : a(ch, ch, 3, 1, 1, rng), b(ch, ch, 3, 1, 1, rng) {}

  Tensor<S> forward(const Tensor<S>& x) const {
    return nn::add(x, b.forward(nn::relu(a.forward(x))));
  }

  void params(ParamList<S>& out, const std::string& prefix) const {
    a.params(out, prefix + ".a");
    b.params(out, prefix + ".b");
  }
};

template <typename S>
struct ProposalOutput {
  Tensor<S> logits;  // [T, 1, H/8, W/8]
  Tensor<S> probs;   // sigmoid(logits), values in [0,1]
};

template <typename S>
class ProposalGenerator {
 public:
  ProposalGenerator() = default;
  ProposalGenerator(const ModelConfig& cfg, Rng& rng)
      : block32_(cfg.d, rng), block16_(cfg.d, rng), block8_(cfg.d, rng),
        head_(cfg.d, 1, 1, 1, 0, rng) {}

  ProposalOutput<S> propose(const FeaturePyramid<S>& pyr) const {
    Tensor<S> b4 = block32_.forward(pyr.l4);
    Tensor<S> b3 = block16_.forward(nn::add(pyr.l3, nn::upsample_nearest2x(b4)));
    Tensor<S> b2 = block8_.forward(nn::add(pyr.l2, nn::upsample_nearest2x(b3)));
    ProposalOutput<S> out;
    out.logits = head_.forward(b2);
    out.probs = nn::sigmoid(out.logits);
    return out;
  }

  void params(ParamList<S>& out, const std::string& prefix) const {
    block32_.params(out, prefix + ".block32");
    block16_.params(out, prefix + ".block16");
    block8_.params(out, prefix + ".block8");
    head_.params(out, prefix + ".head");
  }

 private:
  ResBlock<S> block32_, block16_, block8_;
  nn::Conv2d<S> head_;
};

// Threshold in (0,1); pixels exactly at the threshold go to foreground.
template <typename S>
inline std::vector<Mask> binarize(const Tensor<S>& probs, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw std::runtime_error("binarize: threshold must lie in (0,1)");
  const int T = probs.dim(0), H = probs.dim(2), W = probs.dim(3);
  std::vector<Mask> out(T);
  const S* p = probs.ptr();
  for (int t = 0; t < T; ++t) {
    out[t].h = H;
    out[t].w = W;
    out[t].v.resize(size_t(H) * W);
    for (int64_t i = 0; i < int64_t(H) * W; ++i)
      out[t].v[i] = p[int64_t(t) * H * W + i] >= static_cast<S>(threshold) ? 1 : 0;
  }
  return out;
}

inline Mask upsample_mask_nearest2x(const Mask& m) {
  Mask out;
  out.h = m.h * 2;
  out.w = m.w * 2;
  out.v.resize(size_t(out.h) * out.w);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) out.v[size_t(y) * out.w + x] = m.at(y / 2, x / 2);
  return out;
}

// Soft mask tensor [T,1,h,w] from full-resolution binary masks via area
// averaging (coverage fractions keep thin masks alive at 1/4 resolution and
// mask pooling stays a convex combination).
template <typename S>
inline Tensor<S> masks_to_tensor_downsampled(const std::vector<Mask>& masks, int factor) {
  const int T = static_cast<int>(masks.size());
  const int H = masks[0].h / factor, W = masks[0].w / factor;
  Tensor<S> out = Tensor<S>::zeros({T, 1, H, W});
  S* po = out.ptr();
  const S inv = S(1) / S(factor * factor);
  for (int t = 0; t < T; ++t)
    for (int y = 0; y < masks[t].h; ++y)
      for (int x = 0; x < masks[t].w; ++x)
        if (masks[t].at(y, x))
          po[int64_t(t) * H * W + (y / factor) * W + (x / factor)] += inv;
  return out;
}

template <typename S>
inline Tensor<S> masks_to_tensor(const std::vector<Mask>& masks) {
  const int T = static_cast<int>(masks.size());
  const int H = masks[0].h, W = masks[0].w;
  Tensor<S> out = Tensor<S>::zeros({T, 1, H, W});
  S* po = out.ptr();
  for (int t = 0; t < T; ++t)
    for (int64_t i = 0; i < int64_t(H) * W; ++i) po[int64_t(t) * H * W + i] = S(masks[t].v[i]);
  return out;
}

}  // namespace fsvos::model
