#pragma once

// Trainable layer building blocks and parameter registry.

#include <string>
#include <utility>
#include <vector>

#include "fsvos/nn/ops.hpp"
#include "fsvos/nn/tensor.hpp"

namespace fsvos::nn {

template <typename S>
using ParamList = std::vector<std::pair<std::string, Tensor<S>>>;

template <typename S>
inline void add_param(ParamList<S>& list, const std::string& name, const Tensor<S>& t) {
  list.emplace_back(name, t);
}

template <typename S>
inline Tensor<S> kaiming_uniform(Shape shape, int fan_in, Rng& rng) {
  S bound = static_cast<S>(std::sqrt(3.0 / std::max(1, fan_in)));
  return Tensor<S>::uniform(std::move(shape), rng, -bound, bound, /*requires_grad=*/true);
}

template <typename S>
struct Linear {
  Tensor<S> w;  // [in, out]
  Tensor<S> b;  // [out], optional
  bool has_bias = true;

  Linear() = default;
  Linear(int in, int out, Rng& rng, bool bias = true) : has_bias(bias) {
    w = kaiming_uniform<S>({in, out}, in, rng);
    if (bias) b = Tensor<S>::zeros({out}, true);
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    Tensor<S> y = matmul(x, w);
    return has_bias ? add(y, b) : y;
  }

  void params(ParamList<S>& out, const std::string& prefix) const {
    add_param(out, prefix + ".w", w);
    if (has_bias) add_param(out, prefix + ".b", b);
  }
};

template <typename S>
struct Conv2d {
  Tensor<S> w;  // [F, C, kh, kw]
  Tensor<S> b;  // [F]
  int stride = 1, pad = 1;
  bool has_bias = true;

  Conv2d() = default;
  Conv2d(int in_ch, int out_ch, int k, int stride_, int pad_, Rng& rng, bool bias = true)
      : stride(stride_), pad(pad_), has_bias(bias) {
    w = kaiming_uniform<S>({out_ch, in_ch, k, k}, in_ch * k * k, rng);
    if (bias) b = Tensor<S>::zeros({out_ch}, true);
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    return conv2d(x, w, has_bias ? &b : nullptr, stride, pad);
  }

  void params(ParamList<S>& out, const std::string& prefix) const {
    add_param(out, prefix + ".w", w);
    if (has_bias) add_param(out, prefix + ".b", b);
  }
};

template <typename S>
struct Conv3d {
  Tensor<S> w;  // [F, C, k, k, k]
  Tensor<S> b;  // [F]
  bool has_bias = true;

  Conv3d() = default;
  Conv3d(int in_ch, int out_ch, int k, Rng& rng, bool bias = true) : has_bias(bias) {
    w = kaiming_uniform<S>({out_ch, in_ch, k, k, k}, in_ch * k * k * k, rng);
    if (bias) b = Tensor<S>::zeros({out_ch}, true);
  }

  // Sets the kernel to a temporal-spatial delta so conv3d(x) == x.
  void set_identity() {
    auto& v = w.vec();
    std::fill(v.begin(), v.end(), S(0));
    const int F = w.dim(0), C = w.dim(1), k = w.dim(2);
    const int center = k / 2;
    for (int f = 0; f < F && f < C; ++f)
      v[(((int64_t(f) * C + f) * k + center) * k + center) * k + center] = S(1);
    if (has_bias) std::fill(b.vec().begin(), b.vec().end(), S(0));
  }

  Tensor<S> forward(const Tensor<S>& x) const { return conv3d(x, w, has_bias ? &b : nullptr); }

  void params(ParamList<S>& out, const std::string& prefix) const {
    add_param(out, prefix + ".w", w);
    if (has_bias) add_param(out, prefix + ".b", b);
  }
};

template <typename S>
struct LayerNorm {
  Tensor<S> g, b;

  LayerNorm() = default;
  explicit LayerNorm(int dim) {
    g = Tensor<S>::filled({dim}, S(1), true);
    b = Tensor<S>::zeros({dim}, true);
  }

  Tensor<S> forward(const Tensor<S>& x) const { return layer_norm(x, g, b); }

  void params(ParamList<S>& out, const std::string& prefix) const {
    add_param(out, prefix + ".g", g);
    add_param(out, prefix + ".b", b);
  }
};

// Multi-head attention; queries [nq, d] attend over keys/values [nk, d].
template <typename S>
struct Mha {
  Linear<S> wq, wk, wv, wo;
  int heads = 4;
  int d = 0;

  Mha() = default;
  Mha(int dim, int heads_, Rng& rng) : heads(heads_), d(dim) {
    if (dim % heads_ != 0) throw std::runtime_error("Mha: dim must divide heads");
    wq = Linear<S>(dim, dim, rng);
    wk = Linear<S>(dim, dim, rng);
    wv = Linear<S>(dim, dim, rng);
    wo = Linear<S>(dim, dim, rng);
  }

  Tensor<S> forward(const Tensor<S>& q_in, const Tensor<S>& kv) const {
    const int nq = q_in.dim(0), nk = kv.dim(0), dh = d / heads;
    Tensor<S> q = reshape(wq.forward(q_in), {nq, heads, dh});
    Tensor<S> k = reshape(wk.forward(kv), {nk, heads, dh});
    Tensor<S> v = reshape(wv.forward(kv), {nk, heads, dh});
    q = permute(q, {1, 0, 2});  // [h, nq, dh]
    k = permute(k, {1, 2, 0});  // [h, dh, nk]
    v = permute(v, {1, 0, 2});  // [h, nk, dh]
    Tensor<S> scores = muls(bmm(q, k), static_cast<S>(1.0 / std::sqrt(double(dh))));
    Tensor<S> attn = softmax_last(scores);       // [h, nq, nk]
    Tensor<S> ctx = bmm(attn, v);                // [h, nq, dh]
    ctx = reshape(permute(ctx, {1, 0, 2}), {nq, d});
    return wo.forward(ctx);
  }

  void params(ParamList<S>& out, const std::string& prefix) const {
    wq.params(out, prefix + ".wq");
    wk.params(out, prefix + ".wk");
    wv.params(out, prefix + ".wv");
    wo.params(out, prefix + ".wo");
  }
};

template <typename S>
struct Ffn {
  Linear<S> fc1, fc2;

  Ffn() = default;
  Ffn(int dim, int hidden, Rng& rng) : fc1(dim, hidden, rng), fc2(hidden, dim, rng) {}

  Tensor<S> forward(const Tensor<S>& x) const { return fc2.forward(relu(fc1.forward(x))); }

  void params(ParamList<S>& out, const std::string& prefix) const {
    fc1.params(out, prefix + ".fc1");
    fc2.params(out, prefix + ".fc2");
  }
};

// Pre-LN residual attention sublayer; queries and keys carry separate norms.
template <typename S>
struct AttnBlock {
  LayerNorm<S> ln_q, ln_kv;
  Mha<S> attn;

  AttnBlock() = default;
  AttnBlock(int dim, int heads, Rng& rng) : ln_q(dim), ln_kv(dim), attn(dim, heads, rng) {}

  Tensor<S> forward_cross(const Tensor<S>& x, const Tensor<S>& kv) const {
    return add(x, attn.forward(ln_q.forward(x), ln_kv.forward(kv)));
  }

  Tensor<S> forward_self(const Tensor<S>& x) const {
    Tensor<S> h = ln_q.forward(x);
    return add(x, attn.forward(h, h));
  }

  void params(ParamList<S>& out, const std::string& prefix) const {
    ln_q.params(out, prefix + ".ln_q");
    ln_kv.params(out, prefix + ".ln_kv");
    attn.params(out, prefix + ".attn");
  }
};

template <typename S>
struct FfnBlock {
  LayerNorm<S> ln;
  Ffn<S> ffn;

  FfnBlock() = default;
  FfnBlock(int dim, int hidden, Rng& rng) : ln(dim), ffn(dim, hidden, rng) {}

  Tensor<S> forward(const Tensor<S>& x) const { return add(x, ffn.forward(ln.forward(x))); }

  void params(ParamList<S>& out, const std::string& prefix) const {
    ln.params(out, prefix + ".ln");
    ffn.params(out, prefix + ".ffn");
  }
};

// Fixed sinusoidal position encoding rows; not a parameter.
template <typename S>
inline Tensor<S> sinusoidal_rows(int n, int d) {
  Tensor<S> pe = Tensor<S>::zeros({n, d});
  S* p = pe.ptr();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      double angle = i / std::pow(10000.0, 2.0 * (j / 2) / d);
      p[int64_t(i) * d + j] = static_cast<S>((j % 2 == 0) ? std::sin(angle) : std::cos(angle));
    }
  return pe;
}

}  // namespace fsvos::nn
