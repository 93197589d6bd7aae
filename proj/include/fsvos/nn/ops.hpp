#pragma once

// Differentiable operations. Heavy lifting (conv im2col, matmul, attention
// products) routes through Eigen GEMM; OpenMP parallelism lives in the
// per-sample loops, with Eigen kept single-threaded.

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "fsvos/nn/tensor.hpp"

namespace fsvos::nn {

template <typename S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using EMap = Eigen::Map<EMat<S>>;
template <typename S>
using ECMap = Eigen::Map<const EMat<S>>;

namespace detail {

template <typename S>
inline void accumulate(Node<S>& node, const std::vector<S>& delta) {
  node.ensure_grad();
  for (size_t i = 0; i < delta.size(); ++i) node.grad[i] += delta[i];
}

// Broadcast rule: shapes equal, or b's shape is a suffix of a's shape
// (bias-style), or b is a scalar.
inline bool suffix_broadcast(const Shape& a, const Shape& b) {
  if (b.size() == 1 && b[0] == 1) return true;
  if (b.size() > a.size()) return false;
  for (size_t i = 0; i < b.size(); ++i)
    if (b[b.size() - 1 - i] != a[a.size() - 1 - i]) return false;
  return true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() == b.shape()) {
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const S* pa = a.ptr();
    const S* pb = b.ptr();
    S* po = out.ptr();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + pb[i];
    auto an = a.node(), bn = b.node();
    detail::attach(out, {a, b}, [an, bn](Node<S>& self) {
      if (an->requires_grad) detail::accumulate(*an, self.grad);
      if (bn->requires_grad) detail::accumulate(*bn, self.grad);
    });
    return out;
  }
  if (!detail::suffix_broadcast(a.shape(), b.shape()))
    throw std::runtime_error("add: incompatible shapes " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
  int64_t bn_elems = b.numel();
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const S* pa = a.ptr();
  const S* pb = b.ptr();
  S* po = out.ptr();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + pb[i % bn_elems];
  auto an = a.node(), bnode = b.node();
  detail::attach(out, {a, b}, [an, bnode, bn_elems](Node<S>& self) {
    if (an->requires_grad) detail::accumulate(*an, self.grad);
    if (bnode->requires_grad) {
      bnode->ensure_grad();
      for (int64_t i = 0; i < self.numel(); ++i) bnode->grad[i % bn_elems] += self.grad[i];
    }
  });
  return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    throw std::runtime_error("sub: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const S* pa = a.ptr();
  const S* pb = b.ptr();
  S* po = out.ptr();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] - pb[i];
  auto an = a.node(), bn = b.node();
  detail::attach(out, {a, b}, [an, bn](Node<S>& self) {
    if (an->requires_grad) detail::accumulate(*an, self.grad);
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
    }
  });
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape() && !detail::suffix_broadcast(a.shape(), b.shape()))
    throw std::runtime_error("mul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
  int64_t bn_elems = b.numel();
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const S* pa = a.ptr();
  const S* pb = b.ptr();
  S* po = out.ptr();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * pb[i % bn_elems];
  auto an = a.node(), bnode = b.node();
  detail::attach(out, {a, b}, [an, bnode, bn_elems](Node<S>& self) {
    const S* pa = an->data->data();
    const S* pb = bnode->data->data();
    if (an->requires_grad) {
      an->ensure_grad();
      for (int64_t i = 0; i < self.numel(); ++i) an->grad[i] += self.grad[i] * pb[i % bn_elems];
    }
    if (bnode->requires_grad) {
      bnode->ensure_grad();
      for (int64_t i = 0; i < self.numel(); ++i) bnode->grad[i % bn_elems] += self.grad[i] * pa[i];
    }
  });
  return out;
}

template <typename S>
Tensor<S> muls(const Tensor<S>& a, S c) {
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const S* pa = a.ptr();
  S* po = out.ptr();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * c;
  auto an = a.node();
  detail::attach(out, {a}, [an, c](Node<S>& self) {
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * c;
  });
  return out;
}

template <typename S>
Tensor<S> adds(const Tensor<S>& a, S c) {
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const S* pa = a.ptr();
  S* po = out.ptr();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + c;
  auto an = a.node();
  detail::attach(out, {a}, [an](Node<S>& self) { detail::accumulate(*an, self.grad); });
  return out;
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw std::runtime_error("reshape: numel mismatch " + shape_str(a.shape()) + " -> " +
                             shape_str(shape));
  // View: shares the data buffer.
  Tensor<S> out = a.detach();
  out.node()->shape = std::move(shape);
  auto an = a.node();
  detail::attach(out, {a}, [an](Node<S>& self) { detail::accumulate(*an, self.grad); });
  return out;
}

template <typename S>
Tensor<S> permute(const Tensor<S>& a, const std::vector<int>& perm) {
  const Shape& s = a.shape();
  if (perm.size() != s.size()) throw std::runtime_error("permute: rank mismatch");
  Shape out_shape(s.size());
  for (size_t i = 0; i < perm.size(); ++i) out_shape[i] = s[perm[i]];

  std::vector<int64_t> in_strides(s.size(), 1), out_strides(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    in_strides[i] = in_strides[i + 1] * s[i + 1];
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    out_strides[i] = out_strides[i + 1] * out_shape[i + 1];

  Tensor<S> out = Tensor<S>::zeros(out_shape);
  const S* pa = a.ptr();
  S* po = out.ptr();
  const int64_t n = a.numel();
  const int rank = static_cast<int>(s.size());
  for (int64_t oi = 0; oi < n; ++oi) {
    int64_t rem = oi, ii = 0;
    for (int d = 0; d < rank; ++d) {
      int64_t idx = rem / out_strides[d];
      rem -= idx * out_strides[d];
      ii += idx * in_strides[perm[d]];
    }
    po[oi] = pa[ii];
  }
  auto an = a.node();
  auto perm_copy = perm;
  detail::attach(out, {a}, [an, perm_copy, in_strides, out_strides, rank](Node<S>& self) {
    an->ensure_grad();
    const int64_t n = self.numel();
    for (int64_t oi = 0; oi < n; ++oi) {
      int64_t rem = oi, ii = 0;
      for (int d = 0; d < rank; ++d) {
        int64_t idx = rem / out_strides[d];
        rem -= idx * out_strides[d];
        ii += idx * in_strides[perm_copy[d]];
      }
      an->grad[ii] += self.grad[oi];
    }
  });
  return out;
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int dim) {
  if (parts.empty()) throw std::runtime_error("concat: no inputs");
  Shape out_shape = parts[0].shape();
  int rank = static_cast<int>(out_shape.size());
  if (dim < 0 || dim >= rank) throw std::runtime_error("concat: bad dim");
  int total = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) throw std::runtime_error("concat: rank mismatch");
    for (int d = 0; d < rank; ++d)
      if (d != dim && p.shape()[d] != out_shape[d])
        throw std::runtime_error("concat: shape mismatch");
    total += p.shape()[dim];
  }
  out_shape[dim] = total;

  int64_t outer = 1, inner = 1;
  for (int d = 0; d < dim; ++d) outer *= out_shape[d];
  for (int d = dim + 1; d < rank; ++d) inner *= out_shape[d];

  Tensor<S> out = Tensor<S>::zeros(out_shape);
  S* po = out.ptr();
  int64_t offset = 0;
  for (const auto& p : parts) {
    int64_t block = p.shape()[dim] * inner;
    const S* pp = p.ptr();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(pp + o * block, pp + (o + 1) * block, po + o * total * inner + offset);
    offset += block;
  }

  std::vector<std::shared_ptr<Node<S>>> nodes;
  std::vector<int64_t> blocks;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    blocks.push_back(p.shape()[dim] * inner);
  }
  int64_t row = total * inner;
  detail::attach(out, parts, [nodes, blocks, outer, row](Node<S>& self) {
    int64_t offset = 0;
    for (size_t pi = 0; pi < nodes.size(); ++pi) {
      if (nodes[pi]->requires_grad) {
        nodes[pi]->ensure_grad();
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t i = 0; i < blocks[pi]; ++i)
            nodes[pi]->grad[o * blocks[pi] + i] += self.grad[o * row + offset + i];
      }
      offset += blocks[pi];
    }
  });
  return out;
}

template <typename S>
Tensor<S> slice(const Tensor<S>& a, int dim, int start, int len) {
  const Shape& s = a.shape();
  int rank = static_cast<int>(s.size());
  if (dim < 0 || dim >= rank || start < 0 || start + len > s[dim])
    throw std::runtime_error("slice: out of range");
  Shape out_shape = s;
  out_shape[dim] = len;
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < dim; ++d) outer *= s[d];
  for (int d = dim + 1; d < rank; ++d) inner *= s[d];

  Tensor<S> out = Tensor<S>::zeros(out_shape);
  const S* pa = a.ptr();
  S* po = out.ptr();
  int64_t in_row = s[dim] * inner, out_row = int64_t(len) * inner;
  for (int64_t o = 0; o < outer; ++o)
    std::copy(pa + o * in_row + start * inner, pa + o * in_row + (start + len) * inner,
              po + o * out_row);
  auto an = a.node();
  detail::attach(out, {a}, [an, outer, inner, in_row, out_row, start](Node<S>& self) {
    an->ensure_grad();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < out_row; ++i)
        an->grad[o * in_row + start * inner + i] += self.grad[o * out_row + i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Matrix products

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw std::runtime_error("matmul: bad shapes " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<S> out = Tensor<S>::zeros({m, n});
  EMap<S>(out.ptr(), m, n).noalias() = ECMap<S>(a.ptr(), m, k) * ECMap<S>(b.ptr(), k, n);
  auto an = a.node(), bn = b.node();
  detail::attach(out, {a, b}, [an, bn, m, k, n](Node<S>& self) {
    ECMap<S> dy(self.grad.data(), m, n);
    if (an->requires_grad) {
      an->ensure_grad();
      EMap<S>(an->grad.data(), m, k).noalias() += dy * ECMap<S>(bn->data->data(), k, n).transpose();
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      EMap<S>(bn->grad.data(), k, n).noalias() += ECMap<S>(an->data->data(), m, k).transpose() * dy;
    }
  });
  return out;
}

template <typename S>
Tensor<S> bmm(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    throw std::runtime_error("bmm: bad shapes " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
  const int B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  Tensor<S> out = Tensor<S>::zeros({B, m, n});
  for (int i = 0; i < B; ++i)
    EMap<S>(out.ptr() + int64_t(i) * m * n, m, n).noalias() =
        ECMap<S>(a.ptr() + int64_t(i) * m * k, m, k) * ECMap<S>(b.ptr() + int64_t(i) * k * n, k, n);
  auto an = a.node(), bn = b.node();
  detail::attach(out, {a, b}, [an, bn, B, m, k, n](Node<S>& self) {
    for (int i = 0; i < B; ++i) {
      ECMap<S> dy(self.grad.data() + int64_t(i) * m * n, m, n);
      if (an->requires_grad) {
        an->ensure_grad();
        EMap<S>(an->grad.data() + int64_t(i) * m * k, m, k).noalias() +=
            dy * ECMap<S>(bn->data->data() + int64_t(i) * k * n, k, n).transpose();
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        EMap<S>(bn->grad.data() + int64_t(i) * k * n, k, n).noalias() +=
            ECMap<S>(an->data->data() + int64_t(i) * m * k, m, k).transpose() * dy;
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Activations

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const S* pa = a.ptr();
  S* po = out.ptr();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] > S(0) ? pa[i] : S(0);
  auto an = a.node();
  detail::attach(out, {a}, [an](Node<S>& self) {
    an->ensure_grad();
    const S* pa = an->data->data();
    for (size_t i = 0; i < self.grad.size(); ++i)
      if (pa[i] > S(0)) an->grad[i] += self.grad[i];
  });
  return out;
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const S* pa = a.ptr();
  S* po = out.ptr();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = S(1) / (S(1) + std::exp(-pa[i]));
  auto an = a.node();
  detail::attach(out, {a}, [an](Node<S>& self) {
    an->ensure_grad();
    const S* y = self.data->data();
    for (size_t i = 0; i < self.grad.size(); ++i)
      an->grad[i] += self.grad[i] * y[i] * (S(1) - y[i]);
  });
  return out;
}

template <typename S>
Tensor<S> tanht(const Tensor<S>& a) {
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const S* pa = a.ptr();
  S* po = out.ptr();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = std::tanh(pa[i]);
  auto an = a.node();
  detail::attach(out, {a}, [an](Node<S>& self) {
    an->ensure_grad();
    const S* y = self.data->data();
    for (size_t i = 0; i < self.grad.size(); ++i)
      an->grad[i] += self.grad[i] * (S(1) - y[i] * y[i]);
  });
  return out;
}

// Softmax over the last dimension.
template <typename S>
Tensor<S> softmax_last(const Tensor<S>& a) {
  const int n = a.shape().back();
  const int64_t rows = a.numel() / n;
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const S* pa = a.ptr();
  S* po = out.ptr();
  for (int64_t r = 0; r < rows; ++r) {
    const S* x = pa + r * n;
    S* y = po + r * n;
    S mx = x[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    S sum = S(0);
    for (int i = 0; i < n; ++i) {
      y[i] = std::exp(x[i] - mx);
      sum += y[i];
    }
    for (int i = 0; i < n; ++i) y[i] /= sum;
  }
  auto an = a.node();
  detail::attach(out, {a}, [an, rows, n](Node<S>& self) {
    an->ensure_grad();
    const S* y = self.data->data();
    for (int64_t r = 0; r < rows; ++r) {
      const S* yr = y + r * n;
      const S* gr = self.grad.data() + r * n;
      S dot = S(0);
      for (int i = 0; i < n; ++i) dot += gr[i] * yr[i];
      for (int i = 0; i < n; ++i) an->grad[r * n + i] += yr[i] * (gr[i] - dot);
    }
  });
  return out;
}

// LayerNorm over the last dimension with affine parameters.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     S eps = S(1e-5)) {
  const int n = x.shape().back();
  if (gamma.numel() != n || beta.numel() != n)
    throw std::runtime_error("layer_norm: affine parameter size mismatch");
  const int64_t rows = x.numel() / n;
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  std::vector<S> mean(rows), rstd(rows);
  const S* px = x.ptr();
  const S* pg = gamma.ptr();
  const S* pb = beta.ptr();
  S* po = out.ptr();
  for (int64_t r = 0; r < rows; ++r) {
    const S* xr = px + r * n;
    S mu = S(0);
    for (int i = 0; i < n; ++i) mu += xr[i];
    mu /= n;
    S var = S(0);
    for (int i = 0; i < n; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= n;
    S rs = S(1) / std::sqrt(var + eps);
    mean[r] = mu;
    rstd[r] = rs;
    for (int i = 0; i < n; ++i) po[r * n + i] = (xr[i] - mu) * rs * pg[i] + pb[i];
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  detail::attach(out, {x, gamma, beta}, [xn, gn, bn, rows, n, mean, rstd](Node<S>& self) {
    const S* px = xn->data->data();
    const S* pg = gn->data->data();
    if (gn->requires_grad) gn->ensure_grad();
    if (bn->requires_grad) bn->ensure_grad();
    if (xn->requires_grad) xn->ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const S* xr = px + r * n;
      const S* gr = self.grad.data() + r * n;
      S mu = mean[r], rs = rstd[r];
      if (gn->requires_grad || bn->requires_grad) {
        for (int i = 0; i < n; ++i) {
          if (gn->requires_grad) gn->grad[i] += gr[i] * (xr[i] - mu) * rs;
          if (bn->requires_grad) bn->grad[i] += gr[i];
        }
      }
      if (xn->requires_grad) {
        S sum_dxhat = S(0), sum_dxhat_xhat = S(0);
        for (int i = 0; i < n; ++i) {
          S dxhat = gr[i] * pg[i];
          S xhat = (xr[i] - mu) * rs;
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
        }
        for (int i = 0; i < n; ++i) {
          S dxhat = gr[i] * pg[i];
          S xhat = (xr[i] - mu) * rs;
          xn->grad[r * n + i] +=
              rs * (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions

template <typename S>
Tensor<S> sum_all(const Tensor<S>& a) {
  S total = S(0);
  const S* pa = a.ptr();
  for (int64_t i = 0; i < a.numel(); ++i) total += pa[i];
  Tensor<S> out = Tensor<S>::scalar(total);
  auto an = a.node();
  detail::attach(out, {a}, [an](Node<S>& self) {
    an->ensure_grad();
    for (auto& g : an->grad) g += self.grad[0];
  });
  return out;
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& a) {
  return muls(sum_all(a), S(1) / S(a.numel()));
}

// [n, d] -> [d], mean over rows (e.g. temporal average pooling).
template <typename S>
Tensor<S> mean_rows(const Tensor<S>& a) {
  if (a.rank() != 2) throw std::runtime_error("mean_rows: want rank 2");
  const int n = a.dim(0), d = a.dim(1);
  Tensor<S> out = Tensor<S>::zeros({d});
  const S* pa = a.ptr();
  S* po = out.ptr();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) po[j] += pa[int64_t(i) * d + j];
  for (int j = 0; j < d; ++j) po[j] /= S(n);
  auto an = a.node();
  detail::attach(out, {a}, [an, n, d](Node<S>& self) {
    an->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) an->grad[int64_t(i) * d + j] += self.grad[j] / S(n);
  });
  return out;
}

// [C, T, H, W] -> [T, C] spatial average (motion prototype pooling).
template <typename S>
Tensor<S> spatial_mean_tc(const Tensor<S>& a) {
  if (a.rank() != 4) throw std::runtime_error("spatial_mean_tc: want rank 4 [C,T,H,W]");
  const int C = a.dim(0), T = a.dim(1), H = a.dim(2), W = a.dim(3);
  const int64_t hw = int64_t(H) * W;
  Tensor<S> out = Tensor<S>::zeros({T, C});
  const S* pa = a.ptr();
  S* po = out.ptr();
  for (int c = 0; c < C; ++c)
    for (int t = 0; t < T; ++t) {
      const S* p = pa + (int64_t(c) * T + t) * hw;
      S sum = S(0);
      for (int64_t i = 0; i < hw; ++i) sum += p[i];
      po[int64_t(t) * C + c] = sum / S(hw);
    }
  auto an = a.node();
  detail::attach(out, {a}, [an, C, T, hw](Node<S>& self) {
    an->ensure_grad();
    for (int c = 0; c < C; ++c)
      for (int t = 0; t < T; ++t) {
        S g = self.grad[int64_t(t) * C + c] / S(hw);
        S* gp = an->grad.data() + (int64_t(c) * T + t) * hw;
        for (int64_t i = 0; i < hw; ++i) gp[i] += g;
      }
  });
  return out;
}

// [C, T, H, W] -> [T, C] spatial max (ablation alternative).
template <typename S>
Tensor<S> spatial_max_tc(const Tensor<S>& a) {
  if (a.rank() != 4) throw std::runtime_error("spatial_max_tc: want rank 4 [C,T,H,W]");
  const int C = a.dim(0), T = a.dim(1), H = a.dim(2), W = a.dim(3);
  const int64_t hw = int64_t(H) * W;
  Tensor<S> out = Tensor<S>::zeros({T, C});
  std::vector<int64_t> argmax(size_t(C) * T);
  const S* pa = a.ptr();
  S* po = out.ptr();
  for (int c = 0; c < C; ++c)
    for (int t = 0; t < T; ++t) {
      const S* p = pa + (int64_t(c) * T + t) * hw;
      int64_t best = 0;
      for (int64_t i = 1; i < hw; ++i)
        if (p[i] > p[best]) best = i;
      po[int64_t(t) * C + c] = p[best];
      argmax[size_t(c) * T + t] = best;
    }
  auto an = a.node();
  detail::attach(out, {a}, [an, C, T, hw, argmax](Node<S>& self) {
    an->ensure_grad();
    for (int c = 0; c < C; ++c)
      for (int t = 0; t < T; ++t)
        an->grad[(int64_t(c) * T + t) * hw + argmax[size_t(c) * T + t]] +=
            self.grad[int64_t(t) * C + c];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Mask pooling (appearance prototypes)

enum class EmptyMaskPolicy {
  kZero,               // support side: empty-mask frames keep zero vectors
  kGlobalAveragePool,  // query side: fall back to GAP, avoiding 0/0
};

// F: [T, C, H, W] features; M: [T, 1, H, W] binary mask (no grad).
// Returns [T, C] per-frame masked means. empty_flags (optional) records
// which frames had an empty mask.
template <typename S>
Tensor<S> mask_pool(const Tensor<S>& f, const Tensor<S>& m, EmptyMaskPolicy policy,
                    std::vector<uint8_t>* empty_flags = nullptr) {
  if (f.rank() != 4 || m.rank() != 4 || m.dim(1) != 1)
    throw std::runtime_error("mask_pool: want F [T,C,H,W], M [T,1,H,W]");
  if (f.dim(0) != m.dim(0) || f.dim(2) != m.dim(2) || f.dim(3) != m.dim(3))
    throw std::runtime_error("mask_pool: resolution mismatch, F " + shape_str(f.shape()) +
                             " vs M " + shape_str(m.shape()));
  const int T = f.dim(0), C = f.dim(1), H = f.dim(2), W = f.dim(3);
  const int64_t hw = int64_t(H) * W;
  Tensor<S> out = Tensor<S>::zeros({T, C});
  std::vector<S> inv_area(T, S(0));
  std::vector<uint8_t> empty(T, 0);
  const S* pf = f.ptr();
  const S* pm = m.ptr();
  S* po = out.ptr();
  for (int t = 0; t < T; ++t) {
    S area = S(0);
    const S* mt = pm + int64_t(t) * hw;
    for (int64_t i = 0; i < hw; ++i) area += mt[i];
    if (area > S(0)) {
      inv_area[t] = S(1) / area;
      for (int c = 0; c < C; ++c) {
        const S* ft = pf + (int64_t(t) * C + c) * hw;
        S sum = S(0);
        for (int64_t i = 0; i < hw; ++i) sum += ft[i] * mt[i];
        po[int64_t(t) * C + c] = sum * inv_area[t];
      }
    } else {
      empty[t] = 1;
      if (policy == EmptyMaskPolicy::kGlobalAveragePool) {
        for (int c = 0; c < C; ++c) {
          const S* ft = pf + (int64_t(t) * C + c) * hw;
          S sum = S(0);
          for (int64_t i = 0; i < hw; ++i) sum += ft[i];
          po[int64_t(t) * C + c] = sum / S(hw);
        }
      }
      // kZero: row stays zero.
    }
  }
  if (empty_flags) *empty_flags = empty;
  auto fn = f.node(), mn = m.node();
  detail::attach(out, {f, m}, [fn, mn, T, C, hw, inv_area, empty, policy](Node<S>& self) {
    if (!fn->requires_grad) return;
    fn->ensure_grad();
    const S* pm = mn->data->data();
    for (int t = 0; t < T; ++t) {
      const S* mt = pm + int64_t(t) * hw;
      for (int c = 0; c < C; ++c) {
        S g = self.grad[int64_t(t) * C + c];
        if (g == S(0)) continue;
        S* gp = fn->grad.data() + (int64_t(t) * C + c) * hw;
        if (!empty[t]) {
          S s = g * inv_area[t];
          for (int64_t i = 0; i < hw; ++i) gp[i] += s * mt[i];
        } else if (policy == EmptyMaskPolicy::kGlobalAveragePool) {
          S s = g / S(hw);
          for (int64_t i = 0; i < hw; ++i) gp[i] += s;
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Convolutions

namespace detail {

template <typename S>
void im2col_2d(const S* x, int C, int H, int W, int kh, int kw, int stride, int pad, int OH,
               int OW, S* cols) {
  // cols: [C*kh*kw, OH*OW]
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < kh; ++i)
      for (int j = 0; j < kw; ++j) {
        S* row = cols + ((int64_t(c) * kh + i) * kw + j) * OH * OW;
        for (int oy = 0; oy < OH; ++oy) {
          int y = oy * stride + i - pad;
          if (y < 0 || y >= H) {
            std::fill(row + int64_t(oy) * OW, row + int64_t(oy + 1) * OW, S(0));
            continue;
          }
          const S* xrow = x + (int64_t(c) * H + y) * W;
          for (int ox = 0; ox < OW; ++ox) {
            int xcol = ox * stride + j - pad;
            row[int64_t(oy) * OW + ox] = (xcol >= 0 && xcol < W) ? xrow[xcol] : S(0);
          }
        }
      }
}

template <typename S>
void col2im_2d(const S* cols, int C, int H, int W, int kh, int kw, int stride, int pad, int OH,
               int OW, S* dx) {
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < kh; ++i)
      for (int j = 0; j < kw; ++j) {
        const S* row = cols + ((int64_t(c) * kh + i) * kw + j) * OH * OW;
        for (int oy = 0; oy < OH; ++oy) {
          int y = oy * stride + i - pad;
          if (y < 0 || y >= H) continue;
          S* xrow = dx + (int64_t(c) * H + y) * W;
          for (int ox = 0; ox < OW; ++ox) {
            int xcol = ox * stride + j - pad;
            if (xcol >= 0 && xcol < W) xrow[xcol] += row[int64_t(oy) * OW + ox];
          }
        }
      }
}

}  // namespace detail

// x: [N, C, H, W]; w: [F, C, kh, kw]; optional bias [F].
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* bias, int stride,
                 int pad) {
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1))
    throw std::runtime_error("conv2d: bad shapes x " + shape_str(x.shape()) + " w " +
                             shape_str(w.shape()));
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int F = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int OH = (H + 2 * pad - kh) / stride + 1;
  const int OW = (W + 2 * pad - kw) / stride + 1;
  if (OH <= 0 || OW <= 0) throw std::runtime_error("conv2d: output collapsed");

  Tensor<S> out = Tensor<S>::zeros({N, F, OH, OW});
  const int64_t K = int64_t(C) * kh * kw, P = int64_t(OH) * OW;
  const S* px = x.ptr();
  S* po = out.ptr();

#pragma omp parallel
  {
    std::vector<S> cols(K * P);
#pragma omp for schedule(static)
    for (int n = 0; n < N; ++n) {
      detail::im2col_2d(px + int64_t(n) * C * H * W, C, H, W, kh, kw, stride, pad, OH, OW,
                        cols.data());
      EMap<S>(po + int64_t(n) * F * P, F, P).noalias() =
          ECMap<S>(w.ptr(), F, K) * ECMap<S>(cols.data(), K, P);
    }
  }
  if (bias) {
    const S* pb = bias->ptr();
    for (int n = 0; n < N; ++n)
      for (int f = 0; f < F; ++f) {
        S b = pb[f];
        S* p = po + (int64_t(n) * F + f) * P;
        for (int64_t i = 0; i < P; ++i) p[i] += b;
      }
  }

  std::vector<Tensor<S>> parents = {x, w};
  if (bias) parents.push_back(*bias);
  auto xn = x.node(), wn = w.node();
  auto bn = bias ? bias->node() : nullptr;
  detail::attach(out, parents, [xn, wn, bn, N, C, H, W, F, kh, kw, stride, pad, OH, OW, K,
                                P](Node<S>& self) {
    const S* px = xn->data->data();
    if (xn->requires_grad) xn->ensure_grad();
    if (wn->requires_grad) wn->ensure_grad();
    // dW/db accumulate across samples; keep that serial and let the
    // GEMM dominate.
    std::vector<S> cols(K * P), dcols(K * P);
    for (int n = 0; n < N; ++n) {
      ECMap<S> dy(self.grad.data() + int64_t(n) * F * P, F, P);
      if (wn->requires_grad) {
        detail::im2col_2d(px + int64_t(n) * C * H * W, C, H, W, kh, kw, stride, pad, OH, OW,
                          cols.data());
        EMap<S>(wn->grad.data(), F, K).noalias() += dy * ECMap<S>(cols.data(), K, P).transpose();
      }
      if (xn->requires_grad) {
        EMap<S>(dcols.data(), K, P).noalias() =
            ECMap<S>(wn->data->data(), F, K).transpose() * dy;
        detail::col2im_2d(dcols.data(), C, H, W, kh, kw, stride, pad, OH, OW,
                          xn->grad.data() + int64_t(n) * C * H * W);
      }
    }
    if (bn && bn->requires_grad) {
      bn->ensure_grad();
      for (int n = 0; n < N; ++n)
        for (int f = 0; f < F; ++f) {
          S s = S(0);
          const S* g = self.grad.data() + (int64_t(n) * F + f) * P;
          for (int64_t i = 0; i < P; ++i) s += g[i];
          bn->grad[f] += s;
        }
    }
  });
  return out;
}

namespace detail {

template <typename S>
void im2col_3d(const S* x, int C, int D, int H, int W, int k, int pad, S* cols) {
  // stride 1, cubic kernel; cols: [C*k*k*k, D*H*W]
  const int64_t dhw = int64_t(D) * H * W;
  int64_t r = 0;
  for (int c = 0; c < C; ++c)
    for (int kd = 0; kd < k; ++kd)
      for (int ki = 0; ki < k; ++ki)
        for (int kj = 0; kj < k; ++kj, ++r) {
          S* row = cols + r * dhw;
          for (int od = 0; od < D; ++od) {
            int d = od + kd - pad;
            for (int oy = 0; oy < H; ++oy) {
              int y = oy + ki - pad;
              S* dst = row + (int64_t(od) * H + oy) * W;
              if (d < 0 || d >= D || y < 0 || y >= H) {
                std::fill(dst, dst + W, S(0));
                continue;
              }
              const S* src = x + ((int64_t(c) * D + d) * H + y) * W;
              for (int ox = 0; ox < W; ++ox) {
                int xx = ox + kj - pad;
                dst[ox] = (xx >= 0 && xx < W) ? src[xx] : S(0);
              }
            }
          }
        }
}

template <typename S>
void col2im_3d(const S* cols, int C, int D, int H, int W, int k, int pad, S* dx) {
  const int64_t dhw = int64_t(D) * H * W;
  int64_t r = 0;
  for (int c = 0; c < C; ++c)
    for (int kd = 0; kd < k; ++kd)
      for (int ki = 0; ki < k; ++ki)
        for (int kj = 0; kj < k; ++kj, ++r) {
          const S* row = cols + r * dhw;
          for (int od = 0; od < D; ++od) {
            int d = od + kd - pad;
            if (d < 0 || d >= D) continue;
            for (int oy = 0; oy < H; ++oy) {
              int y = oy + ki - pad;
              if (y < 0 || y >= H) continue;
              S* dst = dx + ((int64_t(c) * D + d) * H + y) * W;
              const S* src = row + (int64_t(od) * H + oy) * W;
              for (int ox = 0; ox < W; ++ox) {
                int xx = ox + kj - pad;
                if (xx >= 0 && xx < W) dst[xx] += src[ox];
              }
            }
          }
        }
}

}  // namespace detail

// x: [C, D, H, W]; w: [F, C, k, k, k]; stride 1, same padding.
template <typename S>
Tensor<S> conv3d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* bias) {
  if (x.rank() != 4 || w.rank() != 5 || x.dim(0) != w.dim(1))
    throw std::runtime_error("conv3d: bad shapes x " + shape_str(x.shape()) + " w " +
                             shape_str(w.shape()));
  const int C = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int F = w.dim(0), k = w.dim(2);
  const int pad = k / 2;
  const int64_t K = int64_t(C) * k * k * k, P = int64_t(D) * H * W;

  Tensor<S> out = Tensor<S>::zeros({F, D, H, W});
  std::vector<S> cols(K * P);
  detail::im2col_3d(x.ptr(), C, D, H, W, k, pad, cols.data());
  EMap<S>(out.ptr(), F, P).noalias() = ECMap<S>(w.ptr(), F, K) * ECMap<S>(cols.data(), K, P);
  if (bias) {
    const S* pb = bias->ptr();
    S* po = out.ptr();
    for (int f = 0; f < F; ++f)
      for (int64_t i = 0; i < P; ++i) po[f * P + i] += pb[f];
  }

  std::vector<Tensor<S>> parents = {x, w};
  if (bias) parents.push_back(*bias);
  auto xn = x.node(), wn = w.node();
  auto bn = bias ? bias->node() : nullptr;
  detail::attach(out, parents, [xn, wn, bn, C, D, H, W, F, k, pad, K, P](Node<S>& self) {
    ECMap<S> dy(self.grad.data(), F, P);
    if (wn->requires_grad) {
      wn->ensure_grad();
      std::vector<S> cols(K * P);
      detail::im2col_3d(xn->data->data(), C, D, H, W, k, pad, cols.data());
      EMap<S>(wn->grad.data(), F, K).noalias() += dy * ECMap<S>(cols.data(), K, P).transpose();
    }
    if (xn->requires_grad) {
      xn->ensure_grad();
      std::vector<S> dcols(K * P);
      EMap<S>(dcols.data(), K, P).noalias() = ECMap<S>(wn->data->data(), F, K).transpose() * dy;
      detail::col2im_3d(dcols.data(), C, D, H, W, k, pad, xn->grad.data());
    }
    if (bn && bn->requires_grad) {
      bn->ensure_grad();
      for (int f = 0; f < F; ++f) {
        S s = S(0);
        for (int64_t i = 0; i < P; ++i) s += self.grad[f * P + i];
        bn->grad[f] += s;
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Resampling

template <typename S>
Tensor<S> upsample_nearest2x(const Tensor<S>& x) {
  if (x.rank() != 4) throw std::runtime_error("upsample_nearest2x: want [N,C,H,W]");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<S> out = Tensor<S>::zeros({N, C, H * 2, W * 2});
  const S* px = x.ptr();
  S* po = out.ptr();
  for (int64_t nc = 0; nc < int64_t(N) * C; ++nc) {
    const S* src = px + nc * H * W;
    S* dst = po + nc * H * W * 4;
    for (int y = 0; y < 2 * H; ++y)
      for (int x2 = 0; x2 < 2 * W; ++x2)
        dst[int64_t(y) * 2 * W + x2] = src[int64_t(y / 2) * W + x2 / 2];
  }
  auto xn = x.node();
  detail::attach(out, {x}, [xn, N, C, H, W](Node<S>& self) {
    xn->ensure_grad();
    for (int64_t nc = 0; nc < int64_t(N) * C; ++nc) {
      const S* g = self.grad.data() + nc * H * W * 4;
      S* dst = xn->grad.data() + nc * H * W;
      for (int y = 0; y < 2 * H; ++y)
        for (int x2 = 0; x2 < 2 * W; ++x2)
          dst[int64_t(y / 2) * W + x2 / 2] += g[int64_t(y) * 2 * W + x2];
    }
  });
  return out;
}

// Bilinear resize to (OH, OW), half-pixel centers.
template <typename S>
Tensor<S> upsample_bilinear(const Tensor<S>& x, int OH, int OW) {
  if (x.rank() != 4) throw std::runtime_error("upsample_bilinear: want [N,C,H,W]");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<S> out = Tensor<S>::zeros({N, C, OH, OW});

  struct Tap {
    int i0, i1;
    S w0, w1;
  };
  std::vector<Tap> ytap(OH), xtap(OW);
  auto make_tap = [](int out_i, int in_n, int out_n) {
    double src = (out_i + 0.5) * double(in_n) / out_n - 0.5;
    src = std::max(0.0, std::min(double(in_n - 1), src));
    int i0 = static_cast<int>(src);
    int i1 = std::min(i0 + 1, in_n - 1);
    S w1 = static_cast<S>(src - i0);
    return Tap{i0, i1, S(1) - w1, w1};
  };
  for (int y = 0; y < OH; ++y) ytap[y] = make_tap(y, H, OH);
  for (int x2 = 0; x2 < OW; ++x2) xtap[x2] = make_tap(x2, W, OW);

  const S* px = x.ptr();
  S* po = out.ptr();
  for (int64_t nc = 0; nc < int64_t(N) * C; ++nc) {
    const S* src = px + nc * H * W;
    S* dst = po + nc * OH * OW;
    for (int y = 0; y < OH; ++y) {
      const Tap& ty = ytap[y];
      for (int x2 = 0; x2 < OW; ++x2) {
        const Tap& tx = xtap[x2];
        dst[int64_t(y) * OW + x2] = ty.w0 * (tx.w0 * src[int64_t(ty.i0) * W + tx.i0] +
                                             tx.w1 * src[int64_t(ty.i0) * W + tx.i1]) +
                                    ty.w1 * (tx.w0 * src[int64_t(ty.i1) * W + tx.i0] +
                                             tx.w1 * src[int64_t(ty.i1) * W + tx.i1]);
      }
    }
  }
  auto xn = x.node();
  detail::attach(out, {x}, [xn, N, C, H, W, OH, OW, ytap, xtap](Node<S>& self) {
    xn->ensure_grad();
    for (int64_t nc = 0; nc < int64_t(N) * C; ++nc) {
      const S* g = self.grad.data() + nc * OH * OW;
      S* dst = xn->grad.data() + nc * H * W;
      for (int y = 0; y < OH; ++y) {
        const auto& ty = ytap[y];
        for (int x2 = 0; x2 < OW; ++x2) {
          const auto& tx = xtap[x2];
          S gv = g[int64_t(y) * OW + x2];
          dst[int64_t(ty.i0) * W + tx.i0] += ty.w0 * tx.w0 * gv;
          dst[int64_t(ty.i0) * W + tx.i1] += ty.w0 * tx.w1 * gv;
          dst[int64_t(ty.i1) * W + tx.i0] += ty.w1 * tx.w0 * gv;
          dst[int64_t(ty.i1) * W + tx.i1] += ty.w1 * tx.w1 * gv;
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Similarity and losses

// Cosine similarity of two vectors; zero vectors map to exactly 0. Output
// clamped to [-1, 1].
template <typename S>
Tensor<S> cosine(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.numel() != b.numel()) throw std::runtime_error("cosine: size mismatch");
  const int64_t n = a.numel();
  const S* pa = a.ptr();
  const S* pb = b.ptr();
  S dot = S(0), na2 = S(0), nb2 = S(0);
  for (int64_t i = 0; i < n; ++i) {
    dot += pa[i] * pb[i];
    na2 += pa[i] * pa[i];
    nb2 += pb[i] * pb[i];
  }
  const S eps = S(1e-12);
  S na = std::sqrt(na2), nb = std::sqrt(nb2);
  if (na < eps || nb < eps) return Tensor<S>::scalar(S(0));
  S c = dot / (na * nb);
  S clamped = std::max(S(-1), std::min(S(1), c));
  Tensor<S> out = Tensor<S>::scalar(clamped);
  auto an = a.node(), bn = b.node();
  detail::attach(out, {a, b}, [an, bn, n, c, na, nb](Node<S>& self) {
    const S g = self.grad[0];
    const S* pa = an->data->data();
    const S* pb = bn->data->data();
    if (an->requires_grad) {
      an->ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        an->grad[i] += g * (pb[i] / (na * nb) - c * pa[i] / (na * na));
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        bn->grad[i] += g * (pa[i] / (na * nb) - c * pb[i] / (nb * nb));
    }
  });
  return out;
}

// Mean binary cross-entropy on logits; numerically stable.
template <typename S>
Tensor<S> bce_with_logits(const Tensor<S>& z, const Tensor<S>& target) {
  if (z.numel() != target.numel()) throw std::runtime_error("bce_with_logits: size mismatch");
  const int64_t n = z.numel();
  const S* pz = z.ptr();
  const S* pt = target.ptr();
  S total = S(0);
  for (int64_t i = 0; i < n; ++i) {
    S zv = pz[i];
    total += std::max(zv, S(0)) - zv * pt[i] + std::log1p(std::exp(-std::abs(zv)));
  }
  Tensor<S> out = Tensor<S>::scalar(total / S(n));
  auto zn = z.node(), tn = target.node();
  detail::attach(out, {z, target}, [zn, tn, n](Node<S>& self) {
    if (!zn->requires_grad) return;
    zn->ensure_grad();
    const S g = self.grad[0] / S(n);
    const S* pz = zn->data->data();
    const S* pt = tn->data->data();
    for (int64_t i = 0; i < n; ++i) {
      S sig = S(1) / (S(1) + std::exp(-pz[i]));
      zn->grad[i] += g * (sig - pt[i]);
    }
  });
  return out;
}

// Binary cross-entropy on probabilities (clamped internally).
template <typename S>
Tensor<S> bce_prob(const Tensor<S>& p, S target) {
  if (p.numel() != 1) throw std::runtime_error("bce_prob: want scalar probability");
  const S eps = S(1e-6);
  S pv = std::max(eps, std::min(S(1) - eps, p.item()));
  S loss = -(target * std::log(pv) + (S(1) - target) * std::log(S(1) - pv));
  Tensor<S> out = Tensor<S>::scalar(loss);
  auto pn = p.node();
  detail::attach(out, {p}, [pn, pv, target, eps](Node<S>& self) {
    pn->ensure_grad();
    S raw = (*pn->data)[0];
    if (raw <= eps || raw >= S(1) - eps) return;  // clamped region: zero grad
    pn->grad[0] += self.grad[0] * (pv - target) / (pv * (S(1) - pv));
  });
  return out;
}

// Multi-class cross-entropy on a logit vector.
template <typename S>
Tensor<S> cross_entropy_logits(const Tensor<S>& z, int target) {
  if (z.rank() != 1) throw std::runtime_error("cross_entropy_logits: want rank-1 logits");
  const int n = z.dim(0);
  if (target < 0 || target >= n) throw std::runtime_error("cross_entropy_logits: bad target");
  const S* pz = z.ptr();
  S mx = pz[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, pz[i]);
  S sum = S(0);
  for (int i = 0; i < n; ++i) sum += std::exp(pz[i] - mx);
  S logsumexp = mx + std::log(sum);
  Tensor<S> out = Tensor<S>::scalar(logsumexp - pz[target]);
  auto zn = z.node();
  detail::attach(out, {z}, [zn, n, target, mx, sum](Node<S>& self) {
    zn->ensure_grad();
    const S g = self.grad[0];
    const S* pz = zn->data->data();
    for (int i = 0; i < n; ++i) {
      S soft = std::exp(pz[i] - mx) / sum;
      zn->grad[i] += g * (soft - (i == target ? S(1) : S(0)));
    }
  });
  return out;
}

// Differentiable soft-IoU loss: 1 - (|p*g|+eps) / (|p|+|g|-|p*g|+eps).
template <typename S>
Tensor<S> soft_iou_loss(const Tensor<S>& p, const Tensor<S>& g) {
  if (p.numel() != g.numel()) throw std::runtime_error("soft_iou_loss: size mismatch");
  const int64_t n = p.numel();
  const S eps = S(1);
  const S* pp = p.ptr();
  const S* pg = g.ptr();
  S inter = S(0), psum = S(0), gsum = S(0);
  for (int64_t i = 0; i < n; ++i) {
    inter += pp[i] * pg[i];
    psum += pp[i];
    gsum += pg[i];
  }
  S uni = psum + gsum - inter;
  S loss = S(1) - (inter + eps) / (uni + eps);
  Tensor<S> out = Tensor<S>::scalar(loss);
  auto pn = p.node(), gn = g.node();
  detail::attach(out, {p, g}, [pn, gn, n, inter, uni, eps](Node<S>& self) {
    if (!pn->requires_grad) return;
    pn->ensure_grad();
    const S g0 = self.grad[0];
    const S* pg = gn->data->data();
    const S denom = (uni + eps) * (uni + eps);
    for (int64_t i = 0; i < n; ++i) {
      S d = -(pg[i] * (uni + eps) - (inter + eps) * (S(1) - pg[i])) / denom;
      pn->grad[i] += g0 * d;
    }
  });
  return out;
}

}  // namespace fsvos::nn
