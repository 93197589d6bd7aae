#pragma once

// Segmentation quality metrics: per-way region IoU (J), boundary F-measure
// (F) with a distance tolerance, their mean (J&F), and the empty/non-empty
// accuracies T-Acc / N-Acc.
//
// Empty-frame conventions: a frame where both masks are empty scores 1.0;
// a frame where exactly one is empty scores 0.0.

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "fsvos/core/types.hpp"

namespace fsvos::metrics {

inline void require_aligned(const std::vector<Mask>& a, const std::vector<Mask>& b) {
  if (a.size() != b.size())
    throw std::runtime_error("metrics: mask sequences differ in length");
  for (size_t t = 0; t < a.size(); ++t)
    if (a[t].h != b[t].h || a[t].w != b[t].w)
      throw std::runtime_error("metrics: mask shapes differ at frame " + std::to_string(t));
}

// Region similarity: mean over frames of |pred ∩ gt| / |pred ∪ gt|.
inline double region_j(const std::vector<Mask>& pred, const std::vector<Mask>& gt) {
  require_aligned(pred, gt);
  double total = 0.0;
  for (size_t t = 0; t < pred.size(); ++t) {
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < pred[t].v.size(); ++i) {
      inter += pred[t].v[i] & gt[t].v[i];
      uni += pred[t].v[i] | gt[t].v[i];
    }
    total += uni == 0 ? 1.0 : double(inter) / double(uni);
  }
  return total / double(pred.size());
}

// Foreground pixels adjacent (4-connectivity) to background or the image
// edge.
inline std::vector<std::pair<int, int>> boundary_pixels(const Mask& m) {
  std::vector<std::pair<int, int>> out;
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      if (!m.at(y, x)) continue;
      bool edge = y == 0 || y == m.h - 1 || x == 0 || x == m.w - 1;
      if (edge || !m.at(y - 1, x) || !m.at(y + 1, x) || !m.at(y, x - 1) || !m.at(y, x + 1))
        out.push_back({y, x});
    }
  return out;
}

// DAVIS-style default: 0.8% of the image diagonal, floored at one pixel so
// small desk-scale canvases do not degenerate to exact-match-only.
inline double default_boundary_tolerance(int h, int w) {
  return std::max(1.0, 0.008 * std::sqrt(double(h) * h + double(w) * w));
}

namespace detail {

// Disk offsets for morphological dilation by an exact Euclidean ball.
inline std::vector<std::pair<int, int>> disk_offsets(double tol) {
  int r = static_cast<int>(std::floor(tol));
  std::vector<std::pair<int, int>> out;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      if (double(dy) * dy + double(dx) * dx <= tol * tol) out.push_back({dy, dx});
  return out;
}

inline double matched_fraction(const std::vector<std::pair<int, int>>& probe,
                               const std::vector<std::pair<int, int>>& anchor, int h, int w,
                               const std::vector<std::pair<int, int>>& disk) {
  // Dilate the anchor boundary by the tolerance ball, then count probe
  // pixels landing inside.
  std::vector<uint8_t> dilated(size_t(h) * w, 0);
  for (auto [y, x] : anchor)
    for (auto [dy, dx] : disk) {
      int yy = y + dy, xx = x + dx;
      if (yy >= 0 && yy < h && xx >= 0 && xx < w) dilated[size_t(yy) * w + xx] = 1;
    }
  int64_t hit = 0;
  for (auto [y, x] : probe) hit += dilated[size_t(y) * w + x];
  return probe.empty() ? 0.0 : double(hit) / double(probe.size());
}

}  // namespace detail

// Boundary F-measure: precision/recall of boundary pixels matched within
// `tolerance` (Euclidean), F = 2PR/(P+R), averaged over frames.
inline double contour_f(const std::vector<Mask>& pred, const std::vector<Mask>& gt,
                        double tolerance) {
  require_aligned(pred, gt);
  auto disk = detail::disk_offsets(tolerance);
  double total = 0.0;
  for (size_t t = 0; t < pred.size(); ++t) {
    bool pe = pred[t].empty_fg(), ge = gt[t].empty_fg();
    if (pe && ge) {
      total += 1.0;
      continue;
    }
    if (pe != ge) continue;  // contributes 0
    auto bp = boundary_pixels(pred[t]);
    auto bg = boundary_pixels(gt[t]);
    double precision = detail::matched_fraction(bp, bg, pred[t].h, pred[t].w, disk);
    double recall = detail::matched_fraction(bg, bp, pred[t].h, pred[t].w, disk);
    if (precision + recall > 0.0) total += 2.0 * precision * recall / (precision + recall);
  }
  return total / double(pred.size());
}

inline double contour_f(const std::vector<Mask>& pred, const std::vector<Mask>& gt) {
  if (pred.empty()) throw std::runtime_error("contour_f: empty sequence");
  return contour_f(pred, gt, default_boundary_tolerance(pred[0].h, pred[0].w));
}

// One way of one episode.
struct EvalRecord {
  double j = 0.0, f = 0.0;
  bool empty_gt = false;
  bool empty_pred = false;

  double jf() const { return (j + f) / 2.0; }
};

inline EvalRecord evaluate_way(const std::vector<Mask>& pred, const std::vector<Mask>& gt,
                               bool empty_pred, double tolerance) {
  EvalRecord rec;
  rec.j = region_j(pred, gt);
  rec.f = contour_f(pred, gt, tolerance);
  rec.empty_pred = empty_pred;
  rec.empty_gt = true;
  for (const Mask& m : gt) rec.empty_gt &= m.empty_fg();
  return rec;
}

struct Summary {
  double jf = 0.0, j = 0.0, f = 0.0;  // means over non-empty-gt ways
  double t_acc = 0.0;                 // fraction of non-empty-gt ways kept non-empty
  std::optional<double> n_acc;        // fraction of empty-gt ways flagged empty
  int64_t non_empty_ways = 0, empty_ways = 0;
};

inline Summary accumulate(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw std::runtime_error("accumulate: no records");
  Summary s;
  double jf = 0, j = 0, f = 0, t_hit = 0, n_hit = 0;
  for (const EvalRecord& r : records) {
    if (r.empty_gt) {
      ++s.empty_ways;
      n_hit += r.empty_pred ? 1.0 : 0.0;
    } else {
      ++s.non_empty_ways;
      jf += r.jf();
      j += r.j;
      f += r.f;
      t_hit += r.empty_pred ? 0.0 : 1.0;
    }
  }
  if (s.non_empty_ways > 0) {
    s.jf = jf / double(s.non_empty_ways);
    s.j = j / double(s.non_empty_ways);
    s.f = f / double(s.non_empty_ways);
    s.t_acc = t_hit / double(s.non_empty_ways);
  }
  if (s.empty_ways > 0) s.n_acc = n_hit / double(s.empty_ways);
  return s;
}

}  // namespace fsvos::metrics
