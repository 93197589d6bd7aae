#pragma once

// Prototype-space analysis: exact t-SNE for small point sets, silhouette
// scores under cosine distance, and a scatter rendering where color encodes
// the object class and marker shape the motion class.

#include <algorithm>
#include <cmath>
#include <vector>

#include "fsvos/io/png.hpp"
#include "fsvos/synth/synth.hpp"
#include "fsvos/util/rng.hpp"

namespace fsvos::viz {

inline double cosine_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na < 1e-24 || nb < 1e-24) return 1.0;
  return 1.0 - dot / std::sqrt(na * nb);
}

// Mean silhouette over all points, cosine distance. Labels with a single
// member contribute 0.
inline double silhouette_cosine(const std::vector<std::vector<double>>& points,
                                const std::vector<int>& labels) {
  const size_t n = points.size();
  if (n < 2) throw std::runtime_error("silhouette: need at least 2 points");
  std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) dist[i][j] = dist[j][i] = cosine_distance(points[i], points[j]);

  std::vector<int> uniq(labels);
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  if (uniq.size() < 2) throw std::runtime_error("silhouette: need at least 2 labels");

  double total = 0;
  for (size_t i = 0; i < n; ++i) {
    double a = 0;
    int a_count = 0;
    double b = std::numeric_limits<double>::infinity();
    for (int lbl : uniq) {
      double sum = 0;
      int count = 0;
      for (size_t j = 0; j < n; ++j) {
        if (j == i || labels[j] != lbl) continue;
        sum += dist[i][j];
        ++count;
      }
      if (lbl == labels[i]) {
        a = count > 0 ? sum / count : 0;
        a_count = count;
      } else if (count > 0) {
        b = std::min(b, sum / count);
      }
    }
    if (a_count == 0 || !std::isfinite(b)) continue;  // singleton cluster: s = 0
    total += (b - a) / std::max(a, b);
  }
  return total / double(n);
}

// Exact t-SNE (quadratic in n) with early exaggeration; deterministic given
// the seed. Suitable for the few hundred prototypes a clip dump produces.
inline std::vector<std::array<double, 2>> tsne(const std::vector<std::vector<double>>& points,
                                               uint64_t seed, double perplexity = 12.0,
                                               int iterations = 400) {
  const int n = static_cast<int>(points.size());
  if (n < 3) throw std::runtime_error("tsne: need at least 3 points");
  perplexity = std::min(perplexity, (n - 1) / 3.0);

  // Squared distances on L2-normalized vectors (cosine geometry).
  std::vector<std::vector<double>> nrm(points);
  for (auto& p : nrm) {
    double norm = 0;
    for (double v : p) norm += v * v;
    norm = std::sqrt(std::max(norm, 1e-24));
    for (double& v : p) v /= norm;
  }
  std::vector<std::vector<double>> d2(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double s = 0;
      for (size_t k = 0; k < nrm[i].size(); ++k) {
        double diff = nrm[i][k] - nrm[j][k];
        s += diff * diff;
      }
      d2[i][j] = d2[j][i] = s;
    }

  // Per-point bandwidth via bisection on the perplexity.
  std::vector<std::vector<double>> p(n, std::vector<double>(n, 0.0));
  const double log_perp = std::log(perplexity);
  for (int i = 0; i < n; ++i) {
    double lo = 1e-10, hi = 1e10, beta = 1.0;
    for (int it = 0; it < 64; ++it) {
      double sum = 0, hsum = 0;
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        double e = std::exp(-d2[i][j] * beta);
        sum += e;
        hsum += beta * d2[i][j] * e;
      }
      double entropy = sum > 0 ? std::log(sum) + hsum / sum : 0;
      if (std::abs(entropy - log_perp) < 1e-5) break;
      if (entropy > log_perp) {
        lo = beta;
        beta = hi > 1e9 ? beta * 2 : (beta + hi) / 2;
      } else {
        hi = beta;
        beta = (beta + lo) / 2;
      }
    }
    double sum = 0;
    for (int j = 0; j < n; ++j)
      if (j != i) {
        p[i][j] = std::exp(-d2[i][j] * beta);
        sum += p[i][j];
      }
    for (int j = 0; j < n; ++j)
      if (j != i) p[i][j] /= std::max(sum, 1e-12);
  }
  // Symmetrize.
  std::vector<std::vector<double>> P(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) P[i][j] = std::max((p[i][j] + p[j][i]) / (2.0 * n), 1e-12);

  Rng rng = make_rng(derive_seed(seed, 0x75E));
  std::vector<std::array<double, 2>> y(n), inc(n, {0, 0});
  for (auto& pt : y) pt = {rand_normal(rng, 0, 1e-4), rand_normal(rng, 0, 1e-4)};

  const double lr = 100.0;
  for (int it = 0; it < iterations; ++it) {
    double exaggeration = it < 100 ? 4.0 : 1.0;
    double momentum = it < 100 ? 0.5 : 0.8;

    std::vector<std::vector<double>> qnum(n, std::vector<double>(n, 0.0));
    double qsum = 0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        double dy0 = y[i][0] - y[j][0], dy1 = y[i][1] - y[j][1];
        double q = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
        qnum[i][j] = qnum[j][i] = q;
        qsum += 2 * q;
      }
    for (int i = 0; i < n; ++i) {
      double g0 = 0, g1 = 0;
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        double q = qnum[i][j];
        double coef = (exaggeration * P[i][j] - q / qsum) * q;
        g0 += coef * (y[i][0] - y[j][0]);
        g1 += coef * (y[i][1] - y[j][1]);
      }
      inc[i][0] = momentum * inc[i][0] - lr * 4 * g0;
      inc[i][1] = momentum * inc[i][1] - lr * 4 * g1;
    }
    for (int i = 0; i < n; ++i) {
      y[i][0] += inc[i][0];
      y[i][1] += inc[i][1];
    }
  }
  return y;
}

// One dumped prototype per clip.
struct PrototypePoint {
  std::string clip_id;
  int object_class = 0;
  int motion_class = 0;
  std::vector<double> embedding;  // pooled P_dma
  std::vector<double> cls;        // [CLS] token
};

// Scatter rendering: marker geometry follows the motion class, fill color
// the object class.
inline png::ImageU8 render_scatter(const std::vector<PrototypePoint>& points,
                                   const std::vector<std::array<double, 2>>& xy, int size = 480) {
  png::ImageU8 img;
  img.h = img.w = size;
  img.c = 3;
  img.pix.assign(size_t(size) * size * 3, 250);
  if (points.empty()) return img;

  double x0 = xy[0][0], x1 = xy[0][0], y0 = xy[0][1], y1 = xy[0][1];
  for (const auto& pt : xy) {
    x0 = std::min(x0, pt[0]); x1 = std::max(x1, pt[0]);
    y0 = std::min(y0, pt[1]); y1 = std::max(y1, pt[1]);
  }
  double spanx = std::max(x1 - x0, 1e-9), spany = std::max(y1 - y0, 1e-9);
  const int margin = 20;

  for (size_t i = 0; i < points.size(); ++i) {
    int cx = margin + static_cast<int>((xy[i][0] - x0) / spanx * (size - 2 * margin));
    int cy = margin + static_cast<int>((xy[i][1] - y0) / spany * (size - 2 * margin));
    auto color = synth::base_color_for_object_class(points[i].object_class);
    synth::ShapeSpec marker;
    marker.geometry = synth::geometry_for_object_class(points[i].motion_class);  // shape = motion
    marker.size = 11.0;
    for (int y = cy - 8; y <= cy + 8; ++y)
      for (int x = cx - 8; x <= cx + 8; ++x) {
        if (y < 0 || y >= size || x < 0 || x >= size) continue;
        if (!synth::inside_shape(marker, 0.0, cx, cy, x, y)) continue;
        for (int c = 0; c < 3; ++c)
          img.pix[(size_t(y) * size + x) * 3 + c] = static_cast<uint8_t>(color[c] * 255);
      }
  }
  return img;
}

}  // namespace fsvos::viz
