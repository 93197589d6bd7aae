#include <catch2/catch_amalgamated.hpp>

#include "fsvos/viz/embed.hpp"

using namespace fsvos;

namespace {

// Two well-separated direction clusters in 8-d.
std::pair<std::vector<std::vector<double>>, std::vector<int>> two_clusters(int per_cluster,
                                                                           Rng& rng) {
  std::vector<std::vector<double>> pts;
  std::vector<int> labels;
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < per_cluster; ++i) {
      std::vector<double> v(8, 0.0);
      v[c * 4] = 1.0;
      for (auto& x : v) x += rand_normal(rng, 0, 0.05);
      pts.push_back(v);
      labels.push_back(c);
    }
  return {pts, labels};
}

}  // namespace

TEST_CASE("silhouette separates true labels from shuffled ones") {
  Rng rng = make_rng(51);
  auto [pts, labels] = two_clusters(10, rng);
  double good = viz::silhouette_cosine(pts, labels);
  REQUIRE(good > 0.8);

  std::vector<int> shuffled = labels;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  double bad = viz::silhouette_cosine(pts, shuffled);
  REQUIRE(good > bad);

  SECTION("single label is rejected") {
    std::vector<int> ones(pts.size(), 1);
    REQUIRE_THROWS(viz::silhouette_cosine(pts, ones));
  }
}

TEST_CASE("tsne embeds deterministically and keeps clusters apart") {
  Rng rng = make_rng(52);
  auto [pts, labels] = two_clusters(8, rng);
  auto a = viz::tsne(pts, 9, 5.0, 250);
  auto b = viz::tsne(pts, 9, 5.0, 250);
  REQUIRE(a.size() == pts.size());
  for (size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i][0] == b[i][0]);
    REQUIRE(a[i][1] == b[i][1]);
  }

  // Mean intra-cluster 2D distance below mean inter-cluster distance.
  double intra = 0, inter = 0;
  int ni = 0, nx = 0;
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = i + 1; j < a.size(); ++j) {
      double d = std::hypot(a[i][0] - a[j][0], a[i][1] - a[j][1]);
      if (labels[i] == labels[j]) {
        intra += d;
        ++ni;
      } else {
        inter += d;
        ++nx;
      }
    }
  REQUIRE(intra / ni < inter / nx);
}

TEST_CASE("scatter rendering marks every point") {
  Rng rng = make_rng(53);
  auto [pts, labels] = two_clusters(6, rng);
  auto xy = viz::tsne(pts, 3, 4.0, 150);
  std::vector<viz::PrototypePoint> dump(pts.size());
  for (size_t i = 0; i < pts.size(); ++i) {
    dump[i].clip_id = "c" + std::to_string(i);
    dump[i].object_class = labels[i];
    dump[i].motion_class = int(i) % 3;
    dump[i].embedding = pts[i];
  }
  auto img = viz::render_scatter(dump, xy, 240);
  REQUIRE(img.w == 240);
  int non_bg = 0;
  for (size_t i = 0; i < img.pix.size(); i += 3)
    if (img.pix[i] != 250) ++non_bg;
  REQUIRE(non_bg > 50);  // markers actually drawn
}
