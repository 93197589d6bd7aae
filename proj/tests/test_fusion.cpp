#include <catch2/catch_amalgamated.hpp>

#include "fsvos/model/fusion.hpp"
#include "test_util.hpp"

using namespace fsvos;
using namespace fsvos::model;
using fsvos::nn::Tensor;

TEST_CASE("prototype attention fuses K-shot supports along the key axis") {
  auto cfg = testutil::tiny_config(8);
  Rng rng = make_rng(21);
  PrototypeAttention<float> attn(cfg, rng);

  Tensor<float> p_q = Tensor<float>::randn({4, 8}, rng);
  Tensor<float> s1 = Tensor<float>::randn({4, 8}, rng);
  Tensor<float> s2 = Tensor<float>::randn({4, 8}, rng);

  nn::NoGrad ng;
  Tensor<float> keys12 = nn::concat<float>({s1, s2}, 0);
  REQUIRE(keys12.shape() == nn::Shape({8, 8}));  // K=2 -> 2Q keys
  Tensor<float> out12 = attn.forward(p_q, keys12);
  REQUIRE(out12.shape() == nn::Shape({4, 8}));

  SECTION("permuting the K support clips leaves the output unchanged") {
    Tensor<float> keys21 = nn::concat<float>({s2, s1}, 0);
    Tensor<float> out21 = attn.forward(p_q, keys21);
    for (int64_t i = 0; i < out12.numel(); ++i)
      REQUIRE_THAT(out21.vec()[i], Catch::Matchers::WithinAbs(out12.vec()[i], 1e-5));
  }
}

TEST_CASE("match_score contract") {
  Rng rng = make_rng(22);
  Tensor<float> a = Tensor<float>::randn({16}, rng);
  Tensor<float> b = Tensor<float>::randn({16}, rng);

  REQUIRE_THAT(match_score(a, a).item(), Catch::Matchers::WithinAbs(1.0, 1e-6));
  REQUIRE_THAT(match_score(a, nn::muls(a, -1.0f)).item(),
               Catch::Matchers::WithinAbs(-1.0, 1e-6));

  SECTION("orthogonal vectors score zero") {
    Tensor<float> u = Tensor<float>::from({2}, {1.0f, 0.0f});
    Tensor<float> v = Tensor<float>::from({2}, {0.0f, 1.0f});
    REQUIRE(match_score(u, v).item() == 0.0f);
  }
  SECTION("symmetry and positive scale invariance") {
    for (int i = 0; i < 50; ++i) {
      Tensor<float> x = Tensor<float>::randn({8}, rng);
      Tensor<float> y = Tensor<float>::randn({8}, rng);
      float s1 = match_score(x, y).item();
      float s2 = match_score(y, x).item();
      float s3 = match_score(nn::muls(x, 3.7f), y).item();
      REQUIRE_THAT(s1, Catch::Matchers::WithinAbs(s2, 1e-6));
      REQUIRE_THAT(s1, Catch::Matchers::WithinAbs(s3, 1e-6));
      REQUIRE(s1 >= -1.0f);
      REQUIRE(s1 <= 1.0f);
    }
  }
  SECTION("zero vectors score zero") {
    Tensor<float> z = Tensor<float>::zeros({16});
    REQUIRE(match_score(z, a.detach()).item() == 0.0f);
  }
}

TEST_CASE("full forward pass on a 2-way episode") {
  auto cfg = testutil::tiny_config();
  DmaNet<float> net(cfg, 77);
  Episode ep = testutil::render_episode(2, 4, 64, 31);

  Prediction pred = net.predict_episode(ep);
  REQUIRE(pred.ways.size() == 2);
  for (const auto& wp : pred.ways) {
    REQUIRE(wp.soft_masks.size() == 4);
    REQUIRE(wp.mask_h == 64);
    REQUIRE(wp.mask_w == 64);
    for (const auto& frame : wp.soft_masks)
      for (float v : frame) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= 1.0f);
      }
    REQUIRE(wp.match_score >= -1.0f);
    REQUIRE(wp.match_score <= 1.0f);
  }

  SECTION("eval is deterministic") {
    Prediction again = net.predict_episode(ep);
    for (size_t w = 0; w < 2; ++w) {
      REQUIRE(again.ways[w].match_score == pred.ways[w].match_score);
      REQUIRE(again.ways[w].soft_masks == pred.ways[w].soft_masks);
    }
  }

  SECTION("way independence: other ways' supports do not leak") {
    Episode swapped = ep;
    // Replace way 1's support with a different rendering; way 0 must be
    // bit-identical.
    Episode alt = testutil::render_episode(3, 4, 64, 99);
    swapped.support[1] = alt.support[2];
    Prediction p2 = net.predict_episode(swapped);
    REQUIRE(p2.ways[0].match_score == pred.ways[0].match_score);
    REQUIRE(p2.ways[0].soft_masks == pred.ways[0].soft_masks);
  }
}

TEST_CASE("support clip duplicated as query matches its own way exactly") {
  auto cfg = testutil::tiny_config();
  DmaNet<float> net(cfg, 78);
  Episode ep = testutil::render_episode(2, 4, 64, 32);

  // Way 0's support doubles as the query; under the gt-mask hook both
  // branches see identical inputs, so the CLS tokens coincide.
  ep.query = ep.support[0][0].clip;
  ep.query.source_id = "dup";
  ep.query_objects.clear();
  QueryObject qo;
  qo.mask = ep.support[0][0].mask;
  qo.category = ep.support[0][0].category;
  ep.query_objects.push_back(qo);
  ep.target_way = 0;

  ForwardOptions opt;
  opt.use_gt_query_masks = true;
  Prediction pred = net.predict_episode(ep, opt);
  REQUIRE(pred.ways[0].match_score == 1.0f);
}

TEST_CASE("decoder output stays in range for adversarial inputs") {
  auto cfg = testutil::tiny_config(8);
  Rng rng = make_rng(23);
  MaskDecoder<float> dec(cfg, rng);
  FeaturePyramid<float> pyr;
  pyr.l1 = Tensor<float>::randn({2, 8, 16, 16}, rng, 50.0f);
  pyr.l2 = Tensor<float>::randn({2, 8, 8, 8}, rng, 50.0f);
  pyr.l3 = Tensor<float>::randn({2, 8, 4, 4}, rng, 50.0f);
  pyr.l4 = Tensor<float>::randn({2, 8, 2, 2}, rng, 50.0f);
  Tensor<float> fused = Tensor<float>::randn({4, 8}, rng, 50.0f);

  nn::NoGrad ng;
  Tensor<float> logits = dec.decode(pyr, fused, 64, 64);
  REQUIRE(logits.shape() == nn::Shape({2, 1, 64, 64}));
  Tensor<float> probs = nn::sigmoid(logits);
  for (float v : probs.vec()) {
    REQUIRE(v >= 0.0f);
    REQUIRE(v <= 1.0f);
    REQUIRE(std::isfinite(v));
  }
}

TEST_CASE("empty-target episodes flow through prediction") {
  auto cfg = testutil::tiny_config(16, 3, 5);
  DmaNet<float> net(cfg, 79);
  Episode ep = testutil::render_episode(2, 4, 64, 33, /*empty_target=*/true);
  REQUIRE(validate_episode(ep).empty());
  Prediction pred = net.predict_episode(ep);
  REQUIRE(pred.ways.size() == 2);
}
