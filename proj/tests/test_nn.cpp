#include <catch2/catch_amalgamated.hpp>

#include "fsvos/nn/checkpoint.hpp"
#include "fsvos/nn/layers.hpp"
#include "fsvos/nn/ops.hpp"
#include "fsvos/nn/optim.hpp"

using namespace fsvos;
using namespace fsvos::nn;

using T = Tensor<double>;

namespace {

// Central finite differences on every entry of every grad-enabled input.
template <typename F>
void check_grads(std::vector<T> inputs, F&& fn, double tol = 1e-6, double h = 1e-5) {
  for (auto& input : inputs) input.zero_grad();
  T loss = fn(inputs);
  loss.backward();
  for (auto& input : inputs) {
    if (!input.requires_grad()) continue;
    const auto grads = input.grad();
    for (int64_t i = 0; i < input.numel(); ++i) {
      double saved = input.vec()[i];
      input.vec()[i] = saved + h;
      double up = fn(inputs).item();
      input.vec()[i] = saved - h;
      double dn = fn(inputs).item();
      input.vec()[i] = saved;
      double fd = (up - dn) / (2 * h);
      double err = std::abs(fd - grads[i]);
      double scale = std::max({1.0, std::abs(fd), std::abs(grads[i])});
      INFO("entry " << i << " analytic " << grads[i] << " fd " << fd);
      REQUIRE(err / scale < tol);
    }
  }
}

T randt(Shape shape, Rng& rng, bool grad = true) {
  return T::randn(std::move(shape), rng, 1.0, grad);
}

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
  Rng rng = make_rng(1);
  SECTION("add same shape") {
    check_grads({randt({3, 4}, rng), randt({3, 4}, rng)},
                [](std::vector<T>& in) { return sum_all(mul(add(in[0], in[1]), in[0])); });
  }
  SECTION("add broadcast bias") {
    check_grads({randt({3, 4}, rng), randt({4}, rng)},
                [](std::vector<T>& in) { return sum_all(tanht(add(in[0], in[1]))); });
  }
  SECTION("sub and scalar ops") {
    check_grads({randt({5}, rng), randt({5}, rng)}, [](std::vector<T>& in) {
      return sum_all(muls(sub(in[0], in[1]), 2.5));
    });
  }
  SECTION("mul broadcast") {
    check_grads({randt({2, 3}, rng), randt({3}, rng)},
                [](std::vector<T>& in) { return sum_all(mul(in[0], in[1])); });
  }
  SECTION("sigmoid/tanh/relu chain") {
    // keep relu inputs away from the kink
    T x = T::from({4}, {0.5, -0.7, 1.2, -0.1}, true);
    check_grads({x}, [](std::vector<T>& in) {
      return sum_all(relu(adds(sigmoid(in[0]), 0.2)));
    });
  }
}

TEST_CASE("shape ops route gradients correctly") {
  Rng rng = make_rng(2);
  SECTION("reshape is a view") {
    T x = randt({2, 6}, rng);
    T y = reshape(x, {3, 4});
    REQUIRE(y.ptr() == x.ptr());
    check_grads({x}, [](std::vector<T>& in) { return sum_all(mul(reshape(in[0], {3, 4}),
                                                                 reshape(in[0], {3, 4}))); });
  }
  SECTION("permute") {
    check_grads({randt({2, 3, 4}, rng)}, [](std::vector<T>& in) {
      return sum_all(mul(permute(in[0], {2, 0, 1}), permute(in[0], {2, 0, 1})));
    });
  }
  SECTION("permute values") {
    T x = T::from({2, 3}, {1, 2, 3, 4, 5, 6});
    T y = permute(x, {1, 0});
    REQUIRE(y.shape() == Shape({3, 2}));
    REQUIRE(y.vec() == std::vector<double>({1, 4, 2, 5, 3, 6}));
  }
  SECTION("concat and slice") {
    check_grads({randt({2, 3}, rng), randt({2, 2}, rng)}, [](std::vector<T>& in) {
      T c = concat<double>({in[0], in[1]}, 1);      // [2,5]
      T s = slice(c, 1, 1, 3);                      // [2,3]
      return sum_all(mul(s, s));
    });
  }
}

TEST_CASE("matmul and bmm match finite differences and values") {
  Rng rng = make_rng(3);
  T a = T::from({2, 2}, {1, 2, 3, 4});
  T b = T::from({2, 2}, {5, 6, 7, 8});
  T c = matmul(a, b);
  REQUIRE(c.vec() == std::vector<double>({19, 22, 43, 50}));

  check_grads({randt({3, 4}, rng), randt({4, 2}, rng)},
              [](std::vector<T>& in) { return sum_all(mul(matmul(in[0], in[1]),
                                                          matmul(in[0], in[1]))); });
  check_grads({randt({2, 3, 4}, rng), randt({2, 4, 2}, rng)},
              [](std::vector<T>& in) { return sum_all(bmm(in[0], in[1])); });
}

TEST_CASE("softmax and layer_norm") {
  Rng rng = make_rng(4);
  T x = randt({3, 5}, rng, false);
  T y = softmax_last(x);
  for (int r = 0; r < 3; ++r) {
    double s = 0;
    for (int i = 0; i < 5; ++i) s += y.vec()[r * 5 + i];
    REQUIRE_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-12));
  }
  check_grads({randt({2, 4}, rng)},
              [](std::vector<T>& in) { return sum_all(mul(softmax_last(in[0]), in[0])); });

  check_grads({randt({3, 6}, rng), T::filled({6}, 1.2, true), T::filled({6}, 0.1, true)},
              [](std::vector<T>& in) {
                return sum_all(mul(layer_norm(in[0], in[1], in[2]), in[0]));
              },
              1e-5);
}

TEST_CASE("reductions") {
  Rng rng = make_rng(5);
  check_grads({randt({3, 4}, rng)},
              [](std::vector<T>& in) { return mean_all(mul(in[0], in[0])); });
  check_grads({randt({4, 3}, rng)},
              [](std::vector<T>& in) { return sum_all(mul(mean_rows(in[0]), mean_rows(in[0]))); });
  check_grads({randt({2, 3, 2, 2}, rng)}, [](std::vector<T>& in) {
    return sum_all(mul(spatial_mean_tc(in[0]), spatial_mean_tc(in[0])));
  });
  check_grads({randt({2, 3, 2, 2}, rng)}, [](std::vector<T>& in) {
    return sum_all(spatial_max_tc(in[0]));
  });
}

TEST_CASE("mask_pool equals the masked mean and routes gradients") {
  Rng rng = make_rng(6);
  T f = randt({2, 3, 4, 4}, rng);
  T m = T::zeros({2, 1, 4, 4});
  // frame 0: 3 pixels; frame 1: empty
  m.vec()[1] = 1;
  m.vec()[5] = 1;
  m.vec()[10] = 1;

  SECTION("zero policy") {
    std::vector<uint8_t> flags;
    T out = mask_pool(f, m, EmptyMaskPolicy::kZero, &flags);
    REQUIRE(flags == std::vector<uint8_t>({0, 1}));
    for (int c = 0; c < 3; ++c) {
      double expect = (f.vec()[c * 16 + 1] + f.vec()[c * 16 + 5] + f.vec()[c * 16 + 10]) / 3.0;
      REQUIRE_THAT(out.vec()[c], Catch::Matchers::WithinAbs(expect, 1e-12));
      REQUIRE(out.vec()[3 + c] == 0.0);
    }
    check_grads({f}, [&](std::vector<T>& in) {
      return sum_all(mul(mask_pool(in[0], m, EmptyMaskPolicy::kZero),
                         mask_pool(in[0], m, EmptyMaskPolicy::kZero)));
    });
  }
  SECTION("global average fallback policy") {
    T out = mask_pool(f, m, EmptyMaskPolicy::kGlobalAveragePool);
    for (int c = 0; c < 3; ++c) {
      double expect = 0;
      for (int i = 0; i < 16; ++i) expect += f.vec()[(3 + c) * 16 + i];
      expect /= 16.0;
      REQUIRE_THAT(out.vec()[3 + c], Catch::Matchers::WithinAbs(expect, 1e-12));
    }
    check_grads({f}, [&](std::vector<T>& in) {
      return sum_all(mul(mask_pool(in[0], m, EmptyMaskPolicy::kGlobalAveragePool),
                         mask_pool(in[0], m, EmptyMaskPolicy::kGlobalAveragePool)));
    });
  }
  SECTION("resolution mismatch throws") {
    T bad = T::zeros({2, 1, 2, 2});
    REQUIRE_THROWS(mask_pool(f, bad, EmptyMaskPolicy::kZero));
  }
}

TEST_CASE("conv2d matches a direct loop and finite differences") {
  Rng rng = make_rng(7);
  // Hand loop comparison.
  T x = randt({1, 2, 5, 5}, rng, false);
  T w = randt({3, 2, 3, 3}, rng, false);
  T b = randt({3}, rng, false);
  T y = conv2d(x, w, &b, 1, 1);
  REQUIRE(y.shape() == Shape({1, 3, 5, 5}));
  for (int f = 0; f < 3; ++f)
    for (int oy = 0; oy < 5; ++oy)
      for (int ox = 0; ox < 5; ++ox) {
        double acc = b.vec()[f];
        for (int c = 0; c < 2; ++c)
          for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
              int yy = oy + i - 1, xx = ox + j - 1;
              if (yy < 0 || yy >= 5 || xx < 0 || xx >= 5) continue;
              acc += x.vec()[(c * 5 + yy) * 5 + xx] * w.vec()[((f * 2 + c) * 3 + i) * 3 + j];
            }
        REQUIRE_THAT(y.vec()[(f * 5 + oy) * 5 + ox], Catch::Matchers::WithinAbs(acc, 1e-10));
      }

  for (int stride : {1, 2}) {
    T xs = randt({2, 2, 6, 6}, rng);
    T ws = randt({3, 2, 3, 3}, rng);
    T bs = randt({3}, rng);
    check_grads({xs, ws, bs}, [stride](std::vector<T>& in) {
      T out = conv2d(in[0], in[1], &in[2], stride, 1);
      return sum_all(mul(out, out));
    }, 1e-5);
  }
}

TEST_CASE("conv3d same-padding forward and gradients") {
  Rng rng = make_rng(8);
  T x = randt({2, 3, 4, 4}, rng);
  T w = randt({2, 2, 3, 3, 3}, rng);
  T b = randt({2}, rng);
  T y = conv3d(x, w, &b);
  REQUIRE(y.shape() == Shape({2, 3, 4, 4}));

  check_grads({x, w, b}, [](std::vector<T>& in) {
    T out = conv3d(in[0], in[1], &in[2]);
    return sum_all(mul(out, out));
  }, 1e-5);

  SECTION("identity kernel passes input through") {
    Conv3d<double> conv(3, 3, 3, rng);
    conv.set_identity();
    T xs = randt({3, 2, 3, 3}, rng, false);
    T out = conv.forward(xs);
    for (int64_t i = 0; i < xs.numel(); ++i)
      REQUIRE_THAT(out.vec()[i], Catch::Matchers::WithinAbs(xs.vec()[i], 1e-12));
  }
}

TEST_CASE("upsampling ops") {
  Rng rng = make_rng(9);
  T x = T::from({1, 1, 2, 2}, {1, 2, 3, 4});
  T y = upsample_nearest2x(x);
  REQUIRE(y.vec() == std::vector<double>({1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));

  check_grads({randt({2, 2, 3, 3}, rng)}, [](std::vector<T>& in) {
    T u = upsample_nearest2x(in[0]);
    return sum_all(mul(u, u));
  });
  check_grads({randt({1, 2, 3, 4}, rng)}, [](std::vector<T>& in) {
    T u = upsample_bilinear(in[0], 7, 9);
    return sum_all(mul(u, u));
  });
  SECTION("bilinear preserves constants") {
    T c = T::filled({1, 1, 4, 4}, 3.25);
    T u = upsample_bilinear(c, 13, 11);
    for (double v : u.vec()) REQUIRE_THAT(v, Catch::Matchers::WithinAbs(3.25, 1e-12));
  }
}

TEST_CASE("cosine similarity contract") {
  Rng rng = make_rng(10);
  T a = randt({6}, rng, false);
  REQUIRE_THAT(cosine(a, a).item(), Catch::Matchers::WithinAbs(1.0, 1e-12));
  REQUIRE_THAT(cosine(a, muls(a, -2.0)).item(), Catch::Matchers::WithinAbs(-1.0, 1e-12));
  T zero = T::zeros({6});
  REQUIRE(cosine(a, zero).item() == 0.0);
  REQUIRE(cosine(zero, zero).item() == 0.0);

  check_grads({randt({5}, rng), randt({5}, rng)},
              [](std::vector<T>& in) { return cosine(in[0], in[1]); }, 1e-5);
}

TEST_CASE("loss ops match finite differences") {
  Rng rng = make_rng(11);
  SECTION("bce_with_logits") {
    T target = T::from({4}, {1, 0, 1, 0});
    check_grads({randt({4}, rng)},
                [&](std::vector<T>& in) { return bce_with_logits(in[0], target); });
    // logit 0 on balanced targets = ln 2
    T z = T::zeros({10});
    T t = T::from({10}, {1, 0, 1, 0, 1, 0, 1, 0, 1, 0});
    REQUIRE_THAT(bce_with_logits(z, t).item(),
                 Catch::Matchers::WithinAbs(std::log(2.0), 1e-12));
  }
  SECTION("bce_prob") {
    T p = T::from({1}, {0.37}, true);
    check_grads({p}, [](std::vector<T>& in) { return bce_prob(in[0], 1.0); });
    check_grads({p}, [](std::vector<T>& in) { return bce_prob(in[0], 0.0); });
  }
  SECTION("cross_entropy_logits") {
    check_grads({randt({7}, rng)},
                [](std::vector<T>& in) { return cross_entropy_logits(in[0], 3); });
  }
  SECTION("soft_iou_loss") {
    T g = T::from({6}, {1, 0, 1, 1, 0, 0});
    T p = T::from({6}, {0.8, 0.1, 0.6, 0.4, 0.3, 0.2}, true);
    check_grads({p}, [&](std::vector<T>& in) { return soft_iou_loss(sigmoid(in[0]), g); });
    // perfect prediction has ~zero loss
    T perfect = T::from({6}, {1, 0, 1, 1, 0, 0});
    REQUIRE(soft_iou_loss(perfect, g).item() < 1e-6);
  }
}

TEST_CASE("attention blocks are differentiable end to end") {
  Rng rng = make_rng(12);
  Mha<double> mha(8, 2, rng);
  ParamList<double> params;
  mha.params(params, "mha");
  REQUIRE(params.size() == 8);

  T q = randt({3, 8}, rng);
  T kv = randt({5, 8}, rng);
  check_grads({q, kv}, [&](std::vector<T>& in) {
    return sum_all(mul(mha.forward(in[0], in[1]), in[0]));
  }, 1e-5);

  // Parameter gradients too (spot check one weight matrix).
  T out = sum_all(mha.forward(q, kv));
  out.backward();
  double gsum = 0;
  for (double g : mha.wq.w.grad()) gsum += std::abs(g);
  REQUIRE(gsum > 0.0);
}

TEST_CASE("no-grad mode records nothing") {
  Rng rng = make_rng(13);
  T a = randt({3}, rng);
  {
    NoGrad ng;
    T b = mul(a, a);
    REQUIRE_FALSE(b.requires_grad());
    REQUIRE(b.node()->parents.empty());
  }
  T c = mul(a, a);
  REQUIRE(c.requires_grad());
}

TEST_CASE("adam minimizes a quadratic and cosine schedule anneals") {
  Rng rng = make_rng(14);
  T x = T::from({3}, {5.0, -4.0, 2.0}, true);
  ParamList<double> params;
  add_param(params, "x", x);
  Adam<double> opt(params, 0.1);
  for (int i = 0; i < 300; ++i) {
    opt.zero_grad();
    T loss = sum_all(mul(x, x));
    loss.backward();
    opt.step();
  }
  for (double v : x.vec()) REQUIRE(std::abs(v) < 1e-2);

  CosineSchedule sched{1e-3, 1e-5, 100};
  REQUIRE_THAT(sched.lr_at(0), Catch::Matchers::WithinAbs(1e-3, 1e-12));
  REQUIRE_THAT(sched.lr_at(100), Catch::Matchers::WithinAbs(1e-5, 1e-12));
  REQUIRE(sched.lr_at(50) < 1e-3);
  REQUIRE(sched.lr_at(50) > 1e-5);
}

TEST_CASE("checkpoint round-trips parameters and optimizer state") {
  Rng rng = make_rng(15);
  Linear<double> lin(4, 3, rng);
  ParamList<double> params;
  lin.params(params, "lin");

  nlohmann::json cfg = {{"d", 4}};
  Checkpoint<double> ck = snapshot(params, cfg, 42);
  ck.opt_state.emplace_back("m", std::vector<double>{1.5, 2.5});
  auto path = fs::temp_directory_path() / "fsvos_ck.bin";
  save_checkpoint(ck, path);
  Checkpoint<double> back = load_checkpoint<double>(path);
  REQUIRE(back.step == 42);
  REQUIRE(back.config.at("d") == 4);
  REQUIRE(back.opt_state.size() == 1);
  REQUIRE(back.opt_state[0].second == std::vector<double>({1.5, 2.5}));

  Linear<double> lin2(4, 3, rng);
  ParamList<double> params2;
  lin2.params(params2, "lin");
  restore(back, params2);
  REQUIRE(lin2.w.vec() == lin.w.vec());
  REQUIRE(lin2.b.vec() == lin.b.vec());
  fs::remove(path);
}
