// Copyright 2026 The circuitscope Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <vector>

#include "circuitscope/rng.hpp"
#include "circuitscope/tape.hpp"
#include "circuitscope/tensor.hpp"
#include "gtest/gtest.h"

namespace circuitscope {
namespace {

TEST(Backward, SumGradIsOnes) {
  Tape<float> t;
  Tensor x = Tensor({3}, {1, 2, 3});
  x.requires_grad = true;
  auto id = t.leaf(x);
  t.backward(t.sum_all(id));
  EXPECT_EQ(t.grad(id), (std::vector<float>{1, 1, 1}));
}

TEST(Backward, SumOfSquaresGradIsTwoX) {
  Tape<float> t;
  Tensor x = Tensor({3}, {1, -2, 3});
  x.requires_grad = true;
  auto id = t.leaf(x);
  t.backward(t.sum_all(t.mul(id, id)));
  EXPECT_EQ(t.grad(id), (std::vector<float>{2, -4, 6}));
}

TEST(Backward, UnusedLeafGetsExactZeroGrad) {
  Tape<float> t;
  Tensor x = Tensor({2}, {1, 2});
  x.requires_grad = true;
  Tensor y = Tensor({2}, {3, 4});
  y.requires_grad = true;
  auto xid = t.leaf(x);
  auto yid = t.leaf(y);
  t.backward(t.sum_all(xid));
  EXPECT_EQ(t.grad(yid), (std::vector<float>{0, 0}));
}

TEST(Backward, NonScalarLossRejected) {
  Tape<float> t;
  Tensor x = Tensor({2}, {1, 2});
  x.requires_grad = true;
  auto id = t.leaf(x);
  EXPECT_THROW(t.backward(id), std::invalid_argument);
}

TEST(Backward, ParamAccumulatesIntoBoundTensor) {
  Tensor w = Tensor({2}, {3, 5});
  w.requires_grad = true;
  Tape<float> t;
  auto id = t.param(w);
  t.backward(t.sum_all(t.mul(id, id)));
  ASSERT_EQ(w.grad.size(), 2u);
  EXPECT_FLOAT_EQ(w.grad[0], 6.f);
  EXPECT_FLOAT_EQ(w.grad[1], 10.f);
}

// ---------------------------------------------------------------------------
// grad_check over every registered operation
// ---------------------------------------------------------------------------

// Strict tolerance for linear/structural ops; the weighted-sum readout uses
// small integer weights and power-of-two sizes so the f32 adjoint arithmetic
// is exact and only finite-difference noise remains.
constexpr double kLinearTol = 1e-8;
constexpr double kNonlinearTol = 1e-3;

Tensor int_weights(Shape s, uint64_t seed) {
  Rng rng(seed);
  Tensor w = Tensor::zeros(std::move(s));
  for (auto& v : w.data) v = static_cast<float>(1 + rng.below(7));
  return w;
}

// loss = sum(op_output * fixed_integer_weights)
template <class S, class Op>
typename Tape<S>::NodeId readout(Tape<S>& t, typename Tape<S>::NodeId y, const Tensor& w) {
  auto wid = t.leaf(w.cast<S>());
  return t.sum_all(t.mul(y, wid));
}

TEST(GradCheck, LinearFunctionIsExact) {
  Rng rng(100);
  Tensor x = Tensor::randn({8}, rng);
  auto res = grad_check(
      [](auto& t, auto id) { return t.sum_all(t.add_scalar(t.mul_scalar(id, decltype(t.value(id).data[0])(2)), decltype(t.value(id).data[0])(3))); },
      x);
  EXPECT_LT(res.max_rel_err, kLinearTol);
}

TEST(GradCheck, AddSubLinear) {
  Rng rng(101);
  Tensor x = Tensor::randn({2, 4}, rng);
  Tensor other = int_weights({2, 4}, 7);
  Tensor w = int_weights({2, 4}, 8);
  for (bool use_sub : {false, true}) {
    auto res = grad_check(
        [&](auto& t, auto id) {
          using S = typename std::decay_t<decltype(t)>::Scalar;
          auto o = t.leaf(other.cast<S>());
          auto y = use_sub ? t.sub(id, o) : t.add(id, o);
          return readout(t, y, w);
        },
        x);
    EXPECT_LT(res.max_rel_err, kLinearTol) << (use_sub ? "sub" : "add");
  }
}

TEST(GradCheck, MulBothArguments) {
  Rng rng(102);
  Tensor x = Tensor::randn({2, 4}, rng);
  Tensor other = Tensor::randn({2, 4}, rng);
  Tensor w = int_weights({2, 4}, 9);
  // with respect to a
  auto res_a = grad_check(
      [&](auto& t, auto id) {
        using S = typename std::decay_t<decltype(t)>::Scalar;
        return readout(t, t.mul(id, t.leaf(other.cast<S>())), w);
      },
      x);
  EXPECT_LT(res_a.max_rel_err, kNonlinearTol);
  // with respect to b
  auto res_b = grad_check(
      [&](auto& t, auto id) {
        using S = typename std::decay_t<decltype(t)>::Scalar;
        return readout(t, t.mul(t.leaf(other.cast<S>()), id), w);
      },
      x);
  EXPECT_LT(res_b.max_rel_err, kNonlinearTol);
  // square through the same node twice
  auto res_sq = grad_check([&](auto& t, auto id) { return readout(t, t.mul(id, id), w); }, x);
  EXPECT_LT(res_sq.max_rel_err, kNonlinearTol);
}

TEST(GradCheck, ScalarOpsLinear) {
  Rng rng(103);
  Tensor x = Tensor::randn({8}, rng);
  Tensor w = int_weights({8}, 10);
  auto res = grad_check(
      [&](auto& t, auto id) {
        using S = typename std::decay_t<decltype(t)>::Scalar;
        return readout(t, t.add_scalar(t.mul_scalar(id, S(3)), S(-1)), w);
      },
      x);
  EXPECT_LT(res.max_rel_err, kLinearTol);
}

TEST(GradCheck, Silu) {
  Rng rng(104);
  Tensor x = Tensor::randn({16}, rng);
  Tensor w = int_weights({16}, 11);
  auto res = grad_check([&](auto& t, auto id) { return readout(t, t.silu(id), w); }, x);
  EXPECT_LT(res.max_rel_err, kNonlinearTol);
}

TEST(GradCheck, CustomUnarySquare) {
  Rng rng(105);
  Tensor x = Tensor::randn({8}, rng);
  Tensor w = int_weights({8}, 12);
  auto res = grad_check(
      [&](auto& t, auto id) {
        using S = typename std::decay_t<decltype(t)>::Scalar;
        auto y = t.custom_unary(
            id, [](S v) { return v * v; }, [](S v) { return S(2) * v; }, "square");
        return readout(t, y, w);
      },
      x);
  EXPECT_LT(res.max_rel_err, kNonlinearTol);
}

TEST(GradCheck, CorruptedGradientRuleIsCaught) {
  // negative control: forward x^2 with a deliberately wrong derivative 3x
  Rng rng(106);
  Tensor x = Tensor::randn({8}, rng);
  auto res = grad_check(
      [&](auto& t, auto id) {
        using S = typename std::decay_t<decltype(t)>::Scalar;
        auto y = t.custom_unary(
            id, [](S v) { return v * v; }, [](S v) { return S(3) * v; }, "buggy_square");
        return t.sum_all(y);
      },
      x);
  EXPECT_GT(res.max_rel_err, 1e-1);
}

TEST(GradCheck, MatmulBothArguments) {
  Rng rng(107);
  Tensor a = Tensor::randn({3, 4}, rng);
  Tensor b = Tensor::randn({4, 2}, rng);
  Tensor w = int_weights({3, 2}, 13);
  auto res_a = grad_check(
      [&](auto& t, auto id) {
        using S = typename std::decay_t<decltype(t)>::Scalar;
        return readout(t, t.matmul(id, t.leaf(b.cast<S>())), w);
      },
      a);
  EXPECT_LT(res_a.max_rel_err, kNonlinearTol);
  auto res_b = grad_check(
      [&](auto& t, auto id) {
        using S = typename std::decay_t<decltype(t)>::Scalar;
        return readout(t, t.matmul(t.leaf(a.cast<S>()), id), w);
      },
      b);
  EXPECT_LT(res_b.max_rel_err, kNonlinearTol);
}

TEST(GradCheck, BmmBothArguments) {
  Rng rng(108);
  Tensor a = Tensor::randn({2, 2, 3, 4}, rng);
  Tensor b = Tensor::randn({2, 2, 4, 2}, rng);
  Tensor w = int_weights({2, 2, 3, 2}, 14);
  auto res_a = grad_check(
      [&](auto& t, auto id) {
        using S = typename std::decay_t<decltype(t)>::Scalar;
        return readout(t, t.bmm(id, t.leaf(b.cast<S>())), w);
      },
      a);
  EXPECT_LT(res_a.max_rel_err, kNonlinearTol);
  auto res_b = grad_check(
      [&](auto& t, auto id) {
        using S = typename std::decay_t<decltype(t)>::Scalar;
        return readout(t, t.bmm(t.leaf(a.cast<S>()), id), w);
      },
      b);
  EXPECT_LT(res_b.max_rel_err, kNonlinearTol);
}

TEST(GradCheck, ChannelMatmul) {
  Rng rng(109);
  Tensor x = Tensor::randn({2, 3, 2, 2}, rng);
  Tensor wm = Tensor::randn({3, 4}, rng);
  Tensor w = int_weights({2, 4, 2, 2}, 15);
  auto res_x = grad_check(
      [&](auto& t, auto id) {
        using S = typename std::decay_t<decltype(t)>::Scalar;
        return readout(t, t.channel_matmul(id, t.leaf(wm.cast<S>())), w);
      },
      x);
  EXPECT_LT(res_x.max_rel_err, kNonlinearTol);
  auto res_w = grad_check(
      [&](auto& t, auto id) {
        using S = typename std::decay_t<decltype(t)>::Scalar;
        return readout(t, t.channel_matmul(t.leaf(x.cast<S>()), id), w);
      },
      wm);
  EXPECT_LT(res_w.max_rel_err, kNonlinearTol);
}

TEST(GradCheck, Conv2dBothArguments) {
  Rng rng(110);
  Tensor x = Tensor::randn({2, 2, 4, 4}, rng);
  Tensor k = Tensor::randn({3, 2, 3, 3}, rng);
  Tensor w = int_weights({2, 3, 4, 4}, 16);
  auto res_x = grad_check(
      [&](auto& t, auto id) {
        using S = typename std::decay_t<decltype(t)>::Scalar;
        return readout(t, t.conv2d(id, t.leaf(k.cast<S>())), w);
      },
      x);
  EXPECT_LT(res_x.max_rel_err, kNonlinearTol);
  auto res_k = grad_check(
      [&](auto& t, auto id) {
        using S = typename std::decay_t<decltype(t)>::Scalar;
        return readout(t, t.conv2d(t.leaf(x.cast<S>()), id), w);
      },
      k);
  EXPECT_LT(res_k.max_rel_err, kNonlinearTol);
}

TEST(GradCheck, BiasAddsLinear) {
  Rng rng(111);
  Tensor x4 = Tensor::randn({2, 4, 2, 2}, rng);
  Tensor cb = Tensor::randn({4}, rng);
  Tensor w4 = int_weights({2, 4, 2, 2}, 17);
  auto res1 = grad_check(
      [&](auto& t, auto id) {
        using S = typename std::decay_t<decltype(t)>::Scalar;
        return readout(t, t.add_channel_bias(id, t.leaf(cb.cast<S>())), w4);
      },
      x4);
  EXPECT_LT(res1.max_rel_err, kLinearTol);
  auto res2 = grad_check(
      [&](auto& t, auto id) {
        using S = typename std::decay_t<decltype(t)>::Scalar;
        return readout(t, t.add_channel_bias(t.leaf(x4.cast<S>()), id), w4);
      },
      cb);
  EXPECT_LT(res2.max_rel_err, kLinearTol);

  Tensor x2 = Tensor::randn({4, 8}, rng);
  Tensor lb = Tensor::randn({8}, rng);
  Tensor w2 = int_weights({4, 8}, 18);
  auto res3 = grad_check(
      [&](auto& t, auto id) {
        using S = typename std::decay_t<decltype(t)>::Scalar;
        return readout(t, t.add_bias(id, t.leaf(lb.cast<S>())), w2);
      },
      x2);
  EXPECT_LT(res3.max_rel_err, kLinearTol);
  auto res4 = grad_check(
      [&](auto& t, auto id) {
        using S = typename std::decay_t<decltype(t)>::Scalar;
        return readout(t, t.add_bias(t.leaf(x2.cast<S>()), id), lb);
      },
      lb);
  EXPECT_LT(res4.max_rel_err, kLinearTol);

  Tensor tb = Tensor::randn({2, 4}, rng);
  auto res5 = grad_check(
      [&](auto& t, auto id) {
        using S = typename std::decay_t<decltype(t)>::Scalar;
        return readout(t, t.add_time_bias(t.leaf(x4.cast<S>()), id), w4);
      },
      tb);
  EXPECT_LT(res5.max_rel_err, kLinearTol);
}

TEST(GradCheck, GroupNorm) {
  Rng rng(112);
  Tensor x = Tensor::randn({2, 4, 3, 3}, rng);
  Tensor w = int_weights({2, 4, 3, 3}, 19);
  auto res = grad_check(
      [&](auto& t, auto id) {
        using S = typename std::decay_t<decltype(t)>::Scalar;
        return readout(t, t.group_norm(id, 2, S(1e-5)), w);
      },
      x);
  EXPECT_LT(res.max_rel_err, kNonlinearTol);
}

TEST(GradCheck, ChannelScaleShift) {
  Rng rng(113);
  Tensor x = Tensor::randn({2, 4, 2, 2}, rng);
  Tensor gamma = Tensor::randn({4}, rng);
  Tensor beta = Tensor::randn({4}, rng);
  Tensor w = int_weights({2, 4, 2, 2}, 20);
  auto res_x = grad_check(
      [&](auto& t, auto id) {
        using S = typename std::decay_t<decltype(t)>::Scalar;
        return readout(t, t.channel_scale_shift(id, t.leaf(gamma.cast<S>()), t.leaf(beta.cast<S>())), w);
      },
      x);
  EXPECT_LT(res_x.max_rel_err, kNonlinearTol);
  auto res_g = grad_check(
      [&](auto& t, auto id) {
        using S = typename std::decay_t<decltype(t)>::Scalar;
        return readout(t, t.channel_scale_shift(t.leaf(x.cast<S>()), id, t.leaf(beta.cast<S>())), w);
      },
      gamma);
  EXPECT_LT(res_g.max_rel_err, kNonlinearTol);
  auto res_b = grad_check(
      [&](auto& t, auto id) {
        using S = typename std::decay_t<decltype(t)>::Scalar;
        return readout(t, t.channel_scale_shift(t.leaf(x.cast<S>()), t.leaf(gamma.cast<S>()), id), w);
      },
      beta);
  EXPECT_LT(res_b.max_rel_err, kLinearTol);
}

TEST(GradCheck, Softmax) {
  Rng rng(114);
  Tensor x = Tensor::randn({3, 5}, rng);
  Tensor w = int_weights({3, 5}, 21);
  auto res = grad_check([&](auto& t, auto id) { return readout(t, t.softmax_rows(id), w); }, x);
  EXPECT_LT(res.max_rel_err, kNonlinearTol);
}

TEST(GradCheck, ShapeOpsLinear) {
  Rng rng(115);
  Tensor x = Tensor::randn({2, 2, 4, 4}, rng);
  Tensor wp = int_weights({2, 4, 2, 4}, 22);
  auto res_perm = grad_check(
      [&](auto& t, auto id) { return readout(t, t.permute(id, {0, 2, 1, 3}), wp); }, x);
  EXPECT_LT(res_perm.max_rel_err, kLinearTol);

  Tensor wr = int_weights({4, 16}, 23);
  auto res_resh = grad_check(
      [&](auto& t, auto id) { return readout(t, t.reshape(id, {4, 16}), wr); }, x);
  EXPECT_LT(res_resh.max_rel_err, kLinearTol);

  Tensor wpool = int_weights({2, 2, 2, 2}, 24);
  auto res_pool = grad_check(
      [&](auto& t, auto id) { return readout(t, t.avg_pool2(id), wpool); }, x);
  EXPECT_LT(res_pool.max_rel_err, kLinearTol);

  Tensor wup = int_weights({2, 2, 8, 8}, 25);
  auto res_up = grad_check(
      [&](auto& t, auto id) { return readout(t, t.upsample_nearest2(id), wup); }, x);
  EXPECT_LT(res_up.max_rel_err, kLinearTol);

  Tensor other = Tensor::randn({2, 3, 4, 4}, rng);
  Tensor wc = int_weights({2, 5, 4, 4}, 26);
  auto res_cat = grad_check(
      [&](auto& t, auto id) {
        using S = typename std::decay_t<decltype(t)>::Scalar;
        return readout(t, t.concat_channels(id, t.leaf(other.cast<S>())), wc);
      },
      x);
  EXPECT_LT(res_cat.max_rel_err, kLinearTol);
}

TEST(GradCheck, InterventionOpsLinear) {
  Rng rng(116);
  Tensor x = Tensor::randn({2, 4, 2, 4}, rng);
  Tensor w = int_weights({2, 4, 2, 4}, 27);
  auto res_scale = grad_check(
      [&](auto& t, auto id) {
        using S = typename std::decay_t<decltype(t)>::Scalar;
        return readout(t, t.scale_axis_slice(id, 1, 2, S(0.5)), w);
      },
      x);
  EXPECT_LT(res_scale.max_rel_err, kLinearTol);
  auto res_blend = grad_check(
      [&](auto& t, auto id) {
        using S = typename std::decay_t<decltype(t)>::Scalar;
        return readout(t, t.blend_uniform_rows(id, 1, S(0.25)), w);
      },
      x);
  EXPECT_LT(res_blend.max_rel_err, kLinearTol);
}

TEST(GradCheck, Reductions) {
  Rng rng(117);
  Tensor x = Tensor::randn({16}, rng);
  auto res_sum = grad_check([](auto& t, auto id) { return t.sum_all(id); }, x);
  EXPECT_LT(res_sum.max_rel_err, kLinearTol);
  auto res_mean = grad_check([](auto& t, auto id) { return t.mean_all(id); }, x);
  EXPECT_LT(res_mean.max_rel_err, kLinearTol);
}

// conv -> group_norm -> attention -> MSE, the same op chain the denoiser is
// assembled from.
TEST(GradCheck, ComposedBlock) {
  Rng rng(118);
  const int B = 1, C = 2, H = 4, W = 4, D = 4;
  Tensor x = Tensor::randn({B, C, H, W}, rng, 0.5f);
  Tensor conv_w = Tensor::randn({C, C, 3, 3}, rng, 0.3f);
  Tensor wq = Tensor::randn({C, D}, rng, 0.5f);
  Tensor wk = Tensor::randn({C, D}, rng, 0.5f);
  Tensor wv = Tensor::randn({C, D}, rng, 0.5f);
  Tensor wo = Tensor::randn({D, C}, rng, 0.5f);
  Tensor target = Tensor::randn({B, C, H, W}, rng);

  auto build = [&](auto& t, auto id) {
    using S = typename std::decay_t<decltype(t)>::Scalar;
    auto h = t.conv2d(id, t.leaf(conv_w.cast<S>()));
    h = t.group_norm(h, 2, S(1e-5));
    // single-head spatial attention
    auto q = t.channel_matmul(h, t.leaf(wq.cast<S>()));
    auto k = t.channel_matmul(h, t.leaf(wk.cast<S>()));
    auto v = t.channel_matmul(h, t.leaf(wv.cast<S>()));
    auto q3 = t.permute(t.reshape(q, {B, D, H * W}), {0, 2, 1});
    auto k3 = t.reshape(k, {B, D, H * W});
    auto scores = t.mul_scalar(t.bmm(q3, k3), S(1.0 / std::sqrt(double(D))));
    auto attn = t.softmax_rows(scores);
    auto v3 = t.permute(t.reshape(v, {B, D, H * W}), {0, 2, 1});
    auto ctx = t.bmm(attn, v3);
    auto ctx4 = t.reshape(t.permute(ctx, {0, 2, 1}), {B, D, H, W});
    auto out = t.add(t.channel_matmul(ctx4, t.leaf(wo.cast<S>())), h);
    auto diff = t.sub(out, t.leaf(target.cast<S>()));
    return t.mean_all(t.mul(diff, diff));
  };
  auto res = grad_check(build, x);
  EXPECT_LT(res.max_rel_err, kNonlinearTol)
      << "worst at " << res.worst_index << ": ad=" << res.autodiff << " fd=" << res.central_diff;
}

}  // namespace
}  // namespace circuitscope
