#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "seg2eye/blocks.hpp"
#include "seg2eye/core.hpp"

using namespace seg2eye;
using namespace seg2eye::nn;
using test::fd_max_rel_err;
using test::random_tensor;

namespace {

Tensor<double> ramp_1234() {
  Tensor<double> x({1, 1, 2, 2});
  x[0] = 1;
  x[1] = 2;
  x[2] = 3;
  x[3] = 4;
  return x;
}

}  // namespace

TEST_CASE("instance_norm standardizes [1,2,3,4]") {
  Tape<double> tp;
  auto y = instance_norm(tp, tp.constant(ramp_1234()), 1e-10);
  const double e[4] = {-1.3416407865, -0.4472135955, 0.4472135955, 1.3416407865};
  for (int i = 0; i < 4; ++i) CHECK(y->val[i] == doctest::Approx(e[i]).epsilon(1e-6));
}

TEST_CASE("adain with gamma=2 beta=1 on [1,2,3,4]") {
  ParamStore<double> store;
  Rng rng(1);
  auto p = make_adain(store, "a", 1, 3, rng);
  // zero the style map; bias carries (gamma, beta) = (2, 1)
  for (std::int64_t i = 0; i < p.weight->value.size(); ++i) p.weight->value[i] = 0;
  p.bias->value[0] = 2;
  p.bias->value[1] = 1;

  Tape<double> tp;
  GraphCtx<double> ctx{tp};
  auto style = tp.constant(Tensor<double>({1, 3}));
  auto y = adain(ctx, tp.constant(ramp_1234()), style, p, 1e-10);
  const double e[4] = {-1.6832815730, 0.1055728090, 1.8944271910, 3.6832815730};
  for (int i = 0; i < 4; ++i) CHECK(y->val[i] == doctest::Approx(e[i]).epsilon(1e-6));
}

TEST_CASE("adain moment identity: output mean ~ beta, std ~ |gamma|") {
  ParamStore<double> store;
  Rng rng(2);
  const int C = 3, ds = 4, H = 12, W = 12;
  auto p = make_adain(store, "a", C, ds, rng);
  auto x = random_tensor({2, C, H, W}, rng);
  auto s = random_tensor({2, ds}, rng);

  Tape<double> tp;
  GraphCtx<double> ctx{tp};
  auto style = tp.constant(s);
  auto y = adain(ctx, tp.constant(x), style, p, 1e-12);

  for (int n = 0; n < 2; ++n) {
    // expected gamma/beta from the affine map
    for (int c = 0; c < C; ++c) {
      double gamma = p.bias->value[c], beta = p.bias->value[C + c];
      for (int d = 0; d < ds; ++d) {
        gamma += p.weight->value[c * ds + d] * s[n * ds + d];
        beta += p.weight->value[(C + c) * ds + d] * s[n * ds + d];
      }
      double mean = 0, var = 0;
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) mean += y->val.at(n, c, i, j);
      mean /= H * W;
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
          double d = y->val.at(n, c, i, j) - mean;
          var += d * d;
        }
      var /= H * W;
      CHECK(std::abs(mean - beta) < 1e-4);
      CHECK(std::abs(std::sqrt(var) - std::abs(gamma)) < 1e-4);
    }
  }
}

TEST_CASE("spade with zero parameters maps everything to zero") {
  ParamStore<double> store;
  Rng rng(3);
  auto p = make_spade(store, "s", 2, kNumClasses, 4, rng);
  for (auto& prm : store.all())
    for (std::int64_t i = 0; i < prm->value.size(); ++i) prm->value[i] = 0;

  SegMask m(8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) m.at(y, x) = static_cast<std::uint8_t>((y + x) % 4);
  Tape<double> tp;
  GraphCtx<double> ctx{tp};
  auto out = spade(ctx, tp.constant(random_tensor({1, 2, 8, 8}, rng)),
                   tp.constant(one_hot<double>(m, kNumClasses)), p);
  for (std::int64_t i = 0; i < out->val.size(); ++i) CHECK(out->val[i] == 0.0);
}

TEST_CASE("spade modulation is local to the mask perturbation") {
  ParamStore<double> store;
  Rng rng(4);
  const int S = 16;
  auto p = make_spade(store, "s", 2, kNumClasses, 4, rng);
  auto x = random_tensor({1, 2, S, S}, rng);
  SegMask m(S, S);
  for (auto& v : m.data) v = 1;

  auto run = [&](const SegMask& mask) {
    Tape<double> tp;
    GraphCtx<double> ctx{tp};
    return spade(ctx, tp.constant(x), tp.constant(one_hot<double>(mask, kNumClasses)), p)->val;
  };

  auto base = run(m);
  SegMask m2 = m;
  m2.at(8, 8) = 3;
  auto pert = run(m2);

  bool changed_near = false;
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < S; ++y)
      for (int x2 = 0; x2 < S; ++x2) {
        double a = base.at(0, c, y, x2), b = pert.at(0, c, y, x2);
        if (std::abs(y - 8) > 5 || std::abs(x2 - 8) > 5) {
          CHECK(a == b);  // bit-exact outside the receptive field
        } else if (a != b) {
          changed_near = true;
        }
      }
  CHECK(changed_near);
}

TEST_CASE("spade+style equals the mean of spade and adain") {
  ParamStore<double> store;
  Rng rng(5);
  const int C = 3, ds = 4, S = 8;
  auto p = make_spade_style_block(store, "b", C, kNumClasses, 4, ds, rng);
  auto x = random_tensor({2, C, S, S}, rng);
  auto s = random_tensor({2, ds}, rng);
  SegMask m(S, S);
  for (size_t i = 0; i < m.data.size(); ++i) m.data[i] = static_cast<std::uint8_t>(i % 4);

  Tape<double> tp;
  GraphCtx<double> ctx{tp};
  auto xn = tp.constant(x);
  auto mn = tp.constant(one_hot_batch<double>({m, m}, kNumClasses));
  auto sn = tp.constant(s);
  auto combined = spade_style_block(ctx, xn, mn, sn, p);
  auto a = spade(ctx, xn, mn, p.spade);
  auto b = adain(ctx, xn, sn, p.adain);
  for (std::int64_t i = 0; i < combined->val.size(); ++i)
    CHECK(std::abs(combined->val[i] - 0.5 * (a->val[i] + b->val[i])) < 1e-6);
}

TEST_CASE("resblock is the identity when its residual tower is silenced") {
  ParamStore<double> store;
  Rng rng(6);
  const int C = 3, S = 8;
  auto p = make_spade_style_resblock(store, "rb", C, C, kNumClasses, 4, 4, rng);
  REQUIRE_FALSE(p.learned_shortcut);
  for (std::int64_t i = 0; i < p.conv2_w->value.size(); ++i) p.conv2_w->value[i] = 0;
  for (std::int64_t i = 0; i < p.conv2_b->value.size(); ++i) p.conv2_b->value[i] = 0;

  auto x = random_tensor({1, C, S, S}, rng);
  SegMask m(S, S);
  for (size_t i = 0; i < m.data.size(); ++i) m.data[i] = static_cast<std::uint8_t>(i % 4);
  Tape<double> tp;
  GraphCtx<double> ctx{tp};
  auto out = spade_style_resblock(ctx, tp.constant(x), tp.constant(one_hot<double>(m, kNumClasses)),
                                  tp.constant(random_tensor({1, 4}, rng)), p);
  for (std::int64_t i = 0; i < x.size(); ++i) CHECK(out->val[i] == x[i]);
}

TEST_CASE("resblock with channel change uses the learned shortcut and output shape") {
  ParamStore<double> store;
  Rng rng(7);
  auto p = make_spade_style_resblock(store, "rb", 4, 6, kNumClasses, 4, 4, rng);
  CHECK(p.learned_shortcut);
  CHECK(p.mid_channels == 4);

  SegMask m(8, 8);
  Tape<double> tp;
  GraphCtx<double> ctx{tp};
  auto out = spade_style_resblock(ctx, tp.constant(random_tensor({2, 4, 8, 8}, rng)),
                                  tp.constant(one_hot_batch<double>({m, m}, kNumClasses)),
                                  tp.constant(random_tensor({2, 4}, rng)), p);
  CHECK(out->val.shape == std::vector<int>{2, 6, 8, 8});
}

TEST_CASE("block gradients wrt inputs pass finite differences") {
  ParamStore<double> store;
  Rng rng(8);
  const int C = 2, ds = 3, S = 4;
  auto ssb = make_spade_style_block(store, "b", C, kNumClasses, 2, ds, rng);
  SegMask m(S, S);
  for (size_t i = 0; i < m.data.size(); ++i) m.data[i] = static_cast<std::uint8_t>(i % 4);
  auto mask_oh = one_hot<double>(m, kNumClasses);

  auto x = random_tensor({1, C, S, S}, rng);
  auto s = random_tensor({1, ds}, rng);

  CHECK(fd_max_rel_err({x, s}, [&](Tape<double>& tp, auto& in) {
          GraphCtx<double> ctx{tp};
          return sum_all(tp, square(tp, adain(ctx, in[0], in[1], ssb.adain)));
        }, 1e-4) < 1e-4);
  CHECK(fd_max_rel_err({x}, [&](Tape<double>& tp, auto& in) {
          GraphCtx<double> ctx{tp};
          return sum_all(tp, square(tp, spade(ctx, in[0], tp.constant(mask_oh), ssb.spade)));
        }, 1e-4) < 1e-4);
  CHECK(fd_max_rel_err({x, s}, [&](Tape<double>& tp, auto& in) {
          GraphCtx<double> ctx{tp};
          return sum_all(tp, square(tp, spade_style_block(ctx, in[0], tp.constant(mask_oh), in[1], ssb)));
        }, 1e-4) < 1e-4);
}

TEST_CASE("resblock parameter gradients pass finite differences") {
  ParamStore<double> store;
  Rng rng(9);
  const int S = 4, ds = 3;
  auto p = make_spade_style_resblock(store, "rb", 2, 3, kNumClasses, 2, ds, rng);
  SegMask m(S, S);
  for (size_t i = 0; i < m.data.size(); ++i) m.data[i] = static_cast<std::uint8_t>(i % 4);
  auto mask_oh = one_hot<double>(m, kNumClasses);
  auto x = random_tensor({1, 2, S, S}, rng);
  auto s = random_tensor({1, ds}, rng);

  auto forward = [&](bool want_grad) {
    Tape<double> tp;
    GraphCtx<double> ctx{tp, false, want_grad};
    auto out = sum_all(tp, square(tp, spade_style_resblock(ctx, tp.constant(x),
                                                           tp.constant(mask_oh), tp.constant(s), p)));
    if (want_grad) tp.backward(out);
    return std::make_pair(out->val[0], collect_grads(ctx));
  };

  auto [base, grads] = forward(true);
  (void)base;
  const double h = 1e-4;
  double worst = 0.0;
  for (auto& [prm, g] : grads) {
    for (std::int64_t i = 0; i < g.size(); ++i) {
      double orig = prm->value[i];
      prm->value[i] = orig + h;
      double fp = forward(false).first;
      prm->value[i] = orig - h;
      double fm = forward(false).first;
      prm->value[i] = orig;
      double numeric = (fp - fm) / (2 * h);
      double err = std::abs(numeric - g[i]) / std::max({std::abs(numeric), std::abs(g[i]), 1e-6});
      worst = std::max(worst, err);
    }
  }
  CHECK(worst < 1e-4);
}
