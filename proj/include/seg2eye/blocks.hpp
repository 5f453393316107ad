#pragma once

#include <string>

#include "seg2eye/params.hpp"
#include "seg2eye/tape.hpp"

namespace seg2eye::nn {

inline constexpr double kDefaultEps = 1e-5;
inline constexpr double kLReluSlope = 0.2;

// Affine map from a style code to per-channel (gamma, beta).
template <class T>
struct AdaINParams {
  Param<T>* weight = nullptr;  // [2C, ds]
  Param<T>* bias = nullptr;    // [2C]
  int channels = 0;
};

template <class T>
AdaINParams<T> make_adain(ParamStore<T>& store, const std::string& prefix, int channels, int ds,
                          Rng& rng) {
  AdaINParams<T> p;
  p.channels = channels;
  p.weight = &store.create(prefix + ".w", {2 * channels, ds});
  p.bias = &store.create(prefix + ".b", {2 * channels});
  init_normal(p.weight->value, rng, 0.02);
  // Start near identity modulation: gamma ~ 1, beta ~ 0.
  for (int c = 0; c < channels; ++c) p.bias->value[c] = T(1);
  return p;
}

// gamma = first C entries of the affine output, beta = last C.
template <class T>
NodeRef<T> adain(GraphCtx<T>& ctx, NodeRef<T> x, NodeRef<T> style, const AdaINParams<T>& p,
                 T eps = T(kDefaultEps)) {
  if (style->val.ndim() != 2 || style->val.dim(1) != p.weight->value.dim(1))
    throw std::invalid_argument("adain: style code length mismatch");
  if (x->val.dim(1) != p.channels) throw std::invalid_argument("adain: channel mismatch");
  auto gb = linear(ctx.tape, style, ctx.use(*p.weight), ctx.use(*p.bias));
  auto gamma = slice_cols(ctx.tape, gb, 0, p.channels);
  auto beta = slice_cols(ctx.tape, gb, p.channels, p.channels);
  return channel_affine(ctx.tape, instance_norm(ctx.tape, x, eps), gamma, beta);
}

// Two-conv tower over the one-hot mask producing spatial scale/offset maps.
template <class T>
struct SPADEParams {
  Param<T>* shared_w = nullptr;  // [hidden, num_classes, 3, 3]
  Param<T>* shared_b = nullptr;
  Param<T>* gamma_w = nullptr;  // [C, hidden, 3, 3]
  Param<T>* gamma_b = nullptr;
  Param<T>* beta_w = nullptr;
  Param<T>* beta_b = nullptr;
  int channels = 0;
};

template <class T>
SPADEParams<T> make_spade(ParamStore<T>& store, const std::string& prefix, int channels,
                          int num_classes, int hidden, Rng& rng) {
  SPADEParams<T> p;
  p.channels = channels;
  p.shared_w = &store.create_spectral(prefix + ".shared.w", {hidden, num_classes, 3, 3}, rng);
  p.shared_b = &store.create(prefix + ".shared.b", {hidden});
  p.gamma_w = &store.create_spectral(prefix + ".gamma.w", {channels, hidden, 3, 3}, rng);
  p.gamma_b = &store.create(prefix + ".gamma.b", {channels});
  p.beta_w = &store.create_spectral(prefix + ".beta.w", {channels, hidden, 3, 3}, rng);
  p.beta_b = &store.create(prefix + ".beta.b", {channels});
  init_normal(p.shared_w->value, rng, he_std(static_cast<std::int64_t>(num_classes) * 9));
  init_normal(p.gamma_w->value, rng, he_std(static_cast<std::int64_t>(hidden) * 9));
  init_normal(p.beta_w->value, rng, he_std(static_cast<std::int64_t>(hidden) * 9));
  return p;
}

// mask_onehot must already be at x's spatial resolution (nearest-neighbor).
template <class T>
NodeRef<T> spade(GraphCtx<T>& ctx, NodeRef<T> x, NodeRef<T> mask_onehot, const SPADEParams<T>& p,
                 T eps = T(kDefaultEps)) {
  if (mask_onehot->val.dim(2) != x->val.dim(2) || mask_onehot->val.dim(3) != x->val.dim(3) ||
      mask_onehot->val.dim(0) != x->val.dim(0))
    throw std::invalid_argument("spade: mask/feature spatial mismatch");
  if (x->val.dim(1) != p.channels) throw std::invalid_argument("spade: channel mismatch");
  auto h = relu(ctx.tape, conv2d(ctx.tape, mask_onehot, ctx.use(*p.shared_w),
                                 ctx.use(*p.shared_b), 1, 1));
  auto gamma_map = conv2d(ctx.tape, h, ctx.use(*p.gamma_w), ctx.use(*p.gamma_b), 1, 1);
  auto beta_map = conv2d(ctx.tape, h, ctx.use(*p.beta_w), ctx.use(*p.beta_b), 1, 1);
  auto xn = instance_norm(ctx.tape, x, eps);
  return add(ctx.tape, mul(ctx.tape, gamma_map, xn), beta_map);
}

template <class T>
struct SpadeStyleBlockParams {
  SPADEParams<T> spade;
  AdaINParams<T> adain;
};

template <class T>
SpadeStyleBlockParams<T> make_spade_style_block(ParamStore<T>& store, const std::string& prefix,
                                                int channels, int num_classes, int hidden, int ds,
                                                Rng& rng) {
  SpadeStyleBlockParams<T> p;
  p.spade = make_spade(store, prefix + ".spade", channels, num_classes, hidden, rng);
  p.adain = make_adain(store, prefix + ".adain", channels, ds, rng);
  return p;
}

// SPADE+STYLE(X) = (SPADE(X) + AdaIN(X)) / 2
template <class T>
NodeRef<T> spade_style_block(GraphCtx<T>& ctx, NodeRef<T> x, NodeRef<T> mask_onehot,
                             NodeRef<T> style, const SpadeStyleBlockParams<T>& p,
                             T eps = T(kDefaultEps)) {
  auto a = spade(ctx, x, mask_onehot, p.spade, eps);
  auto b = adain(ctx, x, style, p.adain, eps);
  return affine(ctx.tape, add(ctx.tape, a, b), T(0.5), T(0));
}

// Two {SPADE+Style Block -> leaky-ReLU -> 3x3 conv} units plus a shortcut.
// Shortcut is identity when channel counts match, else SPADE+Style Block
// followed by a 1x1 conv.
template <class T>
struct SpadeStyleResBlockParams {
  SpadeStyleBlockParams<T> ssb1, ssb2;
  Param<T>* conv1_w = nullptr;
  Param<T>* conv1_b = nullptr;
  Param<T>* conv2_w = nullptr;
  Param<T>* conv2_b = nullptr;
  bool learned_shortcut = false;
  SpadeStyleBlockParams<T> ssb_s;
  Param<T>* conv_s_w = nullptr;
  Param<T>* conv_s_b = nullptr;
  int in_channels = 0, out_channels = 0, mid_channels = 0;
};

template <class T>
SpadeStyleResBlockParams<T> make_spade_style_resblock(ParamStore<T>& store,
                                                      const std::string& prefix, int in_channels,
                                                      int out_channels, int num_classes, int hidden,
                                                      int ds, Rng& rng) {
  SpadeStyleResBlockParams<T> p;
  p.in_channels = in_channels;
  p.out_channels = out_channels;
  p.mid_channels = std::min(in_channels, out_channels);
  p.ssb1 = make_spade_style_block(store, prefix + ".ssb1", in_channels, num_classes, hidden, ds, rng);
  p.conv1_w = &store.create_spectral(prefix + ".conv1.w", {p.mid_channels, in_channels, 3, 3}, rng);
  p.conv1_b = &store.create(prefix + ".conv1.b", {p.mid_channels});
  p.ssb2 = make_spade_style_block(store, prefix + ".ssb2", p.mid_channels, num_classes, hidden, ds, rng);
  p.conv2_w = &store.create_spectral(prefix + ".conv2.w", {out_channels, p.mid_channels, 3, 3}, rng);
  p.conv2_b = &store.create(prefix + ".conv2.b", {out_channels});
  init_normal(p.conv1_w->value, rng, he_std(static_cast<std::int64_t>(in_channels) * 9));
  init_normal(p.conv2_w->value, rng, he_std(static_cast<std::int64_t>(p.mid_channels) * 9));
  p.learned_shortcut = in_channels != out_channels;
  if (p.learned_shortcut) {
    p.ssb_s = make_spade_style_block(store, prefix + ".ssbs", in_channels, num_classes, hidden, ds, rng);
    p.conv_s_w = &store.create_spectral(prefix + ".convs.w", {out_channels, in_channels, 1, 1}, rng);
    p.conv_s_b = &store.create(prefix + ".convs.b", {out_channels});
    init_normal(p.conv_s_w->value, rng, he_std(in_channels));
  }
  return p;
}

template <class T>
NodeRef<T> spade_style_resblock(GraphCtx<T>& ctx, NodeRef<T> x, NodeRef<T> mask_onehot,
                                NodeRef<T> style, const SpadeStyleResBlockParams<T>& p,
                                T eps = T(kDefaultEps), T slope = T(kLReluSlope)) {
  if (x->val.dim(1) != p.in_channels)
    throw std::invalid_argument("spade_style_resblock: channel config mismatch");
  auto h = spade_style_block(ctx, x, mask_onehot, style, p.ssb1, eps);
  h = conv2d(ctx.tape, leaky_relu(ctx.tape, h, slope), ctx.use(*p.conv1_w), ctx.use(*p.conv1_b), 1, 1);
  h = spade_style_block(ctx, h, mask_onehot, style, p.ssb2, eps);
  h = conv2d(ctx.tape, leaky_relu(ctx.tape, h, slope), ctx.use(*p.conv2_w), ctx.use(*p.conv2_b), 1, 1);
  NodeRef<T> skip = x;
  if (p.learned_shortcut) {
    skip = spade_style_block(ctx, x, mask_onehot, style, p.ssb_s, eps);
    skip = conv2d(ctx.tape, skip, ctx.use(*p.conv_s_w), ctx.use(*p.conv_s_b), 1, 0);
  }
  return add(ctx.tape, skip, h);
}

}  // namespace seg2eye::nn
