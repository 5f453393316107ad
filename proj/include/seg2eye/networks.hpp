#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "seg2eye/blocks.hpp"
#include "seg2eye/core.hpp"
#include "seg2eye/params.hpp"

namespace seg2eye::nn {

struct ModelConfig {
  int resolution = 64;
  int num_classes = kNumClasses;
  int ds = 64;  // style code length
  int k_style = 4;
  int spade_hidden = 32;
  std::vector<int> gen_widths = {256, 128, 64, 32};  // channel count per generator scale
  std::vector<int> enc_widths = {16, 32, 64, 128};
  std::vector<int> disc_widths = {32, 64, 128, 256};
  int disc_scales = 2;
  std::vector<int> unet_widths = {16, 32, 64, 128};  // three stages + bottleneck
  double eps = kDefaultEps;

  int upsample_stages() const { return static_cast<int>(gen_widths.size()); }
  int initial_size() const { return resolution >> upsample_stages(); }
};

template <class T>
void validate_mask(const SegMask& m, const ModelConfig& cfg) {
  if (m.height != cfg.resolution || m.width != cfg.resolution)
    throw std::invalid_argument("mask resolution does not match model resolution");
}

// ---------------------------------------------------------------------------
// Style encoder: strided spectral convs + leaky-ReLU, then global max
// pooling and a linear map to the style code. No per-image normalization:
// global intensity statistics are the style signal the code must carry, and
// instance norm would strip them before pooling. Max pooling (rather than
// average) keeps the code insensitive to how much of each eye region is
// visible in a particular pose.
// ---------------------------------------------------------------------------

template <class T>
struct StyleEncoder {
  ModelConfig cfg;
  struct Stage {
    Param<T>*w, *b;
  };
  std::vector<Stage> stages;
  Param<T>*fc_w, *fc_b;

  void init(ParamStore<T>& store, const ModelConfig& c, Rng& rng, const std::string& prefix = "enc") {
    cfg = c;
    int in = 1;
    for (size_t i = 0; i < cfg.enc_widths.size(); ++i) {
      int out = cfg.enc_widths[i];
      Stage s;
      s.w = &store.create_spectral(prefix + ".s" + std::to_string(i) + ".w", {out, in, 3, 3}, rng);
      s.b = &store.create(prefix + ".s" + std::to_string(i) + ".b", {out});
      init_normal(s.w->value, rng, he_std(static_cast<std::int64_t>(in) * 9));
      stages.push_back(s);
      in = out;
    }
    fc_w = &store.create(prefix + ".fc.w", {cfg.ds, in});
    fc_b = &store.create(prefix + ".fc.b", {cfg.ds});
    init_normal(fc_w->value, rng, he_std(in));
  }

  struct Out {
    NodeRef<T> code;                  // [N, ds]
    std::vector<NodeRef<T>> feats;    // per-stage activations
  };

  Out forward(GraphCtx<T>& ctx, NodeRef<T> img) const {
    if (img->val.dim(2) != cfg.resolution || img->val.dim(3) != cfg.resolution)
      throw std::invalid_argument("encode_style: image resolution mismatch");
    Out out;
    NodeRef<T> x = img;
    for (auto& s : stages) {
      x = conv2d(ctx.tape, x, ctx.use(*s.w), ctx.use(*s.b), 2, 1);
      x = leaky_relu(ctx.tape, x, T(kLReluSlope));
      out.feats.push_back(x);
    }
    auto pooled = global_max_pool(ctx.tape, x);
    out.code = linear(ctx.tape, pooled, ctx.use(*fc_w), ctx.use(*fc_b));
    return out;
  }
};

// Element-wise max over k style codes.
inline StyleCode aggregate_styles(const std::vector<StyleCode>& codes) {
  if (codes.empty()) throw std::invalid_argument("aggregate_styles: empty code list");
  StyleCode out = codes[0];
  for (size_t i = 1; i < codes.size(); ++i) {
    if (codes[i].size() != out.size())
      throw std::invalid_argument("aggregate_styles: code length mismatch");
    for (size_t j = 0; j < out.size(); ++j) out[j] = std::max(out[j], codes[i][j]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generator: learned linear seed from the downsampled one-hot mask, then a
// SPADE+Style ResBlock and 2x nearest upsampling per scale, final conv + tanh.
// ---------------------------------------------------------------------------

template <class T>
struct Generator {
  ModelConfig cfg;
  Param<T>*seed_w, *seed_b;
  std::vector<SpadeStyleResBlockParams<T>> blocks;
  Param<T>*out_w, *out_b;

  void init(ParamStore<T>& store, const ModelConfig& c, Rng& rng, const std::string& prefix = "gen") {
    cfg = c;
    int s0 = cfg.initial_size();
    if (s0 < 1) throw std::invalid_argument("generator: resolution too small for upsample stages");
    int in_flat = cfg.num_classes * s0 * s0;
    int seed_ch = cfg.gen_widths[0];
    seed_w = &store.create(prefix + ".seed.w", {seed_ch * s0 * s0, in_flat});
    seed_b = &store.create(prefix + ".seed.b", {seed_ch * s0 * s0});
    init_normal(seed_w->value, rng, he_std(in_flat));
    int in = seed_ch;
    for (size_t i = 0; i < cfg.gen_widths.size(); ++i) {
      int out = cfg.gen_widths[i];
      blocks.push_back(make_spade_style_resblock(store, prefix + ".rb" + std::to_string(i), in, out,
                                                 cfg.num_classes, cfg.spade_hidden, cfg.ds, rng));
      in = out;
    }
    out_w = &store.create(prefix + ".out.w", {1, in, 3, 3});
    out_b = &store.create(prefix + ".out.b", {1});
    init_normal(out_w->value, rng, he_std(static_cast<std::int64_t>(in) * 9));
  }

  // style: [N, ds]; masks.size() == N, all at cfg.resolution.
  NodeRef<T> forward(GraphCtx<T>& ctx, const std::vector<SegMask>& masks, NodeRef<T> style) const {
    int N = static_cast<int>(masks.size());
    for (auto& m : masks) validate_mask<T>(m, cfg);
    if (style->val.ndim() != 2 || style->val.dim(0) != N || style->val.dim(1) != cfg.ds)
      throw std::invalid_argument("generate: style code shape mismatch");
    int s0 = cfg.initial_size();
    int L = cfg.upsample_stages();

    // One-hot mask pyramid (constants), top-left nearest downsampling.
    std::vector<NodeRef<T>> pyramid(static_cast<size_t>(L));
    for (int i = 0; i < L; ++i) {
      int size = s0 << i;
      std::vector<SegMask> ds;
      ds.reserve(masks.size());
      for (auto& m : masks) ds.push_back(downsample_mask(m, cfg.resolution / size));
      pyramid[static_cast<size_t>(i)] = ctx.tape.constant(one_hot_batch<T>(ds, cfg.num_classes));
    }

    auto seed_in = reshape(ctx.tape, pyramid[0], {N, cfg.num_classes * s0 * s0});
    auto x = linear(ctx.tape, seed_in, ctx.use(*seed_w), ctx.use(*seed_b));
    x = reshape(ctx.tape, x, {N, cfg.gen_widths[0], s0, s0});
    for (int i = 0; i < L; ++i) {
      x = spade_style_resblock(ctx, x, pyramid[static_cast<size_t>(i)], style,
                               blocks[static_cast<size_t>(i)], T(cfg.eps));
      x = upsample_nearest2x(ctx.tape, x);
    }
    x = leaky_relu(ctx.tape, x, T(kLReluSlope));
    x = conv2d(ctx.tape, x, ctx.use(*out_w), ctx.use(*out_b), 1, 1);
    return tanh_(ctx.tape, x);
  }
};

// ---------------------------------------------------------------------------
// Multi-scale patch discriminator over concat(one-hot mask, image).
// ---------------------------------------------------------------------------

template <class T>
struct Discriminator {
  ModelConfig cfg;
  struct Layer {
    Param<T>*w, *b;
    bool norm;
  };
  struct Scale {
    std::vector<Layer> layers;
    Param<T>*logit_w, *logit_b;
  };
  std::vector<Scale> scales;

  void init(ParamStore<T>& store, const ModelConfig& c, Rng& rng, const std::string& prefix = "disc") {
    cfg = c;
    for (int s = 0; s < cfg.disc_scales; ++s) {
      Scale sc;
      int in = cfg.num_classes + 1;
      for (size_t i = 0; i < cfg.disc_widths.size(); ++i) {
        int out = cfg.disc_widths[i];
        Layer l;
        std::string name = prefix + ".sc" + std::to_string(s) + ".l" + std::to_string(i);
        l.w = &store.create_spectral(name + ".w", {out, in, 4, 4}, rng);
        l.b = &store.create(name + ".b", {out});
        l.norm = i != 0;
        init_normal(l.w->value, rng, he_std(static_cast<std::int64_t>(in) * 16));
        sc.layers.push_back(l);
        in = out;
      }
      sc.logit_w = &store.create_spectral(prefix + ".sc" + std::to_string(s) + ".logit.w",
                                          {1, in, 4, 4}, rng);
      sc.logit_b = &store.create(prefix + ".sc" + std::to_string(s) + ".logit.b", {1});
      init_normal(sc.logit_w->value, rng, he_std(static_cast<std::int64_t>(in) * 16));
      scales.push_back(sc);
    }
  }

  struct ScaleOut {
    NodeRef<T> logits;
    std::vector<NodeRef<T>> feats;
  };

  // img: [N,1,H,W] at cfg.resolution; masks at the same resolution.
  std::vector<ScaleOut> forward(GraphCtx<T>& ctx, const std::vector<SegMask>& masks,
                                NodeRef<T> img) const {
    if (img->val.dim(2) != cfg.resolution || img->val.dim(3) != cfg.resolution)
      throw std::invalid_argument("discriminate: image resolution mismatch");
    if (static_cast<int>(masks.size()) != img->val.dim(0))
      throw std::invalid_argument("discriminate: batch size mismatch");
    for (auto& m : masks) validate_mask<T>(m, cfg);

    std::vector<ScaleOut> outs;
    NodeRef<T> scaled_img = img;
    for (int s = 0; s < cfg.disc_scales; ++s) {
      int factor = 1 << s;
      std::vector<SegMask> ds;
      ds.reserve(masks.size());
      for (auto& m : masks) ds.push_back(downsample_mask(m, factor));
      if (s > 0) scaled_img = avg_pool2x(ctx.tape, scaled_img);
      auto mask_oh = ctx.tape.constant(one_hot_batch<T>(ds, cfg.num_classes));
      NodeRef<T> x = concat_channels(ctx.tape, {mask_oh, scaled_img});
      ScaleOut so;
      for (auto& l : scales[static_cast<size_t>(s)].layers) {
        x = conv2d(ctx.tape, x, ctx.use(*l.w), ctx.use(*l.b), 2, 1);
        if (l.norm) x = instance_norm(ctx.tape, x, T(cfg.eps));
        x = leaky_relu(ctx.tape, x, T(kLReluSlope));
        so.feats.push_back(x);
      }
      so.logits = conv2d(ctx.tape, x, ctx.use(*scales[static_cast<size_t>(s)].logit_w),
                         ctx.use(*scales[static_cast<size_t>(s)].logit_b), 1, 1);
      outs.push_back(so);
    }
    return outs;
  }
};

// ---------------------------------------------------------------------------
// Compact U-shaped encoder-decoder (segmenter and refiner backbone).
// ---------------------------------------------------------------------------

template <class T>
struct UNet {
  ModelConfig cfg;
  int in_channels = 1, out_channels = 4;
  struct Conv {
    Param<T>*w, *b;
  };
  std::vector<Conv> enc;  // enc0 (stride 1) then strided stages
  std::vector<Conv> dec;
  Conv head;

  void init(ParamStore<T>& store, const ModelConfig& c, int in_ch, int out_ch, Rng& rng,
            const std::string& prefix, bool zero_init_head = false) {
    cfg = c;
    in_channels = in_ch;
    out_channels = out_ch;
    const auto& w = cfg.unet_widths;  // e.g. {16, 32, 64, 128}
    int in = in_ch;
    for (size_t i = 0; i < w.size(); ++i) {
      Conv cv;
      cv.w = &store.create(prefix + ".enc" + std::to_string(i) + ".w", {w[i], in, 3, 3});
      cv.b = &store.create(prefix + ".enc" + std::to_string(i) + ".b", {w[i]});
      init_normal(cv.w->value, rng, he_std(static_cast<std::int64_t>(in) * 9));
      enc.push_back(cv);
      in = w[i];
    }
    for (size_t i = w.size() - 1; i >= 1; --i) {
      int skip_ch = w[i - 1];
      int out = w[i - 1];
      Conv cv;
      cv.w = &store.create(prefix + ".dec" + std::to_string(i - 1) + ".w",
                           {out, w[i] + skip_ch, 3, 3});
      cv.b = &store.create(prefix + ".dec" + std::to_string(i - 1) + ".b", {out});
      init_normal(cv.w->value, rng, he_std(static_cast<std::int64_t>(w[i] + skip_ch) * 9));
      dec.push_back(cv);
    }
    head.w = &store.create(prefix + ".head.w", {out_ch, w[0], 1, 1});
    head.b = &store.create(prefix + ".head.b", {out_ch});
    if (!zero_init_head) init_normal(head.w->value, rng, he_std(w[0]));
  }

  NodeRef<T> forward(GraphCtx<T>& ctx, NodeRef<T> x) const {
    if (x->val.dim(1) != in_channels) throw std::invalid_argument("unet: input channel mismatch");
    std::vector<NodeRef<T>> skips;
    for (size_t i = 0; i < enc.size(); ++i) {
      int stride = i == 0 ? 1 : 2;
      x = conv2d(ctx.tape, x, ctx.use(*enc[i].w), ctx.use(*enc[i].b), stride, 1);
      x = instance_norm(ctx.tape, x, T(cfg.eps));
      x = leaky_relu(ctx.tape, x, T(kLReluSlope));
      if (i + 1 < enc.size()) skips.push_back(x);
    }
    for (size_t i = 0; i < dec.size(); ++i) {
      x = upsample_nearest2x(ctx.tape, x);
      x = concat_channels(ctx.tape, {x, skips[skips.size() - 1 - i]});
      x = conv2d(ctx.tape, x, ctx.use(*dec[i].w), ctx.use(*dec[i].b), 1, 1);
      x = instance_norm(ctx.tape, x, T(cfg.eps));
      x = leaky_relu(ctx.tape, x, T(kLReluSlope));
    }
    return conv2d(ctx.tape, x, ctx.use(*head.w), ctx.use(*head.b), 1, 0);
  }
};

// Refiner forward: residual = R(one_hot(M_T), one_hot(M_I), I); refined =
// clamp(I + residual, -1, 1).
template <class T>
struct RefineOut {
  NodeRef<T> residual;
  NodeRef<T> refined;
};

template <class T>
RefineOut<T> refine(GraphCtx<T>& ctx, const UNet<T>& net, const std::vector<SegMask>& target_masks,
                    const std::vector<SegMask>& ref_masks, NodeRef<T> ref_imgs) {
  int N = ref_imgs->val.dim(0), H = ref_imgs->val.dim(2), W = ref_imgs->val.dim(3);
  if (static_cast<int>(target_masks.size()) != N || static_cast<int>(ref_masks.size()) != N)
    throw std::invalid_argument("refine: batch size mismatch");
  for (auto& m : target_masks)
    if (m.height != H || m.width != W) throw std::invalid_argument("refine: resolution mismatch");
  for (auto& m : ref_masks)
    if (m.height != H || m.width != W) throw std::invalid_argument("refine: resolution mismatch");
  auto mt = ctx.tape.constant(one_hot_batch<T>(target_masks, net.cfg.num_classes));
  auto mi = ctx.tape.constant(one_hot_batch<T>(ref_masks, net.cfg.num_classes));
  auto input = concat_channels(ctx.tape, {mt, mi, ref_imgs});
  RefineOut<T> out;
  out.residual = net.forward(ctx, input);
  out.refined = clamp(ctx.tape, add(ctx.tape, ref_imgs, out.residual), T(-1), T(1));
  return out;
}

}  // namespace seg2eye::nn
