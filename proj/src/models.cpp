#include "seg2eye/models.hpp"

#include "seg2eye/rng.hpp"

namespace seg2eye {

using nn::GraphCtx;
using nn::Tape;

SegmenterModel SegmenterModel::create(const nn::ModelConfig& cfg, std::uint64_t seed) {
  SegmenterModel m;
  m.cfg = cfg;
  m.store = std::make_unique<nn::ParamStore<float>>();
  Rng rng(Rng::derive(seed, 0x736567ull));
  m.net.init(*m.store, cfg, 1, cfg.num_classes, rng, "seg");
  return m;
}

Tensor<float> SegmenterModel::logits(const std::vector<GrayImage>& imgs) const {
  Tape<float> tp;
  GraphCtx<float> ctx{tp, false, false};
  auto x = tp.constant(tensor_from_images<float>(imgs));
  return net.forward(ctx, x)->val;
}

SegMask SegmenterModel::predict(const GrayImage& img) const {
  return argmax_mask(logits({img}), 0);
}

RefinerModel RefinerModel::create(const nn::ModelConfig& cfg, std::uint64_t seed) {
  RefinerModel m;
  m.cfg = cfg;
  m.store = std::make_unique<nn::ParamStore<float>>();
  Rng rng(Rng::derive(seed, 0x726566ull));
  m.net.init(*m.store, cfg, 2 * cfg.num_classes + 1, 1, rng, "ref", /*zero_init_head=*/true);
  return m;
}

std::pair<GrayImage, GrayImage> RefinerModel::refine_image(const SegMask& target_mask,
                                                           const SegMask& ref_mask,
                                                           const GrayImage& ref_img) const {
  Tape<float> tp;
  GraphCtx<float> ctx{tp, false, false};
  auto img = tp.constant(tensor_from_image<float>(ref_img));
  auto out = nn::refine(ctx, net, {target_mask}, {ref_mask}, img);
  GrayImage residual(ref_img.height, ref_img.width), refined(ref_img.height, ref_img.width);
  for (int y = 0; y < ref_img.height; ++y)
    for (int x = 0; x < ref_img.width; ++x) {
      residual.at(y, x) = out.residual->val.at(0, 0, y, x);
      refined.at(y, x) = out.refined->val.at(0, 0, y, x);
    }
  return {residual, refined};
}

GanModel GanModel::create(const nn::ModelConfig& cfg, std::uint64_t seed) {
  GanModel m;
  m.cfg = cfg;
  m.store = std::make_unique<nn::ParamStore<float>>();
  Rng rng(Rng::derive(seed, 0x67616eull));
  m.gen.init(*m.store, cfg, rng, "gen");
  m.enc.init(*m.store, cfg, rng, "enc");
  m.disc.init(*m.store, cfg, rng, "disc");
  return m;
}

StyleCode GanModel::encode_style(const GrayImage& img) const {
  Tape<float> tp;
  GraphCtx<float> ctx{tp, false, false};
  auto x = tp.constant(tensor_from_image<float>(img));
  auto out = enc.forward(ctx, x);
  StyleCode code(static_cast<size_t>(cfg.ds));
  for (int i = 0; i < cfg.ds; ++i) code[static_cast<size_t>(i)] = out.code->val[i];
  return code;
}

GrayImage GanModel::generate(const SegMask& mask, const StyleCode& style) const {
  if (static_cast<int>(style.size()) != cfg.ds)
    throw std::invalid_argument("generate: style code length mismatch");
  Tape<float> tp;
  GraphCtx<float> ctx{tp, false, false};
  Tensor<float> s({1, cfg.ds});
  for (int i = 0; i < cfg.ds; ++i) s[i] = static_cast<float>(style[static_cast<size_t>(i)]);
  auto out = gen.forward(ctx, {mask}, tp.constant(s));
  GrayImage img(mask.height, mask.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) img.at(y, x) = out->val.at(0, 0, y, x);
  return img;
}

}  // namespace seg2eye
