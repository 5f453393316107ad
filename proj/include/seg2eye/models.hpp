#pragma once

#include <memory>
#include <string>
#include <vector>

#include "seg2eye/core.hpp"
#include "seg2eye/networks.hpp"

namespace seg2eye {

// Concrete float-precision model bundles used by the training pipeline and CLI.

struct SegmenterModel {
  nn::ModelConfig cfg;
  std::unique_ptr<nn::ParamStore<float>> store;
  nn::UNet<float> net;

  static SegmenterModel create(const nn::ModelConfig& cfg, std::uint64_t seed);
  // Class logits [N, num_classes, H, W] in evaluation mode.
  Tensor<float> logits(const std::vector<GrayImage>& imgs) const;
  SegMask predict(const GrayImage& img) const;
};

struct RefinerModel {
  nn::ModelConfig cfg;
  std::unique_ptr<nn::ParamStore<float>> store;
  nn::UNet<float> net;

  static RefinerModel create(const nn::ModelConfig& cfg, std::uint64_t seed);
  // Returns (residual, refined). Residual is unclamped; refined is clamped to [-1,1].
  std::pair<GrayImage, GrayImage> refine_image(const SegMask& target_mask,
                                               const SegMask& ref_mask,
                                               const GrayImage& ref_img) const;
};

struct GanModel {
  nn::ModelConfig cfg;
  std::unique_ptr<nn::ParamStore<float>> store;
  nn::Generator<float> gen;
  nn::StyleEncoder<float> enc;
  nn::Discriminator<float> disc;

  static GanModel create(const nn::ModelConfig& cfg, std::uint64_t seed);
  StyleCode encode_style(const GrayImage& img) const;
  GrayImage generate(const SegMask& mask, const StyleCode& style) const;
};

}  // namespace seg2eye
