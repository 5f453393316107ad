#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "seg2eye/tensor.hpp"

namespace seg2eye {

inline constexpr int kNumClasses = 4;  // background, sclera, iris, pupil

// Integer class map driving content. Values in {0,1,2,3}.
struct SegMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;  // row-major [height, width]

  SegMask() = default;
  SegMask(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w, 0) {}

  std::uint8_t& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }

  bool operator==(const SegMask& o) const {
    return height == o.height && width == o.width && data == o.data;
  }
};

// Single-channel image, internal value range [-1, 1], row-major [height, width].
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  GrayImage() = default;
  GrayImage(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w, 0.0) {}

  double& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
  double at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }
};

using StyleCode = std::vector<double>;

// Affine [0,255] -> [-1,1].
inline double pixel_to_internal(std::uint8_t p) { return 2.0 * p / 255.0 - 1.0; }

// Round half-up, clamp to [0,255].
inline std::uint8_t pixel_to_disk(double x) {
  double y = (x + 1.0) * 0.5 * 255.0;
  double r = std::floor(y + 0.5);
  if (r < 0.0) r = 0.0;
  if (r > 255.0) r = 255.0;
  return static_cast<std::uint8_t>(r);
}

inline GrayImage to_internal(const std::vector<std::uint8_t>& img8, int h, int w) {
  if (static_cast<size_t>(h) * w != img8.size())
    throw std::invalid_argument("to_internal: size mismatch");
  GrayImage out(h, w);
  for (size_t i = 0; i < img8.size(); ++i) out.data[i] = pixel_to_internal(img8[i]);
  return out;
}

inline std::vector<std::uint8_t> to_disk(const GrayImage& img) {
  std::vector<std::uint8_t> out(img.data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = pixel_to_disk(img.data[i]);
  return out;
}

// One-hot encoding: [1, num_classes, H, W] with exactly one 1 per pixel.
template <class T>
Tensor<T> one_hot(const SegMask& mask, int num_classes) {
  Tensor<T> out({1, num_classes, mask.height, mask.width});
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      int c = mask.at(y, x);
      if (c >= num_classes)
        throw std::out_of_range("one_hot: mask value " + std::to_string(c) +
                                " >= num_classes " + std::to_string(num_classes));
      out.at(0, c, y, x) = T(1);
    }
  return out;
}

// Batched one-hot for a list of same-size masks: [N, num_classes, H, W].
template <class T>
Tensor<T> one_hot_batch(const std::vector<SegMask>& masks, int num_classes) {
  if (masks.empty()) throw std::invalid_argument("one_hot_batch: empty batch");
  int H = masks[0].height, W = masks[0].width;
  Tensor<T> out({static_cast<int>(masks.size()), num_classes, H, W});
  for (size_t n = 0; n < masks.size(); ++n) {
    if (masks[n].height != H || masks[n].width != W)
      throw std::invalid_argument("one_hot_batch: mask size mismatch");
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        int c = masks[n].at(y, x);
        if (c >= num_classes) throw std::out_of_range("one_hot_batch: mask value out of range");
        out.at(static_cast<int>(n), c, y, x) = T(1);
      }
  }
  return out;
}

// Argmax over channels of a [*, C, H, W] tensor slice n -> SegMask.
template <class T>
SegMask argmax_mask(const Tensor<T>& logits, int n = 0) {
  int C = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  SegMask m(H, W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int best = 0;
      T bv = logits.at(n, 0, y, x);
      for (int c = 1; c < C; ++c)
        if (logits.at(n, c, y, x) > bv) {
          bv = logits.at(n, c, y, x);
          best = c;
        }
      m.at(y, x) = static_cast<std::uint8_t>(best);
    }
  return m;
}

// Nearest-neighbor (top-left rule) mask downsampling.
inline SegMask downsample_mask(const SegMask& mask, int factor) {
  if (factor < 1) throw std::invalid_argument("downsample_mask: factor must be >= 1");
  if (mask.height % factor != 0 || mask.width % factor != 0)
    throw std::invalid_argument("downsample_mask: dimensions not divisible by factor");
  SegMask out(mask.height / factor, mask.width / factor);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out.at(y, x) = mask.at(y * factor, x * factor);
  return out;
}

inline GrayImage internal_from_tensor(const Tensor<double>& t, int n = 0, int c = 0) {
  GrayImage img(t.dim(2), t.dim(3));
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) img.at(y, x) = t.at(n, c, y, x);
  return img;
}

template <class T>
Tensor<T> tensor_from_image(const GrayImage& img) {
  Tensor<T> t({1, 1, img.height, img.width});
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) t.at(0, 0, y, x) = static_cast<T>(img.at(y, x));
  return t;
}

template <class T>
Tensor<T> tensor_from_images(const std::vector<GrayImage>& imgs) {
  if (imgs.empty()) throw std::invalid_argument("tensor_from_images: empty batch");
  int H = imgs[0].height, W = imgs[0].width;
  Tensor<T> t({static_cast<int>(imgs.size()), 1, H, W});
  for (size_t n = 0; n < imgs.size(); ++n) {
    if (imgs[n].height != H || imgs[n].width != W)
      throw std::invalid_argument("tensor_from_images: size mismatch");
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) t.at(static_cast<int>(n), 0, y, x) = static_cast<T>(imgs[n].at(y, x));
  }
  return t;
}

}  // namespace seg2eye
