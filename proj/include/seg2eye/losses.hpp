#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "seg2eye/core.hpp"
#include "seg2eye/tape.hpp"

namespace seg2eye::nn {

struct LossWeights {
  double gan = 10.0;
  double feature_matching = 10.0;
  double l2 = 15.0;
  double style = 0.5;
  double gram = 1e4;
};

// Unweighted term values, weights, and the weighted total of one objective.
struct LossReport {
  std::map<std::string, double> terms;
  std::map<std::string, double> weights;
  double total = 0.0;
};

// ---------------------------------------------------------------------------
// Hinge adversarial losses, averaged over discriminator scales.
// ---------------------------------------------------------------------------

template <class T>
NodeRef<T> gan_loss_d(Tape<T>& tp, const std::vector<NodeRef<T>>& real_logits,
                      const std::vector<NodeRef<T>>& fake_logits) {
  if (real_logits.empty() || real_logits.size() != fake_logits.size())
    throw std::invalid_argument("gan_loss_d: scale count mismatch");
  NodeRef<T> total;
  for (size_t s = 0; s < real_logits.size(); ++s) {
    auto lr = mean_all(tp, relu(tp, affine(tp, real_logits[s], T(-1), T(1))));
    auto lf = mean_all(tp, relu(tp, affine(tp, fake_logits[s], T(1), T(1))));
    auto term = add(tp, lr, lf);
    total = total ? add(tp, total, term) : term;
  }
  return affine(tp, total, T(1) / static_cast<T>(real_logits.size()), T(0));
}

template <class T>
NodeRef<T> gan_loss_g(Tape<T>& tp, const std::vector<NodeRef<T>>& fake_logits) {
  if (fake_logits.empty()) throw std::invalid_argument("gan_loss_g: no logits");
  NodeRef<T> total;
  for (auto& l : fake_logits) {
    auto term = mean_all(tp, l);
    total = total ? add(tp, total, term) : term;
  }
  return affine(tp, total, T(-1) / static_cast<T>(fake_logits.size()), T(0));
}

// ---------------------------------------------------------------------------
// Feature matching (layers 2..m) and Gram consistency (stages 2..m).
// ---------------------------------------------------------------------------

template <class T>
NodeRef<T> l1_distance(Tape<T>& tp, NodeRef<T> a, NodeRef<T> b, bool mean_normalize) {
  auto d = abs_(tp, sub(tp, a, b));
  return mean_normalize ? mean_all(tp, d) : sum_all(tp, d);
}

// fake_feats/real_feats: per-scale lists of intermediate feature tensors.
// The sum starts at the second layer of each scale.
template <class T>
NodeRef<T> feature_matching_loss(Tape<T>& tp, const std::vector<std::vector<NodeRef<T>>>& fake_feats,
                                 const std::vector<std::vector<NodeRef<T>>>& real_feats,
                                 bool mean_normalize = true) {
  if (fake_feats.size() != real_feats.size())
    throw std::invalid_argument("feature_matching_loss: scale count mismatch");
  NodeRef<T> total;
  for (size_t s = 0; s < fake_feats.size(); ++s) {
    if (fake_feats[s].size() != real_feats[s].size())
      throw std::invalid_argument("feature_matching_loss: layer count mismatch");
    for (size_t i = 1; i < fake_feats[s].size(); ++i) {
      auto term = l1_distance(tp, fake_feats[s][i], stop_grad(tp, real_feats[s][i]), mean_normalize);
      total = total ? add(tp, total, term) : term;
    }
  }
  if (!total) throw std::invalid_argument("feature_matching_loss: needs at least 2 layers");
  return total;
}

template <class T>
NodeRef<T> gram_loss(Tape<T>& tp, const std::vector<NodeRef<T>>& fake_feats,
                     const std::vector<NodeRef<T>>& real_feats, bool mean_normalize = true) {
  if (fake_feats.size() != real_feats.size())
    throw std::invalid_argument("gram_loss: stage count mismatch");
  NodeRef<T> total;
  for (size_t i = 1; i < fake_feats.size(); ++i) {
    auto gf = gram(tp, fake_feats[i]);
    auto gr = gram(tp, stop_grad(tp, real_feats[i]));
    auto term = l1_distance(tp, gf, gr, mean_normalize);
    total = total ? add(tp, total, term) : term;
  }
  if (!total) throw std::invalid_argument("gram_loss: needs at least 2 stages");
  return total;
}

// ---------------------------------------------------------------------------
// Pixel and style code losses
// ---------------------------------------------------------------------------

template <class T>
NodeRef<T> l2_pixel_loss(Tape<T>& tp, NodeRef<T> fake, NodeRef<T> real) {
  return mean_all(tp, square(tp, sub(tp, fake, real)));
}

// Euclidean norm (not squared) of the code difference.
template <class T>
NodeRef<T> style_code_loss(Tape<T>& tp, NodeRef<T> s, NodeRef<T> s_hat) {
  return sqrt_(tp, sum_all(tp, square(tp, sub(tp, s, s_hat))));
}

template <class T>
NodeRef<T> segmenter_loss(Tape<T>& tp, NodeRef<T> logits, const std::vector<SegMask>& masks) {
  std::vector<int> labels;
  labels.reserve(masks.size() * static_cast<size_t>(logits->val.dim(2)) * logits->val.dim(3));
  for (auto& m : masks)
    for (auto v : m.data) labels.push_back(v);
  return softmax_cross_entropy(tp, logits, std::move(labels));
}

// ---------------------------------------------------------------------------
// Full generator objective
// ---------------------------------------------------------------------------

template <class T>
struct GeneratorObjective {
  NodeRef<T> total;
  LossReport report;
};

template <class T>
GeneratorObjective<T> generator_objective(Tape<T>& tp, NodeRef<T> gan, NodeRef<T> fm, NodeRef<T> l2,
                                          NodeRef<T> style, NodeRef<T> gram_term,
                                          const LossWeights& w) {
  for (auto* t : {&gan, &fm, &l2, &style, &gram_term})
    if (!*t) throw std::invalid_argument("generator_objective: missing loss term");
  GeneratorObjective<T> out;
  auto weighted = [&](NodeRef<T> term, double weight, const char* name) {
    out.report.terms[name] = static_cast<double>(term->val[0]);
    out.report.weights[name] = weight;
    return affine(tp, term, T(weight), T(0));
  };
  auto sum = add(tp, weighted(gan, w.gan, "gan"), weighted(fm, w.feature_matching, "feature_matching"));
  sum = add(tp, sum, weighted(l2, w.l2, "l2"));
  sum = add(tp, sum, weighted(style, w.style, "style"));
  sum = add(tp, sum, weighted(gram_term, w.gram, "gram"));
  out.total = sum;
  out.report.total = static_cast<double>(sum->val[0]);
  return out;
}

// ---------------------------------------------------------------------------
// Challenge metric: (1/(H*W)) * sqrt(sum of squared 8-bit differences)
// ---------------------------------------------------------------------------

inline double challenge_metric(const std::vector<std::uint8_t>& pred,
                               const std::vector<std::uint8_t>& target, int h, int w) {
  if (pred.size() != target.size() || pred.size() != static_cast<size_t>(h) * w)
    throw std::invalid_argument("challenge_metric: shape mismatch");
  double s = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    s += d * d;
  }
  return std::sqrt(s) / (static_cast<double>(h) * w);
}

// Plain (non-graph) mean squared error in internal units.
inline double mask_mse(const GrayImage& a, const GrayImage& b) {
  if (a.height != b.height || a.width != b.width)
    throw std::invalid_argument("mask_mse: shape mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.data.size());
}

}  // namespace seg2eye::nn
