#pragma once

#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "seg2eye/rng.hpp"
#include "seg2eye/tape.hpp"
#include "seg2eye/tensor.hpp"

namespace seg2eye::nn {

// A learnable tensor. Spectrally normalized weights carry power-iteration
// state (u, v) that is updated once per training forward pass.
template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  bool spectral = false;
  Tensor<T> u, v;
};

template <class T>
class ParamStore {
 public:
  Param<T>& create(const std::string& name, std::vector<int> shape) {
    if (index_.count(name)) throw std::invalid_argument("param exists: " + name);
    auto p = std::make_unique<Param<T>>();
    p->name = name;
    p->value = Tensor<T>(std::move(shape));
    Param<T>* raw = p.get();
    index_[name] = raw;
    list_.push_back(std::move(p));
    return *raw;
  }

  Param<T>& create_spectral(const std::string& name, std::vector<int> shape, Rng& rng) {
    Param<T>& p = create(name, std::move(shape));
    p.spectral = true;
    int rows = p.value.dim(0);
    std::int64_t cols = p.value.size() / rows;
    p.u = Tensor<T>({rows});
    p.v = Tensor<T>({static_cast<int>(cols)});
    double norm2 = 0.0;
    for (int i = 0; i < rows; ++i) {
      p.u[i] = static_cast<T>(rng.normal());
      norm2 += static_cast<double>(p.u[i]) * p.u[i];
    }
    double inv = 1.0 / std::sqrt(norm2 + 1e-12);
    for (int i = 0; i < rows; ++i) p.u[i] = static_cast<T>(p.u[i] * inv);
    return p;
  }

  Param<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : it->second;
  }

  const std::vector<std::unique_ptr<Param<T>>>& all() const { return list_; }

 private:
  std::vector<std::unique_ptr<Param<T>>> list_;
  std::map<std::string, Param<T>*> index_;
};

// Per-forward-pass context: binds parameters into a tape and remembers the
// leaf nodes so gradients can be read back after backward().
template <class T>
struct GraphCtx {
  Tape<T>& tape;
  bool training = false;   // enables spectral power-iteration updates
  bool want_grad = false;  // parameters become differentiable leaves
  std::vector<std::pair<Param<T>*, NodeRef<T>>> bound;

  NodeRef<T> use(Param<T>& p) {
    if (p.spectral && training) spectral_power_iteration(p.value, p.u, p.v);
    auto leaf = tape.leaf(p.value, want_grad);
    if (want_grad) bound.emplace_back(&p, leaf);
    if (p.spectral) return spectral_scale(tape, leaf, p.u, p.v);
    return leaf;
  }
};

// Gradients per parameter, accumulated across multiple uses in one graph.
template <class T>
std::map<Param<T>*, Tensor<T>> collect_grads(const GraphCtx<T>& ctx) {
  std::map<Param<T>*, Tensor<T>> grads;
  for (auto& [p, node] : ctx.bound) {
    auto it = grads.find(p);
    if (it == grads.end()) {
      grads.emplace(p, node->grad);
    } else {
      for (std::int64_t i = 0; i < node->grad.size(); ++i) it->second[i] += node->grad[i];
    }
  }
  return grads;
}

inline double he_std(std::int64_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); }

template <class T>
void init_normal(Tensor<T>& t, Rng& rng, double std) {
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.normal() * std);
}

}  // namespace seg2eye::nn
