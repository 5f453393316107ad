#pragma once

#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "seg2eye/rng.hpp"
#include "seg2eye/tape.hpp"

namespace seg2eye::test {

inline Tensor<double> random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0,
                                    double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Central finite-difference check: builds the scalar graph with the given
// inputs as differentiable leaves, then perturbs every element of every input
// and compares numeric to analytic gradients. Returns the max relative error
// (denominator floored to avoid 0/0 blowups on tiny gradients).
using GraphBuilder = std::function<nn::NodeRef<double>(nn::Tape<double>&,
                                                       std::vector<nn::NodeRef<double>>&)>;

inline double fd_max_rel_err(std::vector<Tensor<double>> inputs, const GraphBuilder& build,
                             double h = 1e-5, double denom_floor = 1e-6) {
  std::vector<Tensor<double>> grads;
  {
    nn::Tape<double> tp;
    std::vector<nn::NodeRef<double>> leaves;
    for (auto& in : inputs) leaves.push_back(tp.leaf(in, true));
    auto out = build(tp, leaves);
    tp.backward(out);
    for (auto& l : leaves) grads.push_back(l->grad);
  }
  auto eval = [&](const std::vector<Tensor<double>>& xs) {
    nn::Tape<double> tp;
    std::vector<nn::NodeRef<double>> leaves;
    for (auto& in : xs) leaves.push_back(tp.leaf(in, false));
    return build(tp, leaves)->val[0];
  };
  double worst = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    for (std::int64_t j = 0; j < inputs[i].size(); ++j) {
      auto xs = inputs;
      double orig = xs[i][j];
      xs[i][j] = orig + h;
      double fp = eval(xs);
      xs[i][j] = orig - h;
      double fm = eval(xs);
      double numeric = (fp - fm) / (2.0 * h);
      double analytic = grads[i][j];
      double err = std::abs(numeric - analytic) /
                   std::max({std::abs(numeric), std::abs(analytic), denom_floor});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

// Unique scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    namespace fs = std::filesystem;
    path_ = fs::temp_directory_path() /
            ("seg2eye_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string str() const { return path_.string(); }
  std::filesystem::path path() const { return path_; }

 private:
  std::filesystem::path path_;
  static inline int counter_ = 0;
};

}  // namespace seg2eye::test
