#pragma once

#include <cassert>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace seg2eye {

// Dense row-major tensor. Shapes follow NCHW for 4-d feature maps.
template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(count(shape), T(0)) {}
  Tensor(std::vector<int> s, std::vector<T> data) : shape(std::move(s)), v(std::move(data)) {
    if (static_cast<std::int64_t>(v.size()) != count(shape))
      throw std::invalid_argument("tensor: data size does not match shape");
  }

  static std::int64_t count(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, T value) {
    Tensor t(std::move(s));
    std::fill(t.v.begin(), t.v.end(), value);
    return t;
  }
  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }
  int ndim() const { return static_cast<int>(shape.size()); }

  T& operator[](std::int64_t i) { return v[static_cast<size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return v[static_cast<size_t>(i)]; }

  // NCHW element access.
  T& at(int n, int c, int h, int w) {
    return v[((static_cast<std::int64_t>(n) * dim(1) + c) * dim(2) + h) * dim(3) + w];
  }
  const T& at(int n, int c, int h, int w) const {
    return v[((static_cast<std::int64_t>(n) * dim(1) + c) * dim(2) + h) * dim(3) + w];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  Tensor<T> reshaped(std::vector<int> s) const {
    if (count(s) != size()) throw std::invalid_argument("tensor: reshape count mismatch");
    Tensor<T> t;
    t.shape = std::move(s);
    t.v = v;
    return t;
  }

  std::string shape_str() const {
    std::string out = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) out += ",";
      out += std::to_string(shape[i]);
    }
    return out + "]";
  }
};

}  // namespace seg2eye
