#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "seg2eye/tensor.hpp"

namespace seg2eye::nn {

template <class T>
struct Node {
  Tensor<T> val;
  Tensor<T> grad;
  bool needs_grad = false;
  std::function<void()> back;
};

template <class T>
using NodeRef = std::shared_ptr<Node<T>>;

template <class T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Records nodes in creation order; creation order is a valid topological order,
// so backward() is a single reverse sweep.
template <class T>
class Tape {
 public:
  NodeRef<T> constant(Tensor<T> v) { return push(std::move(v), false, nullptr); }

  NodeRef<T> leaf(Tensor<T> v, bool needs_grad = true) {
    return push(std::move(v), needs_grad, nullptr);
  }

  NodeRef<T> push(Tensor<T> v, bool needs_grad, std::function<void()> back) {
    auto n = std::make_shared<Node<T>>();
    n->val = std::move(v);
    n->needs_grad = needs_grad;
    n->back = std::move(back);
    if (needs_grad) n->grad = Tensor<T>(n->val.shape);
    order_.push_back(n);
    return n;
  }

  void backward(const NodeRef<T>& root) {
    if (root->val.size() != 1) throw std::invalid_argument("backward: root must be scalar");
    if (!root->needs_grad) return;
    root->grad[0] = T(1);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      auto& n = *it;
      if (n->needs_grad && n->back) n->back();
    }
  }

  size_t size() const { return order_.size(); }

 private:
  std::vector<NodeRef<T>> order_;
};

namespace detail {
template <class T>
inline bool any_grad(std::initializer_list<const NodeRef<T>*> xs) {
  for (auto* x : xs)
    if ((*x)->needs_grad) return true;
  return false;
}
template <class T>
inline void check_same_shape(const NodeRef<T>& a, const NodeRef<T>& b, const char* op) {
  if (!a->val.same_shape(b->val))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a->val.shape_str() +
                                " vs " + b->val.shape_str());
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <class T>
NodeRef<T> add(Tape<T>& tp, NodeRef<T> a, NodeRef<T> b) {
  detail::check_same_shape(a, b, "add");
  Tensor<T> out(a->val.shape);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->val[i] + b->val[i];
  bool ng = a->needs_grad || b->needs_grad;
  auto n = tp.push(std::move(out), ng, nullptr);
  if (ng) {
    Node<T>* self = n.get();
    n->back = [self, a, b]() {
      for (std::int64_t i = 0; i < self->grad.size(); ++i) {
        if (a->needs_grad) a->grad[i] += self->grad[i];
        if (b->needs_grad) b->grad[i] += self->grad[i];
      }
    };
  }
  return n;
}

template <class T>
NodeRef<T> sub(Tape<T>& tp, NodeRef<T> a, NodeRef<T> b) {
  detail::check_same_shape(a, b, "sub");
  Tensor<T> out(a->val.shape);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->val[i] - b->val[i];
  bool ng = a->needs_grad || b->needs_grad;
  auto n = tp.push(std::move(out), ng, nullptr);
  if (ng) {
    Node<T>* self = n.get();
    n->back = [self, a, b]() {
      for (std::int64_t i = 0; i < self->grad.size(); ++i) {
        if (a->needs_grad) a->grad[i] += self->grad[i];
        if (b->needs_grad) b->grad[i] -= self->grad[i];
      }
    };
  }
  return n;
}

template <class T>
NodeRef<T> mul(Tape<T>& tp, NodeRef<T> a, NodeRef<T> b) {
  detail::check_same_shape(a, b, "mul");
  Tensor<T> out(a->val.shape);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->val[i] * b->val[i];
  bool ng = a->needs_grad || b->needs_grad;
  auto n = tp.push(std::move(out), ng, nullptr);
  if (ng) {
    Node<T>* self = n.get();
    n->back = [self, a, b]() {
      for (std::int64_t i = 0; i < self->grad.size(); ++i) {
        if (a->needs_grad) a->grad[i] += self->grad[i] * b->val[i];
        if (b->needs_grad) b->grad[i] += self->grad[i] * a->val[i];
      }
    };
  }
  return n;
}

// y = scale * x + shift
template <class T>
NodeRef<T> affine(Tape<T>& tp, NodeRef<T> x, T scale, T shift) {
  Tensor<T> out(x->val.shape);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = scale * x->val[i] + shift;
  auto n = tp.push(std::move(out), x->needs_grad, nullptr);
  if (n->needs_grad) {
    Node<T>* self = n.get();
    n->back = [self, x, scale]() {
      for (std::int64_t i = 0; i < self->grad.size(); ++i) x->grad[i] += scale * self->grad[i];
    };
  }
  return n;
}

template <class T>
NodeRef<T> square(Tape<T>& tp, NodeRef<T> x) {
  return mul(tp, x, x);
}

template <class T>
NodeRef<T> abs_(Tape<T>& tp, NodeRef<T> x) {
  Tensor<T> out(x->val.shape);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::abs(x->val[i]);
  auto n = tp.push(std::move(out), x->needs_grad, nullptr);
  if (n->needs_grad) {
    Node<T>* self = n.get();
    n->back = [self, x]() {
      for (std::int64_t i = 0; i < self->grad.size(); ++i)
        x->grad[i] += self->grad[i] * (x->val[i] > T(0) ? T(1) : (x->val[i] < T(0) ? T(-1) : T(0)));
    };
  }
  return n;
}

template <class T>
NodeRef<T> sqrt_(Tape<T>& tp, NodeRef<T> x) {
  Tensor<T> out(x->val.shape);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(x->val[i]);
  auto n = tp.push(std::move(out), x->needs_grad, nullptr);
  if (n->needs_grad) {
    Node<T>* self = n.get();
    n->back = [self, x]() {
      for (std::int64_t i = 0; i < self->grad.size(); ++i) {
        T y = self->val[i];
        if (y > T(0)) x->grad[i] += self->grad[i] / (T(2) * y);
      }
    };
  }
  return n;
}

template <class T>
NodeRef<T> relu(Tape<T>& tp, NodeRef<T> x) {
  Tensor<T> out(x->val.shape);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = x->val[i] > T(0) ? x->val[i] : T(0);
  auto n = tp.push(std::move(out), x->needs_grad, nullptr);
  if (n->needs_grad) {
    Node<T>* self = n.get();
    n->back = [self, x]() {
      for (std::int64_t i = 0; i < self->grad.size(); ++i)
        if (x->val[i] > T(0)) x->grad[i] += self->grad[i];
    };
  }
  return n;
}

template <class T>
NodeRef<T> leaky_relu(Tape<T>& tp, NodeRef<T> x, T slope) {
  Tensor<T> out(x->val.shape);
  for (std::int64_t i = 0; i < out.size(); ++i)
    out[i] = x->val[i] >= T(0) ? x->val[i] : slope * x->val[i];
  auto n = tp.push(std::move(out), x->needs_grad, nullptr);
  if (n->needs_grad) {
    Node<T>* self = n.get();
    n->back = [self, x, slope]() {
      for (std::int64_t i = 0; i < self->grad.size(); ++i)
        x->grad[i] += self->grad[i] * (x->val[i] >= T(0) ? T(1) : slope);
    };
  }
  return n;
}

template <class T>
NodeRef<T> tanh_(Tape<T>& tp, NodeRef<T> x) {
  Tensor<T> out(x->val.shape);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x->val[i]);
  auto n = tp.push(std::move(out), x->needs_grad, nullptr);
  if (n->needs_grad) {
    Node<T>* self = n.get();
    n->back = [self, x]() {
      for (std::int64_t i = 0; i < self->grad.size(); ++i) {
        T y = self->val[i];
        x->grad[i] += self->grad[i] * (T(1) - y * y);
      }
    };
  }
  return n;
}

template <class T>
NodeRef<T> clamp(Tape<T>& tp, NodeRef<T> x, T lo, T hi) {
  Tensor<T> out(x->val.shape);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x->val[i], lo, hi);
  auto n = tp.push(std::move(out), x->needs_grad, nullptr);
  if (n->needs_grad) {
    Node<T>* self = n.get();
    n->back = [self, x, lo, hi]() {
      for (std::int64_t i = 0; i < self->grad.size(); ++i)
        if (x->val[i] >= lo && x->val[i] <= hi) x->grad[i] += self->grad[i];
    };
  }
  return n;
}

template <class T>
NodeRef<T> stop_grad(Tape<T>& tp, NodeRef<T> x) {
  return tp.constant(x->val);
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class T>
NodeRef<T> sum_all(Tape<T>& tp, NodeRef<T> x) {
  T s = T(0);
  for (std::int64_t i = 0; i < x->val.size(); ++i) s += x->val[i];
  auto n = tp.push(Tensor<T>::scalar(s), x->needs_grad, nullptr);
  if (n->needs_grad) {
    Node<T>* self = n.get();
    n->back = [self, x]() {
      T g = self->grad[0];
      for (std::int64_t i = 0; i < x->grad.size(); ++i) x->grad[i] += g;
    };
  }
  return n;
}

template <class T>
NodeRef<T> mean_all(Tape<T>& tp, NodeRef<T> x) {
  T inv = T(1) / static_cast<T>(x->val.size());
  return affine(tp, sum_all(tp, x), inv, T(0));
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

// y[N,M] = x[N,K] * w[M,K]^T + b[M]
template <class T>
NodeRef<T> linear(Tape<T>& tp, NodeRef<T> x, NodeRef<T> w, NodeRef<T> b) {
  if (x->val.ndim() != 2 || w->val.ndim() != 2)
    throw std::invalid_argument("linear: expects 2-d input and weight");
  int N = x->val.dim(0), K = x->val.dim(1), M = w->val.dim(0);
  if (w->val.dim(1) != K || b->val.size() != M)
    throw std::invalid_argument("linear: weight/bias shape mismatch");
  Tensor<T> out({N, M});
  {
    Eigen::Map<const MatX<T>> xm(x->val.v.data(), N, K);
    Eigen::Map<const MatX<T>> wm(w->val.v.data(), M, K);
    Eigen::Map<MatX<T>> ym(out.v.data(), N, M);
    ym.noalias() = xm * wm.transpose();
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < M; ++j) out.v[static_cast<size_t>(i) * M + j] += b->val[j];
  }
  bool ng = detail::any_grad<T>({&x, &w, &b});
  auto n = tp.push(std::move(out), ng, nullptr);
  if (ng) {
    Node<T>* self = n.get();
    n->back = [self, x, w, b, N, K, M]() {
      Eigen::Map<const MatX<T>> gy(self->grad.v.data(), N, M);
      if (x->needs_grad) {
        Eigen::Map<const MatX<T>> wm(w->val.v.data(), M, K);
        Eigen::Map<MatX<T>> gx(x->grad.v.data(), N, K);
        gx.noalias() += gy * wm;
      }
      if (w->needs_grad) {
        Eigen::Map<const MatX<T>> xm(x->val.v.data(), N, K);
        Eigen::Map<MatX<T>> gw(w->grad.v.data(), M, K);
        gw.noalias() += gy.transpose() * xm;
      }
      if (b->needs_grad)
        for (int i = 0; i < N; ++i)
          for (int j = 0; j < M; ++j) b->grad[j] += self->grad[static_cast<std::int64_t>(i) * M + j];
    };
  }
  return n;
}

namespace detail {

template <class T>
void im2col(const Tensor<T>& x, int n, int kh, int kw, int stride, int pad, int oh, int ow,
            MatX<T>& col) {
  int C = x.dim(1), H = x.dim(2), W = x.dim(3);
  col.resize(static_cast<Eigen::Index>(C) * kh * kw, static_cast<Eigen::Index>(oh) * ow);
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < kh; ++i)
      for (int j = 0; j < kw; ++j) {
        Eigen::Index row = (static_cast<Eigen::Index>(c) * kh + i) * kw + j;
        for (int y = 0; y < oh; ++y) {
          int sy = y * stride + i - pad;
          for (int xo = 0; xo < ow; ++xo) {
            int sx = xo * stride + j - pad;
            T val = T(0);
            if (sy >= 0 && sy < H && sx >= 0 && sx < W) val = x.at(n, c, sy, sx);
            col(row, static_cast<Eigen::Index>(y) * ow + xo) = val;
          }
        }
      }
}

template <class T>
void col2im_add(const MatX<T>& col, int n, int kh, int kw, int stride, int pad, int oh, int ow,
                Tensor<T>& gx) {
  int C = gx.dim(1), H = gx.dim(2), W = gx.dim(3);
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < kh; ++i)
      for (int j = 0; j < kw; ++j) {
        Eigen::Index row = (static_cast<Eigen::Index>(c) * kh + i) * kw + j;
        for (int y = 0; y < oh; ++y) {
          int sy = y * stride + i - pad;
          if (sy < 0 || sy >= H) continue;
          for (int xo = 0; xo < ow; ++xo) {
            int sx = xo * stride + j - pad;
            if (sx < 0 || sx >= W) continue;
            gx.at(n, c, sy, sx) += col(row, static_cast<Eigen::Index>(y) * ow + xo);
          }
        }
      }
}

}  // namespace detail

// x[N,Cin,H,W], w[Cout,Cin,kh,kw], b[Cout]
template <class T>
NodeRef<T> conv2d(Tape<T>& tp, NodeRef<T> x, NodeRef<T> w, NodeRef<T> b, int stride, int pad) {
  if (x->val.ndim() != 4 || w->val.ndim() != 4)
    throw std::invalid_argument("conv2d: expects 4-d input and weight");
  int N = x->val.dim(0), C = x->val.dim(1), H = x->val.dim(2), W = x->val.dim(3);
  int Co = w->val.dim(0), kh = w->val.dim(2), kw = w->val.dim(3);
  if (w->val.dim(1) != C) throw std::invalid_argument("conv2d: channel mismatch");
  int oh = (H + 2 * pad - kh) / stride + 1;
  int ow = (W + 2 * pad - kw) / stride + 1;
  if (H + 2 * pad < kh || W + 2 * pad < kw)
    throw std::invalid_argument("conv2d: input smaller than kernel");
  Tensor<T> out({N, Co, oh, ow});
  {
    Eigen::Map<const MatX<T>> wm(w->val.v.data(), Co, static_cast<Eigen::Index>(C) * kh * kw);
    MatX<T> col;
    for (int n = 0; n < N; ++n) {
      detail::im2col(x->val, n, kh, kw, stride, pad, oh, ow, col);
      Eigen::Map<MatX<T>> ym(out.v.data() + static_cast<std::int64_t>(n) * Co * oh * ow, Co,
                             static_cast<Eigen::Index>(oh) * ow);
      ym.noalias() = wm * col;
      for (int co = 0; co < Co; ++co) ym.row(co).array() += b->val[co];
    }
  }
  bool ng = detail::any_grad<T>({&x, &w, &b});
  auto n = tp.push(std::move(out), ng, nullptr);
  if (ng) {
    Node<T>* self = n.get();
    n->back = [self, x, w, b, N, C, Co, kh, kw, stride, pad, oh, ow]() {
      Eigen::Map<const MatX<T>> wm(w->val.v.data(), Co, static_cast<Eigen::Index>(C) * kh * kw);
      MatX<T> col, gcol;
      for (int n2 = 0; n2 < N; ++n2) {
        Eigen::Map<const MatX<T>> gy(self->grad.v.data() + static_cast<std::int64_t>(n2) * Co * oh * ow,
                                     Co, static_cast<Eigen::Index>(oh) * ow);
        if (w->needs_grad || x->needs_grad)
          detail::im2col(x->val, n2, kh, kw, stride, pad, oh, ow, col);
        if (w->needs_grad) {
          Eigen::Map<MatX<T>> gw(w->grad.v.data(), Co, static_cast<Eigen::Index>(C) * kh * kw);
          gw.noalias() += gy * col.transpose();
        }
        if (b->needs_grad)
          for (int co = 0; co < Co; ++co) b->grad[co] += gy.row(co).sum();
        if (x->needs_grad) {
          gcol.noalias() = wm.transpose() * gy;
          detail::col2im_add(gcol, n2, kh, kw, stride, pad, oh, ow, x->grad);
        }
      }
    };
  }
  return n;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

// Per-(sample, channel) normalization: (x - mean) / sqrt(var + eps), population var.
template <class T>
NodeRef<T> instance_norm(Tape<T>& tp, NodeRef<T> x, T eps) {
  if (x->val.ndim() != 4) throw std::invalid_argument("instance_norm: expects 4-d input");
  if (!(eps > T(0))) throw std::invalid_argument("instance_norm: eps must be positive");
  int N = x->val.dim(0), C = x->val.dim(1), H = x->val.dim(2), W = x->val.dim(3);
  std::int64_t hw = static_cast<std::int64_t>(H) * W;
  Tensor<T> out(x->val.shape);
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(N) * C);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* src = x->val.v.data() + (static_cast<std::int64_t>(n) * C + c) * hw;
      T* dst = out.v.data() + (static_cast<std::int64_t>(n) * C + c) * hw;
      T mu = T(0);
      for (std::int64_t i = 0; i < hw; ++i) mu += src[i];
      mu /= static_cast<T>(hw);
      T var = T(0);
      for (std::int64_t i = 0; i < hw; ++i) {
        T d = src[i] - mu;
        var += d * d;
      }
      var /= static_cast<T>(hw);
      T is = T(1) / std::sqrt(var + eps);
      (*inv_std)[static_cast<size_t>(n) * C + c] = is;
      for (std::int64_t i = 0; i < hw; ++i) dst[i] = (src[i] - mu) * is;
    }
  auto n = tp.push(std::move(out), x->needs_grad, nullptr);
  if (n->needs_grad) {
    Node<T>* self = n.get();
    n->back = [self, x, inv_std, N, C, hw]() {
      for (int n2 = 0; n2 < N; ++n2)
        for (int c = 0; c < C; ++c) {
          std::int64_t base = (static_cast<std::int64_t>(n2) * C + c) * hw;
          const T* y = self->val.v.data() + base;
          const T* gy = self->grad.v.data() + base;
          T* gx = x->grad.v.data() + base;
          T is = (*inv_std)[static_cast<size_t>(n2) * C + c];
          T mg = T(0), mgy = T(0);
          for (std::int64_t i = 0; i < hw; ++i) {
            mg += gy[i];
            mgy += gy[i] * y[i];
          }
          mg /= static_cast<T>(hw);
          mgy /= static_cast<T>(hw);
          for (std::int64_t i = 0; i < hw; ++i) gx[i] += is * (gy[i] - mg - y[i] * mgy);
        }
    };
  }
  return n;
}

// y[n,c,h,w] = g[n,c] * x[n,c,h,w] + b[n,c]
template <class T>
NodeRef<T> channel_affine(Tape<T>& tp, NodeRef<T> x, NodeRef<T> g, NodeRef<T> b) {
  int N = x->val.dim(0), C = x->val.dim(1);
  std::int64_t hw = static_cast<std::int64_t>(x->val.dim(2)) * x->val.dim(3);
  if (g->val.ndim() != 2 || g->val.dim(0) != N || g->val.dim(1) != C || !g->val.same_shape(b->val))
    throw std::invalid_argument("channel_affine: scale/offset must be [N,C]");
  Tensor<T> out(x->val.shape);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      std::int64_t base = (static_cast<std::int64_t>(n) * C + c) * hw;
      T gs = g->val[static_cast<std::int64_t>(n) * C + c];
      T bs = b->val[static_cast<std::int64_t>(n) * C + c];
      for (std::int64_t i = 0; i < hw; ++i) out.v[base + i] = gs * x->val.v[base + i] + bs;
    }
  bool ng = detail::any_grad<T>({&x, &g, &b});
  auto n = tp.push(std::move(out), ng, nullptr);
  if (ng) {
    Node<T>* self = n.get();
    n->back = [self, x, g, b, N, C, hw]() {
      for (int n2 = 0; n2 < N; ++n2)
        for (int c = 0; c < C; ++c) {
          std::int64_t nc = static_cast<std::int64_t>(n2) * C + c;
          std::int64_t base = nc * hw;
          T gs = g->val[nc];
          for (std::int64_t i = 0; i < hw; ++i) {
            T gy = self->grad[base + i];
            if (x->needs_grad) x->grad[base + i] += gs * gy;
            if (g->needs_grad) g->grad[nc] += gy * x->val[base + i];
            if (b->needs_grad) b->grad[nc] += gy;
          }
        }
    };
  }
  return n;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <class T>
NodeRef<T> reshape(Tape<T>& tp, NodeRef<T> x, std::vector<int> shape) {
  Tensor<T> out = x->val.reshaped(std::move(shape));
  auto n = tp.push(std::move(out), x->needs_grad, nullptr);
  if (n->needs_grad) {
    Node<T>* self = n.get();
    n->back = [self, x]() {
      for (std::int64_t i = 0; i < self->grad.size(); ++i) x->grad[i] += self->grad[i];
    };
  }
  return n;
}

template <class T>
NodeRef<T> slice_cols(Tape<T>& tp, NodeRef<T> x, int start, int len) {
  if (x->val.ndim() != 2) throw std::invalid_argument("slice_cols: expects 2-d input");
  int N = x->val.dim(0), M = x->val.dim(1);
  if (start < 0 || start + len > M) throw std::invalid_argument("slice_cols: out of range");
  Tensor<T> out({N, len});
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < len; ++j)
      out.v[static_cast<size_t>(i) * len + j] = x->val[static_cast<std::int64_t>(i) * M + start + j];
  auto n = tp.push(std::move(out), x->needs_grad, nullptr);
  if (n->needs_grad) {
    Node<T>* self = n.get();
    n->back = [self, x, N, M, start, len]() {
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < len; ++j)
          x->grad[static_cast<std::int64_t>(i) * M + start + j] +=
              self->grad[static_cast<std::int64_t>(i) * len + j];
    };
  }
  return n;
}

template <class T>
NodeRef<T> concat_channels(Tape<T>& tp, std::vector<NodeRef<T>> xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: empty list");
  int N = xs[0]->val.dim(0), H = xs[0]->val.dim(2), W = xs[0]->val.dim(3);
  int Ct = 0;
  bool ng = false;
  for (auto& x : xs) {
    if (x->val.ndim() != 4 || x->val.dim(0) != N || x->val.dim(2) != H || x->val.dim(3) != W)
      throw std::invalid_argument("concat_channels: incompatible shapes");
    Ct += x->val.dim(1);
    ng = ng || x->needs_grad;
  }
  std::int64_t hw = static_cast<std::int64_t>(H) * W;
  Tensor<T> out({N, Ct, H, W});
  for (int n = 0; n < N; ++n) {
    std::int64_t coff = 0;
    for (auto& x : xs) {
      int C = x->val.dim(1);
      std::copy_n(x->val.v.data() + static_cast<std::int64_t>(n) * C * hw, C * hw,
                  out.v.data() + (static_cast<std::int64_t>(n) * Ct + coff) * hw);
      coff += C;
    }
  }
  auto n = tp.push(std::move(out), ng, nullptr);
  if (ng) {
    Node<T>* self = n.get();
    n->back = [self, xs, N, Ct, hw]() {
      for (int n2 = 0; n2 < N; ++n2) {
        std::int64_t coff = 0;
        for (auto& x : xs) {
          int C = x->val.dim(1);
          if (x->needs_grad) {
            const T* g = self->grad.v.data() + (static_cast<std::int64_t>(n2) * Ct + coff) * hw;
            T* gx = x->grad.v.data() + static_cast<std::int64_t>(n2) * C * hw;
            for (std::int64_t i = 0; i < C * hw; ++i) gx[i] += g[i];
          }
          coff += C;
        }
      }
    };
  }
  return n;
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

template <class T>
NodeRef<T> upsample_nearest2x(Tape<T>& tp, NodeRef<T> x) {
  int N = x->val.dim(0), C = x->val.dim(1), H = x->val.dim(2), W = x->val.dim(3);
  Tensor<T> out({N, C, H * 2, W * 2});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H * 2; ++h)
        for (int w = 0; w < W * 2; ++w) out.at(n, c, h, w) = x->val.at(n, c, h / 2, w / 2);
  auto n = tp.push(std::move(out), x->needs_grad, nullptr);
  if (n->needs_grad) {
    Node<T>* self = n.get();
    n->back = [self, x, N, C, H, W]() {
      for (int n2 = 0; n2 < N; ++n2)
        for (int c = 0; c < C; ++c)
          for (int h = 0; h < H * 2; ++h)
            for (int w = 0; w < W * 2; ++w)
              x->grad.at(n2, c, h / 2, w / 2) += self->grad.at(n2, c, h, w);
    };
  }
  return n;
}

template <class T>
NodeRef<T> avg_pool2x(Tape<T>& tp, NodeRef<T> x) {
  int N = x->val.dim(0), C = x->val.dim(1), H = x->val.dim(2), W = x->val.dim(3);
  if (H % 2 || W % 2) throw std::invalid_argument("avg_pool2x: odd spatial size");
  Tensor<T> out({N, C, H / 2, W / 2});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H / 2; ++h)
        for (int w = 0; w < W / 2; ++w)
          out.at(n, c, h, w) = (x->val.at(n, c, 2 * h, 2 * w) + x->val.at(n, c, 2 * h, 2 * w + 1) +
                                x->val.at(n, c, 2 * h + 1, 2 * w) +
                                x->val.at(n, c, 2 * h + 1, 2 * w + 1)) /
                               T(4);
  auto n = tp.push(std::move(out), x->needs_grad, nullptr);
  if (n->needs_grad) {
    Node<T>* self = n.get();
    n->back = [self, x, N, C, H, W]() {
      for (int n2 = 0; n2 < N; ++n2)
        for (int c = 0; c < C; ++c)
          for (int h = 0; h < H / 2; ++h)
            for (int w = 0; w < W / 2; ++w) {
              T g = self->grad.at(n2, c, h, w) / T(4);
              x->grad.at(n2, c, 2 * h, 2 * w) += g;
              x->grad.at(n2, c, 2 * h, 2 * w + 1) += g;
              x->grad.at(n2, c, 2 * h + 1, 2 * w) += g;
              x->grad.at(n2, c, 2 * h + 1, 2 * w + 1) += g;
            }
    };
  }
  return n;
}

template <class T>
NodeRef<T> global_avg_pool(Tape<T>& tp, NodeRef<T> x) {
  int N = x->val.dim(0), C = x->val.dim(1);
  std::int64_t hw = static_cast<std::int64_t>(x->val.dim(2)) * x->val.dim(3);
  Tensor<T> out({N, C});
  for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(N) * C; ++nc) {
    T s = T(0);
    for (std::int64_t i = 0; i < hw; ++i) s += x->val[nc * hw + i];
    out[nc] = s / static_cast<T>(hw);
  }
  auto n = tp.push(std::move(out), x->needs_grad, nullptr);
  if (n->needs_grad) {
    Node<T>* self = n.get();
    n->back = [self, x, N, C, hw]() {
      for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(N) * C; ++nc) {
        T g = self->grad[nc] / static_cast<T>(hw);
        for (std::int64_t i = 0; i < hw; ++i) x->grad[nc * hw + i] += g;
      }
    };
  }
  return n;
}

// Spatial max per channel: [N, C, H, W] -> [N, C]. Gradient routes to the
// first argmax position.
template <class T>
NodeRef<T> global_max_pool(Tape<T>& tp, NodeRef<T> x) {
  int N = x->val.dim(0), C = x->val.dim(1);
  std::int64_t hw = static_cast<std::int64_t>(x->val.dim(2)) * x->val.dim(3);
  Tensor<T> out({N, C});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<size_t>(N) * C);
  for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(N) * C; ++nc) {
    std::int64_t best = 0;
    for (std::int64_t i = 1; i < hw; ++i)
      if (x->val[nc * hw + i] > x->val[nc * hw + best]) best = i;
    out[nc] = x->val[nc * hw + best];
    (*argmax)[static_cast<size_t>(nc)] = best;
  }
  auto n = tp.push(std::move(out), x->needs_grad, nullptr);
  if (n->needs_grad) {
    Node<T>* self = n.get();
    n->back = [self, x, N, C, hw, argmax]() {
      for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(N) * C; ++nc)
        x->grad[nc * hw + (*argmax)[static_cast<size_t>(nc)]] += self->grad[nc];
    };
  }
  return n;
}

// ---------------------------------------------------------------------------
// Style / loss specific ops
// ---------------------------------------------------------------------------

// Per-sample Gram matrix of [N,C,H,W], normalized by C*H*W. Output [N,C,C].
template <class T>
NodeRef<T> gram(Tape<T>& tp, NodeRef<T> x) {
  int N = x->val.dim(0), C = x->val.dim(1);
  std::int64_t hw = static_cast<std::int64_t>(x->val.dim(2)) * x->val.dim(3);
  T norm = T(1) / (static_cast<T>(C) * static_cast<T>(hw));
  Tensor<T> out({N, C, C});
  for (int n = 0; n < N; ++n) {
    Eigen::Map<const MatX<T>> xm(x->val.v.data() + static_cast<std::int64_t>(n) * C * hw, C, hw);
    Eigen::Map<MatX<T>> gm(out.v.data() + static_cast<std::int64_t>(n) * C * C, C, C);
    gm.noalias() = xm * xm.transpose();
    gm *= norm;
  }
  auto n = tp.push(std::move(out), x->needs_grad, nullptr);
  if (n->needs_grad) {
    Node<T>* self = n.get();
    n->back = [self, x, N, C, hw, norm]() {
      for (int n2 = 0; n2 < N; ++n2) {
        Eigen::Map<const MatX<T>> xm(x->val.v.data() + static_cast<std::int64_t>(n2) * C * hw, C, hw);
        Eigen::Map<const MatX<T>> gg(self->grad.v.data() + static_cast<std::int64_t>(n2) * C * C, C, C);
        Eigen::Map<MatX<T>> gx(x->grad.v.data() + static_cast<std::int64_t>(n2) * C * hw, C, hw);
        gx.noalias() += norm * ((gg + gg.transpose()) * xm);
      }
    };
  }
  return n;
}

// Element-wise maximum over groups of k consecutive rows: [G*k, D] -> [G, D].
template <class T>
NodeRef<T> group_max(Tape<T>& tp, NodeRef<T> x, int k) {
  if (x->val.ndim() != 2) throw std::invalid_argument("group_max: expects 2-d input");
  if (k < 1 || x->val.dim(0) % k != 0)
    throw std::invalid_argument("group_max: rows not divisible by group size");
  int G = x->val.dim(0) / k, D = x->val.dim(1);
  Tensor<T> out({G, D});
  auto argmax = std::make_shared<std::vector<int>>(static_cast<size_t>(G) * D);
  for (int g = 0; g < G; ++g)
    for (int d = 0; d < D; ++d) {
      T best = x->val[(static_cast<std::int64_t>(g) * k) * D + d];
      int bj = 0;
      for (int j = 1; j < k; ++j) {
        T v = x->val[(static_cast<std::int64_t>(g) * k + j) * D + d];
        if (v > best) {
          best = v;
          bj = j;
        }
      }
      out[static_cast<std::int64_t>(g) * D + d] = best;
      (*argmax)[static_cast<size_t>(g) * D + d] = bj;
    }
  auto n = tp.push(std::move(out), x->needs_grad, nullptr);
  if (n->needs_grad) {
    Node<T>* self = n.get();
    n->back = [self, x, argmax, G, D, k]() {
      for (int g = 0; g < G; ++g)
        for (int d = 0; d < D; ++d) {
          int bj = (*argmax)[static_cast<size_t>(g) * D + d];
          x->grad[(static_cast<std::int64_t>(g) * k + bj) * D + d] +=
              self->grad[static_cast<std::int64_t>(g) * D + d];
        }
    };
  }
  return n;
}

// Mean pixel-wise cross-entropy of logits [N,K,H,W] against integer labels (N*H*W).
template <class T>
NodeRef<T> softmax_cross_entropy(Tape<T>& tp, NodeRef<T> logits, std::vector<int> labels) {
  int N = logits->val.dim(0), K = logits->val.dim(1), H = logits->val.dim(2), W = logits->val.dim(3);
  std::int64_t hw = static_cast<std::int64_t>(H) * W;
  if (static_cast<std::int64_t>(labels.size()) != static_cast<std::int64_t>(N) * hw)
    throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  for (int t : labels)
    if (t < 0 || t >= K) throw std::invalid_argument("softmax_cross_entropy: label out of range");
  auto probs = std::make_shared<Tensor<T>>(logits->val.shape);
  T total = T(0);
  for (int n = 0; n < N; ++n)
    for (std::int64_t p = 0; p < hw; ++p) {
      T mx = logits->val[(static_cast<std::int64_t>(n) * K) * hw + p];
      for (int c = 1; c < K; ++c)
        mx = std::max(mx, logits->val[(static_cast<std::int64_t>(n) * K + c) * hw + p]);
      T denom = T(0);
      for (int c = 0; c < K; ++c) {
        T e = std::exp(logits->val[(static_cast<std::int64_t>(n) * K + c) * hw + p] - mx);
        (*probs)[(static_cast<std::int64_t>(n) * K + c) * hw + p] = e;
        denom += e;
      }
      int t = labels[static_cast<size_t>(n * hw + p)];
      for (int c = 0; c < K; ++c) (*probs)[(static_cast<std::int64_t>(n) * K + c) * hw + p] /= denom;
      total -= std::log((*probs)[(static_cast<std::int64_t>(n) * K + t) * hw + p] + T(1e-30));
    }
  total /= static_cast<T>(static_cast<std::int64_t>(N) * hw);
  auto n = tp.push(Tensor<T>::scalar(total), logits->needs_grad, nullptr);
  if (n->needs_grad) {
    Node<T>* self = n.get();
    auto lab = std::make_shared<std::vector<int>>(std::move(labels));
    n->back = [self, logits, probs, lab, N, K, hw]() {
      T g = self->grad[0] / static_cast<T>(static_cast<std::int64_t>(N) * hw);
      for (int n2 = 0; n2 < N; ++n2)
        for (std::int64_t p = 0; p < hw; ++p) {
          int t = (*lab)[static_cast<size_t>(n2 * hw + p)];
          for (int c = 0; c < K; ++c) {
            T q = (*probs)[(static_cast<std::int64_t>(n2) * K + c) * hw + p];
            logits->grad[(static_cast<std::int64_t>(n2) * K + c) * hw + p] +=
                g * (q - (c == t ? T(1) : T(0)));
          }
        }
    };
  }
  return n;
}

// W / sigma with sigma = u^T W v; u, v are held constant (power-iteration estimates).
template <class T>
NodeRef<T> spectral_scale(Tape<T>& tp, NodeRef<T> w, const Tensor<T>& u, const Tensor<T>& v) {
  int rows = w->val.dim(0);
  std::int64_t cols = w->val.size() / rows;
  if (u.size() != rows || v.size() != cols)
    throw std::invalid_argument("spectral_scale: u/v shape mismatch");
  Eigen::Map<const MatX<T>> wm(w->val.v.data(), rows, cols);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> um(u.v.data(), rows);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> vm(v.v.data(), cols);
  T sigma = um.dot(wm * vm);
  // Before the first power iteration the (u, v) estimate can be degenerate;
  // leave the weight unscaled rather than dividing by a vanishing sigma.
  bool at_floor = !(sigma > T(1e-12));
  T denom = at_floor ? T(1) : sigma;
  Tensor<T> out(w->val.shape);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = w->val[i] / denom;
  auto n = tp.push(std::move(out), w->needs_grad, nullptr);
  if (n->needs_grad) {
    Node<T>* self = n.get();
    auto uc = std::make_shared<Tensor<T>>(u);
    auto vc = std::make_shared<Tensor<T>>(v);
    n->back = [self, w, uc, vc, denom, rows, cols, at_floor]() {
      // dL/dW = gY/sigma - (sum(gY .* W)/sigma^2) u v^T  (u, v constant)
      T dot = T(0);
      for (std::int64_t i = 0; i < self->grad.size(); ++i) dot += self->grad[i] * w->val[i];
      for (std::int64_t i = 0; i < self->grad.size(); ++i) w->grad[i] += self->grad[i] / denom;
      if (!at_floor) {
        T coef = dot / (denom * denom);
        for (int r = 0; r < rows; ++r)
          for (std::int64_t c = 0; c < cols; ++c)
            w->grad[r * cols + c] -= coef * (*uc)[r] * (*vc)[c];
      }
    };
  }
  return n;
}

// One step of power iteration for the leading singular pair of W (viewed as
// [rows, cols]). Updates u and v in place.
template <class T>
void spectral_power_iteration(const Tensor<T>& w, Tensor<T>& u, Tensor<T>& v) {
  int rows = w.dim(0);
  std::int64_t cols = w.size() / rows;
  Eigen::Map<const MatX<T>> wm(w.v.data(), rows, cols);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> um(u.v.data(), rows);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> vm(v.v.data(), cols);
  vm = wm.transpose() * um;
  T nv = vm.norm();
  if (nv > T(1e-12)) vm /= nv;
  um = wm * vm;
  T nu = um.norm();
  if (nu > T(1e-12)) um /= nu;
}

}  // namespace seg2eye::nn
