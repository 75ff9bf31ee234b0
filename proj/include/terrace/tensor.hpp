#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <sstream>
#include <utility>
#include <vector>

#include "terrace/common.hpp"

namespace terrace {

using shape_t = std::vector<int>;

inline std::int64_t numel(const shape_t& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const shape_t& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

template <typename T>
class tape;

// Dense N-d array in NCHW order for spatial data. Values are shared and
// treated as immutable once produced by an op; `node` links the tensor to a
// tape entry when gradient tracking is active.
template <typename T>
struct tensor {
  shape_t shape;
  std::shared_ptr<std::vector<T>> values;
  tape<T>* tp = nullptr;
  int node = -1;

  tensor() = default;
  tensor(shape_t s, std::shared_ptr<std::vector<T>> v)
      : shape(std::move(s)), values(std::move(v)) {}

  static tensor zeros(shape_t s) {
    auto v = std::make_shared<std::vector<T>>(static_cast<std::size_t>(numel(s)), T(0));
    return tensor(std::move(s), std::move(v));
  }
  static tensor full(shape_t s, T value) {
    auto v = std::make_shared<std::vector<T>>(static_cast<std::size_t>(numel(s)), value);
    return tensor(std::move(s), std::move(v));
  }
  static tensor from(shape_t s, std::vector<T> v) {
    if (static_cast<std::int64_t>(v.size()) != numel(s))
      throw shape_error("tensor::from: value count " + std::to_string(v.size()) +
                        " does not match shape " + shape_str(s));
    return tensor(std::move(s), std::make_shared<std::vector<T>>(std::move(v)));
  }
  static tensor scalar(T value) { return full({1}, value); }

  std::int64_t size() const { return numel(shape); }
  T* data() { return values->data(); }
  const T* data() const { return values->data(); }
  T at(std::int64_t i) const { return (*values)[static_cast<std::size_t>(i)]; }

  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int n() const { return shape[0]; }
  int c() const { return shape[1]; }
  int h() const { return shape[2]; }
  int w() const { return shape[3]; }

  bool tracked() const { return tp != nullptr && node >= 0; }
  const std::vector<T>* grad() const;
};

// Reverse-mode tape. Ops append nodes in execution order, so the list is
// already topologically sorted; backward() walks it once in reverse and
// hands each node's accumulated output gradient to its backward closure.
template <typename T>
class tape {
 public:
  // bw(t, gout): scatter `gout` into the gradients of the node's inputs.
  using backward_fn = std::function<void(tape<T>&, const std::vector<T>&)>;

  int record(std::int64_t out_size, backward_fn bw) {
    nodes_.push_back(node_rec{out_size, std::move(bw)});
    grads_.emplace_back();
    return static_cast<int>(nodes_.size()) - 1;
  }

  int leaf(std::int64_t out_size) { return record(out_size, nullptr); }

  // Attach a value tensor to the tape as a differentiable leaf.
  tensor<T> variable(tensor<T> x) {
    x.tp = this;
    x.node = leaf(x.size());
    return x;
  }

  bool has_grad(int node) const { return !grads_[static_cast<std::size_t>(node)].empty(); }

  const std::vector<T>& grad(int node) const { return grads_[static_cast<std::size_t>(node)]; }

  std::vector<T>& grad_buffer(int node) {
    auto& g = grads_[static_cast<std::size_t>(node)];
    if (g.empty())
      g.assign(static_cast<std::size_t>(nodes_[static_cast<std::size_t>(node)].size), T(0));
    return g;
  }

  void backward(const tensor<T>& loss) {
    if (loss.tp != this || loss.node < 0)
      throw contract_error("backward: loss is not recorded on this tape");
    if (loss.size() != 1)
      throw contract_error("backward: loss must be scalar, got shape " + shape_str(loss.shape));
    grad_buffer(loss.node)[0] = T(1);
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      auto& rec = nodes_[static_cast<std::size_t>(i)];
      auto& g = grads_[static_cast<std::size_t>(i)];
      if (rec.bw && !g.empty()) rec.bw(*this, g);
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

  void reset() {
    nodes_.clear();
    grads_.clear();
  }

 private:
  struct node_rec {
    std::int64_t size;
    backward_fn bw;
  };
  std::vector<node_rec> nodes_;
  std::vector<std::vector<T>> grads_;
};

template <typename T>
const std::vector<T>* tensor<T>::grad() const {
  if (!tracked() || !tp->has_grad(node)) return nullptr;
  return &tp->grad(node);
}

enum class conv_backend { im2col, direct };

inline conv_backend& conv_backend_ref() {
  static conv_backend b = conv_backend::im2col;
  return b;
}
inline conv_backend default_conv_backend() { return conv_backend_ref(); }
inline void set_conv_backend(conv_backend b) { conv_backend_ref() = b; }

namespace detail {

template <typename T>
tape<T>* tape_of(const tensor<T>& a) {
  return a.tracked() ? a.tp : nullptr;
}

template <typename T>
tape<T>* tape_of(const tensor<T>& a, const tensor<T>& b) {
  tape<T>* t = tape_of(a);
  return t ? t : tape_of(b);
}

inline void require_nchw(const shape_t& s, const char* kind) {
  if (s.size() != 4)
    throw shape_error(std::string(kind) + ": expected 4-d NCHW input, got " + shape_str(s));
}

// y[j] += a * x[j]. The hot loop of the im2col path; kept free-standing so
// the compiler vectorizes it in one place.
template <typename T>
inline void axpy(T a, const T* x, T* y, std::int64_t n) {
  for (std::int64_t j = 0; j < n; ++j) y[j] += a * x[j];
}

template <typename T>
inline T dot(const T* a, const T* b, std::int64_t n) {
  T s = T(0);
  for (std::int64_t j = 0; j < n; ++j) s += a[j] * b[j];
  return s;
}

// im2col for 3x3 stride-1 zero-pad-1 convolution: col is (C*9) x (H*W),
// row index k = c*9 + ky*3 + kx.
template <typename T>
void im2col_3x3(const T* x, int C, int H, int W, T* col) {
  std::int64_t hw = static_cast<std::int64_t>(H) * W;
  for (int c = 0; c < C; ++c) {
    const T* plane = x + static_cast<std::int64_t>(c) * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* row = col + (static_cast<std::int64_t>(c) * 9 + ky * 3 + kx) * hw;
        for (int y = 0; y < H; ++y) {
          int sy = y + ky - 1;
          T* dst = row + static_cast<std::int64_t>(y) * W;
          if (sy < 0 || sy >= H) {
            std::memset(dst, 0, sizeof(T) * static_cast<std::size_t>(W));
            continue;
          }
          const T* src = plane + static_cast<std::int64_t>(sy) * W;
          int x0 = 0, x1 = W;
          if (kx == 0) {
            dst[0] = T(0);
            x0 = 1;
          } else if (kx == 2) {
            dst[W - 1] = T(0);
            x1 = W - 1;
          }
          for (int xx = x0; xx < x1; ++xx) dst[xx] = src[xx + kx - 1];
        }
      }
    }
  }
}

// Accumulate into dx the transpose of im2col_3x3 (col2im scatter-add).
template <typename T>
void col2im_3x3_channel(const T* col, int c, int H, int W, T* dx) {
  std::int64_t hw = static_cast<std::int64_t>(H) * W;
  T* plane = dx + static_cast<std::int64_t>(c) * hw;
  for (int ky = 0; ky < 3; ++ky) {
    for (int kx = 0; kx < 3; ++kx) {
      const T* row = col + (static_cast<std::int64_t>(c) * 9 + ky * 3 + kx) * hw;
      for (int y = 0; y < H; ++y) {
        int sy = y + ky - 1;
        if (sy < 0 || sy >= H) continue;
        T* dst = plane + static_cast<std::int64_t>(sy) * W;
        const T* src = row + static_cast<std::int64_t>(y) * W;
        int x0 = kx == 0 ? 1 : 0;
        int x1 = kx == 2 ? W - 1 : W;
        for (int xx = x0; xx < x1; ++xx) dst[xx + kx - 1] += src[xx];
      }
    }
  }
}

// Y(F x HW) += Wm(F x K) * col(K x HW), k ascending per output row and
// exact-zero weights skipped. Channel-ascending accumulation makes the
// RGB->multispectral extension invariance bit-exact: zero kernel slices
// contribute no floating-point operations at all.
template <typename T>
void gemm_rows(const T* wm, const T* col, T* y, int f0, int f1, int K, std::int64_t hw) {
  for (int f = f0; f < f1; ++f) {
    T* yrow = y + static_cast<std::int64_t>(f) * hw;
    const T* wrow = wm + static_cast<std::int64_t>(f) * K;
    for (int k = 0; k < K; ++k) {
      T a = wrow[k];
      if (a == T(0)) continue;
      axpy(a, col + static_cast<std::int64_t>(k) * hw, yrow, hw);
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// primitives
// ---------------------------------------------------------------------------

template <typename T>
tensor<T> relu(const tensor<T>& x) {
  std::int64_t n = x.size();
  auto out = tensor<T>::zeros(x.shape);
  const T* xv = x.data();
  T* yv = out.data();
  for (std::int64_t i = 0; i < n; ++i) yv[i] = xv[i] > T(0) ? xv[i] : T(0);
  if (tape<T>* tp = detail::tape_of(x)) {
    auto xvals = x.values;
    int xn = x.node;
    out.tp = tp;
    out.node = tp->record(n, [xvals, xn, n](tape<T>& t, const std::vector<T>& gy) {
      auto& gx = t.grad_buffer(xn);
      const T* xd = xvals->data();
      for (std::int64_t i = 0; i < n; ++i)
        if (xd[i] > T(0)) gx[static_cast<std::size_t>(i)] += gy[static_cast<std::size_t>(i)];
    });
  }
  return out;
}

template <typename T>
tensor<T> sigmoid(const tensor<T>& x) {
  std::int64_t n = x.size();
  auto out = tensor<T>::zeros(x.shape);
  const T* xv = x.data();
  T* yv = out.data();
  for (std::int64_t i = 0; i < n; ++i) {
    T v = xv[i];
    yv[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  }
  if (tape<T>* tp = detail::tape_of(x)) {
    auto yvals = out.values;
    int xn = x.node;
    out.tp = tp;
    out.node = tp->record(n, [yvals, xn, n](tape<T>& t, const std::vector<T>& gy) {
      auto& gx = t.grad_buffer(xn);
      const T* yd = yvals->data();
      for (std::int64_t i = 0; i < n; ++i) {
        std::size_t u = static_cast<std::size_t>(i);
        gx[u] += gy[u] * yd[i] * (T(1) - yd[i]);
      }
    });
  }
  return out;
}

// 3x3 convolution, stride 1, zero padding 1 (shape preserving).
// x: {N,C,H,W}, w: {F,C,3,3} -> {N,F,H,W}. No bias; see add_bias.
template <typename T>
tensor<T> conv3x3(const tensor<T>& x, const tensor<T>& w,
                  conv_backend backend = default_conv_backend()) {
  detail::require_nchw(x.shape, "conv3x3 input");
  if (w.shape.size() != 4 || w.dim(2) != 3 || w.dim(3) != 3)
    throw shape_error("conv3x3: kernel must be {F,C,3,3}, got " + shape_str(w.shape));
  if (w.dim(1) != x.dim(1))
    throw shape_error("conv3x3: kernel expects " + std::to_string(w.dim(1)) +
                      " input channels, input has " + std::to_string(x.dim(1)));
  const int N = x.n(), C = x.c(), H = x.h(), W = x.w(), F = w.dim(0);
  const std::int64_t hw = static_cast<std::int64_t>(H) * W;
  const int K = C * 9;
  auto out = tensor<T>::zeros({N, F, H, W});

  if (backend == conv_backend::im2col) {
    std::vector<std::vector<T>> cols(static_cast<std::size_t>(N));
    parallel_for(N, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t n = lo; n < hi; ++n) {
        auto& col = cols[static_cast<std::size_t>(n)];
        col.resize(static_cast<std::size_t>(K) * static_cast<std::size_t>(hw));
        detail::im2col_3x3(x.data() + n * C * hw, C, H, W, col.data());
      }
    });
    parallel_for(static_cast<std::int64_t>(N) * F, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t t = lo; t < hi; ++t) {
        int n = static_cast<int>(t / F), f = static_cast<int>(t % F);
        detail::gemm_rows(w.data(), cols[static_cast<std::size_t>(n)].data(),
                          out.data() + static_cast<std::int64_t>(n) * F * hw, f, f + 1, K, hw);
      }
    });
  } else {
    // direct loops; accumulation order (c, ky, kx ascending) matches the
    // im2col path term for term, so the two backends agree bit-exactly.
    parallel_for(static_cast<std::int64_t>(N) * F, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t t = lo; t < hi; ++t) {
        int n = static_cast<int>(t / F), f = static_cast<int>(t % F);
        const T* xs = x.data() + static_cast<std::int64_t>(n) * C * hw;
        const T* wf = w.data() + static_cast<std::int64_t>(f) * K;
        T* ys = out.data() + (static_cast<std::int64_t>(n) * F + f) * hw;
        for (int y = 0; y < H; ++y)
          for (int xx = 0; xx < W; ++xx) {
            T acc = T(0);
            for (int c = 0; c < C; ++c)
              for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                  T a = wf[c * 9 + ky * 3 + kx];
                  if (a == T(0)) continue;
                  int sy = y + ky - 1, sx = xx + kx - 1;
                  if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                  acc += a * xs[(static_cast<std::int64_t>(c) * H + sy) * W + sx];
                }
            ys[static_cast<std::int64_t>(y) * W + xx] = acc;
          }
      }
    });
  }

  if (tape<T>* tp = detail::tape_of(x, w)) {
    auto xvals = x.values;
    auto wvals = w.values;
    int xn = x.node, wn = w.node;
    out.tp = tp;
    out.node = tp->record(
        out.size(), [xvals, wvals, xn, wn, N, C, H, W, F, K, hw](tape<T>& t,
                                                                 const std::vector<T>& gy) {
          std::vector<T>* gx = xn >= 0 ? &t.grad_buffer(xn) : nullptr;
          std::vector<T>* gw = wn >= 0 ? &t.grad_buffer(wn) : nullptr;
          if (!gx && !gw) return;
          std::vector<T> col(static_cast<std::size_t>(K) * static_cast<std::size_t>(hw));
          std::vector<T> gcol;
          if (gx) gcol.resize(col.size());
          for (int n = 0; n < N; ++n) {
            const T* gys = gy.data() + static_cast<std::int64_t>(n) * F * hw;
            if (gw) {
              detail::im2col_3x3(xvals->data() + static_cast<std::int64_t>(n) * C * hw, C, H, W,
                                 col.data());
              parallel_for(F, [&](std::int64_t lo, std::int64_t hi) {
                for (std::int64_t f = lo; f < hi; ++f)
                  for (int k = 0; k < K; ++k)
                    (*gw)[static_cast<std::size_t>(f * K + k)] += detail::dot(
                        gys + f * hw, col.data() + static_cast<std::int64_t>(k) * hw, hw);
              });
            }
            if (gx) {
              std::fill(gcol.begin(), gcol.end(), T(0));
              parallel_for(K, [&](std::int64_t lo, std::int64_t hi) {
                for (std::int64_t k = lo; k < hi; ++k) {
                  T* grow = gcol.data() + k * hw;
                  for (int f = 0; f < F; ++f) {
                    T a = (*wvals)[static_cast<std::size_t>(f * K + k)];
                    if (a == T(0)) continue;
                    detail::axpy(a, gys + static_cast<std::int64_t>(f) * hw, grow, hw);
                  }
                }
              });
              T* gxs = gx->data() + static_cast<std::int64_t>(n) * C * hw;
              parallel_for(C, [&](std::int64_t lo, std::int64_t hi) {
                for (std::int64_t c = lo; c < hi; ++c)
                  detail::col2im_3x3_channel(gcol.data(), static_cast<int>(c), H, W, gxs);
              });
            }
          }
        });
  }
  return out;
}

// 1x1 convolution. x: {N,C,H,W}, w: {F,C,1,1} -> {N,F,H,W}.
template <typename T>
tensor<T> conv1x1(const tensor<T>& x, const tensor<T>& w) {
  detail::require_nchw(x.shape, "conv1x1 input");
  if (w.shape.size() != 4 || w.dim(2) != 1 || w.dim(3) != 1)
    throw shape_error("conv1x1: kernel must be {F,C,1,1}, got " + shape_str(w.shape));
  if (w.dim(1) != x.dim(1))
    throw shape_error("conv1x1: kernel expects " + std::to_string(w.dim(1)) +
                      " input channels, input has " + std::to_string(x.dim(1)));
  const int N = x.n(), C = x.c(), H = x.h(), W = x.w(), F = w.dim(0);
  const std::int64_t hw = static_cast<std::int64_t>(H) * W;
  auto out = tensor<T>::zeros({N, F, H, W});
  parallel_for(static_cast<std::int64_t>(N) * F, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t t = lo; t < hi; ++t) {
      int n = static_cast<int>(t / F), f = static_cast<int>(t % F);
      const T* xs = x.data() + static_cast<std::int64_t>(n) * C * hw;
      T* ys = out.data() + t * hw;
      for (int c = 0; c < C; ++c) {
        T a = w.data()[static_cast<std::int64_t>(f) * C + c];
        if (a == T(0)) continue;
        detail::axpy(a, xs + static_cast<std::int64_t>(c) * hw, ys, hw);
      }
    }
  });
  if (tape<T>* tp = detail::tape_of(x, w)) {
    auto xvals = x.values;
    auto wvals = w.values;
    int xn = x.node, wn = w.node;
    out.tp = tp;
    out.node =
        tp->record(out.size(), [xvals, wvals, xn, wn, N, C, F, hw](tape<T>& t,
                                                                   const std::vector<T>& gy) {
          std::vector<T>* gx = xn >= 0 ? &t.grad_buffer(xn) : nullptr;
          std::vector<T>* gw = wn >= 0 ? &t.grad_buffer(wn) : nullptr;
          for (int n = 0; n < N; ++n) {
            const T* gys = gy.data() + static_cast<std::int64_t>(n) * F * hw;
            const T* xs = xvals->data() + static_cast<std::int64_t>(n) * C * hw;
            if (gw)
              for (int f = 0; f < F; ++f)
                for (int c = 0; c < C; ++c)
                  (*gw)[static_cast<std::size_t>(f * C + c)] +=
                      detail::dot(gys + static_cast<std::int64_t>(f) * hw,
                                  xs + static_cast<std::int64_t>(c) * hw, hw);
            if (gx) {
              T* gxs = gx->data() + static_cast<std::int64_t>(n) * C * hw;
              parallel_for(C, [&](std::int64_t lo, std::int64_t hi) {
                for (std::int64_t c = lo; c < hi; ++c)
                  for (int f = 0; f < F; ++f) {
                    T a = (*wvals)[static_cast<std::size_t>(f * C + c)];
                    if (a == T(0)) continue;
                    detail::axpy(a, gys + static_cast<std::int64_t>(f) * hw, gxs + c * hw, hw);
                  }
              });
            }
          }
        });
  }
  return out;
}

// Adds a per-channel bias. x: {N,C,H,W}, b: {C}.
template <typename T>
tensor<T> add_bias(const tensor<T>& x, const tensor<T>& b) {
  detail::require_nchw(x.shape, "add_bias input");
  if (b.shape.size() != 1 || b.dim(0) != x.dim(1))
    throw shape_error("add_bias: bias shape " + shape_str(b.shape) + " does not match channels of " +
                      shape_str(x.shape));
  const int N = x.n(), C = x.c();
  const std::int64_t hw = static_cast<std::int64_t>(x.h()) * x.w();
  auto out = tensor<T>::zeros(x.shape);
  const T* xv = x.data();
  T* yv = out.data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      T bias = b.data()[c];
      std::int64_t base = (static_cast<std::int64_t>(n) * C + c) * hw;
      for (std::int64_t j = 0; j < hw; ++j) yv[base + j] = xv[base + j] + bias;
    }
  if (tape<T>* tp = detail::tape_of(x, b)) {
    int xn = x.node, bn = b.node;
    out.tp = tp;
    out.node = tp->record(out.size(), [xn, bn, N, C, hw](tape<T>& t, const std::vector<T>& gy) {
      if (xn >= 0) {
        auto& gx = t.grad_buffer(xn);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
      }
      if (bn >= 0) {
        auto& gb = t.grad_buffer(bn);
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c) {
            std::int64_t base = (static_cast<std::int64_t>(n) * C + c) * hw;
            T s = T(0);
            for (std::int64_t j = 0; j < hw; ++j) s += gy[static_cast<std::size_t>(base + j)];
            gb[static_cast<std::size_t>(c)] += s;
          }
      }
    });
  }
  return out;
}

// 2x2 max pooling with stride 2. Ties resolve to the first element in
// window scan order (top-left first), which keeps backward deterministic.
template <typename T>
tensor<T> maxpool2(const tensor<T>& x) {
  detail::require_nchw(x.shape, "maxpool2 input");
  const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
  if (H % 2 != 0 || W % 2 != 0)
    throw shape_error("maxpool2: spatial dims must be even, got " + shape_str(x.shape));
  const int OH = H / 2, OW = W / 2;
  auto out = tensor<T>::zeros({N, C, OH, OW});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(out.size()));
  const T* xv = x.data();
  T* yv = out.data();
  std::int64_t planes = static_cast<std::int64_t>(N) * C;
  parallel_for(planes, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t p = lo; p < hi; ++p) {
      const T* xp = xv + p * H * W;
      T* yp = yv + p * OH * OW;
      std::int64_t* ap = argmax->data() + p * OH * OW;
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          std::int64_t best = static_cast<std::int64_t>(2 * oy) * W + 2 * ox;
          T bv = xp[best];
          const int dys[3] = {0, 1, 1};
          const int dxs[3] = {1, 0, 1};
          for (int k = 0; k < 3; ++k) {
            std::int64_t idx = static_cast<std::int64_t>(2 * oy + dys[k]) * W + 2 * ox + dxs[k];
            if (xp[idx] > bv) {
              bv = xp[idx];
              best = idx;
            }
          }
          yp[static_cast<std::int64_t>(oy) * OW + ox] = bv;
          ap[static_cast<std::int64_t>(oy) * OW + ox] = p * H * W + best;
        }
    }
  });
  if (tape<T>* tp = detail::tape_of(x)) {
    int xn = x.node;
    out.tp = tp;
    out.node = tp->record(out.size(), [xn, argmax](tape<T>& t, const std::vector<T>& gy) {
      if (xn < 0) return;
      auto& gx = t.grad_buffer(xn);
      for (std::size_t i = 0; i < gy.size(); ++i)
        gx[static_cast<std::size_t>((*argmax)[i])] += gy[i];
    });
  }
  return out;
}

// Nearest-neighbor 2x upsampling.
template <typename T>
tensor<T> upsample_nearest2(const tensor<T>& x) {
  detail::require_nchw(x.shape, "upsample_nearest2 input");
  const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
  const int OH = H * 2, OW = W * 2;
  auto out = tensor<T>::zeros({N, C, OH, OW});
  const T* xv = x.data();
  T* yv = out.data();
  std::int64_t planes = static_cast<std::int64_t>(N) * C;
  parallel_for(planes, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t p = lo; p < hi; ++p) {
      const T* xp = xv + p * H * W;
      T* yp = yv + p * OH * OW;
      for (int y = 0; y < OH; ++y) {
        const T* row = xp + static_cast<std::int64_t>(y / 2) * W;
        T* orow = yp + static_cast<std::int64_t>(y) * OW;
        for (int xx = 0; xx < OW; ++xx) orow[xx] = row[xx / 2];
      }
    }
  });
  if (tape<T>* tp = detail::tape_of(x)) {
    int xn = x.node;
    out.tp = tp;
    out.node =
        tp->record(out.size(), [xn, N, C, H, W, OH, OW](tape<T>& t, const std::vector<T>& gy) {
          if (xn < 0) return;
          auto& gx = t.grad_buffer(xn);
          std::int64_t planes = static_cast<std::int64_t>(N) * C;
          for (std::int64_t p = 0; p < planes; ++p) {
            T* gxp = gx.data() + p * H * W;
            const T* gyp = gy.data() + p * OH * OW;
            for (int y = 0; y < OH; ++y)
              for (int xx = 0; xx < OW; ++xx)
                gxp[static_cast<std::int64_t>(y / 2) * W + xx / 2] +=
                    gyp[static_cast<std::int64_t>(y) * OW + xx];
          }
        });
  }
  return out;
}

// Concatenates along the channel axis; N, H, W must match.
template <typename T>
tensor<T> concat_channels(const tensor<T>& a, const tensor<T>& b) {
  detail::require_nchw(a.shape, "concat_channels input");
  detail::require_nchw(b.shape, "concat_channels input");
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w())
    throw shape_error("concat_channels: N/H/W mismatch between " + shape_str(a.shape) + " and " +
                      shape_str(b.shape));
  const int N = a.n(), Ca = a.c(), Cb = b.c(), H = a.h(), W = a.w();
  const std::int64_t hw = static_cast<std::int64_t>(H) * W;
  auto out = tensor<T>::zeros({N, Ca + Cb, H, W});
  for (int n = 0; n < N; ++n) {
    std::memcpy(out.data() + static_cast<std::int64_t>(n) * (Ca + Cb) * hw,
                a.data() + static_cast<std::int64_t>(n) * Ca * hw,
                sizeof(T) * static_cast<std::size_t>(Ca * hw));
    std::memcpy(out.data() + (static_cast<std::int64_t>(n) * (Ca + Cb) + Ca) * hw,
                b.data() + static_cast<std::int64_t>(n) * Cb * hw,
                sizeof(T) * static_cast<std::size_t>(Cb * hw));
  }
  if (tape<T>* tp = detail::tape_of(a, b)) {
    int an = a.node, bn = b.node;
    out.tp = tp;
    out.node =
        tp->record(out.size(), [an, bn, N, Ca, Cb, hw](tape<T>& t, const std::vector<T>& gy) {
          for (int n = 0; n < N; ++n) {
            const T* g = gy.data() + static_cast<std::int64_t>(n) * (Ca + Cb) * hw;
            if (an >= 0) {
              auto& ga = t.grad_buffer(an);
              T* dst = ga.data() + static_cast<std::int64_t>(n) * Ca * hw;
              for (std::int64_t j = 0; j < Ca * hw; ++j) dst[j] += g[j];
            }
            if (bn >= 0) {
              auto& gb = t.grad_buffer(bn);
              T* dst = gb.data() + static_cast<std::int64_t>(n) * Cb * hw;
              const T* src = g + Ca * hw;
              for (std::int64_t j = 0; j < Cb * hw; ++j) dst[j] += src[j];
            }
          }
        });
  }
  return out;
}

// Copies channels [c0, c1) out of a NCHW tensor (no gradient tracking;
// convenience for tests and post-processing).
template <typename T>
tensor<T> slice_channels(const tensor<T>& x, int c0, int c1) {
  detail::require_nchw(x.shape, "slice_channels input");
  if (c0 < 0 || c1 > x.c() || c0 >= c1)
    throw shape_error("slice_channels: invalid range [" + std::to_string(c0) + "," +
                      std::to_string(c1) + ") for " + shape_str(x.shape));
  const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
  const std::int64_t hw = static_cast<std::int64_t>(H) * W;
  auto out = tensor<T>::zeros({N, c1 - c0, H, W});
  for (int n = 0; n < N; ++n)
    std::memcpy(out.data() + static_cast<std::int64_t>(n) * (c1 - c0) * hw,
                x.data() + (static_cast<std::int64_t>(n) * C + c0) * hw,
                sizeof(T) * static_cast<std::size_t>((c1 - c0) * hw));
  return out;
}

// Scalar sum of all elements.
template <typename T>
tensor<T> reduce_sum(const tensor<T>& x) {
  T s = T(0);
  const T* xv = x.data();
  std::int64_t n = x.size();
  for (std::int64_t i = 0; i < n; ++i) s += xv[i];
  auto out = tensor<T>::scalar(s);
  if (tape<T>* tp = detail::tape_of(x)) {
    int xn = x.node;
    out.tp = tp;
    out.node = tp->record(1, [xn](tape<T>& t, const std::vector<T>& gy) {
      if (xn < 0) return;
      auto& gx = t.grad_buffer(xn);
      for (auto& g : gx) g += gy[0];
    });
  }
  return out;
}

// out = sum_i coeff[i] * xs[i] + constant, elementwise over equal shapes.
template <typename T>
tensor<T> lincomb(const std::vector<tensor<T>>& xs, const std::vector<T>& coeffs, T constant) {
  if (xs.empty() || xs.size() != coeffs.size())
    throw contract_error("lincomb: need matching non-empty inputs and coefficients");
  for (const auto& x : xs)
    if (x.shape != xs[0].shape)
      throw shape_error("lincomb: shape mismatch " + shape_str(x.shape) + " vs " +
                        shape_str(xs[0].shape));
  auto out = tensor<T>::full(xs[0].shape, constant);
  std::int64_t n = out.size();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const T* xv = xs[i].data();
    T* yv = out.data();
    T a = coeffs[i];
    for (std::int64_t j = 0; j < n; ++j) yv[j] += a * xv[j];
  }
  tape<T>* tp = nullptr;
  for (const auto& x : xs)
    if ((tp = detail::tape_of(x)) != nullptr) break;
  if (tp) {
    std::vector<int> nodes;
    for (const auto& x : xs) nodes.push_back(x.node);
    out.tp = tp;
    out.node = tp->record(n, [nodes, coeffs](tape<T>& t, const std::vector<T>& gy) {
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i] < 0) continue;
        auto& gx = t.grad_buffer(nodes[i]);
        for (std::size_t j = 0; j < gy.size(); ++j) gx[j] += coeffs[i] * gy[j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

// Compares the analytic gradient of f (a scalar-valued tensor function,
// called as f(tape*, x)) against central finite differences at x.
// Returns max |analytic - numeric| / max(1, |analytic|) over the checked
// coordinates. When max_coords caps the count, coordinates are taken on an
// even deterministic stride. NaNs in f propagate into the result.
template <typename T, typename F>
T grad_check(F&& f, const tensor<T>& x, T eps, std::int64_t max_coords = -1) {
  if (!(eps > T(0))) throw contract_error("grad_check: eps must be positive");
  tape<T> t;
  tensor<T> xv = t.variable(x);
  tensor<T> loss = f(&t, xv);
  if (loss.size() != 1) throw contract_error("grad_check: f must be scalar-valued");
  t.backward(loss);
  std::vector<T> analytic(static_cast<std::size_t>(x.size()), T(0));
  if (t.has_grad(xv.node)) analytic = t.grad(xv.node);

  std::int64_t total = x.size();
  std::int64_t count = (max_coords < 0 || max_coords >= total) ? total : max_coords;
  T worst = T(0);
  for (std::int64_t i = 0; i < count; ++i) {
    std::int64_t idx = count == total ? i : (i * total) / count;
    tensor<T> xp = tensor<T>::from(x.shape, *x.values);
    tensor<T> xm = tensor<T>::from(x.shape, *x.values);
    xp.data()[idx] += eps;
    xm.data()[idx] -= eps;
    T fp = f(static_cast<tape<T>*>(nullptr), xp).at(0);
    T fm = f(static_cast<tape<T>*>(nullptr), xm).at(0);
    T numeric = (fp - fm) / (T(2) * eps);
    T a = analytic[static_cast<std::size_t>(idx)];
    T denom = std::abs(a) > T(1) ? std::abs(a) : T(1);
    T err = std::abs(a - numeric) / denom;
    if (std::isnan(err)) return err;
    if (err > worst) worst = err;
  }
  return worst;
}

}  // namespace terrace
