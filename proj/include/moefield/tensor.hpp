// Copyright (c) 2026 moefield authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over dense tensors. The tape is
// define-by-run and rebuilt every training step: leaves reference parameter
// tensors owned by the caller, interior nodes own their values, and
// backward() walks the recorded closures in reverse insertion order.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace moefield::ad {

template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), T(0));
  }
  Tensor(std::vector<int> s, T fill) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), fill);
  }
  Tensor(std::vector<int> s, std::vector<T> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (numel_of(shape) != static_cast<int64_t>(data.size()))
      throw std::invalid_argument("Tensor: shape/data size mismatch");
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }
  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  // Matrix view: rank-1 tensors are columns, higher ranks flatten trailing
  // dims, so rows()*cols() == numel().
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const {
    if (shape.size() <= 1) return 1;
    int64_t c = 1;
    for (size_t i = 1; i < shape.size(); ++i) c *= shape[i];
    return static_cast<int>(c);
  }

  static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }
};

enum class Op {
  add,
  mul,
  matmul,
  relu,
  softplus,
  softmax_rows,
  sum,
  mean,
  square,
  gather_scale,
};

template <typename T>
class Tape {
 public:
  using Id = int32_t;

  int64_t size() const { return static_cast<int64_t>(nodes_.size()); }

  // Registers a parameter tensor. The tape keeps a pointer; the tensor must
  // outlive the tape. Gradients accumulate per leaf and are read back with
  // grad(). A tensor with requires_grad=false is recorded as a constant.
  Id leaf(Tensor<T>& param) {
    Node n;
    n.external = &param;
    n.requires_grad = param.requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  Id constant(Tensor<T> value) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = false;
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  Id constant_scalar(T v) { return constant(Tensor<T>::scalar(v)); }

  const Tensor<T>& value(Id id) const {
    const Node& n = nodes_.at(static_cast<size_t>(id));
    return n.external ? *n.external : n.value;
  }

  // Gradient of a node; zeros if the node was never reached by backward().
  Tensor<T> grad(Id id) const {
    const Node& n = nodes_.at(static_cast<size_t>(id));
    if (!n.grad.empty()) return Tensor<T>(value(id).shape, n.grad);
    return Tensor<T>(value(id).shape);
  }

  bool has_grad(Id id) const {
    return !nodes_.at(static_cast<size_t>(id)).grad.empty();
  }

  // ---- ops -------------------------------------------------------------

  // Elementwise a+b. b may also be a row vector broadcast over a's rows, or
  // a scalar broadcast everywhere.
  Id add(Id a, Id b) {
    const Tensor<T>& va = value(a);
    const Tensor<T>& vb = value(b);
    int mode = broadcast_mode(va, vb, "add");
    Tensor<T> out(va.shape);
    const int64_t n = va.numel();
    const int cols = va.cols();
    if (mode == 0) {
      for (int64_t i = 0; i < n; ++i) out.data[i] = va.data[i] + vb.data[i];
    } else if (mode == 1) {  // row broadcast
      for (int64_t i = 0; i < n; ++i)
        out.data[i] = va.data[i] + vb.data[static_cast<size_t>(i % cols)];
    } else {  // scalar broadcast
      for (int64_t i = 0; i < n; ++i) out.data[i] = va.data[i] + vb.data[0];
    }
    return record(std::move(out), {a, b}, [this, a, b, mode, cols](Node& node) {
      const std::vector<T>& g = node.grad;
      if (needs_grad(a)) {
        std::vector<T>& ga = grad_buf(a);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (needs_grad(b)) {
        std::vector<T>& gb = grad_buf(b);
        if (mode == 0) {
          for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        } else if (mode == 1) {
          for (size_t i = 0; i < g.size(); ++i)
            gb[i % static_cast<size_t>(cols)] += g[i];
        } else {
          T s = 0;
          for (T v : g) s += v;
          gb[0] += s;
        }
      }
    });
  }

  Id sub(Id a, Id b) {
    const Tensor<T>& va = value(a);
    const Tensor<T>& vb = value(b);
    if (va.shape != vb.shape) throw shape_error("sub", va, vb);
    Tensor<T> out(va.shape);
    for (int64_t i = 0; i < va.numel(); ++i)
      out.data[i] = va.data[i] - vb.data[i];
    return record(std::move(out), {a, b}, [this, a, b](Node& node) {
      const std::vector<T>& g = node.grad;
      if (needs_grad(a)) {
        std::vector<T>& ga = grad_buf(a);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (needs_grad(b)) {
        std::vector<T>& gb = grad_buf(b);
        for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }

  // Elementwise a*b; b may be scalar.
  Id mul(Id a, Id b) {
    const Tensor<T>& va = value(a);
    const Tensor<T>& vb = value(b);
    bool scalar_b = vb.numel() == 1 && va.numel() != 1;
    if (!scalar_b && va.shape != vb.shape) throw shape_error("mul", va, vb);
    Tensor<T> out(va.shape);
    if (scalar_b) {
      for (int64_t i = 0; i < va.numel(); ++i)
        out.data[i] = va.data[i] * vb.data[0];
    } else {
      for (int64_t i = 0; i < va.numel(); ++i)
        out.data[i] = va.data[i] * vb.data[i];
    }
    return record(std::move(out), {a, b}, [this, a, b, scalar_b](Node& node) {
      const std::vector<T>& g = node.grad;
      const Tensor<T>& va = value(a);
      const Tensor<T>& vb = value(b);
      if (needs_grad(a)) {
        std::vector<T>& ga = grad_buf(a);
        if (scalar_b) {
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb.data[0];
        } else {
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb.data[i];
        }
      }
      if (needs_grad(b)) {
        std::vector<T>& gb = grad_buf(b);
        if (scalar_b) {
          T s = 0;
          for (size_t i = 0; i < g.size(); ++i) s += g[i] * va.data[i];
          gb[0] += s;
        } else {
          for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va.data[i];
        }
      }
    });
  }

  Id scale(Id a, T s) { return mul(a, constant_scalar(s)); }

  // (N,K) x (K,M) -> (N,M), row-major.
  Id matmul(Id a, Id b) {
    const Tensor<T>& va = value(a);
    const Tensor<T>& vb = value(b);
    if (va.shape.size() != 2 || vb.shape.size() != 2 ||
        va.shape[1] != vb.shape[0])
      throw shape_error("matmul", va, vb);
    const int N = va.shape[0], K = va.shape[1], M = vb.shape[1];
    Tensor<T> out({N, M});
    matmul_accum(va.data.data(), vb.data.data(), out.data.data(), N, K, M);
    return record(std::move(out), {a, b}, [this, a, b, N, K, M](Node& node) {
      const std::vector<T>& g = node.grad;
      const Tensor<T>& va = value(a);
      const Tensor<T>& vb = value(b);
      if (needs_grad(a)) {
        // dA[n,k] += sum_m G[n,m] * B[k,m]
        std::vector<T>& ga = grad_buf(a);
        for (int n = 0; n < N; ++n)
          for (int k = 0; k < K; ++k) {
            T acc = 0;
            const T* grow = g.data() + static_cast<size_t>(n) * M;
            const T* brow = vb.data.data() + static_cast<size_t>(k) * M;
            for (int m = 0; m < M; ++m) acc += grow[m] * brow[m];
            ga[static_cast<size_t>(n) * K + k] += acc;
          }
      }
      if (needs_grad(b)) {
        // dB[k,m] += sum_n A[n,k] * G[n,m]
        std::vector<T>& gb = grad_buf(b);
        for (int n = 0; n < N; ++n) {
          const T* arow = va.data.data() + static_cast<size_t>(n) * K;
          const T* grow = g.data() + static_cast<size_t>(n) * M;
          for (int k = 0; k < K; ++k) {
            T av = arow[k];
            T* gbrow = gb.data() + static_cast<size_t>(k) * M;
            for (int m = 0; m < M; ++m) gbrow[m] += av * grow[m];
          }
        }
      }
    });
  }

  Id relu(Id a) {
    const Tensor<T>& va = value(a);
    Tensor<T> out(va.shape);
    for (int64_t i = 0; i < va.numel(); ++i)
      out.data[i] = va.data[i] > T(0) ? va.data[i] : T(0);
    return record(std::move(out), {a}, [this, a](Node& node) {
      if (!needs_grad(a)) return;
      const std::vector<T>& g = node.grad;
      const Tensor<T>& va = value(a);
      std::vector<T>& ga = grad_buf(a);
      for (size_t i = 0; i < g.size(); ++i)
        if (va.data[i] > T(0)) ga[i] += g[i];
    });
  }

  Id softplus(Id a) {
    const Tensor<T>& va = value(a);
    Tensor<T> out(va.shape);
    for (int64_t i = 0; i < va.numel(); ++i)
      out.data[i] = stable_softplus(va.data[i]);
    return record(std::move(out), {a}, [this, a](Node& node) {
      if (!needs_grad(a)) return;
      const std::vector<T>& g = node.grad;
      const Tensor<T>& va = value(a);
      std::vector<T>& ga = grad_buf(a);
      for (size_t i = 0; i < g.size(); ++i)
        ga[i] += g[i] * stable_sigmoid(va.data[i]);
    });
  }

  Id sigmoid(Id a) {
    const Tensor<T>& va = value(a);
    Tensor<T> out(va.shape);
    for (int64_t i = 0; i < va.numel(); ++i)
      out.data[i] = stable_sigmoid(va.data[i]);
    Id id = record(std::move(out), {a}, [this, a](Node& node) {
      if (!needs_grad(a)) return;
      const std::vector<T>& g = node.grad;
      const std::vector<T>& y = node.value.data;
      std::vector<T>& ga = grad_buf(a);
      for (size_t i = 0; i < g.size(); ++i)
        ga[i] += g[i] * y[i] * (T(1) - y[i]);
    });
    return id;
  }

  // Softmax over the last dimension of a rank-1 or rank-2 tensor.
  Id softmax_rows(Id a) {
    const Tensor<T>& va = value(a);
    if (va.shape.size() > 2)
      throw std::invalid_argument("softmax_rows: expected rank 1 or 2, got " +
                                  shape_str(va));
    const int rows = va.shape.size() == 2 ? va.shape[0] : 1;
    const int cols = static_cast<int>(va.numel() / rows);
    Tensor<T> out(va.shape);
    for (int r = 0; r < rows; ++r) {
      const T* x = va.data.data() + static_cast<size_t>(r) * cols;
      T* y = out.data.data() + static_cast<size_t>(r) * cols;
      T mx = x[0];
      for (int c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
      T s = 0;
      for (int c = 0; c < cols; ++c) {
        y[c] = std::exp(x[c] - mx);
        s += y[c];
      }
      for (int c = 0; c < cols; ++c) y[c] /= s;
    }
    return record(std::move(out), {a}, [this, a, rows, cols](Node& node) {
      if (!needs_grad(a)) return;
      const std::vector<T>& g = node.grad;
      const std::vector<T>& y = node.value.data;
      std::vector<T>& ga = grad_buf(a);
      for (int r = 0; r < rows; ++r) {
        const T* yr = y.data() + static_cast<size_t>(r) * cols;
        const T* gr = g.data() + static_cast<size_t>(r) * cols;
        T dotv = 0;
        for (int c = 0; c < cols; ++c) dotv += gr[c] * yr[c];
        T* gar = ga.data() + static_cast<size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) gar[c] += yr[c] * (gr[c] - dotv);
      }
    });
  }

  Id sum(Id a) {
    const Tensor<T>& va = value(a);
    T s = 0;
    for (T v : va.data) s += v;
    return record(Tensor<T>::scalar(s), {a}, [this, a](Node& node) {
      if (!needs_grad(a)) return;
      T g = node.grad[0];
      std::vector<T>& ga = grad_buf(a);
      for (T& v : ga) v += g;
    });
  }

  Id mean(Id a) {
    const Tensor<T>& va = value(a);
    if (va.numel() == 0) throw std::invalid_argument("mean: empty tensor");
    T s = 0;
    for (T v : va.data) s += v;
    T inv = T(1) / static_cast<T>(va.numel());
    return record(Tensor<T>::scalar(s * inv), {a}, [this, a, inv](Node& node) {
      if (!needs_grad(a)) return;
      T g = node.grad[0] * inv;
      std::vector<T>& ga = grad_buf(a);
      for (T& v : ga) v += g;
    });
  }

  Id square(Id a) {
    const Tensor<T>& va = value(a);
    Tensor<T> out(va.shape);
    for (int64_t i = 0; i < va.numel(); ++i)
      out.data[i] = va.data[i] * va.data[i];
    return record(std::move(out), {a}, [this, a](Node& node) {
      if (!needs_grad(a)) return;
      const std::vector<T>& g = node.grad;
      const Tensor<T>& va = value(a);
      std::vector<T>& ga = grad_buf(a);
      for (size_t i = 0; i < g.size(); ++i)
        ga[i] += T(2) * va.data[i] * g[i];
    });
  }

  // out[j,:] = src[rows[j],:] * scales[j]. The fused dispatch op: gathers
  // rows and applies a per-row scalar weight. Backward scatters into both
  // the source rows and the scales. Duplicate row indices accumulate.
  Id gather_scale(Id src, std::vector<int> rows, Id scales) {
    const Tensor<T>& vs = value(src);
    const Tensor<T>& vp = value(scales);
    const int cols = vs.cols();
    const int nsrc = vs.rows();
    if (vp.numel() != static_cast<int64_t>(rows.size()))
      throw std::invalid_argument(
          "gather_scale: scales numel " + std::to_string(vp.numel()) +
          " != row count " + std::to_string(rows.size()));
    for (int r : rows)
      if (r < 0 || r >= nsrc)
        throw std::invalid_argument("gather_scale: row index " +
                                    std::to_string(r) + " out of range [0," +
                                    std::to_string(nsrc) + ")");
    const int R = static_cast<int>(rows.size());
    Tensor<T> out(cols == 1 && vs.shape.size() == 1 ? std::vector<int>{R}
                                                    : std::vector<int>{R, cols});
    for (int j = 0; j < R; ++j) {
      const T* s = vs.data.data() + static_cast<size_t>(rows[static_cast<size_t>(j)]) * cols;
      T w = vp.data[static_cast<size_t>(j)];
      T* o = out.data.data() + static_cast<size_t>(j) * cols;
      for (int c = 0; c < cols; ++c) o[c] = s[c] * w;
    }
    return record(
        std::move(out), {src, scales},
        [this, src, scales, rows = std::move(rows), cols](Node& node) {
          const std::vector<T>& g = node.grad;
          const Tensor<T>& vs = value(src);
          const Tensor<T>& vp = value(scales);
          const int R = static_cast<int>(rows.size());
          if (needs_grad(src)) {
            std::vector<T>& gs = grad_buf(src);
            for (int j = 0; j < R; ++j) {
              T w = vp.data[static_cast<size_t>(j)];
              T* dst = gs.data() + static_cast<size_t>(rows[static_cast<size_t>(j)]) * cols;
              const T* gr = g.data() + static_cast<size_t>(j) * cols;
              for (int c = 0; c < cols; ++c) dst[c] += gr[c] * w;
            }
          }
          if (needs_grad(scales)) {
            std::vector<T>& gp = grad_buf(scales);
            for (int j = 0; j < R; ++j) {
              const T* s = vs.data.data() + static_cast<size_t>(rows[static_cast<size_t>(j)]) * cols;
              const T* gr = g.data() + static_cast<size_t>(j) * cols;
              T acc = 0;
              for (int c = 0; c < cols; ++c) acc += gr[c] * s[c];
              gp[static_cast<size_t>(j)] += acc;
            }
          }
        });
  }

  // Places src rows into a zero tensor of out_rows rows: out[rows[j],:] +=
  // src[j,:]. Inverse of a row gather; duplicate targets accumulate.
  Id scatter_rows(Id src, std::vector<int> rows, int out_rows) {
    const Tensor<T>& vs = value(src);
    const int cols = vs.cols();
    if (vs.rows() != static_cast<int>(rows.size()))
      throw std::invalid_argument("scatter_rows: src rows " +
                                  std::to_string(vs.rows()) +
                                  " != index count " +
                                  std::to_string(rows.size()));
    for (int r : rows)
      if (r < 0 || r >= out_rows)
        throw std::invalid_argument("scatter_rows: row index out of range");
    Tensor<T> out(vs.shape.size() == 1 ? std::vector<int>{out_rows}
                                       : std::vector<int>{out_rows, cols});
    for (size_t j = 0; j < rows.size(); ++j) {
      const T* s = vs.data.data() + j * static_cast<size_t>(cols);
      T* o = out.data.data() + static_cast<size_t>(rows[j]) * cols;
      for (int c = 0; c < cols; ++c) o[c] += s[c];
    }
    return record(std::move(out), {src},
                  [this, src, rows = std::move(rows), cols](Node& node) {
                    if (!needs_grad(src)) return;
                    const std::vector<T>& g = node.grad;
                    std::vector<T>& gs = grad_buf(src);
                    for (size_t j = 0; j < rows.size(); ++j) {
                      const T* gr = g.data() + static_cast<size_t>(rows[j]) * cols;
                      T* dst = gs.data() + j * static_cast<size_t>(cols);
                      for (int c = 0; c < cols; ++c) dst[c] += gr[c];
                    }
                  });
  }

  // Horizontal concat of two matrices with equal row counts.
  Id concat_cols(Id a, Id b) {
    const Tensor<T>& va = value(a);
    const Tensor<T>& vb = value(b);
    if (va.shape.size() != 2 || vb.shape.size() != 2 ||
        va.shape[0] != vb.shape[0])
      throw shape_error("concat_cols", va, vb);
    const int N = va.shape[0], Ca = va.shape[1], Cb = vb.shape[1];
    Tensor<T> out({N, Ca + Cb});
    for (int n = 0; n < N; ++n) {
      T* o = out.data.data() + static_cast<size_t>(n) * (Ca + Cb);
      const T* pa = va.data.data() + static_cast<size_t>(n) * Ca;
      const T* pb = vb.data.data() + static_cast<size_t>(n) * Cb;
      for (int c = 0; c < Ca; ++c) o[c] = pa[c];
      for (int c = 0; c < Cb; ++c) o[Ca + c] = pb[c];
    }
    return record(std::move(out), {a, b}, [this, a, b, N, Ca, Cb](Node& node) {
      const std::vector<T>& g = node.grad;
      if (needs_grad(a)) {
        std::vector<T>& ga = grad_buf(a);
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < Ca; ++c)
            ga[static_cast<size_t>(n) * Ca + c] +=
                g[static_cast<size_t>(n) * (Ca + Cb) + c];
      }
      if (needs_grad(b)) {
        std::vector<T>& gb = grad_buf(b);
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < Cb; ++c)
            gb[static_cast<size_t>(n) * Cb + c] +=
                g[static_cast<size_t>(n) * (Ca + Cb) + Ca + c];
      }
    });
  }

  // Escape hatch for domain ops (grid interpolation, ray compositing): the
  // caller computes the forward value and provides the backward closure.
  // The closure receives the output gradient and must accumulate into the
  // parents' buffers via grad_buf()/needs_grad().
  using CustomBackward = std::function<void(Tape&, const std::vector<T>& out_grad)>;
  Id custom(Tensor<T> value, const std::vector<Id>& parents, CustomBackward fn) {
    return record(std::move(value), parents,
                  [fn = std::move(fn), this](Node& node) { fn(*this, node.grad); });
  }

  bool needs_grad(Id id) const {
    return nodes_[static_cast<size_t>(id)].requires_grad;
  }

  std::vector<T>& grad_buf(Id id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty()) n.grad.assign(static_cast<size_t>(value(id).numel()), T(0));
    return n.grad;
  }

  // Accumulates d(root)/d(leaf) for every reachable node. Root must be a
  // scalar. Each node's closure runs exactly once, in reverse insertion
  // order, so repeated runs over identical graphs are bit-identical.
  void backward(Id root) {
    if (value(root).numel() != 1)
      throw std::invalid_argument("backward: root must be scalar, got " +
                                  shape_str(value(root)));
    std::vector<char> needed(nodes_.size(), 0);
    std::vector<Id> stack{root};
    needed[static_cast<size_t>(root)] = 1;
    while (!stack.empty()) {
      Id id = stack.back();
      stack.pop_back();
      for (Id p : nodes_[static_cast<size_t>(id)].parents) {
        if (!needed[static_cast<size_t>(p)]) {
          needed[static_cast<size_t>(p)] = 1;
          stack.push_back(p);
        }
      }
    }
    grad_buf(root)[0] = T(1);
    for (int64_t i = static_cast<int64_t>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (!needed[static_cast<size_t>(i)] || !n.backward_fn || !n.requires_grad)
        continue;
      if (n.grad.empty()) continue;  // zero cotangent, nothing to propagate
      n.backward_fn(n);
    }
  }

  // Generic dispatcher mirroring the op list; used by the gradient suite to
  // enumerate ops uniformly. gather_scale takes (src, scales) as inputs and
  // interprets `rows`.
  Id apply(Op op, std::span<const Id> in, std::vector<int> rows = {}) {
    switch (op) {
      case Op::add: return add(in[0], in[1]);
      case Op::mul: return mul(in[0], in[1]);
      case Op::matmul: return matmul(in[0], in[1]);
      case Op::relu: return relu(in[0]);
      case Op::softplus: return softplus(in[0]);
      case Op::softmax_rows: return softmax_rows(in[0]);
      case Op::sum: return sum(in[0]);
      case Op::mean: return mean(in[0]);
      case Op::square: return square(in[0]);
      case Op::gather_scale: return gather_scale(in[0], std::move(rows), in[1]);
    }
    throw std::invalid_argument("apply: unknown op");
  }

  static T stable_softplus(T x) {
    // ln(1+e^x); asymptotes avoid overflow on either side.
    if (x > T(30)) return x;
    if (x < T(-30)) return std::exp(x);
    return std::log1p(std::exp(x));
  }

  static T stable_sigmoid(T x) {
    if (x >= T(0)) {
      T e = std::exp(-x);
      return T(1) / (T(1) + e);
    }
    T e = std::exp(x);
    return e / (T(1) + e);
  }

 private:
  struct Node {
    Tensor<T> value;               // owned value (interior nodes)
    Tensor<T>* external = nullptr; // leaf parameter, caller-owned
    std::vector<Id> parents;
    std::vector<T> grad;           // lazily allocated
    bool requires_grad = false;
    std::function<void(Node&)> backward_fn;
  };

  static void matmul_accum(const T* a, const T* b, T* out, int N, int K, int M) {
    for (int n = 0; n < N; ++n) {
      T* orow = out + static_cast<size_t>(n) * M;
      const T* arow = a + static_cast<size_t>(n) * K;
      for (int k = 0; k < K; ++k) {
        T av = arow[k];
        const T* brow = b + static_cast<size_t>(k) * M;
        for (int m = 0; m < M; ++m) orow[m] += av * brow[m];
      }
    }
  }

  // 0 = same shape, 1 = row-vector broadcast, 2 = scalar broadcast.
  static int broadcast_mode(const Tensor<T>& a, const Tensor<T>& b,
                            const char* op) {
    if (a.shape == b.shape) return 0;
    if (b.numel() == 1) return 2;
    if (a.shape.size() == 2 && b.numel() == a.shape[1]) return 1;
    throw shape_error(op, a, b);
  }

  static std::string shape_str(const Tensor<T>& t) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < t.shape.size(); ++i)
      os << (i ? "," : "") << t.shape[i];
    os << ")";
    return os.str();
  }

  static std::invalid_argument shape_error(const char* op, const Tensor<T>& a,
                                           const Tensor<T>& b) {
    return std::invalid_argument(std::string(op) + ": incompatible shapes " +
                                 shape_str(a) + " and " + shape_str(b));
  }

  template <typename Fn>
  Id record(Tensor<T> out, std::vector<Id> parents, Fn&& backward) {
    bool needs = false;
    for (Id p : parents) needs = needs || needs_grad(p);
    Node n;
    n.value = std::move(out);
    n.parents = std::move(parents);
    n.requires_grad = needs;
    if (needs) n.backward_fn = std::forward<Fn>(backward);
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

}  // namespace moefield::ad
