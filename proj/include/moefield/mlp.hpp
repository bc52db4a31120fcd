// Copyright (c) 2026 moefield authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "moefield/rng.hpp"
#include "moefield/tensor.hpp"

namespace moefield {

// Binds parameter tensors to leaf ids on a tape, memoized per tensor so a
// parameter queried from several places shares one gradient buffer.
template <typename T>
class Binding {
 public:
  explicit Binding(ad::Tape<T>& tape) : tape_(&tape) {}

  typename ad::Tape<T>::Id leaf(ad::Tensor<T>& t) {
    for (auto& [ptr, id] : entries_)
      if (ptr == &t) return id;
    auto id = tape_->leaf(t);
    entries_.emplace_back(&t, id);
    return id;
  }

  bool contains(const ad::Tensor<T>& t) const {
    for (auto& [ptr, id] : entries_)
      if (ptr == &t) return true;
    return false;
  }

  typename ad::Tape<T>::Id id_of(const ad::Tensor<T>& t) const {
    for (auto& [ptr, id] : entries_)
      if (ptr == &t) return id;
    throw std::invalid_argument("Binding: tensor not bound");
  }

  ad::Tape<T>& tape() { return *tape_; }

 private:
  ad::Tape<T>* tape_;
  std::vector<std::pair<ad::Tensor<T>*, typename ad::Tape<T>::Id>> entries_;
};

// Named reference to a parameter tensor; "grid" vs "mlp" selects the
// optimizer learning-rate group.
template <typename T>
struct ParamRef {
  ad::Tensor<T>* tensor;
  std::string name;
  bool is_grid;
};

// Two linear layers with a ReLU between them. Output activation is applied
// by the caller (softmax for the gate, sigmoid for expert color heads).
template <typename T>
struct Mlp2 {
  ad::Tensor<T> w1, b1, w2, b2;  // w: (in, out) row-major

  Mlp2() = default;
  Mlp2(int in, int hidden, int out) {
    w1 = ad::Tensor<T>({in, hidden});
    b1 = ad::Tensor<T>({hidden});
    w2 = ad::Tensor<T>({hidden, out});
    b2 = ad::Tensor<T>({out});
    for (auto* t : {&w1, &b1, &w2, &b2}) t->requires_grad = true;
  }

  int in_dim() const { return w1.shape.empty() ? 0 : w1.shape[0]; }
  int out_dim() const { return w2.shape.empty() ? 0 : w2.shape[1]; }
  int64_t param_count() const {
    return w1.numel() + b1.numel() + w2.numel() + b2.numel();
  }

  // Uniform init in +-1/sqrt(fan_in). zero_output leaves the second layer
  // at zero so the initial output is exactly zero for every input.
  void init(Rng& rng, bool zero_output = false) {
    uniform_fill(w1, rng, T(1) / std::sqrt(static_cast<T>(w1.shape[0])));
    std::fill(b1.data.begin(), b1.data.end(), T(0));
    if (zero_output) {
      std::fill(w2.data.begin(), w2.data.end(), T(0));
      std::fill(b2.data.begin(), b2.data.end(), T(0));
    } else {
      uniform_fill(w2, rng, T(1) / std::sqrt(static_cast<T>(w2.shape[0])));
      std::fill(b2.data.begin(), b2.data.end(), T(0));
    }
  }

  // (P, in) -> (P, out) pre-activation logits.
  typename ad::Tape<T>::Id forward(Binding<T>& bind,
                                   typename ad::Tape<T>::Id input) {
    auto& tape = bind.tape();
    auto h = tape.relu(tape.add(tape.matmul(input, bind.leaf(w1)), bind.leaf(b1)));
    return tape.add(tape.matmul(h, bind.leaf(w2)), bind.leaf(b2));
  }

  // Plain forward for a single row, no tape.
  std::vector<T> forward_row(const std::vector<T>& x) const {
    const int in = w1.shape[0], hid = w1.shape[1], out = w2.shape[1];
    std::vector<T> h(static_cast<size_t>(hid));
    for (int j = 0; j < hid; ++j) {
      T acc = b1.data[static_cast<size_t>(j)];
      for (int i = 0; i < in; ++i)
        acc += x[static_cast<size_t>(i)] * w1.data[static_cast<size_t>(i) * hid + j];
      h[static_cast<size_t>(j)] = acc > T(0) ? acc : T(0);
    }
    std::vector<T> y(static_cast<size_t>(out));
    for (int j = 0; j < out; ++j) {
      T acc = b2.data[static_cast<size_t>(j)];
      for (int i = 0; i < hid; ++i)
        acc += h[static_cast<size_t>(i)] * w2.data[static_cast<size_t>(i) * out + j];
      y[static_cast<size_t>(j)] = acc;
    }
    return y;
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    out.push_back({&w1, prefix + ".w1", false});
    out.push_back({&b1, prefix + ".b1", false});
    out.push_back({&w2, prefix + ".w2", false});
    out.push_back({&b2, prefix + ".b2", false});
  }

 private:
  static void uniform_fill(ad::Tensor<T>& t, Rng& rng, T bound) {
    for (T& v : t.data)
      v = static_cast<T>(rng.uniform(-double(bound), double(bound)));
  }
};

}  // namespace moefield
