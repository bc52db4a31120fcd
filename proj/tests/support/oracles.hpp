// Copyright (c) 2026 moefield authors
// SPDX-License-Identifier: Apache-2.0
//
// Test-only reference implementations, kept independent of the library code
// paths they check.

#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "moefield/rng.hpp"
#include "moefield/tensor.hpp"
#include "moefield/vecmath.hpp"

namespace moefield::testing {

// Brute-force compositing straight from the recursive transmittance
// definition: T_1 = 1, T_i = T_{i-1} * (1 - alpha_{i-1}).
inline Vec3<double> composite_recursive_oracle(
    const std::vector<double>& sigma, const std::vector<Vec3<double>>& color,
    const std::vector<double>& delta) {
  Vec3<double> out{0, 0, 0};
  for (size_t i = 0; i < sigma.size(); ++i) {
    double alpha_i = 1.0 - std::exp(-sigma[i] * delta[i]);
    double trans = 1.0;
    for (size_t j = 0; j < i; ++j)
      trans *= 1.0 - (1.0 - std::exp(-sigma[j] * delta[j]));
    for (int c = 0; c < 3; ++c) out[c] += trans * alpha_i * color[i][c];
  }
  return out;
}

// Direct 8-corner weighted sum for trilinear interpolation on a corner
// lattice over [0,1]^3, written from the weight formula.
inline std::vector<double> trilinear_oracle(const std::array<int, 3>& res,
                                            int channels,
                                            const std::vector<double>& values,
                                            const Vec3<double>& pos) {
  double u[3];
  int i0[3];
  for (int a = 0; a < 3; ++a) {
    double x = pos[a] < 0 ? 0 : (pos[a] > 1 ? 1 : pos[a]);
    double scaled = x * (res[a] - 1);
    int i = static_cast<int>(std::floor(scaled));
    if (i > res[a] - 2) i = res[a] - 2;
    i0[a] = i;
    u[a] = scaled - i;
  }
  std::vector<double> out(static_cast<size_t>(channels), 0.0);
  for (int dx = 0; dx < 2; ++dx)
    for (int dy = 0; dy < 2; ++dy)
      for (int dz = 0; dz < 2; ++dz) {
        double w = (dx ? u[0] : 1 - u[0]) * (dy ? u[1] : 1 - u[1]) *
                   (dz ? u[2] : 1 - u[2]);
        size_t base = ((static_cast<size_t>(i0[0] + dx) * res[1] + (i0[1] + dy)) *
                           res[2] +
                       (i0[2] + dz)) *
                      channels;
        for (int c = 0; c < channels; ++c) out[static_cast<size_t>(c)] += w * values[base + c];
      }
  return out;
}

// Central finite differences against the tape gradient for every element of
// every parameter. `build` constructs a fresh graph on the given tape and
// returns {scalar root id, leaf id per parameter}; it must be a pure
// function of the parameter values.
struct BuiltGraph {
  ad::Tape<double>::Id root;
  std::vector<ad::Tape<double>::Id> leaves;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  int checked = 0;
};

template <typename Build>
GradCheckResult finite_difference_check(
    std::vector<ad::Tensor<double>*> params, Build build, double h = 1e-4) {
  GradCheckResult res;
  ad::Tape<double> tape;
  BuiltGraph g = build(tape);
  tape.backward(g.root);
  std::vector<ad::Tensor<double>> analytic;
  for (size_t i = 0; i < params.size(); ++i)
    analytic.push_back(tape.grad(g.leaves.at(i)));
  auto eval = [&]() {
    ad::Tape<double> t2;
    return t2.value(build(t2).root).data[0];
  };
  for (size_t pi = 0; pi < params.size(); ++pi) {
    ad::Tensor<double>& p = *params[pi];
    for (size_t e = 0; e < p.data.size(); ++e) {
      double keep = p.data[e];
      p.data[e] = keep + h;
      double up = eval();
      p.data[e] = keep - h;
      double dn = eval();
      p.data[e] = keep;
      double numeric = (up - dn) / (2 * h);
      double a = analytic[pi].data[e];
      double rel = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
      res.max_rel_err = std::max(res.max_rel_err, rel);
      ++res.checked;
    }
  }
  return res;
}

inline ad::Tensor<double> random_tensor(std::vector<int> shape, Rng& rng,
                                        double lo = -1.0, double hi = 1.0,
                                        bool requires_grad = true) {
  ad::Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  t.requires_grad = requires_grad;
  return t;
}

}  // namespace moefield::testing
