// Copyright (c) 2026 moefield authors
// SPDX-License-Identifier: Apache-2.0
//
// The trainable probability field: a low-resolution feature grid and a
// shallow MLP, softmaxed over experts. The MLP output layer starts at zero
// so the untrained gate is exactly uniform and the initial mixture is an
// unbiased ensemble.

#pragma once

#include <vector>

#include "moefield/expert.hpp"
#include "moefield/grid.hpp"
#include "moefield/mlp.hpp"

namespace moefield {

inline constexpr int kGateChannels = 8;
inline constexpr int kGateHidden = 64;
inline constexpr int kDefaultGateResolution = 16;

template <typename T>
struct Gate {
  VoxelGrid<T> vg;  // feature grid V_G
  Mlp2<T> mlp;      // C -> 64 -> M, relu hidden, softmax applied after

  Gate() = default;
  Gate(int resolution, int experts, int channels = kGateChannels)
      : vg({resolution, resolution, resolution}, channels),
        mlp(channels, kGateHidden, experts) {
    vg.values.requires_grad = true;
  }

  int expert_count() const { return mlp.out_dim(); }
  int64_t param_count() const { return vg.param_count() + mlp.param_count(); }

  void init(Rng& rng) {
    T bound = T(1) / std::sqrt(static_cast<T>(vg.channels));
    for (T& v : vg.values.data)
      v = static_cast<T>(rng.uniform(-double(bound), double(bound)));
    mlp.init(rng, /*zero_output=*/true);
  }

  // Batched probabilities, (P, M) rows summing to 1. Differentiable w.r.t.
  // the grid and MLP parameters.
  typename ad::Tape<T>::Id probs_rows(Binding<T>& bind,
                                      const std::vector<Vec3<T>>& positions) {
    auto& tape = bind.tape();
    auto feat = interpolate_rows(tape, bind.leaf(vg.values), vg.resolution,
                                 positions);
    return tape.softmax_rows(mlp.forward(bind, feat));
  }

  // Single-point convenience, no tape.
  std::vector<T> probs(const Vec3<T>& x) const {
    std::vector<T> feat = interpolate(vg, x);
    std::vector<T> logits = mlp.forward_row(feat);
    T mx = logits[0];
    for (T v : logits) mx = std::max(mx, v);
    T s = 0;
    for (T& v : logits) {
      v = std::exp(v - mx);
      s += v;
    }
    for (T& v : logits) v /= s;
    return logits;
  }

  void collect_params(std::vector<ParamRef<T>>& out) {
    out.push_back({&vg.values, "gate.vg", true});
    mlp.collect_params("gate.mlp", out);
  }
};

// Gate sized for a bank: output width equals the expert count.
template <typename T>
Gate<T> gate_for(const ExpertBank<T>& bank,
                 int gate_resolution = kDefaultGateResolution,
                 uint64_t seed = 1) {
  if (gate_resolution < 4)
    throw std::invalid_argument("gate_for: gate_resolution must be >= 4");
  Gate<T> g(gate_resolution, bank.size());
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  g.init(rng);
  return g;
}

}  // namespace moefield
