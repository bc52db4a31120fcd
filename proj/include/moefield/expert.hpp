// Copyright (c) 2026 moefield authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense-grid radiance-field experts. Each expert is a self-contained model:
// a density grid, a feature grid, and a small color MLP over interpolated
// features concatenated with a Fourier direction encoding. A bank holds M
// experts whose total parameter counts roughly double level to level.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "moefield/grid.hpp"
#include "moefield/mlp.hpp"
#include "moefield/rng.hpp"
#include "moefield/tensor.hpp"
#include "moefield/vecmath.hpp"

namespace moefield {

inline constexpr int kFeatureChannels = 6;
inline constexpr int kColorHidden = 32;
inline constexpr int kDirEncodingDim = 12;  // sin/cos of d*2^j, j in {0,1}, per axis
inline constexpr double kUnitDirTolerance = 1e-6;

// Fourier features of a unit direction: per axis sin(d), cos(d), sin(2d),
// cos(2d). Directions are inputs, never differentiated.
template <typename T>
std::array<T, kDirEncodingDim> encode_direction(const Vec3<T>& d) {
  std::array<T, kDirEncodingDim> e;
  int n = 0;
  for (int a = 0; a < 3; ++a) {
    e[n++] = std::sin(d[a]);
    e[n++] = std::cos(d[a]);
    e[n++] = std::sin(T(2) * d[a]);
    e[n++] = std::cos(T(2) * d[a]);
  }
  return e;
}

template <typename T>
void check_unit_direction(const Vec3<T>& d) {
  T n = norm(d);
  if (std::abs(double(n) - 1.0) > kUnitDirTolerance)
    throw std::invalid_argument("direction must be unit length, |d| = " +
                                std::to_string(double(n)));
}

template <typename T>
struct Expert {
  int id = 0;
  VoxelGrid<T> density;   // C = 1, raw pre-softplus values
  VoxelGrid<T> features;  // C = kFeatureChannels
  Mlp2<T> color_mlp;      // (F + 12) -> 32 -> 3, relu hidden, sigmoid output

  Expert() = default;
  Expert(int expert_id, std::array<int, 3> res)
      : id(expert_id),
        density(res, 1),
        features(res, kFeatureChannels),
        color_mlp(kFeatureChannels + kDirEncodingDim, kColorHidden, 3) {
    density.values.requires_grad = true;
    features.values.requires_grad = true;
  }

  int64_t param_count() const {
    return density.param_count() + features.param_count() +
           color_mlp.param_count();
  }

  // Transparent start: raw densities at -1, features and MLP uniform in
  // +-1/sqrt(fan_in).
  void init(Rng& rng) {
    std::fill(density.values.data.begin(), density.values.data.end(), T(-1));
    T bound = T(1) / std::sqrt(static_cast<T>(kFeatureChannels));
    for (T& v : features.values.data)
      v = static_cast<T>(rng.uniform(-double(bound), double(bound)));
    color_mlp.init(rng);
  }

  // Single-point query, no tape. Pure in (parameters, x, d).
  void query(const Vec3<T>& x, const Vec3<T>& d, T* sigma, Vec3<T>* color) const {
    check_unit_direction(d);
    T raw;
    interpolate(density, x, &raw);
    *sigma = density_activation(raw);
    std::vector<T> in(static_cast<size_t>(kFeatureChannels + kDirEncodingDim));
    interpolate(features, x, in.data());
    auto enc = encode_direction(d);
    for (int i = 0; i < kDirEncodingDim; ++i)
      in[static_cast<size_t>(kFeatureChannels + i)] = enc[i];
    auto logits = color_mlp.forward_row(in);
    for (int c = 0; c < 3; ++c)
      (*color)[c] = ad::Tape<T>::stable_sigmoid(logits[static_cast<size_t>(c)]);
  }

  struct TapeOut {
    typename ad::Tape<T>::Id sigma;  // (P, 1)
    typename ad::Tape<T>::Id color;  // (P, 3)
  };

  // Batched differentiable query. `encodings` holds one kDirEncodingDim row
  // per position (already expanded from per-ray directions).
  TapeOut query_rows(Binding<T>& bind, const std::vector<Vec3<T>>& positions,
                     const ad::Tensor<T>& encodings) const {
    auto& tape = bind.tape();
    const int P = static_cast<int>(positions.size());
    if (encodings.rows() != P || encodings.cols() != kDirEncodingDim)
      throw std::invalid_argument("query_rows: encoding shape mismatch");
    auto* self = const_cast<Expert*>(this);
    auto raw = interpolate_rows(tape, bind.leaf(self->density.values),
                                density.resolution, positions);
    auto sigma = tape.softplus(raw);
    auto feat = interpolate_rows(tape, bind.leaf(self->features.values),
                                 features.resolution, positions);
    auto in = tape.concat_cols(feat, tape.constant(encodings));
    auto color = tape.sigmoid(self->color_mlp.forward(bind, in));
    return {sigma, color};
  }

  void collect_params(std::vector<ParamRef<T>>& out) {
    std::string prefix = "expert" + std::to_string(id);
    out.push_back({&density.values, prefix + ".density", true});
    out.push_back({&features.values, prefix + ".features", true});
    color_mlp.collect_params(prefix + ".color_mlp", out);
  }
};

template <typename T>
struct ExpertBank {
  std::vector<Expert<T>> experts;

  int size() const { return static_cast<int>(experts.size()); }
  Expert<T>& operator[](int i) { return experts[static_cast<size_t>(i)]; }
  const Expert<T>& operator[](int i) const {
    return experts[static_cast<size_t>(i)];
  }

  void collect_params(std::vector<ParamRef<T>>& out) {
    for (auto& e : experts) e.collect_params(out);
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& e : experts) n += e.param_count();
    return n;
  }
};

namespace detail {

// Per-level grid resolutions. Starts from round(base * 2^(i/3)) per axis and
// bumps single axes until the total parameter count (grids + fixed MLP) of
// level i is within [1.8, 2.2]x of level i-1. The bump loop only matters for
// small bases where the fixed-size MLP is a large fraction of the total.
inline std::vector<std::array<int, 3>> bank_resolutions(int base, int M,
                                                        int64_t mlp_params,
                                                        int channels_total) {
  std::vector<std::array<int, 3>> out;
  auto total = [&](const std::array<int, 3>& r) {
    return int64_t(r[0]) * r[1] * r[2] * channels_total + mlp_params;
  };
  for (int i = 0; i < M; ++i) {
    int r = static_cast<int>(std::llround(double(base) * std::pow(2.0, i / 3.0)));
    std::array<int, 3> res{r, r, r};
    if (i > 0) {
      int64_t prev = total(out.back());
      int axis = 0;
      while (double(total(res)) < 1.8 * double(prev)) {
        res[axis % 3] += 1;
        ++axis;
      }
      if (double(total(res)) > 2.2 * double(prev))
        throw std::runtime_error("build_bank: cannot satisfy doubling band");
    }
    out.push_back(res);
  }
  return out;
}

}  // namespace detail

// Builds M experts with roughly doubling parameter counts, deterministically
// initialized from the seed.
template <typename T>
ExpertBank<T> build_bank(int base_resolution, int M, uint64_t seed) {
  if (M < 3 || M > 5)
    throw std::invalid_argument("build_bank: M must be in {3,4,5}, got " +
                                std::to_string(M));
  if (base_resolution < 4)
    throw std::invalid_argument("build_bank: base_resolution must be >= 4");
  Mlp2<T> probe(kFeatureChannels + kDirEncodingDim, kColorHidden, 3);
  auto resolutions = detail::bank_resolutions(
      base_resolution, M, probe.param_count(), 1 + kFeatureChannels);
  ExpertBank<T> bank;
  Rng rng(seed);
  for (int i = 0; i < M; ++i) {
    bank.experts.emplace_back(i, resolutions[static_cast<size_t>(i)]);
    bank.experts.back().init(rng);
  }
  return bank;
}

}  // namespace moefield
