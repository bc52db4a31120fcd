// Copyright (c) 2026 moefield authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense voxel grids over the unit cube with trilinear interpolation. The
// lattice sits at cell corners: R nodes per axis spanning [0,1], so queries
// at lattice points return the stored values exactly. Out-of-bounds queries
// clamp to the cube; that is part of the contract, not an error.

#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "moefield/tensor.hpp"
#include "moefield/vecmath.hpp"

namespace moefield {

template <typename T>
struct VoxelGrid {
  std::array<int, 3> resolution{2, 2, 2};  // nodes per axis, >= 2
  int channels = 1;
  ad::Tensor<T> values;  // shape (Rx, Ry, Rz, C), row-major

  VoxelGrid() = default;
  VoxelGrid(std::array<int, 3> res, int c, T fill = T(0))
      : resolution(res), channels(c) {
    for (int r : resolution)
      if (r < 2) throw std::invalid_argument("VoxelGrid: resolution must be >= 2");
    if (c < 1) throw std::invalid_argument("VoxelGrid: channels must be >= 1");
    values = ad::Tensor<T>({res[0], res[1], res[2], c}, fill);
  }

  int64_t node_count() const {
    return int64_t(resolution[0]) * resolution[1] * resolution[2];
  }
  int64_t param_count() const { return node_count() * channels; }

  T& at(int i, int j, int k, int c) {
    return values.data[(((static_cast<size_t>(i) * resolution[1]) + j) *
                            resolution[2] +
                        k) *
                           channels +
                       c];
  }
  T at(int i, int j, int k, int c) const {
    return values.data[(((static_cast<size_t>(i) * resolution[1]) + j) *
                            resolution[2] +
                        k) *
                           channels +
                       c];
  }
};

// The 8-corner stencil for a query position: flat node indices (excluding
// the channel axis) and trilinear weights. Shared by the plain evaluator,
// the tape op forward, and its backward scatter.
template <typename T>
struct TrilinearStencil {
  std::array<int64_t, 8> corner;  // node index, multiply by C for data offset
  std::array<T, 8> weight;
};

template <typename T>
TrilinearStencil<T> trilinear_stencil(const std::array<int, 3>& res,
                                      const Vec3<T>& pos) {
  std::array<int, 3> i0;
  std::array<T, 3> f;
  for (int a = 0; a < 3; ++a) {
    T u = clamp01(pos[a]) * static_cast<T>(res[a] - 1);
    int i = static_cast<int>(u);
    if (i > res[a] - 2) i = res[a] - 2;
    i0[a] = i;
    f[a] = u - static_cast<T>(i);
  }
  TrilinearStencil<T> st;
  const int64_t sy = res[2];
  const int64_t sx = int64_t(res[1]) * res[2];
  int n = 0;
  for (int dx = 0; dx < 2; ++dx)
    for (int dy = 0; dy < 2; ++dy)
      for (int dz = 0; dz < 2; ++dz) {
        st.corner[n] = (i0[0] + dx) * sx + (i0[1] + dy) * sy + (i0[2] + dz);
        st.weight[n] = (dx ? f[0] : T(1) - f[0]) * (dy ? f[1] : T(1) - f[1]) *
                       (dz ? f[2] : T(1) - f[2]);
        ++n;
      }
  return st;
}

// Plain (non-tape) trilinear interpolation.
template <typename T>
void interpolate(const VoxelGrid<T>& grid, const Vec3<T>& pos, T* out) {
  auto st = trilinear_stencil<T>(grid.resolution, pos);
  const int C = grid.channels;
  for (int c = 0; c < C; ++c) out[c] = T(0);
  for (int n = 0; n < 8; ++n) {
    const T* v = grid.values.data.data() + st.corner[n] * C;
    T w = st.weight[n];
    for (int c = 0; c < C; ++c) out[c] += w * v[c];
  }
}

template <typename T>
std::vector<T> interpolate(const VoxelGrid<T>& grid, const Vec3<T>& pos) {
  std::vector<T> out(static_cast<size_t>(grid.channels));
  interpolate(grid, pos, out.data());
  return out;
}

// Tape op: interpolates a batch of positions against grid values living on
// the tape. Output is (P, C); differentiable w.r.t. the grid values only
// (positions are treated as constants).
template <typename T>
typename ad::Tape<T>::Id interpolate_rows(ad::Tape<T>& tape,
                                          typename ad::Tape<T>::Id grid_values,
                                          const std::array<int, 3>& res,
                                          const std::vector<Vec3<T>>& positions) {
  const ad::Tensor<T>& gv = tape.value(grid_values);
  if (gv.shape.size() != 4 || gv.shape[0] != res[0] || gv.shape[1] != res[1] ||
      gv.shape[2] != res[2])
    throw std::invalid_argument("interpolate_rows: grid shape mismatch");
  const int C = gv.shape[3];
  const int P = static_cast<int>(positions.size());
  std::vector<TrilinearStencil<T>> stencils(static_cast<size_t>(P));
  ad::Tensor<T> out({P, C});
  for (int p = 0; p < P; ++p) {
    stencils[static_cast<size_t>(p)] = trilinear_stencil<T>(res, positions[static_cast<size_t>(p)]);
    const auto& st = stencils[static_cast<size_t>(p)];
    T* o = out.data.data() + static_cast<size_t>(p) * C;
    for (int n = 0; n < 8; ++n) {
      const T* v = gv.data.data() + st.corner[n] * C;
      T w = st.weight[n];
      for (int c = 0; c < C; ++c) o[c] += w * v[c];
    }
  }
  return tape.custom(
      std::move(out), {grid_values},
      [grid_values, C, P, stencils = std::move(stencils)](
          ad::Tape<T>& t, const std::vector<T>& g) {
        if (!t.needs_grad(grid_values)) return;
        std::vector<T>& gg = t.grad_buf(grid_values);
        for (int p = 0; p < P; ++p) {
          const auto& st = stencils[static_cast<size_t>(p)];
          const T* gr = g.data() + static_cast<size_t>(p) * C;
          for (int n = 0; n < 8; ++n) {
            T w = st.weight[n];
            T* dst = gg.data() + st.corner[n] * C;
            for (int c = 0; c < C; ++c) dst[c] += w * gr[c];
          }
        }
      });
}

// Density activation: numerically stable softplus, always >= 0.
template <typename T>
T density_activation(T raw) {
  return ad::Tape<T>::stable_softplus(raw);
}

// ---- checkpoint blob format -------------------------------------------
//
// Magic "MFG1", then little-endian u32s: Rx, Ry, Rz, C, dtype code
// (0 = float32, 1 = float64), followed by row-major values. Round-trips are
// bit-exact.

namespace detail {

inline void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("grid blob: truncated header");
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
         (uint32_t(b[3]) << 24);
}

template <typename T>
constexpr uint32_t dtype_code() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "grid blob supports float32/float64 only");
  return std::is_same_v<T, float> ? 0u : 1u;
}

}  // namespace detail

template <typename T>
void write_grid_blob(std::ostream& os, const VoxelGrid<T>& grid) {
  os.write("MFG1", 4);
  detail::write_u32(os, static_cast<uint32_t>(grid.resolution[0]));
  detail::write_u32(os, static_cast<uint32_t>(grid.resolution[1]));
  detail::write_u32(os, static_cast<uint32_t>(grid.resolution[2]));
  detail::write_u32(os, static_cast<uint32_t>(grid.channels));
  detail::write_u32(os, detail::dtype_code<T>());
  os.write(reinterpret_cast<const char*>(grid.values.data.data()),
           static_cast<std::streamsize>(grid.values.data.size() * sizeof(T)));
}

template <typename T>
VoxelGrid<T> read_grid_blob(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "MFG1")
    throw std::runtime_error("grid blob: bad magic");
  std::array<int, 3> res;
  for (int a = 0; a < 3; ++a) res[a] = static_cast<int>(detail::read_u32(is));
  int channels = static_cast<int>(detail::read_u32(is));
  uint32_t dtype = detail::read_u32(is);
  if (dtype != detail::dtype_code<T>())
    throw std::runtime_error("grid blob: dtype code " + std::to_string(dtype) +
                             " does not match build scalar type");
  VoxelGrid<T> grid(res, channels);
  is.read(reinterpret_cast<char*>(grid.values.data.data()),
          static_cast<std::streamsize>(grid.values.data.size() * sizeof(T)));
  if (!is) throw std::runtime_error("grid blob: truncated data");
  return grid;
}

}  // namespace moefield
