// Copyright (c) 2026 moefield authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>

namespace moefield {

template <typename T>
using Vec3 = std::array<T, 3>;

// Row-major 3x3 matrix.
template <typename T>
using Mat3 = std::array<T, 9>;

template <typename T>
inline Vec3<T> add(const Vec3<T>& a, const Vec3<T>& b) {
  return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}

template <typename T>
inline Vec3<T> sub(const Vec3<T>& a, const Vec3<T>& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}

template <typename T>
inline Vec3<T> scale(const Vec3<T>& a, T s) {
  return {a[0] * s, a[1] * s, a[2] * s};
}

template <typename T>
inline T dot(const Vec3<T>& a, const Vec3<T>& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

template <typename T>
inline Vec3<T> cross(const Vec3<T>& a, const Vec3<T>& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
          a[0] * b[1] - a[1] * b[0]};
}

template <typename T>
inline T norm(const Vec3<T>& a) {
  return std::sqrt(dot(a, a));
}

template <typename T>
inline Vec3<T> normalized(const Vec3<T>& a) {
  T n = norm(a);
  return {a[0] / n, a[1] / n, a[2] / n};
}

template <typename T>
inline Vec3<T> matvec(const Mat3<T>& m, const Vec3<T>& v) {
  return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
          m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
          m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

template <typename T>
inline T clamp01(T v) {
  return v < T(0) ? T(0) : (v > T(1) ? T(1) : v);
}

}  // namespace moefield
