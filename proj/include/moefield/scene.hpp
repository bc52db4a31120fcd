// Copyright (c) 2026 moefield authors
// SPDX-License-Identifier: Apache-2.0
//
// Analytic ground-truth scenes: unions of soft-edged primitives with exact
// density/color queries, and a reference renderer that drives the same
// compositing code as the model pipeline. Primitive densities fade smoothly
// to zero over a thin band inside the nominal surface so that the fine
// Riemann sampling in render_truth converges (doubling the sample count
// moves pixels by far less than 1e-3).

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "moefield/image.hpp"
#include "moefield/parallel.hpp"
#include "moefield/renderer.hpp"
#include "moefield/rng.hpp"
#include "moefield/vecmath.hpp"

namespace moefield {

enum class PrimitiveKind { sphere, box };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::sphere;
  Vec3<double> center{0.5, 0.5, 0.5};
  Vec3<double> size{0.25, 0.25, 0.25};  // radius (spheres, size[0]) or half-extents
  double sigma0 = 5.0;
  Vec3<double> albedo{0.8, 0.8, 0.8};
  double tint = 0.0;          // view-dependent albedo coefficient, in [0,1)
  double softness = 0.05;     // density falloff band, absolute units
  double checker_freq = 0.0;  // 0 = flat albedo, else smooth 3D checker
};

struct Scene {
  std::string name;
  std::vector<Primitive> primitives;
};

namespace detail {

// 1 deep inside, 0 at the nominal surface, smoothstep across the band.
inline double soft_indicator(double signed_dist, double band) {
  if (signed_dist >= 0.0) return 0.0;
  if (signed_dist <= -band) return 1.0;
  double t = -signed_dist / band;
  return t * t * (3.0 - 2.0 * t);
}

inline double primitive_signed_dist(const Primitive& p, const Vec3<double>& x) {
  if (p.kind == PrimitiveKind::sphere) {
    return norm(sub(x, p.center)) - p.size[0];
  }
  double sd = -std::numeric_limits<double>::max();
  for (int a = 0; a < 3; ++a)
    sd = std::max(sd, std::abs(x[a] - p.center[a]) - p.size[a]);
  return sd;
}

inline Vec3<double> primitive_albedo(const Primitive& p, const Vec3<double>& x,
                                     const Vec3<double>& d) {
  double factor = 1.0;
  if (p.checker_freq > 0.0) {
    double w = 2.0 * std::numbers::pi * p.checker_freq;
    factor *= 0.5 + 0.45 * std::sin(w * (x[0] - p.center[0])) *
                        std::sin(w * (x[1] - p.center[1])) *
                        std::sin(w * (x[2] - p.center[2]));
  }
  if (p.tint > 0.0) factor *= (1.0 + p.tint * d[2]) / (1.0 + p.tint);
  return {p.albedo[0] * factor, p.albedo[1] * factor, p.albedo[2] * factor};
}

}  // namespace detail

// Exact field query: density is the sum over containing primitives, color
// the density-weighted mean of their (possibly view-tinted) albedos.
inline void scene_query(const Scene& scene, const Vec3<double>& x,
                        const Vec3<double>& d, double* sigma,
                        Vec3<double>* color) {
  double s = 0.0;
  Vec3<double> c{0, 0, 0};
  for (const auto& p : scene.primitives) {
    double ind = detail::soft_indicator(detail::primitive_signed_dist(p, x),
                                        p.softness);
    if (ind <= 0.0) continue;
    double ps = p.sigma0 * ind;
    Vec3<double> alb = detail::primitive_albedo(p, x, d);
    s += ps;
    for (int ch = 0; ch < 3; ++ch) c[ch] += ps * alb[ch];
  }
  *sigma = s;
  if (s > 0.0)
    for (int ch = 0; ch < 3; ++ch) c[ch] /= s;
  else
    c = {0, 0, 0};
  *color = c;
}

// Reference renderer: fine midpoint sampling of the analytic field fed
// through the same composite() as the model path.
inline Image render_truth(const Scene& scene, const Camera<double>& cam,
                          int fine_n = 512, int threads = 1) {
  if (fine_n < 512)
    throw std::invalid_argument("render_truth: fine_n must be >= 512");
  Image img(cam.width, cam.height);
  parallel_for(cam.height, threads, [&](int64_t y0, int64_t y1) {
    std::vector<RaySamplePoint<double>> samples;
    for (int64_t y = y0; y < y1; ++y) {
      for (int x = 0; x < cam.width; ++x) {
        Ray<double> ray = cam.ray_for_pixel(x, static_cast<int>(y));
        float* px = img.pixel(x, static_cast<int>(y));
        if (!ray.hit) {
          px[0] = px[1] = px[2] = 0.f;
          continue;
        }
        double span = ray.t_far - ray.t_near;
        double step = span / fine_n;
        samples.clear();
        samples.reserve(static_cast<size_t>(fine_n));
        for (int i = 0; i < fine_n; ++i) {
          double t = ray.t_near + (i + 0.5) * step;
          Vec3<double> pos = add(ray.origin, scale(ray.dir, t));
          double sigma;
          Vec3<double> color;
          scene_query(scene, pos, ray.dir, &sigma, &color);
          samples.push_back({sigma, color, step});
        }
        Vec3<double> rgb = composite(samples);
        for (int c = 0; c < 3; ++c) px[c] = static_cast<float>(rgb[c]);
      }
    }
  });
  return img;
}

// ---- built-in scenes ----------------------------------------------------

inline Scene scene_one_sphere() {
  Scene s;
  s.name = "one-sphere";
  Primitive p;
  p.kind = PrimitiveKind::sphere;
  p.center = {0.5, 0.5, 0.5};
  p.size = {0.28, 0.28, 0.28};
  p.sigma0 = 8.0;
  p.albedo = {0.85, 0.6, 0.45};
  p.tint = 0.2;
  p.softness = 0.06;
  s.primitives.push_back(p);
  return s;
}

// One large smooth sphere (low frequency) plus two small checker-albedo
// boxes (high frequency): low-resolution experts suffice for the sphere,
// the boxes benefit from finer grids.
inline Scene scene_three_spheres_multifreq() {
  Scene s;
  s.name = "three-spheres-multifreq";
  Primitive big;
  big.kind = PrimitiveKind::sphere;
  big.center = {0.44, 0.52, 0.44};
  big.size = {0.24, 0.24, 0.24};
  big.sigma0 = 7.0;
  big.albedo = {0.5, 0.62, 0.88};
  big.tint = 0.15;
  big.softness = 0.06;
  s.primitives.push_back(big);

  Primitive box1;
  box1.kind = PrimitiveKind::box;
  box1.center = {0.78, 0.32, 0.32};
  box1.size = {0.1, 0.1, 0.1};
  box1.sigma0 = 10.0;
  box1.albedo = {0.92, 0.8, 0.32};
  box1.softness = 0.04;
  box1.checker_freq = 10.0;
  s.primitives.push_back(box1);

  Primitive box2;
  box2.kind = PrimitiveKind::box;
  box2.center = {0.26, 0.76, 0.3};
  box2.size = {0.09, 0.09, 0.12};
  box2.sigma0 = 10.0;
  box2.albedo = {0.92, 0.38, 0.32};
  box2.softness = 0.04;
  box2.checker_freq = 14.0;
  s.primitives.push_back(box2);
  return s;
}

inline Scene builtin_scene(const std::string& name) {
  if (name == "one-sphere") return scene_one_sphere();
  if (name == "three-spheres-multifreq") return scene_three_spheres_multifreq();
  throw std::invalid_argument("unknown scene '" + name +
                              "'; available: one-sphere, three-spheres-multifreq");
}

// ---- datasets -----------------------------------------------------------

struct DatasetView {
  Camera<double> camera;
  Image image;
  bool is_test = false;
};

struct Dataset {
  std::string scene_name;
  std::vector<DatasetView> views;

  std::vector<int> split(bool test) const {
    std::vector<int> idx;
    for (size_t i = 0; i < views.size(); ++i)
      if (views[i].is_test == test) idx.push_back(static_cast<int>(i));
    return idx;
  }
};

inline constexpr double kCameraDistance = 1.6;
inline constexpr double kSceneCenter = 0.5;

inline Camera<double> hemisphere_camera(double z_frac, double azimuth, int w,
                                        int h) {
  Vec3<double> center{kSceneCenter, kSceneCenter, kSceneCenter};
  double z = z_frac;
  double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  Vec3<double> dir{r * std::cos(azimuth), r * std::sin(azimuth), z};
  Vec3<double> origin = add(center, scale(dir, kCameraDistance));
  double focal = 0.5 * w / std::tan(31.0 * std::numbers::pi / 180.0);
  return look_at_camera(origin, center, focal, w, h);
}

// n_train + n_test poses uniform on the upper hemisphere, all looking at the
// scene center, images rendered by render_truth.
inline Dataset make_dataset(const Scene& scene, int n_train, int n_test, int w,
                            int h, uint64_t seed, int fine_n = 512,
                            int threads = 1) {
  if (n_train < 1 || n_test < 1)
    throw std::invalid_argument("make_dataset: view counts must be >= 1");
  Dataset ds;
  ds.scene_name = scene.name;
  Rng rng(seed);
  const int total = n_train + n_test;
  for (int i = 0; i < total; ++i) {
    double z = rng.uniform();  // uniform-in-z is uniform on the hemisphere
    double az = rng.uniform(0.0, 2.0 * std::numbers::pi);
    DatasetView v;
    v.camera = hemisphere_camera(z, az, w, h);
    v.is_test = i >= n_train;
    v.image = render_truth(scene, v.camera, fine_n, threads);
    ds.views.push_back(std::move(v));
  }
  return ds;
}

}  // namespace moefield
