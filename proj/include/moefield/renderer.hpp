// Copyright (c) 2026 moefield authors
// SPDX-License-Identifier: Apache-2.0
//
// Camera rays, stratified sampling, and volume rendering. Compositing uses
// alpha_i = 1 - exp(-sigma_i * delta_i), T_i = prod_{j<i} (1 - alpha_j),
// pixel = sum_i T_i * alpha_i * c_i, with black background past t_far.
// Filtered-out samples keep their slot with sigma = 0 so segment lengths
// are unchanged.

#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <type_traits>
#include <stdexcept>
#include <vector>

#include "moefield/image.hpp"
#include "moefield/moe.hpp"
#include "moefield/parallel.hpp"
#include "moefield/rng.hpp"
#include "moefield/tensor.hpp"
#include "moefield/vecmath.hpp"

namespace moefield {

template <typename T>
struct Ray {
  Vec3<T> origin;
  Vec3<T> dir;  // unit
  T t_near = 0;
  T t_far = 0;
  bool hit = false;  // intersects the unit cube
};

// Slab intersection with [0,1]^3; t_near clamped to 0 for origins outside.
template <typename T>
void intersect_unit_cube(Ray<T>& ray) {
  T t0 = 0, t1 = std::numeric_limits<T>::max();
  for (int a = 0; a < 3; ++a) {
    T o = ray.origin[a], d = ray.dir[a];
    if (std::abs(d) < T(1e-12)) {
      if (o < T(0) || o > T(1)) {
        ray.hit = false;
        return;
      }
      continue;
    }
    T ta = (T(0) - o) / d;
    T tb = (T(1) - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  ray.hit = t0 < t1;
  ray.t_near = t0;
  ray.t_far = t1;
}

template <typename T>
struct Camera {
  Mat3<T> rot{1, 0, 0, 0, 1, 0, 0, 0, 1};  // camera-to-world, columns (right, down, forward)
  Vec3<T> origin{0, 0, 0};
  T focal = 1;      // pixels
  T cx = 0, cy = 0; // principal point
  int width = 0, height = 0;

  Ray<T> ray_for_pixel(int ix, int iy) const {
    T u = (static_cast<T>(ix) + T(0.5) - cx) / focal;
    T v = (static_cast<T>(iy) + T(0.5) - cy) / focal;
    Vec3<T> d = normalized(matvec(rot, Vec3<T>{u, v, T(1)}));
    Ray<T> r;
    r.origin = origin;
    r.dir = d;
    intersect_unit_cube(r);
    return r;
  }
};

template <typename T, typename U>
Camera<T> camera_cast(const Camera<U>& src) {
  Camera<T> cam;
  for (int i = 0; i < 9; ++i) cam.rot[static_cast<size_t>(i)] = static_cast<T>(src.rot[static_cast<size_t>(i)]);
  for (int i = 0; i < 3; ++i) cam.origin[static_cast<size_t>(i)] = static_cast<T>(src.origin[static_cast<size_t>(i)]);
  cam.focal = static_cast<T>(src.focal);
  cam.cx = static_cast<T>(src.cx);
  cam.cy = static_cast<T>(src.cy);
  cam.width = src.width;
  cam.height = src.height;
  return cam;
}

template <typename T>
Camera<T> look_at_camera(const Vec3<T>& origin, const Vec3<T>& target,
                         T focal, int width, int height) {
  Vec3<T> fwd = normalized(sub(target, origin));
  Vec3<T> up{0, 0, 1};
  if (std::abs(dot(fwd, up)) > T(0.999)) up = {0, 1, 0};
  Vec3<T> right = normalized(cross(fwd, up));
  Vec3<T> down = cross(fwd, right);
  Camera<T> cam;
  cam.rot = {right[0], down[0], fwd[0], right[1], down[1], fwd[1],
             right[2], down[2], fwd[2]};
  cam.origin = origin;
  cam.focal = focal;
  cam.cx = static_cast<T>(width) / 2;
  cam.cy = static_cast<T>(height) / 2;
  cam.width = width;
  cam.height = height;
  return cam;
}

template <typename T>
struct SampledRay {
  std::vector<T> ts;      // increasing
  std::vector<T> deltas;  // > 0, last capped at span/N
};

// N sample positions in [t_near, t_far], uniform left-edge or stratified
// (one jittered sample per equal bin). delta_p = t_{p+1} - t_p; the last
// delta is the remaining span capped at span/N.
template <typename T>
SampledRay<T> sample_ray(const Ray<T>& ray, int n, bool stratified, Rng* rng) {
  if (n < 2) throw std::invalid_argument("sample_ray: N must be >= 2");
  if (stratified && !rng)
    throw std::invalid_argument("sample_ray: stratified sampling needs an rng");
  SampledRay<T> s;
  s.ts.resize(static_cast<size_t>(n));
  s.deltas.resize(static_cast<size_t>(n));
  const T span = ray.t_far - ray.t_near;
  const T step = span / static_cast<T>(n);
  for (int p = 0; p < n; ++p) {
    T jitter = stratified ? static_cast<T>(rng->uniform()) : T(0);
    s.ts[static_cast<size_t>(p)] =
        ray.t_near + (static_cast<T>(p) + jitter) * step;
  }
  for (int p = 0; p + 1 < n; ++p)
    s.deltas[static_cast<size_t>(p)] = s.ts[static_cast<size_t>(p + 1)] - s.ts[static_cast<size_t>(p)];
  T last = ray.t_far - s.ts[static_cast<size_t>(n - 1)];
  s.deltas[static_cast<size_t>(n - 1)] = std::min(std::max(last, T(0)), step);
  return s;
}

template <typename T>
struct RaySamplePoint {
  T sigma;
  Vec3<T> color;
  T delta;
};

namespace detail {

// Shared compositing core. alpha/trans caches may be null.
template <typename T>
void composite_core(const T* sigma, const T* color, const T* delta, int n,
                    T* out_rgb, T* alpha_cache, T* trans_cache) {
  T trans = T(1);
  out_rgb[0] = out_rgb[1] = out_rgb[2] = T(0);
  for (int i = 0; i < n; ++i) {
    T alpha = T(1) - std::exp(-sigma[i] * delta[i]);
    if (alpha_cache) alpha_cache[i] = alpha;
    if (trans_cache) trans_cache[i] = trans;
    T w = trans * alpha;
    out_rgb[0] += w * color[3 * i + 0];
    out_rgb[1] += w * color[3 * i + 1];
    out_rgb[2] += w * color[3 * i + 2];
    trans *= (T(1) - alpha);
  }
}

}  // namespace detail

// Plain compositing of one ray's samples.
template <typename T>
Vec3<T> composite(const std::vector<RaySamplePoint<T>>& samples) {
  std::vector<T> sigma(samples.size()), delta(samples.size());
  std::vector<T> color(samples.size() * 3);
  for (size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].sigma < T(0))
      throw std::invalid_argument("composite: sigma must be >= 0");
    if (samples[i].delta <= T(0))
      throw std::invalid_argument("composite: delta must be > 0");
    sigma[i] = samples[i].sigma;
    delta[i] = samples[i].delta;
    for (int c = 0; c < 3; ++c) color[3 * i + c] = samples[i].color[c];
  }
  Vec3<T> out;
  detail::composite_core<T>(sigma.data(), color.data(), delta.data(),
                            static_cast<int>(samples.size()), out.data(),
                            nullptr, nullptr);
  return out;
}

// Tape op: composites a flat sample stream into per-ray pixels.
// sigma (P,1) and color (P,3) live on the tape; deltas are constants;
// offsets[r]..offsets[r+1] delimit ray r's samples. Output is (R,3).
template <typename T>
typename ad::Tape<T>::Id composite_rays(ad::Tape<T>& tape,
                                        typename ad::Tape<T>::Id sigma,
                                        typename ad::Tape<T>::Id color,
                                        std::vector<T> deltas,
                                        std::vector<int> offsets) {
  const ad::Tensor<T>& sv = tape.value(sigma);
  const ad::Tensor<T>& cv = tape.value(color);
  const int P = sv.rows();
  const int R = static_cast<int>(offsets.size()) - 1;
  if (sv.numel() != P || cv.rows() != P || cv.cols() != 3)
    throw std::invalid_argument("composite_rays: sigma/color shape mismatch");
  if (static_cast<int>(deltas.size()) != P || offsets.front() != 0 ||
      offsets.back() != P)
    throw std::invalid_argument("composite_rays: bad deltas/offsets");

  ad::Tensor<T> out({R, 3});
  std::vector<T> alpha(static_cast<size_t>(P)), trans(static_cast<size_t>(P));
  for (int r = 0; r < R; ++r) {
    int lo = offsets[static_cast<size_t>(r)], hi = offsets[static_cast<size_t>(r + 1)];
    detail::composite_core(sv.data.data() + lo, cv.data.data() + 3 * lo,
                           deltas.data() + lo, hi - lo,
                           out.data.data() + 3 * r, alpha.data() + lo,
                           trans.data() + lo);
  }
  return tape.custom(
      std::move(out), {sigma, color},
      [sigma, color, deltas = std::move(deltas), offsets = std::move(offsets),
       alpha = std::move(alpha), trans = std::move(trans),
       R](ad::Tape<T>& t, const std::vector<T>& g) {
        const bool need_sigma = t.needs_grad(sigma);
        const bool need_color = t.needs_grad(color);
        if (!need_sigma && !need_color) return;
        const ad::Tensor<T>& cv = t.value(color);
        std::vector<T>* gs = need_sigma ? &t.grad_buf(sigma) : nullptr;
        std::vector<T>* gc = need_color ? &t.grad_buf(color) : nullptr;
        for (int r = 0; r < R; ++r) {
          const T* gr = g.data() + 3 * r;
          int lo = offsets[static_cast<size_t>(r)], hi = offsets[static_cast<size_t>(r + 1)];
          // Walk samples back to front, carrying the downstream weighted
          // color A_s = sum_{i>s} prod_{s<j<i}(1-alpha_j) alpha_i c_i.
          T ar = 0, ag = 0, ab = 0;
          for (int s = hi - 1; s >= lo; --s) {
            const T* cs = cv.data.data() + 3 * s;
            T a = alpha[static_cast<size_t>(s)];
            T tr = trans[static_cast<size_t>(s)];
            if (need_color) {
              T w = tr * a;
              (*gc)[static_cast<size_t>(3 * s) + 0] += gr[0] * w;
              (*gc)[static_cast<size_t>(3 * s) + 1] += gr[1] * w;
              (*gc)[static_cast<size_t>(3 * s) + 2] += gr[2] * w;
            }
            if (need_sigma) {
              T dot_g = gr[0] * (cs[0] - ar) + gr[1] * (cs[1] - ag) +
                        gr[2] * (cs[2] - ab);
              (*gs)[static_cast<size_t>(s)] +=
                  dot_g * tr * deltas[static_cast<size_t>(s)] * (T(1) - a);
            }
            ar = a * cs[0] + (T(1) - a) * ar;
            ag = a * cs[1] + (T(1) - a) * ag;
            ab = a * cs[2] + (T(1) - a) * ab;
          }
        }
      });
}

struct RenderSettings {
  int k = 2;
  int samples_per_ray = 64;
  bool stratified = false;
};

enum class RenderKind {
  normal,            // MoE pixel colors
  gate_probability,  // grayscale: expert focus's gate probability as radiance
};

template <typename T>
struct MoeRenderOut {
  typename ad::Tape<T>::Id pixels = -1;  // (R,3)
  typename ad::Tape<T>::Id probs = -1;   // (B,M) on kept points, -1 if unused
  BatchRoutingStats stats;               // B, c_i, m_i over kept points
  int64_t sampled_points = 0;            // slots on rays that hit the cube
};

// Full differentiable pipeline for a batch of rays:
// sample -> filter -> gate -> route -> sparse combine -> composite.
// Rays that miss the cube render black. `filter` may be null (keep all),
// `gate` may be null for uniform_all / single_expert modes.
template <typename T>
MoeRenderOut<T> render_rays(Binding<T>& bind, const std::vector<Ray<T>>& rays,
                            const ExpertBank<T>& bank,
                            std::type_identity_t<Gate<T>*> gate,
                            std::type_identity_t<const DensityFilter<T>*> filter,
                            const RenderSettings& rs, Rng* rng,
                            CombineMode mode = CombineMode::gate_topk,
                            int focus_expert = -1,
                            EvalCounter* counter = nullptr,
                            RenderKind kind = RenderKind::normal) {
  auto& tape = bind.tape();
  const int R = static_cast<int>(rays.size());
  const int M = bank.size();
  MoeRenderOut<T> out;
  out.stats.dispatch_counts.assign(static_cast<size_t>(M), 0);
  out.stats.prob_mass.assign(static_cast<size_t>(M), 0.0);

  std::vector<Vec3<T>> positions;
  std::vector<T> deltas;
  std::vector<int> offsets{0};
  std::vector<int> hit_rays;
  std::vector<int> ray_of_slot;
  for (int r = 0; r < R; ++r) {
    const Ray<T>& ray = rays[static_cast<size_t>(r)];
    if (!ray.hit) continue;
    auto s = sample_ray(ray, rs.samples_per_ray, rs.stratified, rng);
    for (int p = 0; p < rs.samples_per_ray; ++p) {
      positions.push_back(add(ray.origin, scale(ray.dir, s.ts[static_cast<size_t>(p)])));
      deltas.push_back(s.deltas[static_cast<size_t>(p)]);
      ray_of_slot.push_back(r);
    }
    offsets.push_back(static_cast<int>(positions.size()));
    hit_rays.push_back(r);
  }
  const int slots = static_cast<int>(positions.size());
  out.sampled_points = slots;

  if (slots == 0) {
    out.pixels = tape.constant(ad::Tensor<T>({R, 3}));
    return out;
  }

  // Density filtering; discarded slots keep sigma = 0.
  std::vector<int> kept_slots;
  std::vector<Vec3<T>> kept_pos;
  if (filter) {
    for (int i = 0; i < slots; ++i) {
      if (filter->keep(positions[static_cast<size_t>(i)])) {
        kept_slots.push_back(i);
        kept_pos.push_back(positions[static_cast<size_t>(i)]);
      }
    }
  } else {
    kept_slots.resize(static_cast<size_t>(slots));
    std::iota(kept_slots.begin(), kept_slots.end(), 0);
    kept_pos = positions;
  }
  const int B = static_cast<int>(kept_slots.size());
  out.stats.batch_points = B;

  typename ad::Tape<T>::Id sigma_dense, color_dense;
  if (B == 0) {
    sigma_dense = tape.constant(ad::Tensor<T>({slots, 1}));
    color_dense = tape.constant(ad::Tensor<T>({slots, 3}));
  } else {
    ad::Tensor<T> enc({B, kDirEncodingDim});
    for (int j = 0; j < B; ++j) {
      const auto& d = rays[static_cast<size_t>(ray_of_slot[static_cast<size_t>(kept_slots[static_cast<size_t>(j)])])].dir;
      auto e = encode_direction(d);
      for (int c = 0; c < kDirEncodingDim; ++c)
        enc.data[static_cast<size_t>(j) * kDirEncodingDim + c] = e[c];
    }

    typename ad::Tape<T>::Id probs = -1;
    const bool uses_gate =
        mode == CombineMode::gate_topk || mode == CombineMode::expert_masked;
    if (uses_gate) {
      if (!gate) throw std::invalid_argument("render_rays: mode needs a gate");
      probs = gate->probs_rows(bind, kept_pos);
      out.probs = probs;
    }
    auto dis = dispatch_rows(bind, bank, probs, kept_pos, enc, rs.k, mode,
                             focus_expert, counter);
    out.stats = dis.stats;

    auto sigma_kept = dis.sigma;
    auto color_kept = dis.color;
    if (kind == RenderKind::gate_probability) {
      // Radiance = selected expert's gate probability, replicated to RGB.
      ad::Tensor<T> pick({M, 1});
      pick.data[static_cast<size_t>(focus_expert)] = T(1);
      auto pcol = tape.matmul(probs, tape.constant(std::move(pick)));
      ad::Tensor<T> spread({1, 3}, T(1));
      color_kept = tape.matmul(pcol, tape.constant(std::move(spread)));
    }
    sigma_dense = tape.scatter_rows(sigma_kept, kept_slots, slots);
    color_dense = tape.scatter_rows(color_kept, kept_slots, slots);
  }

  auto hit_pixels =
      composite_rays(tape, sigma_dense, color_dense, deltas, offsets);
  out.pixels = tape.scatter_rows(hit_pixels, hit_rays, R);
  return out;
}

// Forward-only image render, chunked and parallel over rows of rays. Also
// accumulates routing stats across chunks (dispatch counts, masses, kept
// points) for FLOP accounting.
template <typename T>
Image render_image(const Camera<T>& cam, const ExpertBank<T>& bank,
                   std::type_identity_t<Gate<T>*> gate,
                   std::type_identity_t<const DensityFilter<T>*> filter,
                   const RenderSettings& rs,
                   CombineMode mode = CombineMode::gate_topk,
                   int focus_expert = -1, BatchRoutingStats* stats_out = nullptr,
                   RenderKind kind = RenderKind::normal, int threads = 1,
                   int chunk_rays = 2048) {
  Image img(cam.width, cam.height);
  const int total = cam.width * cam.height;
  const int chunks = (total + chunk_rays - 1) / chunk_rays;
  std::vector<BatchRoutingStats> chunk_stats(static_cast<size_t>(chunks));
  parallel_for(chunks, threads, [&](int64_t c0, int64_t c1) {
    for (int64_t c = c0; c < c1; ++c) {
      int start = static_cast<int>(c) * chunk_rays;
      int end = std::min(total, start + chunk_rays);
      std::vector<Ray<T>> rays;
      rays.reserve(static_cast<size_t>(end - start));
      for (int p = start; p < end; ++p)
        rays.push_back(cam.ray_for_pixel(p % cam.width, p / cam.width));
      ad::Tape<T> tape;
      Binding<T> bind(tape);
      auto out = render_rays(bind, rays, bank, gate, filter, rs, nullptr, mode,
                             focus_expert, nullptr, kind);
      chunk_stats[static_cast<size_t>(c)] = out.stats;
      const auto& px = tape.value(out.pixels);
      for (int p = start; p < end; ++p)
        for (int ch = 0; ch < 3; ++ch)
          img.rgb[3 * static_cast<size_t>(p) + ch] =
              static_cast<float>(px.data[static_cast<size_t>(3 * (p - start) + ch)]);
    }
  });
  if (stats_out) {
    const int M = bank.size();
    stats_out->dispatch_counts.assign(static_cast<size_t>(M), 0);
    stats_out->prob_mass.assign(static_cast<size_t>(M), 0.0);
    stats_out->batch_points = 0;
    for (const auto& s : chunk_stats) {
      if (s.dispatch_counts.empty()) continue;
      stats_out->batch_points += s.batch_points;
      for (int i = 0; i < M; ++i) {
        stats_out->dispatch_counts[static_cast<size_t>(i)] += s.dispatch_counts[static_cast<size_t>(i)];
        stats_out->prob_mass[static_cast<size_t>(i)] += s.prob_mass[static_cast<size_t>(i)];
      }
    }
  }
  return img;
}

// Single-pixel contract: full pipeline for one camera pixel. Rays that miss
// the unit cube return black.
template <typename T>
Vec3<T> render_pixel(const Camera<T>& cam, int ix, int iy,
                     const ExpertBank<T>& bank,
                     std::type_identity_t<Gate<T>*> gate,
                     std::type_identity_t<const DensityFilter<T>*> filter,
                     int k, int n_samples,
                     CombineMode mode = CombineMode::gate_topk,
                     int focus_expert = -1) {
  Ray<T> ray = cam.ray_for_pixel(ix, iy);
  if (!ray.hit) return {T(0), T(0), T(0)};
  ad::Tape<T> tape;
  Binding<T> bind(tape);
  RenderSettings rs;
  rs.k = k;
  rs.samples_per_ray = n_samples;
  rs.stratified = false;
  auto ro = render_rays(bind, std::vector<Ray<T>>{ray}, bank, gate, filter, rs,
                        nullptr, mode, focus_expert);
  const auto& px = tape.value(ro.pixels);
  return {px.data[0], px.data[1], px.data[2]};
}

}  // namespace moefield
