// Copyright (c) 2026 moefield authors
// SPDX-License-Identifier: Apache-2.0
//
// Evaluation metrics: PSNR (capped at 99 dB), SSIM (11x11 Gaussian window,
// sigma 1.5, on the RGB mean), the active-parameter count (parameters whose
// photometric-loss gradient over the test renders is nonzero, accumulated in
// float64 and compared against exact zero), and an analytic FLOP model.

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <type_traits>
#include <string>
#include <vector>

#include "moefield/image.hpp"
#include "moefield/losses.hpp"
#include "moefield/renderer.hpp"
#include "moefield/scene.hpp"

namespace moefield {

inline constexpr double kPsnrCap = 99.0;

inline double mse(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument("mse: image shapes differ");
  double acc = 0;
  for (size_t i = 0; i < a.rgb.size(); ++i) {
    double d = double(a.rgb[i]) - double(b.rgb[i]);
    acc += d * d;
  }
  return acc / double(a.rgb.size());
}

inline double psnr(const Image& a, const Image& b) {
  double m = mse(a, b);
  if (m <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

namespace detail {

inline std::vector<double> gaussian_window_11(double sigma = 1.5) {
  std::vector<double> w(11);
  double sum = 0;
  for (int i = 0; i < 11; ++i) {
    double d = i - 5;
    w[static_cast<size_t>(i)] = std::exp(-d * d / (2 * sigma * sigma));
    sum += w[static_cast<size_t>(i)];
  }
  for (auto& v : w) v /= sum;
  return w;
}

inline std::vector<double> grayscale(const Image& img) {
  std::vector<double> g(static_cast<size_t>(img.width) * img.height);
  for (size_t i = 0; i < g.size(); ++i)
    g[i] = (double(img.rgb[3 * i]) + img.rgb[3 * i + 1] + img.rgb[3 * i + 2]) / 3.0;
  return g;
}

}  // namespace detail

// Standard SSIM over valid 11x11 windows, C1 = 0.01^2, C2 = 0.03^2,
// grayscale = RGB mean, mean over window centers.
inline double ssim(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument("ssim: image shapes differ");
  if (a.width < 11 || a.height < 11)
    throw std::invalid_argument("ssim: image must be at least 11x11");
  const int W = a.width, H = a.height;
  auto ga = detail::grayscale(a);
  auto gb = detail::grayscale(b);
  auto win = detail::gaussian_window_11();
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

  double total = 0;
  int64_t count = 0;
  for (int cy = 5; cy < H - 5; ++cy) {
    for (int cx = 5; cx < W - 5; ++cx) {
      double mu_a = 0, mu_b = 0;
      for (int dy = -5; dy <= 5; ++dy)
        for (int dx = -5; dx <= 5; ++dx) {
          double w = win[static_cast<size_t>(dy + 5)] * win[static_cast<size_t>(dx + 5)];
          size_t idx = static_cast<size_t>(cy + dy) * W + (cx + dx);
          mu_a += w * ga[idx];
          mu_b += w * gb[idx];
        }
      double var_a = 0, var_b = 0, cov = 0;
      for (int dy = -5; dy <= 5; ++dy)
        for (int dx = -5; dx <= 5; ++dx) {
          double w = win[static_cast<size_t>(dy + 5)] * win[static_cast<size_t>(dx + 5)];
          size_t idx = static_cast<size_t>(cy + dy) * W + (cx + dx);
          double da = ga[idx] - mu_a, db = gb[idx] - mu_b;
          var_a += w * da * da;
          var_b += w * db * db;
          cov += w * da * db;
        }
      double s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                 ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
      total += s;
      ++count;
    }
  }
  return total / double(count);
}

// ---- active parameter count ---------------------------------------------

// Renders the given test views, backprops the photometric loss, and counts
// parameters with nonzero accumulated |gradient| (float64 accumulation,
// exact zero comparison). The parameter universe is every expert plus the
// gate; modes that never evaluate the gate leave its gradients at zero.
template <typename T>
int64_t active_params(ExpertBank<T>& bank, std::type_identity_t<Gate<T>*> gate,
                      std::type_identity_t<const DensityFilter<T>*> filter,
                      const Dataset& dataset,
                      const RenderSettings& rs,
                      CombineMode mode = CombineMode::gate_topk,
                      int chunk_rays = 4096) {
  std::vector<ParamRef<T>> params;
  bank.collect_params(params);
  if (gate) gate->collect_params(params);
  std::vector<std::vector<double>> accum(params.size());
  for (size_t i = 0; i < params.size(); ++i)
    accum[i].assign(params[i].tensor->data.size(), 0.0);

  auto test_idx = dataset.split(true);
  if (test_idx.empty())
    throw std::invalid_argument("active_params: dataset has no test views");
  for (int vi : test_idx) {
    const auto& view = dataset.views[static_cast<size_t>(vi)];
    Camera<T> cam = camera_cast<T>(view.camera);
    const int total = cam.width * cam.height;
    for (int start = 0; start < total; start += chunk_rays) {
      int end = std::min(total, start + chunk_rays);
      std::vector<Ray<T>> rays;
      ad::Tensor<T> truth({end - start, 3});
      for (int p = start; p < end; ++p) {
        rays.push_back(cam.ray_for_pixel(p % cam.width, p / cam.width));
        const float* px = view.image.rgb.data() + 3 * static_cast<size_t>(p);
        for (int c = 0; c < 3; ++c)
          truth.data[static_cast<size_t>(3 * (p - start) + c)] = static_cast<T>(px[c]);
      }
      ad::Tape<T> tape;
      Binding<T> bind(tape);
      auto out = render_rays(bind, rays, bank, gate, filter, rs, nullptr, mode);
      auto loss = photometric_on_tape(tape, out.pixels, std::move(truth));
      tape.backward(loss);
      for (size_t i = 0; i < params.size(); ++i) {
        if (!bind.contains(*params[i].tensor)) continue;
        auto g = tape.grad(bind.id_of(*params[i].tensor));
        for (size_t e = 0; e < g.data.size(); ++e)
          accum[i][e] += std::abs(double(g.data[e]));
      }
    }
  }
  int64_t count = 0;
  for (const auto& buf : accum)
    for (double v : buf)
      if (v > 0.0) ++count;
  return count;
}

// ---- analytic FLOP model --------------------------------------------------
//
// Multiply-add counted as 2 flops. Per-point costs: an 8-corner
// interpolation of C channels is 24*C flops; a dense layer is
// 2*fan_in*fan_out. Expert cost covers the density interp, the feature
// interp, and the color MLP; gate cost covers the feature interp and its
// MLP. The coarse filter probe is excluded (it is not part of the mixture).

struct FlopBreakdown {
  double expert_flops = 0;
  double gate_flops = 0;
  double total() const { return expert_flops + gate_flops; }
  double gflops() const { return total() / 1e9; }
};

inline double interp_flops(int channels) { return 24.0 * channels; }
inline double dense_flops(int fan_in, int fan_out) {
  return 2.0 * fan_in * fan_out;
}

template <typename T>
FlopBreakdown flops_per_image(const ExpertBank<T>& bank, const Gate<T>* gate,
                              const BatchRoutingStats& stats) {
  FlopBreakdown out;
  double per_expert = interp_flops(1) + interp_flops(kFeatureChannels) +
                      dense_flops(kFeatureChannels + kDirEncodingDim, kColorHidden) +
                      dense_flops(kColorHidden, 3);
  for (size_t i = 0; i < stats.dispatch_counts.size(); ++i)
    out.expert_flops += double(stats.dispatch_counts[i]) * per_expert;
  if (gate) {
    double per_gate = interp_flops(gate->vg.channels) +
                      dense_flops(gate->vg.channels, kGateHidden) +
                      dense_flops(kGateHidden, bank.size());
    out.gate_flops = double(stats.batch_points) * per_gate;
  }
  return out;
}

struct EvalReport {
  double psnr = 0;
  double ssim = 0;
  int64_t w0 = 0;
  double gflops = 0;

  static const char* csv_header() { return "psnr,ssim,w0,gflops"; }
  std::string csv_row() const {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%lld,%.6f", psnr, ssim,
                  static_cast<long long>(w0), gflops);
    return buf;
  }
};

}  // namespace moefield
