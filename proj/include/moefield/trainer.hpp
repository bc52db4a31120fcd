// Copyright (c) 2026 moefield authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-phase training: every expert is pre-trained independently on the
// photometric loss, then the assembled mixture (experts + gate) is jointly
// optimized on L_nerf + lambda * L_rw-aux with the density filter frozen
// from the lowest-resolution expert. Single optimizer owner, one tape per
// step, deterministic per seed.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "moefield/losses.hpp"
#include "moefield/metrics.hpp"
#include "moefield/renderer.hpp"
#include "moefield/scene.hpp"

namespace moefield {

template <typename T>
struct TrainConfig {
  int experts = 3;               // M
  int top_k = 2;                 // k
  T lambda = T(1e-3);            // aux-loss weight
  int pretrain_iters = 300;      // l
  int joint_iters = 700;         // m
  int batch_rays = 1024;
  int samples_per_ray = 64;
  T lr_grid = T(1e-2);
  T lr_mlp = T(1e-3);
  PenaltyKind penalty = PenaltyKind::geometric;
  uint64_t seed = 1;
  int gate_resolution = kDefaultGateResolution;
  int base_resolution = 16;
  T filter_threshold = T(1e-3);
  bool freeze_gate = false;  // ensemble fine-tuning limit case

  void validate() const {
    if (experts < 3 || experts > 5)
      throw std::invalid_argument("config: experts must be in {3,4,5}");
    if (top_k < 1 || top_k > experts)
      throw std::invalid_argument("config: top_k must be in [1, experts]");
    if (lambda < T(0) || pretrain_iters < 0 || joint_iters < 0 ||
        batch_rays < 1 || samples_per_ray < 2 || lr_grid <= T(0) ||
        lr_mlp <= T(0) || gate_resolution < 4 || base_resolution < 4 ||
        filter_threshold < T(0))
      throw std::invalid_argument("config: out-of-range field");
  }
};

// Adam with two learning-rate groups (grids vs MLPs), beta1 = 0.9,
// beta2 = 0.999, eps = 1e-8, bias correction.
template <typename T>
class Adam {
 public:
  Adam(std::vector<ParamRef<T>> params, T lr_grid, T lr_mlp)
      : params_(std::move(params)), lr_grid_(lr_grid), lr_mlp_(lr_mlp) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].tensor->data.size(), T(0));
      v_[i].assign(params_[i].tensor->data.size(), T(0));
    }
  }

  const std::vector<ParamRef<T>>& params() const { return params_; }
  int64_t step_count() const { return t_; }

  // grads[i] aligns with params()[i]; empty vectors mean zero gradient.
  void step(const std::vector<std::vector<T>>& grads) {
    if (grads.size() != params_.size())
      throw std::invalid_argument("Adam::step: gradient list size mismatch");
    ++t_;
    const T b1 = T(0.9), b2 = T(0.999), eps = T(1e-8);
    const T bc1 = T(1) - std::pow(b1, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(b2, static_cast<T>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      T lr = params_[i].is_grid ? lr_grid_ : lr_mlp_;
      auto& p = params_[i].tensor->data;
      auto& m = m_[i];
      auto& v = v_[i];
      const T* g = grads[i].empty() ? nullptr : grads[i].data();
      if (g && grads[i].size() != p.size())
        throw std::invalid_argument("Adam::step: gradient shape mismatch");
      for (size_t e = 0; e < p.size(); ++e) {
        T ge = g ? g[e] : T(0);
        m[e] = b1 * m[e] + (T(1) - b1) * ge;
        v[e] = b2 * v[e] + (T(1) - b2) * ge * ge;
        T mhat = m[e] / bc1;
        T vhat = v[e] / bc2;
        p[e] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  // Moment blobs for checkpointing, aligned with params().
  std::vector<std::vector<T>>& moments_m() { return m_; }
  std::vector<std::vector<T>>& moments_v() { return v_; }
  void set_step_count(int64_t t) { t_ = t; }

 private:
  std::vector<ParamRef<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  T lr_grid_, lr_mlp_;
  int64_t t_ = 0;
};

struct TrainReportRow {
  int iteration = 0;
  double l_nerf = 0;
  double l_rw_aux = 0;
  double l_tot = 0;
  std::vector<double> dispatch_frac;
};

struct TrainReport {
  std::vector<TrainReportRow> rows;
  double final_psnr = 0;
  double final_ssim = 0;
  double wall_seconds = 0;
  int skipped_steps = 0;

  std::string csv(int experts) const {
    std::string out = "iteration,l_nerf,l_rw_aux,l_tot";
    for (int i = 0; i < experts; ++i)
      out += ",dispatch_frac_" + std::to_string(i);
    out += "\n";
    char buf[160];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g", r.iteration,
                    r.l_nerf, r.l_rw_aux, r.l_tot);
      out += buf;
      for (double f : r.dispatch_frac) {
        std::snprintf(buf, sizeof(buf), ",%.9g", f);
        out += buf;
      }
      out += "\n";
    }
    return out;
  }
};

template <typename T>
struct RayBatch {
  std::vector<Ray<T>> rays;
  ad::Tensor<T> truth;  // (batch, 3)
};

// Uniform (view, pixel) draws over the given views.
template <typename T>
RayBatch<T> sample_ray_batch(const Dataset& dataset,
                             const std::vector<int>& view_indices,
                             int batch_rays, Rng& rng) {
  if (view_indices.empty())
    throw std::invalid_argument("sample_ray_batch: no views");
  RayBatch<T> batch;
  batch.truth = ad::Tensor<T>({batch_rays, 3});
  batch.rays.reserve(static_cast<size_t>(batch_rays));
  for (int b = 0; b < batch_rays; ++b) {
    int vi = view_indices[rng.uniform_index(static_cast<uint32_t>(view_indices.size()))];
    const auto& view = dataset.views[static_cast<size_t>(vi)];
    Camera<T> cam = camera_cast<T>(view.camera);
    int px = static_cast<int>(rng.uniform_index(static_cast<uint32_t>(cam.width * cam.height)));
    batch.rays.push_back(cam.ray_for_pixel(px % cam.width, px / cam.width));
    const float* t = view.image.rgb.data() + 3 * static_cast<size_t>(px);
    for (int c = 0; c < 3; ++c)
      batch.truth.data[static_cast<size_t>(3 * b + c)] = static_cast<T>(t[c]);
  }
  return batch;
}

namespace detail {

template <typename T>
std::vector<std::vector<T>> collect_grads(ad::Tape<T>& tape, Binding<T>& bind,
                                          const std::vector<ParamRef<T>>& params) {
  std::vector<std::vector<T>> grads(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    if (!bind.contains(*params[i].tensor)) continue;
    grads[i] = tape.grad(bind.id_of(*params[i].tensor)).data;
  }
  return grads;
}

}  // namespace detail

// Phase one: every expert trained independently on the photometric loss.
// The gate does not exist yet; nothing here touches it. Returns one report
// per expert.
template <typename T>
std::vector<TrainReport> pretrain_experts(ExpertBank<T>& bank,
                                          const Dataset& dataset,
                                          const TrainConfig<T>& config) {
  config.validate();
  if (dataset.views.empty())
    throw std::invalid_argument("pretrain_experts: empty dataset");
  auto train_views = dataset.split(false);
  std::vector<TrainReport> reports;
  RenderSettings rs;
  rs.k = 1;
  rs.samples_per_ray = config.samples_per_ray;
  rs.stratified = true;
  for (int e = 0; e < bank.size(); ++e) {
    auto t0 = std::chrono::steady_clock::now();
    TrainReport report;
    std::vector<ParamRef<T>> params;
    bank[e].collect_params(params);
    Adam<T> opt(params, config.lr_grid, config.lr_mlp);
    Rng rng(config.seed, 0x100 + static_cast<uint64_t>(e));
    for (int it = 0; it < config.pretrain_iters; ++it) {
      auto batch = sample_ray_batch<T>(dataset, train_views, config.batch_rays, rng);
      ad::Tape<T> tape;
      Binding<T> bind(tape);
      auto out = render_rays(bind, batch.rays, bank, nullptr, nullptr, rs,
                             &rng, CombineMode::single_expert, e);
      auto loss = photometric_on_tape(tape, out.pixels, std::move(batch.truth));
      double l = double(tape.value(loss).data[0]);
      if (!std::isfinite(l))
        throw std::runtime_error("pretrain_experts: non-finite loss at expert " +
                                 std::to_string(e) + " iteration " +
                                 std::to_string(it));
      tape.backward(loss);
      opt.step(detail::collect_grads(tape, bind, params));
      TrainReportRow row;
      row.iteration = it;
      row.l_nerf = l;
      row.l_tot = l;
      report.rows.push_back(std::move(row));
    }
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    reports.push_back(std::move(report));
  }
  return reports;
}

// Phase two: joint optimization of experts and gate on the total loss.
// The density filter is frozen; pass freeze_gate to reduce to ensemble
// fine-tuning. The expert-call counter, when given, is advanced by every
// batched expert evaluation.
template <typename T>
TrainReport train_moe(ExpertBank<T>& bank, Gate<T>& gate,
                      const DensityFilter<T>& filter, const Dataset& dataset,
                      const TrainConfig<T>& config,
                      EvalCounter* counter = nullptr,
                      Rng* resume_rng = nullptr, int start_iter = 0,
                      Adam<T>* external_opt = nullptr) {
  config.validate();
  if (dataset.views.empty())
    throw std::invalid_argument("train_moe: empty dataset");
  auto t0 = std::chrono::steady_clock::now();
  auto train_views = dataset.split(false);
  auto schedule = make_penalty(config.penalty, bank.size());

  std::vector<ParamRef<T>> params;
  bank.collect_params(params);
  if (!config.freeze_gate) gate.collect_params(params);
  Adam<T> local_opt(params, config.lr_grid, config.lr_mlp);
  Adam<T>& opt = external_opt ? *external_opt : local_opt;

  Rng local_rng(config.seed, 0x200);
  Rng& rng = resume_rng ? *resume_rng : local_rng;

  RenderSettings rs;
  rs.k = config.top_k;
  rs.samples_per_ray = config.samples_per_ray;
  rs.stratified = true;

  TrainReport report;
  for (int it = start_iter; it < config.joint_iters; ++it) {
    auto batch = sample_ray_batch<T>(dataset, train_views, config.batch_rays, rng);
    ad::Tape<T> tape;
    Binding<T> bind(tape);
    auto out = render_rays(bind, batch.rays, bank, &gate, &filter, rs, &rng,
                           CombineMode::gate_topk, -1, counter);
    TrainReportRow row;
    row.iteration = it;
    row.dispatch_frac.assign(static_cast<size_t>(bank.size()), 0.0);
    int64_t total_dispatch = 0;
    for (int64_t c : out.stats.dispatch_counts) total_dispatch += c;
    if (total_dispatch > 0)
      for (int i = 0; i < bank.size(); ++i)
        row.dispatch_frac[static_cast<size_t>(i)] =
            double(out.stats.dispatch_counts[static_cast<size_t>(i)]) / double(total_dispatch);

    if (out.stats.batch_points == 0) {
      // Nothing survived the density filter; skip the step but keep the row.
      row.l_nerf = photometric_loss(
          std::vector<T>(tape.value(out.pixels).data),
          std::vector<T>(batch.truth.data), config.batch_rays);
      row.l_rw_aux = 0;
      row.l_tot = total_loss(row.l_nerf, 0, double(config.lambda));
      report.rows.push_back(std::move(row));
      ++report.skipped_steps;
      continue;
    }

    auto l_nerf = photometric_on_tape(tape, out.pixels, std::move(batch.truth));
    auto l_rw = rw_aux_on_tape(tape, out.probs, out.stats, schedule);
    auto l_tot = total_on_tape(tape, l_nerf, l_rw, config.lambda);
    row.l_nerf = double(tape.value(l_nerf).data[0]);
    row.l_rw_aux = double(tape.value(l_rw).data[0]);
    row.l_tot = double(tape.value(l_tot).data[0]);
    if (!std::isfinite(row.l_tot))
      throw std::runtime_error("train_moe: non-finite loss at iteration " +
                               std::to_string(it));
    tape.backward(l_tot);
    opt.step(detail::collect_grads(tape, bind, opt.params()));
    report.rows.push_back(std::move(row));
  }

  // Held-out evaluation.
  auto test_idx = dataset.split(true);
  if (!test_idx.empty()) {
    RenderSettings ers = rs;
    ers.stratified = false;
    double psnr_sum = 0, ssim_sum = 0;
    for (int vi : test_idx) {
      const auto& view = dataset.views[static_cast<size_t>(vi)];
      auto img = render_image(camera_cast<T>(view.camera), bank, &gate, &filter, ers);
      psnr_sum += psnr(img, view.image);
      ssim_sum += ssim(img, view.image);
    }
    report.final_psnr = psnr_sum / double(test_idx.size());
    report.final_ssim = ssim_sum / double(test_idx.size());
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace moefield
