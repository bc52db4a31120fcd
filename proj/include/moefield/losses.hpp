// Copyright (c) 2026 moefield authors
// SPDX-License-Identifier: Apache-2.0
//
// Training objectives: the photometric loss over ray batches, the
// load-balancing auxiliary loss L_aux = (M/|B|^2) sum_i c_i m_i, its
// resolution-weighted variant with per-expert penalty weights, and the
// total objective L_nerf + lambda * L_rw-aux. Dispatch counts c_i are
// gradient constants; gradients reach the gate through the masses m_i.

#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "moefield/moe.hpp"
#include "moefield/tensor.hpp"

namespace moefield {

enum class PenaltyKind { none, linear, geometric, quadratic };

inline const char* penalty_name(PenaltyKind k) {
  switch (k) {
    case PenaltyKind::none: return "none";
    case PenaltyKind::linear: return "linear";
    case PenaltyKind::geometric: return "geometric";
    case PenaltyKind::quadratic: return "quadratic";
  }
  return "?";
}

inline PenaltyKind penalty_from_name(const std::string& s) {
  if (s == "none") return PenaltyKind::none;
  if (s == "linear") return PenaltyKind::linear;
  if (s == "geometric") return PenaltyKind::geometric;
  if (s == "quadratic") return PenaltyKind::quadratic;
  throw std::invalid_argument(
      "unknown penalty '" + s + "'; expected none|linear|geometric|quadratic");
}

struct PenaltySchedule {
  PenaltyKind kind = PenaltyKind::geometric;
  std::vector<double> weights;
};

// Per-expert penalty weights, increasing with resolution rank.
//   none:      w_i = 1
//   linear:    w_0 = 1, w_{i+1} = w_i + 1
//   geometric: w_i = exp(ln M / (M-1))^i, so w_0 = 1 and w_{M-1} = M exactly
//   quadratic: w_0 = 1, w_{i+1} = 2 w_i
inline PenaltySchedule make_penalty(PenaltyKind kind, int experts) {
  if (experts < 1) throw std::invalid_argument("make_penalty: experts >= 1");
  PenaltySchedule s;
  s.kind = kind;
  s.weights.resize(static_cast<size_t>(experts));
  for (int i = 0; i < experts; ++i) {
    double w = 1.0;
    switch (kind) {
      case PenaltyKind::none: w = 1.0; break;
      case PenaltyKind::linear: w = 1.0 + i; break;
      case PenaltyKind::geometric:
        if (i == 0) w = 1.0;
        else if (i == experts - 1) w = static_cast<double>(experts);
        else w = std::exp(double(i) * std::log(double(experts)) / (experts - 1));
        break;
      case PenaltyKind::quadratic: w = std::ldexp(1.0, i); break;
    }
    s.weights[static_cast<size_t>(i)] = w;
  }
  return s;
}

// Mean over rays of the squared L2 pixel error.
template <typename T>
double photometric_loss(const std::vector<T>& rendered,
                        const std::vector<T>& truth, int rays) {
  if (rendered.size() != truth.size() ||
      rendered.size() != static_cast<size_t>(rays) * 3)
    throw std::invalid_argument("photometric_loss: shape mismatch");
  double acc = 0;
  for (size_t i = 0; i < rendered.size(); ++i) {
    double d = double(rendered[i]) - double(truth[i]);
    acc += d * d;
  }
  return acc / rays;
}

template <typename T>
typename ad::Tape<T>::Id photometric_on_tape(ad::Tape<T>& tape,
                                             typename ad::Tape<T>::Id pixels,
                                             ad::Tensor<T> truth) {
  const ad::Tensor<T>& pv = tape.value(pixels);
  if (pv.shape != truth.shape)
    throw std::invalid_argument("photometric_on_tape: shape mismatch");
  const int rays = pv.rows();
  auto diff = tape.sub(pixels, tape.constant(std::move(truth)));
  return tape.scale(tape.sum(tape.square(diff)), T(1) / static_cast<T>(rays));
}

// L_rw-aux on plain stats. kind "none" reproduces the unweighted loss
// bit-for-bit (w_i = 1 multiplications are exact).
inline double rw_aux_loss(const BatchRoutingStats& stats,
                          const PenaltySchedule& schedule) {
  const size_t M = stats.dispatch_counts.size();
  if (schedule.weights.size() != M)
    throw std::invalid_argument("rw_aux_loss: schedule length mismatch");
  if (stats.batch_points == 0) return 0.0;
  double acc = 0;
  for (size_t i = 0; i < M; ++i)
    acc += double(stats.dispatch_counts[i]) * stats.prob_mass[i] *
           schedule.weights[i];
  double b = double(stats.batch_points);
  return double(M) / (b * b) * acc;
}

inline double aux_loss(const BatchRoutingStats& stats) {
  return rw_aux_loss(stats,
                     make_penalty(PenaltyKind::none,
                                  static_cast<int>(stats.dispatch_counts.size())));
}

// Differentiable variant: m_i comes from the gate probability matrix on the
// tape; c_i enters as constants.
template <typename T>
typename ad::Tape<T>::Id rw_aux_on_tape(ad::Tape<T>& tape,
                                        typename ad::Tape<T>::Id probs,
                                        const BatchRoutingStats& stats,
                                        const PenaltySchedule& schedule) {
  const ad::Tensor<T>& pv = tape.value(probs);
  const int B = pv.rows();
  const int M = pv.cols();
  if (static_cast<size_t>(M) != schedule.weights.size() ||
      static_cast<size_t>(M) != stats.dispatch_counts.size())
    throw std::invalid_argument("rw_aux_on_tape: schedule length mismatch");
  if (B == 0 || stats.batch_points == 0) return tape.constant_scalar(T(0));
  auto ones = tape.constant(ad::Tensor<T>({1, B}, T(1)));
  auto mass = tape.matmul(ones, probs);  // (1, M)
  ad::Tensor<T> cw({M, 1});
  double scale = double(M) / (double(stats.batch_points) * double(stats.batch_points));
  for (int i = 0; i < M; ++i)
    cw.data[static_cast<size_t>(i)] =
        static_cast<T>(double(stats.dispatch_counts[static_cast<size_t>(i)]) *
                       schedule.weights[static_cast<size_t>(i)] * scale);
  return tape.matmul(mass, tape.constant(std::move(cw)));  // (1,1) scalar
}

inline double total_loss(double l_nerf, double l_rw_aux, double lambda) {
  return l_nerf + lambda * l_rw_aux;
}

template <typename T>
typename ad::Tape<T>::Id total_on_tape(ad::Tape<T>& tape,
                                       typename ad::Tape<T>::Id l_nerf,
                                       typename ad::Tape<T>::Id l_rw_aux,
                                       T lambda) {
  return tape.add(l_nerf, tape.scale(l_rw_aux, lambda));
}

}  // namespace moefield
