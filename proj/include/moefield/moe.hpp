// Copyright (c) 2026 moefield authors
// SPDX-License-Identifier: Apache-2.0
//
// Point filtering against the frozen density volume, deterministic top-k
// routing, and sparse dispatch: only the k selected experts are evaluated
// per point, and expert outputs are combined weighted by their raw gate
// probabilities (no renormalization over the selected subset).

#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "moefield/expert.hpp"
#include "moefield/gate.hpp"
#include "moefield/grid.hpp"

namespace moefield {

template <typename T>
struct DensityFilter {
  VoxelGrid<T> vd;  // C = 1, frozen copy of the lowest expert's density grid
  T threshold = T(1e-3);

  bool keep(const Vec3<T>& x) const {
    T raw;
    interpolate(vd, x, &raw);
    return density_activation(raw) >= threshold;
  }
};

template <typename T>
DensityFilter<T> filter_from_lowest(const ExpertBank<T>& bank, T threshold) {
  DensityFilter<T> f;
  f.vd = bank[0].density;
  f.vd.values.requires_grad = false;  // frozen, never optimized
  f.threshold = threshold;
  return f;
}

template <typename T>
struct FilterResult {
  std::vector<Vec3<T>> kept;
  std::vector<char> mask;        // per input point
  std::vector<int> kept_index;   // index into the input list per kept point
};

// Order-preserving subset of points above the density threshold.
template <typename T>
FilterResult<T> filter_points(const std::vector<Vec3<T>>& points,
                              const DensityFilter<T>& filter) {
  FilterResult<T> r;
  r.mask.assign(points.size(), 0);
  for (size_t i = 0; i < points.size(); ++i) {
    if (filter.keep(points[i])) {
      r.mask[i] = 1;
      r.kept.push_back(points[i]);
      r.kept_index.push_back(static_cast<int>(i));
    }
  }
  return r;
}

template <typename T>
struct RoutingDecision {
  std::vector<int> indices;  // distinct expert ids, the top-k set
  std::vector<T> probs;      // their gate probabilities
};

// Deterministic top-k with ties broken toward the lower expert index.
template <typename T>
RoutingDecision<T> route(const std::vector<T>& probs, int k) {
  const int M = static_cast<int>(probs.size());
  if (k < 1 || k > M)
    throw std::invalid_argument("route: k must be in [1, M], got k=" +
                                std::to_string(k) + " M=" + std::to_string(M));
  RoutingDecision<T> d;
  std::vector<char> taken(probs.size(), 0);
  for (int pick = 0; pick < k; ++pick) {
    int best = -1;
    for (int i = 0; i < M; ++i) {
      if (taken[static_cast<size_t>(i)]) continue;
      if (best < 0 || probs[static_cast<size_t>(i)] > probs[static_cast<size_t>(best)])
        best = i;
    }
    taken[static_cast<size_t>(best)] = 1;
    d.indices.push_back(best);
    d.probs.push_back(probs[static_cast<size_t>(best)]);
  }
  return d;
}

template <typename T>
struct CombinedSample {
  T sigma;
  Vec3<T> color;
};

// Counts batched expert evaluations; used to verify the sparsity contract.
struct EvalCounter {
  std::vector<int64_t> calls;
  void ensure(int M) {
    if (static_cast<int>(calls.size()) < M) calls.resize(static_cast<size_t>(M), 0);
  }
  int64_t total() const {
    int64_t s = 0;
    for (int64_t c : calls) s += c;
    return s;
  }
};

// Single-point combination: evaluates only the selected experts, sums their
// outputs weighted by raw probabilities in ascending expert-index order.
template <typename T>
CombinedSample<T> combine(const Vec3<T>& x, const Vec3<T>& d,
                          const ExpertBank<T>& bank,
                          const RoutingDecision<T>& decision,
                          EvalCounter* counter = nullptr) {
  std::vector<int> order(decision.indices.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return decision.indices[static_cast<size_t>(a)] < decision.indices[static_cast<size_t>(b)];
  });
  CombinedSample<T> out{T(0), {T(0), T(0), T(0)}};
  if (counter) counter->ensure(bank.size());
  for (int o : order) {
    int i = decision.indices[static_cast<size_t>(o)];
    if (i < 0 || i >= bank.size())
      throw std::invalid_argument("combine: expert index out of range");
    T p = decision.probs[static_cast<size_t>(o)];
    T sigma;
    Vec3<T> c;
    bank[i].query(x, d, &sigma, &c);
    if (counter) counter->calls[static_cast<size_t>(i)] += 1;
    out.sigma += sigma * p;
    for (int ch = 0; ch < 3; ++ch) out.color[ch] += c[ch] * p;
  }
  return out;
}

// Per-batch routing statistics feeding the auxiliary losses. c counts one
// dispatch per (point, selected expert) pair; m is accumulated on the tape
// separately, this struct carries the plain values for reporting.
struct BatchRoutingStats {
  std::vector<int64_t> dispatch_counts;  // c_i
  std::vector<double> prob_mass;         // m_i
  int64_t batch_points = 0;              // |B| = filtered points
};

template <typename T>
struct DispatchOutput {
  typename ad::Tape<T>::Id sigma;  // (P, 1) combined density, weighted
  typename ad::Tape<T>::Id color;  // (P, 3) combined color, weighted
  std::vector<std::vector<int>> rows_per_expert;
  BatchRoutingStats stats;
};

// Routing weight modes for the dispatch path.
enum class CombineMode {
  gate_topk,        // standard: gate probabilities, top-k
  uniform_all,      // ensemble limit: weight 1/M, every expert (ignores k)
  single_expert,    // only `focus_expert`, weight 1 (pretraining/baselines)
  expert_masked,    // gate routing, but only `focus_expert` contributes
};

// Batched sparse dispatch on the tape. `probs` is the (P, M) gate output
// (ignored for uniform_all/single_expert). Only selected experts are
// evaluated; gradients reach selected experts and, through the probability
// factors, the gate. Expert contributions are summed in ascending index
// order.
template <typename T>
DispatchOutput<T> dispatch_rows(Binding<T>& bind, const ExpertBank<T>& bank,
                                typename ad::Tape<T>::Id probs,
                                const std::vector<Vec3<T>>& positions,
                                const ad::Tensor<T>& encodings, int k,
                                CombineMode mode = CombineMode::gate_topk,
                                int focus_expert = -1,
                                EvalCounter* counter = nullptr) {
  auto& tape = bind.tape();
  const int P = static_cast<int>(positions.size());
  const int M = bank.size();
  DispatchOutput<T> out;
  out.rows_per_expert.assign(static_cast<size_t>(M), {});
  out.stats.dispatch_counts.assign(static_cast<size_t>(M), 0);
  out.stats.prob_mass.assign(static_cast<size_t>(M), 0.0);
  out.stats.batch_points = P;
  if (counter) counter->ensure(M);

  const bool uses_gate =
      mode == CombineMode::gate_topk || mode == CombineMode::expert_masked;
  if (uses_gate) {
    const ad::Tensor<T>& pv = tape.value(probs);
    if (pv.rows() != P || pv.cols() != M)
      throw std::invalid_argument("dispatch_rows: probs shape mismatch");
    if (k < 1 || k > M)
      throw std::invalid_argument("dispatch_rows: k out of range");
    std::vector<T> row(static_cast<size_t>(M));
    for (int p = 0; p < P; ++p) {
      const T* pr = pv.data.data() + static_cast<size_t>(p) * M;
      for (int i = 0; i < M; ++i) {
        row[static_cast<size_t>(i)] = pr[i];
        out.stats.prob_mass[static_cast<size_t>(i)] += double(pr[i]);
      }
      auto decision = route(row, k);
      for (int i : decision.indices) {
        out.stats.dispatch_counts[static_cast<size_t>(i)] += 1;
        if (mode == CombineMode::gate_topk || i == focus_expert)
          out.rows_per_expert[static_cast<size_t>(i)].push_back(p);
      }
    }
  } else if (mode == CombineMode::uniform_all) {
    for (int i = 0; i < M; ++i) {
      out.rows_per_expert[static_cast<size_t>(i)].resize(static_cast<size_t>(P));
      std::iota(out.rows_per_expert[static_cast<size_t>(i)].begin(),
                out.rows_per_expert[static_cast<size_t>(i)].end(), 0);
      out.stats.dispatch_counts[static_cast<size_t>(i)] = P;
      out.stats.prob_mass[static_cast<size_t>(i)] = double(P) / M;
    }
  } else {  // single_expert
    if (focus_expert < 0 || focus_expert >= M)
      throw std::invalid_argument("dispatch_rows: focus_expert out of range");
    auto& rows = out.rows_per_expert[static_cast<size_t>(focus_expert)];
    rows.resize(static_cast<size_t>(P));
    std::iota(rows.begin(), rows.end(), 0);
    out.stats.dispatch_counts[static_cast<size_t>(focus_expert)] = P;
    out.stats.prob_mass[static_cast<size_t>(focus_expert)] = double(P);
  }

  auto sigma_acc = tape.constant(ad::Tensor<T>({P, 1}));
  auto color_acc = tape.constant(ad::Tensor<T>({P, 3}));
  for (int i = 0; i < M; ++i) {
    const auto& rows = out.rows_per_expert[static_cast<size_t>(i)];
    if (rows.empty()) continue;
    const int Pi = static_cast<int>(rows.size());
    if (counter) counter->calls[static_cast<size_t>(i)] += Pi;

    std::vector<Vec3<T>> sub_pos(static_cast<size_t>(Pi));
    ad::Tensor<T> sub_enc({Pi, kDirEncodingDim});
    for (int j = 0; j < Pi; ++j) {
      sub_pos[static_cast<size_t>(j)] = positions[static_cast<size_t>(rows[static_cast<size_t>(j)])];
      for (int c = 0; c < kDirEncodingDim; ++c)
        sub_enc.data[static_cast<size_t>(j) * kDirEncodingDim + c] =
            encodings.data[static_cast<size_t>(rows[static_cast<size_t>(j)]) * kDirEncodingDim + c];
    }
    auto eo = bank[i].query_rows(bind, sub_pos, sub_enc);

    typename ad::Tape<T>::Id weight;
    if (uses_gate) {
      // p_sel[j] = probs[rows[j], i]: gather the routed rows of the prob
      // matrix, then project out column i with a one-hot matmul so the
      // softmax stays on the gradient path.
      auto ones = tape.constant(ad::Tensor<T>({Pi}, T(1)));
      auto sub_probs = tape.gather_scale(probs, rows, ones);
      ad::Tensor<T> onehot({M, 1});
      onehot.data[static_cast<size_t>(i)] = T(1);
      weight = tape.matmul(sub_probs, tape.constant(std::move(onehot)));
    } else if (mode == CombineMode::uniform_all) {
      weight = tape.constant(ad::Tensor<T>({Pi, 1}, T(1) / static_cast<T>(M)));
    } else {
      weight = tape.constant(ad::Tensor<T>({Pi, 1}, T(1)));
    }

    std::vector<int> ident(static_cast<size_t>(Pi));
    std::iota(ident.begin(), ident.end(), 0);
    auto w_sigma = tape.gather_scale(eo.sigma, ident, weight);
    auto w_color = tape.gather_scale(eo.color, ident, weight);
    sigma_acc = tape.add(sigma_acc, tape.scatter_rows(w_sigma, rows, P));
    color_acc = tape.add(color_acc, tape.scatter_rows(w_color, rows, P));
  }
  out.sigma = sigma_acc;
  out.color = color_acc;
  return out;
}

}  // namespace moefield
