// Copyright (c) 2026 moefield authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace moefield {

// PCG32 (Melissa O'Neill's pcg-random.org minimal generator). We own the
// generator so that seeded runs are bit-reproducible across platforms and
// standard libraries; the generator state is two u64 words and serializes
// into checkpoints directly.
class Rng {
 public:
  Rng() : Rng(0x853c49e6748fea9bULL) {}
  explicit Rng(uint64_t seed, uint64_t stream = 0xda3e39cb94b95bdbULL) {
    state_ = 0;
    inc_ = (stream << 1u) | 1u;
    next_u32();
    state_ += seed;
    next_u32();
  }

  uint32_t next_u32() {
    uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
    uint32_t rot = static_cast<uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
  }

  uint64_t next_u64() {
    uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  // Uniform in [0,1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo,hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0,n).
  uint32_t uniform_index(uint32_t n) {
    // Lemire's bounded generation without modulo bias.
    uint64_t m = static_cast<uint64_t>(next_u32()) * n;
    uint32_t l = static_cast<uint32_t>(m);
    if (l < n) {
      uint32_t t = (-n) % n;
      while (l < t) {
        m = static_cast<uint64_t>(next_u32()) * n;
        l = static_cast<uint32_t>(m);
      }
    }
    return static_cast<uint32_t>(m >> 32);
  }

  struct State {
    uint64_t state;
    uint64_t inc;
  };
  State save() const { return {state_, inc_}; }
  void restore(const State& s) {
    state_ = s.state;
    inc_ = s.inc;
  }

 private:
  uint64_t state_;
  uint64_t inc_;
};

}  // namespace moefield
