// Copyright (c) 2026 moefield authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "moefield/grid.hpp"
#include "support/oracles.hpp"

using namespace moefield;

namespace {

VoxelGrid<double> random_grid(std::array<int, 3> res, int channels, uint64_t seed) {
  VoxelGrid<double> g(res, channels);
  Rng rng(seed);
  for (auto& v : g.values.data) v = rng.uniform(-2.0, 2.0);
  return g;
}

}  // namespace

TEST_CASE("interpolation is exact at lattice points") {
  auto g = random_grid({4, 3, 5}, 2, 11);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 5; ++k) {
        Vec3<double> x{double(i) / 3, double(j) / 2, double(k) / 4};
        auto out = interpolate(g, x);
        for (int c = 0; c < 2; ++c)
          CHECK(out[static_cast<size_t>(c)] == doctest::Approx(g.at(i, j, k, c)).epsilon(1e-12));
      }
}

TEST_CASE("cell center interpolates to the mean of 8 corners") {
  auto g = random_grid({3, 3, 3}, 1, 5);
  Vec3<double> x{0.25, 0.25, 0.25};  // center of cell (0,0,0)-(1,1,1) at res 3
  double mean = 0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k) mean += g.at(i, j, k, 0);
  mean /= 8;
  CHECK(interpolate(g, x)[0] == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("random queries match the 8-term weight oracle") {
  auto g = random_grid({4, 4, 4}, 3, 99);
  Rng rng(100);
  std::vector<double> vals(g.values.data.begin(), g.values.data.end());
  for (int trial = 0; trial < 200; ++trial) {
    Vec3<double> x{rng.uniform(-0.2, 1.2), rng.uniform(-0.2, 1.2),
                   rng.uniform(-0.2, 1.2)};
    auto got = interpolate(g, x);
    auto want = testing::trilinear_oracle({4, 4, 4}, 3, vals, x);
    for (int c = 0; c < 3; ++c)
      CHECK(std::abs(got[static_cast<size_t>(c)] - want[static_cast<size_t>(c)]) < 1e-12);
  }
}

TEST_CASE("interpolation is affine along axis-aligned segments in a cell") {
  auto g = random_grid({5, 5, 5}, 1, 21);
  // Three collinear points inside one cell along x: the midpoint value must
  // be the average of the endpoints.
  Vec3<double> a{0.30, 0.42, 0.61}, b{0.44, 0.42, 0.61};
  Vec3<double> mid{(a[0] + b[0]) / 2, a[1], a[2]};
  double va = interpolate(g, a)[0], vb = interpolate(g, b)[0];
  CHECK(interpolate(g, mid)[0] == doctest::Approx((va + vb) / 2).epsilon(1e-12));
}

TEST_CASE("out-of-bounds queries clamp to the cube") {
  auto g = random_grid({4, 4, 4}, 1, 7);
  CHECK(interpolate(g, Vec3<double>{-3.0, 0.5, 0.5})[0] ==
        doctest::Approx(interpolate(g, Vec3<double>{0.0, 0.5, 0.5})[0]).epsilon(1e-12));
  CHECK(interpolate(g, Vec3<double>{0.5, 2.0, 0.5})[0] ==
        doctest::Approx(interpolate(g, Vec3<double>{0.5, 1.0, 0.5})[0]).epsilon(1e-12));
}

TEST_CASE("tape interpolation gradient equals the trilinear weights") {
  auto g = random_grid({3, 4, 3}, 1, 13);
  g.values.requires_grad = true;
  Vec3<double> x{0.37, 0.81, 0.22};
  ad::Tape<double> tape;
  auto gi = tape.leaf(g.values);
  auto out = interpolate_rows(tape, gi, g.resolution, {x});
  tape.backward(tape.sum(out));
  auto grads = tape.grad(gi);
  auto st = trilinear_stencil<double>(g.resolution, x);
  double total = 0;
  for (int n = 0; n < 8; ++n) {
    CHECK(grads.data[static_cast<size_t>(st.corner[n])] ==
          doctest::Approx(st.weight[n]).epsilon(1e-12));
    total += st.weight[n];
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("density activation") {
  CHECK(density_activation(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(density_activation(30.0) == doctest::Approx(30.0).epsilon(1e-9));
  // High-precision reference for the deep-negative tail.
  long double want = std::log1p(std::exp(-30.0L));
  CHECK(density_activation(-30.0) ==
        doctest::Approx(static_cast<double>(want)).epsilon(1e-10));
  Rng rng(3);
  for (int i = 0; i < 1000; ++i)
    CHECK(density_activation(rng.uniform(-100.0, 100.0)) >= 0.0);
}

TEST_CASE("grid blob round-trips bit-exactly") {
  auto g = random_grid({5, 3, 4}, 6, 55);
  std::stringstream ss;
  write_grid_blob(ss, g);
  auto back = read_grid_blob<double>(ss);
  CHECK(back.resolution == g.resolution);
  CHECK(back.channels == g.channels);
  CHECK(back.values.data == g.values.data);
}

TEST_CASE("grid blob rejects wrong dtype and bad magic") {
  VoxelGrid<float> g({2, 2, 2}, 1);
  std::stringstream ss;
  write_grid_blob(ss, g);
  CHECK_THROWS(read_grid_blob<double>(ss));
  std::stringstream bad("XXXX");
  CHECK_THROWS(read_grid_blob<float>(bad));
}

TEST_CASE("grid construction validates arguments") {
  CHECK_THROWS_AS((VoxelGrid<double>({1, 4, 4}, 1)), std::invalid_argument);
  CHECK_THROWS_AS((VoxelGrid<double>({4, 4, 4}, 0)), std::invalid_argument);
}
