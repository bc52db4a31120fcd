// Copyright (c) 2026 moefield authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "moefield/tensor.hpp"
#include "support/gradient_suite.hpp"
#include "support/oracles.hpp"

using namespace moefield;
using Tape = ad::Tape<double>;
using Tensor = ad::Tensor<double>;

TEST_CASE("softmax of zeros is uniform") {
  Tape tape;
  auto x = tape.constant(Tensor({3}, 0.0));
  auto y = tape.softmax_rows(x);
  for (double v : tape.value(y).data) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("softplus(0) = ln 2") {
  Tape tape;
  auto x = tape.constant(Tensor::scalar(0.0));
  auto y = tape.softplus(x);
  CHECK(tape.value(y).data[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("matmul identity") {
  Tape tape;
  auto eye = tape.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  auto m = tape.constant(Tensor({2, 2}, {2.5, -1.0, 0.25, 7.0}));
  auto y = tape.matmul(eye, m);
  CHECK(tape.value(y).data == std::vector<double>{2.5, -1.0, 0.25, 7.0});
}

TEST_CASE("backward of sum of squares") {
  Tensor x({3}, {1, 2, 3});
  x.requires_grad = true;
  Tape tape;
  auto xi = tape.leaf(x);
  auto root = tape.sum(tape.square(xi));
  tape.backward(root);
  CHECK(tape.grad(xi).data == std::vector<double>{2, 4, 6});
}

TEST_CASE("softmax gradient at equal logits") {
  Tensor x({2}, {0.7, 0.7});
  x.requires_grad = true;
  auto build = [&](Tape& t) -> testing::BuiltGraph {
    auto xi = t.leaf(x);
    auto probs = t.softmax_rows(xi);
    auto pick = t.constant(Tensor({2}, {1.0, 0.0}));
    return {t.sum(t.mul(probs, pick)), {xi}};
  };
  Tape tape;
  auto g = build(tape);
  tape.backward(g.root);
  CHECK(tape.grad(g.leaves[0]).data[0] == doctest::Approx(0.25).epsilon(1e-9));
  auto fd = testing::finite_difference_check({&x}, build, 1e-5);
  CHECK(fd.max_rel_err < 1e-6);
}

TEST_CASE("unreachable leaf gets zero gradient") {
  Tensor x({2}, {1, 2}), y({2}, {3, 4});
  x.requires_grad = y.requires_grad = true;
  Tape tape;
  auto xi = tape.leaf(x);
  auto yi = tape.leaf(y);
  tape.backward(tape.sum(tape.square(xi)));
  CHECK(tape.grad(yi).data == std::vector<double>{0, 0});
}

TEST_CASE("shape mismatch leaves no partial tape entry") {
  Tape tape;
  auto a = tape.constant(Tensor({2, 3}, 1.0));
  auto b = tape.constant(Tensor({4, 2}, 1.0));
  auto before = tape.size();
  CHECK_THROWS_AS(tape.matmul(a, b), std::invalid_argument);
  CHECK_THROWS_AS(tape.add(a, b), std::invalid_argument);
  CHECK(tape.size() == before);
}

TEST_CASE("backward requires a scalar root") {
  Tensor x({2}, {1, 2});
  x.requires_grad = true;
  Tape tape;
  auto xi = tape.leaf(x);
  CHECK_THROWS_AS(tape.backward(xi), std::invalid_argument);
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(7);
  Tape tape;
  auto x = tape.constant(testing::random_tensor({16, 5}, rng, -8.0, 8.0, false));
  auto y = tape.softmax_rows(x);
  const auto& v = tape.value(y);
  for (int r = 0; r < 16; ++r) {
    double s = 0;
    for (int c = 0; c < 5; ++c) s += v.data[static_cast<size_t>(r * 5 + c)];
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("gradients are deterministic across identical runs") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    Tensor a = testing::random_tensor({4, 3}, rng);
    Tensor b = testing::random_tensor({3, 2}, rng);
    Tape tape;
    auto ai = tape.leaf(a), bi = tape.leaf(b);
    auto root = tape.sum(tape.square(tape.sigmoid(tape.matmul(ai, bi))));
    tape.backward(root);
    auto ga = tape.grad(ai).data;
    auto gb = tape.grad(bi).data;
    ga.insert(ga.end(), gb.begin(), gb.end());
    return ga;
  };
  auto g1 = run(42), g2 = run(42);
  CHECK(g1 == g2);  // bit-identical
}

TEST_CASE("gather_scale forward semantics") {
  Tape tape;
  auto src = tape.constant(Tensor({3, 2}, {1, 2, 3, 4, 5, 6}));
  auto scales = tape.constant(Tensor({2}, {10.0, 0.5}));
  auto out = tape.gather_scale(src, {2, 0}, scales);
  CHECK(tape.value(out).data == std::vector<double>{50, 60, 0.5, 1});
}

TEST_CASE("operation dispatch covers the documented op set") {
  Rng rng(3);
  Tape tape;
  using Id = Tape::Id;
  Tensor m = testing::random_tensor({2, 2}, rng, -1, 1, false);
  Id a = tape.constant(m);
  Id b = tape.constant(m);
  for (auto op : {ad::Op::add, ad::Op::mul, ad::Op::matmul, ad::Op::relu,
                  ad::Op::softplus, ad::Op::softmax_rows, ad::Op::sum,
                  ad::Op::mean, ad::Op::square}) {
    std::vector<Id> in{a, b};
    CHECK_NOTHROW(tape.apply(op, in));
  }
  Id scales = tape.constant(Tensor({2}, {1.0, 1.0}));
  std::vector<Id> in{a, scales};
  CHECK_NOTHROW(tape.apply(ad::Op::gather_scale, in, {0, 1}));
}

TEST_CASE("finite differences across the core op suite") {
  auto suite = testing::gradient_suite();
  const int seeds = 100;
  for (const auto& entry : suite) {
    double worst = 0;
    for (int s = 1; s <= seeds; ++s)
      worst = std::max(worst, entry.run(static_cast<uint64_t>(s)));
    INFO(entry.name);
    CHECK(worst < 1e-4);
  }
}
