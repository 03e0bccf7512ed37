#include "doctest.h"

#include <cmath>
#include <cstring>

#include "advlab/rng.hpp"
#include "advlab/tensor.hpp"

using namespace advlab;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// keeps every coordinate at least `margin` away from zero (relu/clamp kinks)
Tensor random_away_from(std::vector<int> shape, Rng& rng, double margin) {
  Tensor t = random_tensor(std::move(shape), rng);
  for (auto& v : t.data) {
    if (std::fabs(v) < margin) v = v >= 0 ? margin + v : -margin + v;
  }
  return t;
}

// Direct-summation convolution, independent of the graph implementation.
Tensor conv2d_oracle(const Tensor& x, const Tensor& k, int pad) {
  int B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  int F = k.shape[0], kh = k.shape[2], kw = k.shape[3];
  int Ho = H + 2 * pad - kh + 1, Wo = W + 2 * pad - kw + 1;
  Tensor out({B, F, Ho, Wo});
  for (int b = 0; b < B; ++b)
    for (int f = 0; f < F; ++f)
      for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j) {
          double s = 0;
          for (int c = 0; c < C; ++c)
            for (int u = 0; u < kh; ++u)
              for (int v = 0; v < kw; ++v) {
                int yi = i + u - pad, xj = j + v - pad;
                if (yi < 0 || yi >= H || xj < 0 || xj >= W) continue;
                s += x.data[((b * C + c) * H + yi) * W + xj] *
                     k.data[((f * C + c) * kh + u) * kw + v];
              }
          out.data[((b * F + f) * Ho + i) * Wo + j] = s;
        }
  return out;
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("add computes elementwise sums") {
  Graph g;
  Var a = g.leaf(Tensor({2}, {1, 2}));
  Var b = g.leaf(Tensor({2}, {3, 4}));
  Var c = g.add(a, b);
  CHECK(g.value(c).data == std::vector<double>{4, 6});
}

TEST_CASE("softmax cross-entropy of uniform logits is ln 2") {
  Graph g;
  Var logits = g.leaf(Tensor({2}, {0, 0}));
  Var y = g.leaf(Tensor({1}, {0}));
  Var l = g.softmax_xent(logits, y);
  CHECK(g.value(l).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("conv2d matches the direct-summation oracle") {
  // 3x3 ones * 2x2 ones, no padding -> 2x2 of 4
  Tensor x({1, 1, 3, 3}, 1.0);
  Tensor k({1, 1, 2, 2}, 1.0);
  Tensor expect = conv2d_oracle(x, k, 0);
  REQUIRE(expect.shape == std::vector<int>{1, 1, 2, 2});
  for (double v : expect.data) CHECK(v == 4.0);

  Graph g;
  Var out = g.conv2d(g.leaf(x), g.leaf(k), 0);
  CHECK(g.value(out).data == expect.data);

  // random shapes/padding against the oracle
  Rng rng(11);
  for (int trial = 0; trial < 4; ++trial) {
    Tensor xr = random_tensor({2, 3, 5, 4}, rng);
    Tensor kr = random_tensor({2, 3, 3, 3}, rng);
    int pad = trial % 2;
    Graph g2;
    Tensor got = g2.value(g2.conv2d(g2.leaf(xr), g2.leaf(kr), pad));
    Tensor want = conv2d_oracle(xr, kr, pad);
    REQUIRE(got.shape == want.shape);
    for (std::int64_t i = 0; i < got.numel(); ++i)
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("backward of sum-of-squares is 2w") {
  Graph g;
  Var w = g.leaf(Tensor({1}, {3}), true);
  Var loss = g.sum_squares(w);
  g.backward(loss);
  CHECK(g.grad(w)[0] == 6.0);
}

TEST_CASE("backward of a linear form returns the weights") {
  Graph g;
  Var w = g.leaf(Tensor({2}, {1, -2}));
  Var x = g.leaf(Tensor({2}, {0.3, 0.7}), true);
  Var loss = g.sum(g.mul(w, x));
  g.backward(loss);
  CHECK(g.grad(x).data == std::vector<double>{1, -2});
}

TEST_CASE("fan-out accumulates gradients") {
  Graph g;
  Var x = g.leaf(Tensor({3}, {1, 2, 3}), true);
  Var loss = g.sum(g.add(x, x));
  g.backward(loss);
  for (double v : g.grad(x).data) CHECK(v == 2.0);
}

TEST_CASE("graph replay is bit-identical") {
  Rng rng(5);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor w = random_tensor({4, 2}, rng);
  auto run = [&]() {
    Graph g;
    Var vx = g.leaf(x, true);
    Var vw = g.leaf(w, true);
    Var loss = g.sum_squares(g.relu(g.matmul(vx, vw)));
    g.backward(loss);
    return std::make_pair(g.grad(vx).data, g.grad(vw).data);
  };
  auto r1 = run();
  auto r2 = run();
  CHECK(std::memcmp(r1.first.data(), r2.first.data(), r1.first.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(r1.second.data(), r2.second.data(), r2.second.size() * sizeof(double)) == 0);
}

TEST_CASE("shape mismatches and bad inputs are rejected") {
  Graph g;
  Var a = g.leaf(Tensor({2}, {1, 2}));
  Var b = g.leaf(Tensor({3}, {1, 2, 3}));
  CHECK_THROWS_WITH_AS(g.add(a, b), doctest::Contains("[2]"), Error);
  CHECK_THROWS_AS(g.matmul(a, b), Error);
  CHECK_THROWS_AS(op_kind_from_name("frobnicate"), Error);
  CHECK_THROWS_AS(g.forward_op("add", {a}), Error);

  Graph g2;
  CHECK_THROWS_AS(g2.value(a), Error);  // foreign handle
}

TEST_CASE("backward rejects non-scalar loss and repeated runs") {
  Graph g;
  Var x = g.leaf(Tensor({2}, {1, 2}), true);
  Var y = g.add(x, x);
  CHECK_THROWS_AS(g.backward(y), Error);
  Var loss = g.sum(y);
  g.backward(loss);
  CHECK_THROWS_AS(g.backward(loss), Error);
  g.reset_grads();
  g.backward(loss);  // allowed again after reset
  CHECK(g.grad(x)[0] == 2.0);
}

TEST_CASE("sign has zero derivative and sign(0) = 0") {
  Graph g;
  Var x = g.leaf(Tensor({3}, {-2, 0, 5}), true);
  Var s = g.sign(x);
  CHECK(g.value(s).data == std::vector<double>{-1, 0, 1});
  Var loss = g.sum(g.mul(s, x));
  g.backward(loss);
  // only the s*x product path contributes; d(sign)/dx is zero
  CHECK(g.grad(x).data == std::vector<double>{-1, 0, 1});
}

TEST_CASE("clamp passes gradient inside the interval, zero at saturation") {
  Graph g;
  Var x = g.leaf(Tensor({3}, {-2.0, 0.25, 2.0}), true);
  Var c = g.clamp(x, -1.0, 1.0);
  CHECK(g.value(c).data == std::vector<double>{-1.0, 0.25, 1.0});
  g.backward(g.sum(c));
  CHECK(g.grad(x).data == std::vector<double>{0.0, 1.0, 0.0});
}

TEST_CASE("analytic gradients match central finite differences per op kind") {
  Rng rng(17);
  const double h = 1e-5;
  const double tol = 1e-4;

  auto check_fd = [&](const std::string& what, const std::function<Var(Graph&, Var)>& f,
                      const Tensor& point) {
    FiniteDiffReport rep = finite_diff_check(f, point, h);
    INFO(what, ": ", rep.note);
    CHECK_FALSE(rep.unstable);
    CHECK(rep.max_rel_error < tol);
  };

  Tensor c23 = random_tensor({2, 3}, rng);
  check_fd("add", [&](Graph& g, Var x) { return g.sum_squares(g.add(x, g.leaf(c23))); },
           random_tensor({2, 3}, rng));
  check_fd("sub", [&](Graph& g, Var x) { return g.sum_squares(g.sub(x, g.leaf(c23))); },
           random_tensor({2, 3}, rng));
  check_fd("mul", [&](Graph& g, Var x) { return g.sum_squares(g.mul(x, g.leaf(c23))); },
           random_tensor({2, 3}, rng));
  check_fd("mul row-broadcast",
           [&](Graph& g, Var x) { return g.sum_squares(g.mul(g.leaf(c23), x)); },
           random_tensor({3}, rng));
  Tensor img0 = random_tensor({2, 3, 2, 2}, rng);
  check_fd("add channel-broadcast",
           [&](Graph& g, Var x) { return g.sum_squares(g.add(g.leaf(img0), x)); },
           random_tensor({3}, rng));

  Tensor m34 = random_tensor({3, 4}, rng);
  check_fd("matmul lhs", [&](Graph& g, Var x) { return g.sum_squares(g.matmul(x, g.leaf(m34))); },
           random_tensor({2, 3}, rng));
  check_fd("matmul rhs", [&](Graph& g, Var x) { return g.sum_squares(g.matmul(g.leaf(m34), x)); },
           random_tensor({4, 2}, rng));

  Tensor img = random_tensor({2, 2, 4, 4}, rng);
  Tensor ker = random_tensor({3, 2, 3, 3}, rng);
  check_fd("conv2d input", [&](Graph& g, Var x) { return g.sum_squares(g.conv2d(x, g.leaf(ker), 1)); },
           img);
  check_fd("conv2d kernel",
           [&](Graph& g, Var x) { return g.sum_squares(g.conv2d(g.leaf(img), x, 1)); }, ker);

  check_fd("relu", [&](Graph& g, Var x) { return g.sum_squares(g.relu(x)); },
           random_away_from({2, 3}, rng, 0.05));
  check_fd("batch-mean", [&](Graph& g, Var x) { return g.batch_mean(g.mul(x, x)); },
           random_tensor({2, 3}, rng));
  check_fd("sum", [&](Graph& g, Var x) { return g.sum(g.mul(x, x)); }, random_tensor({5}, rng));

  Tensor labels({4}, {0, 2, 1, 2});
  check_fd("softmax-cross-entropy",
           [&](Graph& g, Var x) { return g.batch_mean(g.softmax_xent(x, g.leaf(labels))); },
           random_tensor({4, 3}, rng));

  // clamp kinks sit at the bounds; keep coordinates clear of +-0.5
  check_fd("clamp", [&](Graph& g, Var x) { return g.sum_squares(g.clamp(x, -0.5, 0.5)); },
           Tensor({2, 3}, {-0.9, -0.3, -0.1, 0.2, 0.4, 0.8}));
  check_fd("scalar-mul", [&](Graph& g, Var x) { return g.sum_squares(g.scalar_mul(x, -1.7)); },
           random_tensor({2, 3}, rng));
  check_fd("sum-of-squares", [&](Graph& g, Var x) { return g.sum_squares(x); },
           random_tensor({2, 3}, rng));
  check_fd("reshape", [&](Graph& g, Var x) { return g.sum_squares(g.reshape(x, {3, 2})); },
           random_tensor({2, 3}, rng));
}

TEST_CASE("finite_diff_check on a quadratic is nearly exact") {
  FiniteDiffReport rep = finite_diff_check(
      [](Graph& g, Var x) { return g.sum_squares(x); }, Tensor({1}, {2.0}), 1e-5);
  CHECK_FALSE(rep.unstable);
  CHECK(rep.max_rel_error < 1e-8);
}

TEST_CASE("finite_diff_check flags a kink") {
  // |x| built as relu(x) + relu(-x); at x = 0 the one-sided slopes disagree
  FiniteDiffReport rep = finite_diff_check(
      [](Graph& g, Var x) {
        return g.sum(g.add(g.relu(x), g.relu(g.scalar_mul(x, -1.0))));
      },
      Tensor({1}, {0.0}), 1e-5);
  CHECK(rep.unstable);
  CHECK(rep.worst_coord == 0);
}

TEST_CASE("random multi-layer perceptron gradients match finite differences") {
  Rng rng(23);
  Tensor x0 = random_tensor({1, 2}, rng);
  // theta: [7] = w1 (2x2), w2 (2x1), b; loss = (w2 . relu(x w1) + b)^2.
  // Slices are extracted with constant selection matrices so the whole
  // parameter vector is one FD point.
  Tensor theta0 = random_away_from({7}, rng, 0.05);
  auto f = [&](Graph& g, Var theta) {
    Tensor sel1({7, 4});
    sel1.data[0 * 4 + 0] = 1;
    sel1.data[1 * 4 + 1] = 1;
    sel1.data[2 * 4 + 2] = 1;
    sel1.data[3 * 4 + 3] = 1;
    Tensor sel2({7, 2});
    sel2.data[4 * 2 + 0] = 1;
    sel2.data[5 * 2 + 1] = 1;
    Tensor sel3({7, 1});
    sel3.data[6] = 1;
    Var th2 = g.reshape(theta, {1, 7});
    Var w1v = g.reshape(g.matmul(th2, g.leaf(sel1)), {2, 2});
    Var w2v = g.reshape(g.matmul(th2, g.leaf(sel2)), {2, 1});
    Var bv = g.matmul(th2, g.leaf(sel3));
    Var hidden = g.relu(g.matmul(g.leaf(x0), w1v));
    Var out = g.add(g.matmul(hidden, w2v), bv);
    return g.sum_squares(out);
  };
  FiniteDiffReport rep = finite_diff_check(f, theta0, 1e-5);
  INFO(rep.note);
  CHECK_FALSE(rep.unstable);
  CHECK(rep.max_rel_error < 1e-4);
}

}  // TEST_SUITE
