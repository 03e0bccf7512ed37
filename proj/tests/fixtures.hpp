#pragma once

// Closed-form loss fixtures shared across the attack and analysis tests.

#include "advlab/attack.hpp"
#include "advlab/rng.hpp"

namespace advlab::testing {

// L(x) = w . x per example
struct LinearLoss : BatchLoss {
  Tensor w;  // [D]
  explicit LinearLoss(Tensor w_) : w(std::move(w_)) {}
  Var build_per_example(Graph& g, Var x, const std::vector<int>&) const override {
    int B = g.value(x).shape[0];
    Tensor wcol({w.shape[0], 1}, w.data);
    return g.reshape(g.matmul(x, g.leaf(wcol)), {B});
  }
};

// L(x) = x^2 per example (1-D inputs)
struct QuadLoss : BatchLoss {
  Var build_per_example(Graph& g, Var x, const std::vector<int>&) const override {
    int B = g.value(x).shape[0];
    return g.reshape(g.mul(x, x), {B});
  }
};

// L(x) = -(x - a)^2, concave with its maximum at a (1-D inputs)
struct ConcaveLoss : BatchLoss {
  double a;
  explicit ConcaveLoss(double a_) : a(a_) {}
  Var build_per_example(Graph& g, Var x, const std::vector<int>&) const override {
    int B = g.value(x).shape[0];
    Var d = g.sub(x, g.leaf(Tensor({1}, {a})));
    return g.reshape(g.scalar_mul(g.mul(d, d), -1.0), {B});
  }
};

inline double loss_at(const BatchLoss& loss, const Tensor& x, const std::vector<int>& y,
                      const Tensor* delta = nullptr) {
  Graph g;
  Tensor point = delta ? add_of(x, *delta) : x;
  Var xv = g.leaf(std::move(point));
  return g.value(loss.build(g, xv, y)).item();
}

}  // namespace advlab::testing
