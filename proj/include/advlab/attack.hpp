#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "advlab/nn.hpp"
#include "advlab/perturbation.hpp"
#include "advlab/tensor.hpp"

namespace advlab {

enum class AttackKind { fgsm, pgd, f_plus_fgsm, random_sign, gaussian };

AttackKind attack_kind_from_name(const std::string& name);
std::string attack_kind_name(AttackKind k);

struct AttackSpec {
  AttackKind kind = AttackKind::fgsm;
  double epsilon = 8.0 / 255.0;
  int steps = 0;           // pgd iteration count N
  double step_size = 0.0;  // 0 -> default: eps (fgsm), eps/4 (pgd), 1.25*eps (f+fgsm)
  enum class Init { zero, uniform_ball } init = Init::uniform_ball;
  std::uint64_t seed = 0;
  bool clamp_pixels = false;  // keep x+delta inside [0,1]

  double effective_step() const;
  std::string name() const;  // "fgsm", "pgd-20", ...
  void validate() const;
};

/// Batched differentiable loss. Attacks only need gradients of a scalar
/// mean loss at the input; the analysis oracle additionally wants the
/// per-example values. Implementations with pass counters override
/// run_backward.
class BatchLoss {
 public:
  virtual ~BatchLoss() = default;
  virtual Var build_per_example(Graph& g, Var x, const std::vector<int>& y) const = 0;
  virtual Var build(Graph& g, Var x, const std::vector<int>& y) const {
    return g.batch_mean(build_per_example(g, x, y));
  }
  virtual void run_backward(Graph& g, Var loss) const { g.backward(loss); }
};

/// Cross-entropy through a ResidualNet (input-site perturbations only).
class NetLoss : public BatchLoss {
 public:
  explicit NetLoss(const ResidualNet& net) : net_(net) {}
  Var build_per_example(Graph& g, Var x, const std::vector<int>& y) const override {
    NetBinding nb = net_.bind_var(g, x);
    return net_.per_example_loss(g, nb.logits, y);
  }
  void run_backward(Graph& g, Var loss) const override { net_.run_backward(g, loss); }

 private:
  const ResidualNet& net_;
};

/// Clamps every coordinate of delta into [-epsilon, +epsilon]; idempotent.
Tensor project_linf(const Tensor& delta, double epsilon);

/// d(mean loss)/dx at x + delta (delta optional). Throws, naming the batch
/// element, when a gradient comes back non-finite.
Tensor input_gradient(const BatchLoss& loss, const Tensor& x, const std::vector<int>& y,
                      const Tensor* delta = nullptr);

/// One signed gradient step of size epsilon from the clean input.
PerturbationSet fgsm(const BatchLoss& loss, const Tensor& x, const std::vector<int>& y,
                     double epsilon, bool clamp_pixels = false);

/// N rounds of projected sign ascent; spec.init chooses zero or uniform
/// start. Per-example noise streams are derived from (spec.seed, example id).
PerturbationSet pgd(const BatchLoss& loss, const Tensor& x, const std::vector<int>& y,
                    const AttackSpec& spec, std::span<const std::int64_t> example_ids);

/// Uniform start in the ball, one sign step of 1.25*epsilon, projected back.
PerturbationSet f_plus_fgsm(const BatchLoss& loss, const Tensor& x, const std::vector<int>& y,
                            const AttackSpec& spec, std::span<const std::int64_t> example_ids);

/// Model-free noise: random-sign (eps * sign(u)) or gaussian
/// (N(0,(eps/2)^2) clipped to the ball).
PerturbationSet noise(AttackKind kind, const std::vector<int>& shape, double epsilon,
                      std::uint64_t seed, std::span<const std::int64_t> example_ids);

/// Dispatch on spec.kind.
PerturbationSet perturb(const AttackSpec& spec, const BatchLoss& loss, const Tensor& x,
                        const std::vector<int>& y, std::span<const std::int64_t> example_ids);

}  // namespace advlab
