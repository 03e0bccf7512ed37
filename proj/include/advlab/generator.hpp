#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "advlab/nn.hpp"
#include "advlab/perturbation.hpp"
#include "advlab/tensor.hpp"

namespace advlab {

/// Static configuration of the learnable generator. The two `use_*` flags
/// carve out the ablations: use_layerwise=false drops the per-block deltas
/// (leaving the input-only learnable generator), use_init=false drops the
/// per-example start point.
struct GeneratorConfig {
  double alpha_init = -1.0;         // <0: resolved to epsilon/2 when the run starts
  double alpha_init_blocks = -1.0;  // alpha_2..alpha_n start; <0: same as alpha_init
  double alpha_omega = -1.0;        // <0: resolved to epsilon
  double lambda_reg = 400.0;   // L2 pressure on the step sizes
  double mu_alpha_max = 5e-8;  // peak of the cyclic schedule for mu_alpha
  bool mu_omega_auto = true;   // mu_omega = alpha_1 / alpha_omega
  double mu_omega = 0.0;       // used when mu_omega_auto = false
  bool use_layerwise = true;
  bool use_init = true;
  enum class OmegaInit { zeros, uniform } omega_init = OmegaInit::zeros;

  void validate() const;
};

/// Learnable generator state: one step size per block (alpha[0] drives the
/// input delta) plus the fixed initialization scale.
struct GeneratorParams {
  std::vector<double> alpha;
  double alpha_omega = 0.0;
  GeneratorConfig cfg;

  static GeneratorParams make(const GeneratorConfig& cfg, int blocks, double epsilon);
  double mu_omega_now() const;
  void check_finite() const;
};

/// Per-example start points omega_x, keyed by dataset index, every
/// coordinate held in [-1, 1]. Entries are created on first access (zeros
/// or seeded uniform), never an error for unseen indices.
class OmegaStore {
 public:
  OmegaStore() = default;
  OmegaStore(GeneratorConfig::OmegaInit init, std::uint64_t seed) : init_(init), seed_(seed) {}

  Tensor gather(std::span<const std::int64_t> ids, int row_dim);
  void scatter(std::span<const std::int64_t> ids, const Tensor& batch);

  const std::map<std::int64_t, Tensor>& entries() const { return entries_; }
  void insert(std::int64_t id, Tensor row);  // checkpoint restore
  std::size_t size() const { return entries_.size(); }

 private:
  Tensor make_row(std::int64_t id, int row_dim) const;
  std::map<std::int64_t, Tensor> entries_;
  GeneratorConfig::OmegaInit init_ = GeneratorConfig::OmegaInit::zeros;
  std::uint64_t seed_ = 0;
};

/// delta_1 = alpha_omega * omega_x for the batch rows (zeros when the
/// learnable initialization is disabled).
Tensor init_delta1(const GeneratorParams& gen, OmegaStore& omega,
                   std::span<const std::int64_t> ids, int row_dim);

/// First round of the two-round step: forward with delta_1 at the input, one
/// backward for all block-input gradients, then the signed increments.
/// delta_1 is projected to [-eps, eps]; block deltas (i >= 2) start from
/// zero so they are alpha_i * sign(grad_i).
struct GenerateOutput {
  PerturbationSet deltas;
  Tensor input_sign;                // sign of the round-1 model-input gradient
  std::vector<Tensor> block_signs;  // [i-1] for block i; entry 0 stays empty
};
GenerateOutput apart_generate(const ResidualNet& net, const Tensor& x, const std::vector<int>& y,
                              const GeneratorParams& gen, const Tensor& omega_batch,
                              double epsilon);

/// Gradients for the generator from the second-round graph, under the
/// first-order rule: the round-1 signs are constants, d(loss)/d(omega) flows
/// through the alpha_omega * omega term (clamp passing gradient inside the
/// ball), d(loss)/d(alpha_i) is the inner product of the delta gradient with
/// the frozen sign.
struct GeneratorGrads {
  Tensor omega_grad;               // defined when use_init
  std::vector<double> alpha_grads;  // one per block; zero where no delta was injected
};

/// Both rounds of Algorithm 1's inner step, leaving all state untouched:
/// returns the perturbations, the round-2 loss/logits, and the gradients for
/// theta and the generator. Costs exactly 2 forward + 2 backward passes.
struct ApartStepOutput {
  PerturbationSet deltas;
  double loss = 0.0;
  Tensor logits;
  std::vector<Tensor> theta_grads;
  GeneratorGrads gen_grads;
};
ApartStepOutput apart_step(const ResidualNet& net, const Tensor& x, const std::vector<int>& y,
                           const GeneratorParams& gen, const Tensor& omega_batch, double epsilon);

/// Ascent updates:
///   omega   <- clamp(omega + mu_omega * sign(d loss/d omega), -1, 1)
///   alpha_i <- alpha_i + mu_alpha * (d loss/d alpha_i - 2 * lambda * alpha_i)
/// The caller scatters omega_batch back into the store afterwards.
void update_generator(GeneratorParams& gen, Tensor& omega_batch, const GeneratorGrads& grads,
                      double mu_alpha, double mu_omega);

/// The input-only learnable generator: apart_step with the per-block deltas
/// forced off. Same code path, so the reduction is exact by construction.
ApartStepOutput fgsm_plus_step(const ResidualNet& net, const Tensor& x, const std::vector<int>& y,
                               const GeneratorParams& gen, const Tensor& omega_batch,
                               double epsilon);

}  // namespace advlab
