#include "advlab/generator.hpp"

#include <cmath>

#include "advlab/rng.hpp"

namespace advlab {

void GeneratorConfig::validate() const {
  check(lambda_reg >= 0.0, "generator: lambda must be >= 0");
  check(mu_alpha_max >= 0.0, "generator: mu_alpha must be >= 0");
  check(mu_omega_auto || mu_omega >= 0.0, "generator: mu_omega must be >= 0");
}

GeneratorParams GeneratorParams::make(const GeneratorConfig& cfg, int blocks, double epsilon) {
  cfg.validate();
  check(blocks > 0, "generator: blocks must be > 0");
  check(epsilon > 0.0, "generator: epsilon must be > 0");
  GeneratorParams gp;
  gp.cfg = cfg;
  // all step sizes start from the same value unless the block start is
  // overridden (the frozen-generator regression pins the blocks to zero)
  double a0 = cfg.alpha_init >= 0.0 ? cfg.alpha_init : epsilon / 2.0;
  double ab = cfg.alpha_init_blocks >= 0.0 ? cfg.alpha_init_blocks : a0;
  gp.alpha.assign(static_cast<std::size_t>(blocks), ab);
  gp.alpha[0] = a0;
  gp.alpha_omega = cfg.use_init ? (cfg.alpha_omega >= 0.0 ? cfg.alpha_omega : epsilon) : 0.0;
  return gp;
}

double GeneratorParams::mu_omega_now() const {
  if (!cfg.use_init) return 0.0;
  if (!cfg.mu_omega_auto) return cfg.mu_omega;
  return alpha_omega != 0.0 ? alpha[0] / alpha_omega : 0.0;
}

void GeneratorParams::check_finite() const {
  for (double a : alpha)
    check(std::isfinite(a), "generator: non-finite step size");
  check(std::isfinite(alpha_omega), "generator: non-finite alpha_omega");
}

Tensor OmegaStore::make_row(std::int64_t id, int row_dim) const {
  Tensor row({row_dim});
  if (init_ == GeneratorConfig::OmegaInit::uniform) {
    Rng rng(mix_seed(seed_, "omega", static_cast<std::uint64_t>(id)));
    for (auto& v : row.data) v = rng.uniform(-1.0, 1.0);
  }
  return row;
}

Tensor OmegaStore::gather(std::span<const std::int64_t> ids, int row_dim) {
  Tensor out({static_cast<int>(ids.size()), row_dim});
  for (std::size_t b = 0; b < ids.size(); ++b) {
    auto it = entries_.find(ids[b]);
    if (it == entries_.end())
      it = entries_.emplace(ids[b], make_row(ids[b], row_dim)).first;
    const Tensor& row = it->second;
    check(row.numel() == row_dim, "omega store: row " + std::to_string(ids[b]) +
                                      " has dimension " + std::to_string(row.numel()) +
                                      ", expected " + std::to_string(row_dim));
    std::copy(row.data.begin(), row.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(b) * row_dim);
  }
  return out;
}

void OmegaStore::scatter(std::span<const std::int64_t> ids, const Tensor& batch) {
  check(batch.ndim() == 2 && batch.shape[0] == static_cast<int>(ids.size()),
        "omega store: scatter batch shape " + batch.shape_str() + " does not cover " +
            std::to_string(ids.size()) + " ids");
  int row_dim = batch.shape[1];
  for (std::size_t b = 0; b < ids.size(); ++b) {
    Tensor row({row_dim});
    std::copy(batch.data.begin() + static_cast<std::ptrdiff_t>(b) * row_dim,
              batch.data.begin() + static_cast<std::ptrdiff_t>(b + 1) * row_dim, row.data.begin());
    for (double v : row.data)
      check(v >= -1.0 && v <= 1.0, "omega store: coordinate outside [-1, 1] after update");
    entries_[ids[b]] = std::move(row);
  }
}

void OmegaStore::insert(std::int64_t id, Tensor row) { entries_[id] = std::move(row); }

Tensor init_delta1(const GeneratorParams& gen, OmegaStore& omega,
                   std::span<const std::int64_t> ids, int row_dim) {
  if (!gen.cfg.use_init)
    return Tensor({static_cast<int>(ids.size()), row_dim});
  Tensor batch = omega.gather(ids, row_dim);
  return scale_of(batch, gen.alpha_omega);
}

namespace {

Tensor delta1_from_omega(const GeneratorParams& gen, const Tensor& omega_batch) {
  if (!gen.cfg.use_init) return Tensor(omega_batch.shape);
  return scale_of(omega_batch, gen.alpha_omega);
}

}  // namespace

GenerateOutput apart_generate(const ResidualNet& net, const Tensor& x, const std::vector<int>& y,
                              const GeneratorParams& gen, const Tensor& omega_batch,
                              double epsilon) {
  gen.check_finite();
  check(epsilon > 0.0, "apart_generate: epsilon must be > 0");
  int n = net.num_blocks();
  check(static_cast<int>(gen.alpha.size()) == n,
        "apart_generate: alpha count " + std::to_string(gen.alpha.size()) +
            " does not match block count " + std::to_string(n));
  check(omega_batch.shape == x.shape, "apart_generate: omega batch shape " +
                                          omega_batch.shape_str() + " does not match input " +
                                          x.shape_str());

  Tensor delta1_init = delta1_from_omega(gen, omega_batch);

  Graph g;
  Var xv = g.leaf(x);
  PerturbationVars pv;
  pv.input_delta = g.leaf(delta1_init);
  NetBinding nb = net.bind_var(g, xv, &pv);
  Var loss = net.mean_loss(g, nb.logits, y);
  net.run_backward(g, loss);
  std::vector<Tensor> grads = tap_grads(g, nb.taps);
  for (const Tensor& t : grads)
    check(all_finite(t), "apart_generate: non-finite block gradient; aborting step");

  GenerateOutput out;
  out.input_sign = sign_of(grads[0]);
  out.block_signs.resize(static_cast<std::size_t>(n));
  out.deltas.block_deltas.resize(static_cast<std::size_t>(n));
  out.deltas.input_delta = clamp_of(
      add_of(delta1_init, scale_of(out.input_sign, gen.alpha[0])), -epsilon, epsilon);
  if (gen.cfg.use_layerwise) {
    for (int i = 2; i <= n; ++i) {
      out.block_signs[static_cast<std::size_t>(i) - 1] =
          sign_of(grads[static_cast<std::size_t>(i)]);
      out.deltas.block_deltas[static_cast<std::size_t>(i) - 1] =
          scale_of(out.block_signs[static_cast<std::size_t>(i) - 1],
                   gen.alpha[static_cast<std::size_t>(i) - 1]);
    }
  }
  out.deltas.provenance = gen.cfg.use_layerwise ? "apart" : "fgsm-plus";
  out.deltas.epsilon_bound = epsilon;
  out.deltas.check_bounded();
  return out;
}

ApartStepOutput apart_step(const ResidualNet& net, const Tensor& x, const std::vector<int>& y,
                           const GeneratorParams& gen, const Tensor& omega_batch,
                           double epsilon) {
  GenerateOutput r1 = apart_generate(net, x, y, gen, omega_batch, epsilon);
  int n = net.num_blocks();

  // Second round: rebuild the deltas as graph expressions over the omega and
  // alpha leaves with the round-1 signs frozen. The arithmetic matches the
  // round-1 values bit for bit.
  Graph g;
  Var xv = g.leaf(x);
  Var omega_leaf;
  std::vector<Var> alpha_leaves(static_cast<std::size_t>(n));
  Var d1;
  Var sign1 = g.leaf(r1.input_sign);
  alpha_leaves[0] = g.leaf(Tensor::scalar(gen.alpha[0]), true);
  Var step1 = g.mul(sign1, alpha_leaves[0]);
  if (gen.cfg.use_init) {
    omega_leaf = g.leaf(omega_batch, true);
    d1 = g.add(g.scalar_mul(omega_leaf, gen.alpha_omega), step1);
  } else {
    d1 = step1;
  }
  d1 = g.clamp(d1, -epsilon, epsilon);

  PerturbationVars pv;
  pv.input_delta = d1;
  pv.block_deltas.resize(static_cast<std::size_t>(n));
  if (gen.cfg.use_layerwise) {
    for (int i = 2; i <= n; ++i) {
      alpha_leaves[static_cast<std::size_t>(i) - 1] =
          g.leaf(Tensor::scalar(gen.alpha[static_cast<std::size_t>(i) - 1]), true);
      pv.block_deltas[static_cast<std::size_t>(i) - 1] =
          g.mul(g.leaf(r1.block_signs[static_cast<std::size_t>(i) - 1]),
                alpha_leaves[static_cast<std::size_t>(i) - 1]);
    }
  }

  NetBinding nb = net.bind_var(g, xv, &pv);
  Var loss = net.mean_loss(g, nb.logits, y);
  net.run_backward(g, loss);

  ApartStepOutput out;
  out.deltas = std::move(r1.deltas);
  out.loss = g.value(loss).item();
  check(std::isfinite(out.loss), "apart_step: non-finite loss; aborting step");
  out.logits = g.value(nb.logits);
  out.theta_grads = net.param_grads(g, nb);
  out.gen_grads.alpha_grads.assign(static_cast<std::size_t>(n), 0.0);
  out.gen_grads.alpha_grads[0] = g.grad(alpha_leaves[0]).item();
  if (gen.cfg.use_layerwise)
    for (int i = 2; i <= n; ++i)
      out.gen_grads.alpha_grads[static_cast<std::size_t>(i) - 1] =
          g.grad(alpha_leaves[static_cast<std::size_t>(i) - 1]).item();
  if (gen.cfg.use_init) {
    out.gen_grads.omega_grad = g.grad(omega_leaf);
    check(all_finite(out.gen_grads.omega_grad), "apart_step: non-finite omega gradient");
  }
  for (double a : out.gen_grads.alpha_grads)
    check(std::isfinite(a), "apart_step: non-finite alpha gradient");
  return out;
}

void update_generator(GeneratorParams& gen, Tensor& omega_batch, const GeneratorGrads& grads,
                      double mu_alpha, double mu_omega) {
  gen.cfg.validate();
  if (gen.cfg.use_init && grads.omega_grad.defined()) {
    Tensor s = sign_of(grads.omega_grad);
    for (std::int64_t i = 0; i < omega_batch.numel(); ++i)
      omega_batch[i] = std::min(std::max(omega_batch[i] + mu_omega * s[i], -1.0), 1.0);
  }
  check(grads.alpha_grads.size() == gen.alpha.size(), "update_generator: alpha grads mismatch");
  for (std::size_t i = 0; i < gen.alpha.size(); ++i)
    gen.alpha[i] += mu_alpha * (grads.alpha_grads[i] - gen.cfg.lambda_reg * 2.0 * gen.alpha[i]);
  gen.check_finite();
}

ApartStepOutput fgsm_plus_step(const ResidualNet& net, const Tensor& x, const std::vector<int>& y,
                               const GeneratorParams& gen, const Tensor& omega_batch,
                               double epsilon) {
  GeneratorParams flat = gen;
  flat.cfg.use_layerwise = false;
  return apart_step(net, x, y, flat, omega_batch, epsilon);
}

}  // namespace advlab
