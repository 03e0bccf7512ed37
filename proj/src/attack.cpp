#include "advlab/attack.hpp"

#include <cmath>

#include "advlab/rng.hpp"

namespace advlab {

AttackKind attack_kind_from_name(const std::string& name) {
  if (name == "fgsm") return AttackKind::fgsm;
  if (name == "pgd") return AttackKind::pgd;
  if (name == "f-plus-fgsm") return AttackKind::f_plus_fgsm;
  if (name == "random-sign") return AttackKind::random_sign;
  if (name == "gaussian") return AttackKind::gaussian;
  fail("unknown attack kind: \"" + name + "\"");
}

std::string attack_kind_name(AttackKind k) {
  switch (k) {
    case AttackKind::fgsm: return "fgsm";
    case AttackKind::pgd: return "pgd";
    case AttackKind::f_plus_fgsm: return "f-plus-fgsm";
    case AttackKind::random_sign: return "random-sign";
    case AttackKind::gaussian: return "gaussian";
  }
  return "?";
}

double AttackSpec::effective_step() const {
  if (step_size > 0.0) return step_size;
  switch (kind) {
    case AttackKind::pgd: return epsilon / 4.0;
    case AttackKind::f_plus_fgsm: return 1.25 * epsilon;
    default: return epsilon;
  }
}

std::string AttackSpec::name() const {
  if (kind == AttackKind::pgd) return "pgd-" + std::to_string(steps);
  return attack_kind_name(kind);
}

void AttackSpec::validate() const {
  check(epsilon > 0.0, "attack: epsilon must be > 0");
  check(steps >= 0, "attack: steps must be >= 0");
  check(step_size >= 0.0, "attack: step-size must be > 0 where used");
}

Tensor project_linf(const Tensor& delta, double epsilon) {
  check(epsilon > 0.0, "project_linf: epsilon must be > 0");
  return clamp_of(delta, -epsilon, epsilon);
}

namespace {

// intersect x+delta with the unit pixel box; for x in [0,1] this can only
// shrink coordinates, so an epsilon-feasible delta stays feasible
Tensor clamp_to_pixels(const Tensor& x, const Tensor& delta) {
  Tensor out(delta.shape);
  for (std::int64_t i = 0; i < delta.numel(); ++i) {
    double v = x[i] + delta[i];
    v = std::min(std::max(v, 0.0), 1.0);
    out[i] = v - x[i];
  }
  return out;
}

Tensor per_example_uniform(const std::vector<int>& shape, double lo, double hi,
                           std::uint64_t seed, std::span<const std::int64_t> ids,
                           const char* tag) {
  Tensor out(shape);
  int B = shape[0];
  std::int64_t row = out.numel() / B;
  check(ids.empty() || static_cast<int>(ids.size()) == B,
        "noise: expected one example id per row");
  for (int b = 0; b < B; ++b) {
    std::uint64_t id = ids.empty() ? static_cast<std::uint64_t>(b)
                                   : static_cast<std::uint64_t>(ids[static_cast<std::size_t>(b)]);
    Rng rng(mix_seed(seed, tag, id));
    for (std::int64_t i = 0; i < row; ++i) out[b * row + i] = rng.uniform(lo, hi);
  }
  return out;
}

}  // namespace

Tensor input_gradient(const BatchLoss& loss, const Tensor& x, const std::vector<int>& y,
                      const Tensor* delta) {
  Tensor point = delta ? add_of(x, *delta) : x;
  Graph g;
  Var xv = g.leaf(std::move(point), true);
  Var l = loss.build(g, xv, y);
  loss.run_backward(g, l);
  Tensor grad = g.grad(xv);
  int B = x.shape[0];
  std::int64_t row = grad.numel() / B;
  for (int b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < row; ++i)
      if (!std::isfinite(grad[b * row + i]))
        fail("attack: non-finite gradient for batch element " + std::to_string(b));
  return grad;
}

PerturbationSet fgsm(const BatchLoss& loss, const Tensor& x, const std::vector<int>& y,
                     double epsilon, bool clamp_pixels) {
  check(epsilon > 0.0, "fgsm: epsilon must be > 0");
  Tensor grad = input_gradient(loss, x, y);
  PerturbationSet ps;
  ps.input_delta = scale_of(sign_of(grad), epsilon);
  if (clamp_pixels) ps.input_delta = clamp_to_pixels(x, ps.input_delta);
  ps.provenance = "fgsm";
  ps.epsilon_bound = epsilon;
  ps.check_bounded();
  return ps;
}

PerturbationSet pgd(const BatchLoss& loss, const Tensor& x, const std::vector<int>& y,
                    const AttackSpec& spec, std::span<const std::int64_t> example_ids) {
  spec.validate();
  check(spec.kind == AttackKind::pgd, "pgd: wrong spec kind");
  double eps = spec.epsilon;
  double step = spec.effective_step();
  // the recursion bottoms out at zero: pgd-0 is the zero perturbation, so
  // the random start is only drawn when there is at least one step
  Tensor delta = spec.init == AttackSpec::Init::uniform_ball && spec.steps > 0
                     ? per_example_uniform(x.shape, -eps, eps, spec.seed, example_ids, "pgd-init")
                     : Tensor(x.shape);
  if (spec.init == AttackSpec::Init::uniform_ball && spec.clamp_pixels)
    delta = clamp_to_pixels(x, delta);
  for (int n = 0; n < spec.steps; ++n) {
    Tensor grad = input_gradient(loss, x, y, &delta);
    Tensor stepped = add_of(delta, scale_of(sign_of(grad), step));
    delta = project_linf(stepped, eps);
    if (spec.clamp_pixels) delta = clamp_to_pixels(x, delta);
  }
  PerturbationSet ps;
  ps.input_delta = std::move(delta);
  ps.provenance = spec.name();
  ps.epsilon_bound = eps;
  ps.check_bounded();
  return ps;
}

PerturbationSet f_plus_fgsm(const BatchLoss& loss, const Tensor& x, const std::vector<int>& y,
                            const AttackSpec& spec, std::span<const std::int64_t> example_ids) {
  spec.validate();
  double eps = spec.epsilon;
  Tensor delta = per_example_uniform(x.shape, -eps, eps, spec.seed, example_ids, "fplus-init");
  Tensor grad = input_gradient(loss, x, y, &delta);
  double step = spec.step_size > 0.0 ? spec.step_size : 1.25 * eps;
  delta = project_linf(add_of(delta, scale_of(sign_of(grad), step)), eps);
  if (spec.clamp_pixels) delta = clamp_to_pixels(x, delta);
  PerturbationSet ps;
  ps.input_delta = std::move(delta);
  ps.provenance = "f-plus-fgsm";
  ps.epsilon_bound = eps;
  ps.check_bounded();
  return ps;
}

PerturbationSet noise(AttackKind kind, const std::vector<int>& shape, double epsilon,
                      std::uint64_t seed, std::span<const std::int64_t> example_ids) {
  check(kind == AttackKind::random_sign || kind == AttackKind::gaussian,
        "noise: kind must be random-sign or gaussian");
  check(epsilon > 0.0, "noise: epsilon must be > 0");
  PerturbationSet ps;
  if (kind == AttackKind::random_sign) {
    Tensor u = per_example_uniform(shape, -1.0, 1.0, seed, example_ids, "sign-noise");
    ps.input_delta = scale_of(sign_of(u), epsilon);
  } else {
    Tensor t(shape);
    int B = shape[0];
    std::int64_t row = t.numel() / B;
    for (int b = 0; b < B; ++b) {
      std::uint64_t id = example_ids.empty()
                             ? static_cast<std::uint64_t>(b)
                             : static_cast<std::uint64_t>(example_ids[static_cast<std::size_t>(b)]);
      Rng rng(mix_seed(seed, "gauss-noise", id));
      for (std::int64_t i = 0; i < row; ++i) t[b * row + i] = rng.gaussian(0.0, epsilon / 2.0);
    }
    ps.input_delta = project_linf(t, epsilon);
  }
  ps.provenance = attack_kind_name(kind);
  ps.epsilon_bound = epsilon;
  ps.check_bounded();
  return ps;
}

PerturbationSet perturb(const AttackSpec& spec, const BatchLoss& loss, const Tensor& x,
                        const std::vector<int>& y, std::span<const std::int64_t> example_ids) {
  spec.validate();
  switch (spec.kind) {
    case AttackKind::fgsm: {
      PerturbationSet ps = fgsm(loss, x, y, spec.epsilon, spec.clamp_pixels);
      return ps;
    }
    case AttackKind::pgd: return pgd(loss, x, y, spec, example_ids);
    case AttackKind::f_plus_fgsm: return f_plus_fgsm(loss, x, y, spec, example_ids);
    case AttackKind::random_sign:
    case AttackKind::gaussian: {
      PerturbationSet ps = noise(spec.kind, x.shape, spec.epsilon, spec.seed, example_ids);
      if (spec.clamp_pixels) {
        ps.input_delta = clamp_to_pixels(x, ps.input_delta);
        ps.check_bounded();
      }
      return ps;
    }
  }
  fail("perturb: unreachable");
}

}  // namespace advlab
