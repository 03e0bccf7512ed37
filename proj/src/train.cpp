#include "advlab/train.hpp"

#include <chrono>
#include <cmath>

#include "advlab/rng.hpp"

namespace advlab {

Regime regime_from_name(const std::string& name) {
  if (name == "standard") return Regime::standard;
  if (name == "fgsm") return Regime::fgsm;
  if (name == "f-plus-fgsm") return Regime::f_plus_fgsm;
  if (name == "pgd-n") return Regime::pgd_n;
  if (name == "fgsm-plus") return Regime::fgsm_plus;
  if (name == "apart") return Regime::apart;
  if (name == "apart-ablation-no-layerwise") return Regime::apart_no_layerwise;
  if (name == "apart-ablation-no-init") return Regime::apart_no_init;
  fail("unknown training regime \"" + name + "\"");
}

std::string regime_name(Regime r) {
  switch (r) {
    case Regime::standard: return "standard";
    case Regime::fgsm: return "fgsm";
    case Regime::f_plus_fgsm: return "f-plus-fgsm";
    case Regime::pgd_n: return "pgd-n";
    case Regime::fgsm_plus: return "fgsm-plus";
    case Regime::apart: return "apart";
    case Regime::apart_no_layerwise: return "apart-ablation-no-layerwise";
    case Regime::apart_no_init: return "apart-ablation-no-init";
  }
  return "?";
}

bool regime_uses_generator(Regime r) {
  return r == Regime::fgsm_plus || r == Regime::apart || r == Regime::apart_no_layerwise ||
         r == Regime::apart_no_init;
}

void TrainConfig::validate() const {
  check(epochs > 0, "train: epochs must be > 0");
  check(batch_size > 0, "train: batch_size must be > 0");
  check(momentum >= 0.0 && momentum < 1.0, "train: momentum must be in [0, 1)");
  check(max_lr > 0.0, "train: max_lr must be > 0");
  check(epsilon > 0.0, "train: epsilon must be > 0");
  check(checkpoint_every > 0, "train: checkpoint_every must be > 0");
  check(aug_pad >= 0, "train: aug_pad must be >= 0");
  generator.validate();
  if (regime == Regime::pgd_n) {
    check(train_attack.kind == AttackKind::pgd, "train: pgd-n regime needs a pgd train attack");
    check(train_attack.steps > 0, "train: pgd-n regime needs steps > 0");
  }
  for (const AttackSpec& a : eval_attacks) {
    check(a.epsilon >= 0.0, "train: eval attack epsilon must be >= 0");
    if (a.epsilon > 0.0) a.validate();
  }
}

void MetricsRecord::check_ranges() const {
  auto in01 = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
  check(epoch >= 0, "metrics: negative epoch");
  check(std::isfinite(train_loss), "metrics: non-finite train loss");
  check(in01(train_robust_acc), "metrics: train robust accuracy out of range");
  check(in01(test_clean_acc), "metrics: test clean accuracy out of range");
  for (const auto& [name, v] : test_robust_acc)
    check(in01(v), "metrics: robust accuracy out of range for " + name);
  for (double a : alpha) check(std::isfinite(a), "metrics: non-finite alpha");
  check(std::isfinite(wall_time_sec) && wall_time_sec >= 0.0, "metrics: bad wall time");
}

bool MetricsRecord::same_numbers(const MetricsRecord& o) const {
  return epoch == o.epoch && train_loss == o.train_loss &&
         train_robust_acc == o.train_robust_acc && test_clean_acc == o.test_clean_acc &&
         test_robust_acc == o.test_robust_acc;
}

double cyclic_lr(std::int64_t step, std::int64_t total, double max_lr) {
  check(total > 0, "cyclic_lr: total must be > 0");
  check(step >= 0, "cyclic_lr: negative step");
  check(step <= total, "cyclic_lr: step " + std::to_string(step) + " past total " +
                           std::to_string(total));
  double half = static_cast<double>(total) / 2.0;
  double s = static_cast<double>(step);
  return s <= half ? max_lr * (s / half) : max_lr * ((static_cast<double>(total) - s) / half);
}

void sgd_momentum_update(std::vector<Tensor>& theta, const std::vector<Tensor>& grads,
                         std::vector<Tensor>& velocity, double lr, double momentum) {
  check(theta.size() == grads.size() && theta.size() == velocity.size(),
        "sgd: tensor list sizes disagree");
  for (std::size_t p = 0; p < theta.size(); ++p) {
    check(theta[p].same_shape(grads[p]) && theta[p].same_shape(velocity[p]),
          "sgd: shape mismatch at parameter " + std::to_string(p));
    check(all_finite(grads[p]), "sgd: non-finite gradient at parameter " + std::to_string(p));
    for (std::int64_t i = 0; i < theta[p].numel(); ++i) {
      velocity[p][i] = momentum * velocity[p][i] + grads[p][i];
      theta[p][i] -= lr * velocity[p][i];
    }
  }
}

TrainState::TrainState(const ArchConfig& arch, const TrainConfig& cfg)
    : net(arch, mix_seed(cfg.seed, "init")),
      gen(GeneratorParams::make(cfg.generator, arch.num_blocks(), cfg.epsilon)),
      omega(cfg.generator.omega_init, mix_seed(cfg.seed, "omega")) {
  for (const Tensor& t : net.params()) velocity.emplace_back(t.shape);
}

std::int64_t steps_per_epoch(int dataset_size, int batch_size) {
  return (static_cast<std::int64_t>(dataset_size) + batch_size - 1) / batch_size;
}

namespace {

GeneratorConfig regime_generator(const TrainConfig& cfg) {
  GeneratorConfig g = cfg.generator;
  switch (cfg.regime) {
    case Regime::fgsm_plus:
    case Regime::apart_no_layerwise: g.use_layerwise = false; break;
    case Regime::apart_no_init: g.use_init = false; break;
    default: break;
  }
  return g;
}

struct BatchOutcome {
  double loss = 0.0;
  double robust_acc = 0.0;
};

// attack-regime step: generate the perturbation, then one train pass on the
// perturbed batch
BatchOutcome attack_step(const TrainConfig& cfg, TrainState& st, const Batch& b, double lr,
                         std::uint64_t attack_seed) {
  NetLoss loss_model(st.net);
  PerturbationSet ps;
  switch (cfg.regime) {
    case Regime::fgsm: ps = fgsm(loss_model, b.x, b.y, cfg.epsilon, cfg.clamp_pixels); break;
    case Regime::f_plus_fgsm: {
      AttackSpec spec;
      spec.kind = AttackKind::f_plus_fgsm;
      spec.epsilon = cfg.epsilon;
      spec.clamp_pixels = cfg.clamp_pixels;
      spec.seed = attack_seed;
      ps = f_plus_fgsm(loss_model, b.x, b.y, spec, b.ids);
      break;
    }
    case Regime::pgd_n: {
      AttackSpec spec = cfg.train_attack;
      spec.epsilon = cfg.epsilon;
      spec.clamp_pixels = cfg.clamp_pixels;
      spec.seed = attack_seed;
      ps = pgd(loss_model, b.x, b.y, spec, b.ids);
      break;
    }
    default: fail("attack_step: not an attack regime");
  }

  Graph g;
  NetBinding nb = st.net.bind(g, b.x, &ps);
  Var loss = st.net.mean_loss(g, nb.logits, b.y);
  st.net.run_backward(g, loss);
  BatchOutcome out;
  out.loss = g.value(loss).item();
  out.robust_acc = accuracy(g.value(nb.logits), b.y);
  std::vector<Tensor> grads = st.net.param_grads(g, nb);
  sgd_momentum_update(st.net.params(), grads, st.velocity, lr, cfg.momentum);
  return out;
}

BatchOutcome standard_step(const TrainConfig& cfg, TrainState& st, const Batch& b, double lr) {
  Graph g;
  NetBinding nb = st.net.bind(g, b.x);
  Var loss = st.net.mean_loss(g, nb.logits, b.y);
  st.net.run_backward(g, loss);
  BatchOutcome out;
  out.loss = g.value(loss).item();
  out.robust_acc = accuracy(g.value(nb.logits), b.y);
  std::vector<Tensor> grads = st.net.param_grads(g, nb);
  sgd_momentum_update(st.net.params(), grads, st.velocity, lr, cfg.momentum);
  return out;
}

BatchOutcome generator_step(const TrainConfig& cfg, TrainState& st, const Batch& b, double lr,
                            double mu_alpha) {
  Tensor omega_batch = st.omega.gather(b.ids, b.x.shape[1]);
  double mu_omega = st.gen.mu_omega_now();
  ApartStepOutput out = apart_step(st.net, b.x, b.y, st.gen, omega_batch, cfg.epsilon);
  sgd_momentum_update(st.net.params(), out.theta_grads, st.velocity, lr, cfg.momentum);
  update_generator(st.gen, omega_batch, out.gen_grads, mu_alpha, mu_omega);
  if (st.gen.cfg.use_init) st.omega.scatter(b.ids, omega_batch);
  BatchOutcome bo;
  bo.loss = out.loss;
  bo.robust_acc = accuracy(out.logits, b.y);
  return bo;
}

// augmented variant: the batch and the omega rows see the same per-example
// transform; omega updates are written back into stored coordinates
BatchOutcome generator_step_augmented(const TrainConfig& cfg, TrainState& st, const Batch& b,
                                      const Dataset& ds, std::span<const AugmentOp> ops,
                                      double lr, double mu_alpha) {
  Tensor stored = st.omega.gather(b.ids, b.x.shape[1]);
  Tensor omega_aug = apply_augment(stored, ds.img_c, ds.img_h, ds.img_w, ops);
  double mu_omega = st.gen.mu_omega_now();
  ApartStepOutput out = apart_step(st.net, b.x, b.y, st.gen, omega_aug, cfg.epsilon);
  sgd_momentum_update(st.net.params(), out.theta_grads, st.velocity, lr, cfg.momentum);
  update_generator(st.gen, omega_aug, out.gen_grads, mu_alpha, mu_omega);
  if (st.gen.cfg.use_init) {
    augment_writeback(stored, omega_aug, ds.img_c, ds.img_h, ds.img_w, ops);
    st.omega.scatter(b.ids, stored);
  }
  BatchOutcome bo;
  bo.loss = out.loss;
  bo.robust_acc = accuracy(out.logits, b.y);
  return bo;
}

}  // namespace

EvalResult evaluate(const ResidualNet& net, const Dataset& ds,
                    const std::vector<AttackSpec>& attacks, std::uint64_t seed, int epoch,
                    int batch_size) {
  check(ds.size() > 0, "evaluate: empty dataset");
  check(batch_size > 0, "evaluate: batch_size must be > 0");
  std::vector<int> order(static_cast<std::size_t>(ds.size()));
  for (int i = 0; i < ds.size(); ++i) order[static_cast<std::size_t>(i)] = i;

  EvalResult res;
  NetLoss loss_model(net);
  std::size_t hits_clean = 0;
  std::vector<std::size_t> hits_attack(attacks.size(), 0);

  for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(batch_size)) {
    std::size_t count = std::min(static_cast<std::size_t>(batch_size), order.size() - begin);
    Batch b = take_batch(ds, order, begin, count);

    Graph g;
    NetBinding nb = net.bind(g, b.x);
    std::vector<int> pred = argmax_rows(g.value(nb.logits));
    for (std::size_t i = 0; i < count; ++i)
      if (pred[i] == b.y[i]) ++hits_clean;

    for (std::size_t a = 0; a < attacks.size(); ++a) {
      AttackSpec spec = attacks[a];
      spec.seed = mix_seed(seed, "eval", static_cast<std::uint64_t>(epoch),
                           static_cast<std::uint64_t>(a));
      PerturbationSet ps;
      if (spec.epsilon == 0.0) {
        ps.input_delta = Tensor(b.x.shape);  // zero-budget probe
      } else {
        ps = perturb(spec, loss_model, b.x, b.y, b.ids);
      }
      Graph ga;
      NetBinding nba = net.bind(ga, b.x, &ps);
      std::vector<int> pa = argmax_rows(ga.value(nba.logits));
      for (std::size_t i = 0; i < count; ++i)
        if (pa[i] == b.y[i]) ++hits_attack[a];
    }
  }

  double n = static_cast<double>(ds.size());
  res.clean_acc = static_cast<double>(hits_clean) / n;
  for (std::size_t a = 0; a < attacks.size(); ++a)
    res.robust[attacks[a].name()] = static_cast<double>(hits_attack[a]) / n;
  return res;
}

MetricsRecord train_epoch(const TrainConfig& cfg, TrainState& st, const Dataset& train,
                          const Dataset& test, int epoch) {
  cfg.validate();
  check(train.size() > 0, "train_epoch: empty training set");
  auto t0 = std::chrono::steady_clock::now();

  std::vector<int> order(static_cast<std::size_t>(train.size()));
  for (int i = 0; i < train.size(); ++i) order[static_cast<std::size_t>(i)] = i;
  Rng shuffle_rng(mix_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
  shuffle_rng.shuffle(order);

  bool augment = cfg.augment && train.image_kind;

  double loss_sum = 0.0, acc_sum = 0.0;
  std::int64_t seen = 0;

  for (std::size_t begin = 0; begin < order.size();
       begin += static_cast<std::size_t>(cfg.batch_size)) {
    std::size_t count = std::min(static_cast<std::size_t>(cfg.batch_size), order.size() - begin);
    Batch b = take_batch(train, order, begin, count);

    std::vector<AugmentOp> ops;
    if (augment) {
      ops.reserve(count);
      for (std::int64_t id : b.ids)
        ops.push_back(sample_augment(
            mix_seed(cfg.seed, "aug", static_cast<std::uint64_t>(epoch),
                     static_cast<std::uint64_t>(id)),
            cfg.aug_pad));
      b.x = apply_augment(b.x, train.img_c, train.img_h, train.img_w, ops);
    }

    double lr = cyclic_lr(st.global_step, cfg.total_steps, cfg.max_lr);
    BatchOutcome out;
    if (cfg.regime == Regime::standard) {
      out = standard_step(cfg, st, b, lr);
    } else if (regime_uses_generator(cfg.regime)) {
      double mu_alpha = cyclic_lr(st.global_step, cfg.total_steps, cfg.generator.mu_alpha_max);
      out = augment ? generator_step_augmented(cfg, st, b, train, ops, lr, mu_alpha)
                    : generator_step(cfg, st, b, lr, mu_alpha);
    } else {
      std::uint64_t attack_seed =
          mix_seed(cfg.seed, "train-attack", static_cast<std::uint64_t>(epoch));
      out = attack_step(cfg, st, b, lr, attack_seed);
    }
    check(std::isfinite(out.loss),
          "train_epoch: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
              std::to_string(begin / static_cast<std::size_t>(cfg.batch_size)) + "; run halted");
    loss_sum += out.loss * static_cast<double>(count);
    acc_sum += out.robust_acc * static_cast<double>(count);
    seen += static_cast<std::int64_t>(count);
    ++st.global_step;
  }

  MetricsRecord rec;
  rec.epoch = epoch;
  rec.train_loss = loss_sum / static_cast<double>(seen);
  rec.train_robust_acc = acc_sum / static_cast<double>(seen);
  EvalResult ev = evaluate(st.net, test, cfg.eval_attacks, cfg.seed, epoch, cfg.batch_size);
  rec.test_clean_acc = ev.clean_acc;
  rec.test_robust_acc = ev.robust;
  if (regime_uses_generator(cfg.regime)) rec.alpha = st.gen.alpha;
  rec.wall_time_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rec.check_ranges();
  return rec;
}

std::vector<MetricsRecord> train_run(const TrainConfig& cfg_in, const ArchConfig& arch,
                                     const Dataset& train, const Dataset& test,
                                     TrainState* out_state) {
  TrainConfig cfg = cfg_in;
  cfg.generator = regime_generator(cfg_in);
  cfg.validate();
  cfg.total_steps = steps_per_epoch(train.size(), cfg.batch_size) * cfg.epochs;
  TrainState st(arch, cfg);
  std::vector<MetricsRecord> rows;
  for (int e = 1; e <= cfg.epochs; ++e) rows.push_back(train_epoch(cfg, st, train, test, e));
  if (out_state) *out_state = std::move(st);
  return rows;
}

}  // namespace advlab
