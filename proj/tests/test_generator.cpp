#include "doctest.h"

#include <cmath>

#include "advlab/attack.hpp"
#include "advlab/generator.hpp"
#include "advlab/rng.hpp"

using namespace advlab;

namespace {

// 1-block micro-preact with the block transform zeroed, head fixed to
// logits = [w*x, 0]: the net is a closed-form scalar model.
ResidualNet linear_head_net(double w) {
  ArchConfig cfg;
  cfg.arch = "micro-preact";
  cfg.input_dim = 1;
  cfg.blocks = 1;
  cfg.hidden = 2;
  cfg.classes = 2;
  ResidualNet net(cfg, 1);
  net.params()[4] = Tensor({2, 1});  // w2 = 0
  net.params()[5] = Tensor({1});     // b2 = 0
  net.params()[6] = Tensor({1, 2}, {w, 0.0});
  net.params()[7] = Tensor({2});
  return net;
}

// d/dz of softmax-xent([w z, 0], label 1) = w * sigmoid(w z)
double linear_head_grad(double w, double z) { return w / (1.0 + std::exp(-w * z)); }
double linear_head_loss(double w, double z) {
  // log(1 + exp(w z)), stable form
  double t = w * z;
  return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

GeneratorConfig quiet_config() {
  GeneratorConfig cfg;
  cfg.lambda_reg = 0.0;
  cfg.mu_alpha_max = 0.0;
  return cfg;
}

}  // namespace

TEST_SUITE("generator") {

TEST_CASE("init_delta1 scales the stored start points") {
  GeneratorConfig cfg;
  GeneratorParams gen = GeneratorParams::make(cfg, 2, 8.0 / 255.0);
  OmegaStore store;
  std::vector<std::int64_t> ids = {5, 9};
  Tensor ones({2, 3}, 1.0);
  store.scatter(ids, ones);
  gen.alpha_omega = 8.0 / 255.0;
  Tensor d1 = init_delta1(gen, store, ids, 3);
  for (double v : d1.data) CHECK(v == 8.0 / 255.0);
}

TEST_CASE("fresh examples initialize on demand, zeros by default") {
  GeneratorParams gen = GeneratorParams::make(GeneratorConfig{}, 1, 0.1);
  OmegaStore store;
  std::vector<std::int64_t> ids = {1234};
  Tensor d1 = init_delta1(gen, store, ids, 4);
  CHECK(d1.data == std::vector<double>(4, 0.0));
  CHECK(store.size() == 1);
}

TEST_CASE("uniform omega init is seeded and in range") {
  OmegaStore a(GeneratorConfig::OmegaInit::uniform, 7);
  OmegaStore b(GeneratorConfig::OmegaInit::uniform, 7);
  std::vector<std::int64_t> ids = {0, 1, 2};
  Tensor ta = a.gather(ids, 5);
  Tensor tb = b.gather(ids, 5);
  CHECK(ta.data == tb.data);
  for (double v : ta.data) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("delta1 never exceeds alpha_omega given the store invariant") {
  Rng rng(31);
  GeneratorParams gen = GeneratorParams::make(GeneratorConfig{}, 1, 0.1);
  gen.alpha_omega = 0.07;
  OmegaStore store;
  std::vector<std::int64_t> ids = {0, 1, 2, 3};
  Tensor rows({4, 6});
  for (auto& v : rows.data) v = rng.uniform(-1, 1);
  store.scatter(ids, rows);
  Tensor d1 = init_delta1(gen, store, ids, 6);
  CHECK(linf_norm(d1) <= 0.07 + 1e-15);
}

TEST_CASE("scatter rejects coordinates outside the unit interval") {
  OmegaStore store;
  std::vector<std::int64_t> ids = {0};
  Tensor bad({1, 2}, {0.5, 1.5});
  CHECK_THROWS_AS(store.scatter(ids, bad), Error);
}

TEST_CASE("generate with zero step sizes returns only the projected start") {
  ResidualNet net = linear_head_net(2.0);
  GeneratorParams gen = GeneratorParams::make(quiet_config(), 1, 0.12);
  gen.alpha = {0.0};
  gen.alpha_omega = 0.2;  // exceeds epsilon: projection must bite
  Tensor x({1, 1}, {0.5});
  Tensor omega({1, 1}, {1.0});
  GenerateOutput out = apart_generate(net, x, {1}, gen, omega, 0.12);
  CHECK(out.deltas.input_delta.item() == 0.12);  // clamp(0.2 * 1)
  CHECK_FALSE(out.deltas.has_block_deltas());
}

TEST_CASE("generate with no start point reduces to fgsm with the alpha step") {
  ResidualNet net = linear_head_net(-3.0);
  GeneratorConfig cfg = quiet_config();
  cfg.use_init = false;
  GeneratorParams gen = GeneratorParams::make(cfg, 1, 0.1);
  gen.alpha = {0.05};
  Tensor x({1, 1}, {0.4});
  Tensor omega({1, 1});
  GenerateOutput out = apart_generate(net, x, {1}, gen, omega, 0.1);

  NetLoss loss(net);
  PerturbationSet ref = fgsm(loss, x, {1}, 0.05);
  CHECK(out.deltas.input_delta.data == ref.input_delta.data);
}

TEST_CASE("hand fixture: one linear block") {
  // w = 2, x = 0.5, alpha_omega = 0.1, omega = 1, alpha_1 = 0.05, eps = 0.12
  ResidualNet net = linear_head_net(2.0);
  GeneratorParams gen = GeneratorParams::make(quiet_config(), 1, 0.12);
  gen.alpha = {0.05};
  gen.alpha_omega = 0.1;
  Tensor x({1, 1}, {0.5});
  Tensor omega({1, 1}, {1.0});
  GenerateOutput out = apart_generate(net, x, {1}, gen, omega, 0.12);

  // oracle: sign from the analytic gradient at x + 0.1
  double s = linear_head_grad(2.0, 0.5 + 0.1) > 0 ? 1.0 : -1.0;
  double want = std::min(std::max(0.1 + 0.05 * s, -0.12), 0.12);
  CHECK(out.deltas.input_delta.item() == doctest::Approx(want).epsilon(1e-12));
  CHECK(out.deltas.input_delta.item() == 0.12);  // saturates at the boundary
}

TEST_CASE("alpha update fixture: pure decay") {
  GeneratorConfig cfg;
  cfg.lambda_reg = 400.0;
  GeneratorParams gen = GeneratorParams::make(cfg, 1, 0.1);
  gen.alpha = {0.1};
  GeneratorGrads grads;
  grads.alpha_grads = {0.0};
  Tensor omega({1, 1});
  update_generator(gen, omega, grads, 5e-8, 0.0);
  CHECK(gen.alpha[0] == doctest::Approx(0.099996).epsilon(1e-12));
}

TEST_CASE("omega clamps at the boundary") {
  GeneratorParams gen = GeneratorParams::make(GeneratorConfig{}, 1, 0.1);
  GeneratorGrads grads;
  grads.alpha_grads = {0.0};
  grads.omega_grad = Tensor({1, 2}, {5.0, -5.0});
  Tensor omega({1, 2}, {1.0, -0.5});
  update_generator(gen, omega, grads, 0.0, 0.25);
  CHECK(omega.data[0] == 1.0);    // saturated high stays put
  CHECK(omega.data[1] == -0.75);  // moves along the gradient sign
}

TEST_CASE("auto mu_omega is alpha_1 over alpha_omega") {
  GeneratorParams gen = GeneratorParams::make(GeneratorConfig{}, 2, 8.0 / 255.0);
  CHECK(gen.mu_omega_now() == doctest::Approx((8.0 / 255.0 / 2.0) / (8.0 / 255.0)).epsilon(1e-15));
  gen.cfg.mu_omega_auto = false;
  gen.cfg.mu_omega = 0.125;
  CHECK(gen.mu_omega_now() == 0.125);
}

TEST_CASE("lambda is validated at configuration time") {
  GeneratorConfig cfg;
  cfg.lambda_reg = -1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("apart step costs exactly two forwards and two backwards") {
  ArchConfig cfg;
  cfg.input_dim = 3;
  cfg.blocks = 3;
  cfg.hidden = 6;
  cfg.classes = 2;
  ResidualNet net(cfg, 17);
  GeneratorParams gen = GeneratorParams::make(GeneratorConfig{}, 3, 0.1);
  Rng rng(18);
  Tensor x({4, 3});
  for (auto& v : x.data) v = rng.uniform(0, 1);
  Tensor omega({4, 3});
  std::uint64_t f0 = net.forward_passes(), b0 = net.backward_passes();
  apart_step(net, x, {0, 1, 0, 1}, gen, omega, 0.1);
  CHECK(net.forward_passes() - f0 == 2);
  CHECK(net.backward_passes() - b0 == 2);
}

TEST_CASE("apart with layerwise disabled is identical to fgsm_plus_step") {
  ArchConfig cfg;
  cfg.input_dim = 2;
  cfg.blocks = 2;
  cfg.hidden = 4;
  cfg.classes = 2;
  ResidualNet net(cfg, 23);
  GeneratorConfig gc;
  gc.use_layerwise = false;
  GeneratorParams gen = GeneratorParams::make(gc, 2, 0.1);
  Rng rng(24);
  Tensor x({3, 2});
  for (auto& v : x.data) v = rng.uniform(0, 1);
  Tensor omega({3, 2});
  for (auto& v : omega.data) v = rng.uniform(-1, 1);
  std::vector<int> y = {0, 1, 1};

  ApartStepOutput a = apart_step(net, x, y, gen, omega, 0.1);
  GeneratorParams gen_full = gen;
  gen_full.cfg.use_layerwise = true;  // fgsm_plus_step must force it back off
  ApartStepOutput b = fgsm_plus_step(net, x, y, gen_full, omega, 0.1);
  CHECK(a.deltas.input_delta.data == b.deltas.input_delta.data);
  CHECK(a.loss == b.loss);
  CHECK(a.gen_grads.alpha_grads == b.gen_grads.alpha_grads);
  CHECK(a.gen_grads.omega_grad.data == b.gen_grads.omega_grad.data);
}

TEST_CASE("frozen generator with zero omega reduces to fgsm") {
  ArchConfig cfg;
  cfg.input_dim = 2;
  cfg.blocks = 1;
  cfg.hidden = 4;
  cfg.classes = 2;
  ResidualNet net(cfg, 29);
  GeneratorConfig gc = quiet_config();
  GeneratorParams gen = GeneratorParams::make(gc, 1, 0.1);
  gen.alpha = {0.1};  // alpha_1 = epsilon
  Rng rng(30);
  Tensor x({4, 2});
  for (auto& v : x.data) v = rng.uniform(0, 1);
  Tensor omega({4, 2});
  std::vector<int> y = {1, 0, 1, 0};

  ApartStepOutput out = fgsm_plus_step(net, x, y, gen, omega, 0.1);
  NetLoss loss(net);
  PerturbationSet ref = fgsm(loss, x, y, 0.1);
  CHECK(out.deltas.input_delta.data == ref.input_delta.data);
}

TEST_CASE("50-step alpha trajectory matches the scalar oracle") {
  const double w = 2.0, x0 = 0.5, eps = 0.3;
  const double mu_alpha = 1e-3, lambda = 0.5;
  ResidualNet net = linear_head_net(w);
  GeneratorConfig gc;
  gc.lambda_reg = lambda;
  GeneratorParams gen = GeneratorParams::make(gc, 1, eps);
  gen.alpha = {0.05};
  gen.alpha_omega = 0.1;
  OmegaStore store;
  std::vector<std::int64_t> ids = {0};
  Tensor x({1, 1}, {x0});

  // scalar re-implementation of the two-round step with theta frozen
  double o_alpha = 0.05, o_omega = 0.0;
  const double alpha_omega = 0.1;
  std::vector<double> oracle_traj;
  for (int step = 0; step < 50; ++step) {
    double mu_omega = o_alpha / alpha_omega;
    double d_init = alpha_omega * o_omega;
    double g1 = linear_head_grad(w, x0 + d_init);
    double s = g1 > 0 ? 1.0 : g1 < 0 ? -1.0 : 0.0;
    double d_raw = d_init + o_alpha * s;
    double d1 = std::min(std::max(d_raw, -eps), eps);
    double g2 = linear_head_grad(w, x0 + d1);
    bool inside = d_raw >= -eps && d_raw <= eps;
    double ga = inside ? g2 * s : 0.0;
    double go = inside ? g2 * alpha_omega : 0.0;
    double so = go > 0 ? 1.0 : go < 0 ? -1.0 : 0.0;
    o_omega = std::min(std::max(o_omega + mu_omega * so, -1.0), 1.0);
    o_alpha = o_alpha + mu_alpha * (ga - 2.0 * lambda * o_alpha);
    oracle_traj.push_back(o_alpha);
  }

  for (int step = 0; step < 50; ++step) {
    Tensor omega_batch = store.gather(ids, 1);
    double mu_omega = gen.mu_omega_now();
    ApartStepOutput out = apart_step(net, x, {1}, gen, omega_batch, eps);
    update_generator(gen, omega_batch, out.gen_grads, mu_alpha, mu_omega);
    store.scatter(ids, omega_batch);
    CHECK(gen.alpha[0] ==
          doctest::Approx(oracle_traj[static_cast<std::size_t>(step)]).epsilon(1e-10));
  }
}

TEST_CASE("generator ascends the objective while the model descends") {
  const double w = 2.0, x0 = 0.5, eps = 0.5;
  ResidualNet net = linear_head_net(w);
  GeneratorConfig gc;
  gc.lambda_reg = 0.0;
  GeneratorParams gen = GeneratorParams::make(gc, 1, eps);
  gen.alpha = {0.05};
  gen.alpha_omega = 0.1;
  Tensor x({1, 1}, {x0});
  Tensor omega({1, 1}, {0.2});

  ApartStepOutput out = apart_step(net, x, {1}, gen, omega, eps);

  // analytic direction: d loss / d alpha_1 = g2 * s > 0 here
  double g1 = linear_head_grad(w, x0 + 0.1 * 0.2);
  double s = g1 > 0 ? 1 : -1;
  double d1 = 0.1 * 0.2 + 0.05 * s;
  double g2 = linear_head_grad(w, x0 + d1);
  CHECK(out.gen_grads.alpha_grads[0] == doctest::Approx(g2 * s).epsilon(1e-10));
  CHECK(out.gen_grads.alpha_grads[0] > 0);

  GeneratorParams after = gen;
  Tensor omega_after = omega;
  update_generator(after, omega_after, out.gen_grads, 0.01, after.mu_omega_now());
  CHECK(after.alpha[0] > gen.alpha[0]);  // ascent on the step size
  CHECK(omega_after.item() > omega.item());  // ascent on the start point

  // theta moves against its gradient: loss at the same perturbed point drops
  double before = linear_head_loss(w, x0 + d1);
  std::vector<double> theta = net.flat_theta();
  std::vector<double> gt;
  for (const Tensor& t : out.theta_grads) gt.insert(gt.end(), t.data.begin(), t.data.end());
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= 0.01 * gt[i];
  ResidualNet moved = net;
  moved.set_flat_theta(theta);
  Graph g;
  PerturbationSet ps;
  ps.input_delta = Tensor({1, 1}, {d1});
  NetBinding nb = moved.bind(g, x, &ps);
  double after_loss = g.value(moved.mean_loss(g, nb.logits, {1})).item();
  CHECK(after_loss < before);
}

TEST_CASE("delta1 stays inside the ball after generate, omega inside the unit box") {
  ArchConfig cfg;
  cfg.input_dim = 4;
  cfg.blocks = 2;
  cfg.hidden = 6;
  cfg.classes = 3;
  ResidualNet net(cfg, 37);
  GeneratorConfig gc;
  gc.omega_init = GeneratorConfig::OmegaInit::uniform;
  GeneratorParams gen = GeneratorParams::make(gc, 2, 0.08);
  gen.alpha_omega = 0.2;  // large on purpose
  OmegaStore store(gc.omega_init, 91);
  Rng rng(38);
  std::vector<std::int64_t> ids = {0, 1, 2};
  Tensor x({3, 4});
  for (auto& v : x.data) v = rng.uniform(0, 1);
  std::vector<int> y = {0, 1, 2};

  for (int step = 0; step < 10; ++step) {
    Tensor omega_batch = store.gather(ids, 4);
    ApartStepOutput out = apart_step(net, x, y, gen, omega_batch, 0.08);
    CHECK(linf_norm(out.deltas.input_delta) <= 0.08 + 1e-15);
    update_generator(gen, omega_batch, out.gen_grads, 1e-3, 0.05);
    store.scatter(ids, omega_batch);  // scatter re-checks the [-1,1] invariant
  }
}

}  // TEST_SUITE
