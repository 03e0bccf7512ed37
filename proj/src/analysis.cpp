#include "advlab/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "advlab/rng.hpp"

namespace advlab {

std::string MethodRef::name() const {
  return tag == Tag::attack ? attack.name() : (gen.cfg.use_layerwise ? "apart" : "fgsm-plus");
}

MethodRef MethodRef::of_attack(const AttackSpec& spec) {
  MethodRef m;
  m.tag = Tag::attack;
  m.attack = spec;
  return m;
}

MethodRef MethodRef::of_apart(const GeneratorParams& gen, OmegaStore* omega, double epsilon) {
  MethodRef m;
  m.tag = Tag::apart;
  m.gen = gen;
  m.omega = omega;
  m.epsilon = epsilon;
  return m;
}

std::string MethodDesc::name() const { return kind == Kind::attack ? attack.name() : "apart"; }

PerturbationSet method_perturb(const MethodRef& method, const ResidualNet& net, const Batch& b) {
  if (method.tag == MethodRef::Tag::attack) {
    NetLoss loss(net);
    if (method.attack.epsilon == 0.0) {
      PerturbationSet ps;
      ps.input_delta = Tensor(b.x.shape);
      ps.provenance = method.attack.name();
      return ps;
    }
    return perturb(method.attack, loss, b.x, b.y, b.ids);
  }
  check(method.omega != nullptr, "method_perturb: generator method needs an omega store");
  check(method.epsilon > 0.0, "method_perturb: generator method needs an epsilon");
  Tensor omega_batch = method.omega->gather(b.ids, b.x.shape[1]);
  GenerateOutput out =
      apart_generate(net, b.x, b.y, method.gen, omega_batch, method.epsilon);
  return std::move(out.deltas);
}

LossUnder loss_under(const ResidualNet& net, const Batch& b, const PerturbationSet& ps) {
  Graph g;
  NetBinding nb = net.bind(g, b.x, &ps);
  Var losses = net.per_example_loss(g, nb.logits, b.y);
  Var mean = g.batch_mean(losses);
  LossUnder out;
  out.loss = g.value(mean).item();
  out.acc = accuracy(g.value(nb.logits), b.y);
  out.per_example = g.value(losses).data;
  return out;
}

GapRecord strength_gap(const ResidualNet& net, const MethodRef& a, const MethodRef& b,
                       const Batch& batch, int epoch) {
  check(batch.x.defined() && batch.x.shape[0] > 0, "strength_gap: empty batch");
  PerturbationSet da = method_perturb(a, net, batch);
  PerturbationSet db = method_perturb(b, net, batch);
  GapRecord rec;
  rec.epoch = epoch;
  rec.method_a = a.name();
  rec.method_b = b.name();
  rec.loss_a = loss_under(net, batch, da).loss;
  rec.loss_b = loss_under(net, batch, db).loss;
  rec.gap = rec.loss_b - rec.loss_a;
  return rec;
}

namespace {

// candidate grid values: -eps and +eps exactly at the ends
std::vector<double> grid_values(double eps, int grid_points) {
  std::vector<double> v(static_cast<std::size_t>(grid_points));
  if (grid_points == 1) {
    v[0] = 0.0;
    return v;
  }
  for (int i = 0; i < grid_points; ++i)
    v[static_cast<std::size_t>(i)] =
        eps * (2.0 * static_cast<double>(i) / static_cast<double>(grid_points - 1) - 1.0);
  return v;
}

}  // namespace

WorstCase brute_force_worst_case(const BatchLoss& loss, const Tensor& x_row, int y,
                                 double epsilon, int grid_points, std::int64_t budget) {
  check(epsilon > 0.0, "brute_force: epsilon must be > 0");
  check(grid_points >= 2, "brute_force: need at least two grid points per axis");
  Tensor x = x_row;
  if (x.ndim() == 1) x.shape = {1, x.shape[0]};
  check(x.ndim() == 2 && x.shape[0] == 1, "brute_force: expected one example row");
  int dims = x.shape[1];

  double required = std::pow(static_cast<double>(grid_points), dims);
  check(required <= static_cast<double>(budget),
        "brute_force: grid needs " + std::to_string(static_cast<std::int64_t>(required)) +
            " evaluations, budget is " + std::to_string(budget));
  std::int64_t total = static_cast<std::int64_t>(required);

  std::vector<double> axis = grid_values(epsilon, grid_points);
  const std::int64_t chunk = 4096;
  WorstCase best;
  best.loss = -std::numeric_limits<double>::infinity();
  std::vector<int> odo(static_cast<std::size_t>(dims), 0);

  std::int64_t done = 0;
  while (done < total) {
    std::int64_t m = std::min(chunk, total - done);
    Tensor cands({static_cast<int>(m), dims});
    std::vector<Tensor> deltas;
    deltas.reserve(static_cast<std::size_t>(m));
    for (std::int64_t r = 0; r < m; ++r) {
      Tensor d({1, dims});
      for (int j = 0; j < dims; ++j) {
        double dv = axis[static_cast<std::size_t>(odo[static_cast<std::size_t>(j)])];
        d[j] = dv;
        cands[r * dims + j] = x[j] + dv;
      }
      deltas.push_back(std::move(d));
      // advance the odometer
      for (int j = dims - 1; j >= 0; --j) {
        if (++odo[static_cast<std::size_t>(j)] < grid_points) break;
        odo[static_cast<std::size_t>(j)] = 0;
      }
    }
    Graph g;
    Var xv = g.leaf(std::move(cands));
    std::vector<int> ys(static_cast<std::size_t>(m), y);
    Tensor losses = g.value(loss.build_per_example(g, xv, ys));
    for (std::int64_t r = 0; r < m; ++r) {
      if (losses[r] > best.loss) {
        best.loss = losses[r];
        best.delta = deltas[static_cast<std::size_t>(r)];
      }
    }
    done += m;
  }
  return best;
}

std::vector<double> brute_force_batch(const BatchLoss& loss, const Batch& b, double epsilon,
                                      int grid_points, std::int64_t budget) {
  int B = b.x.shape[0], d = b.x.shape[1];
  std::vector<double> out(static_cast<std::size_t>(B));
  for (int i = 0; i < B; ++i) {
    Tensor row({1, d});
    std::copy(b.x.data.begin() + static_cast<std::ptrdiff_t>(i) * d,
              b.x.data.begin() + static_cast<std::ptrdiff_t>(i + 1) * d, row.data.begin());
    out[static_cast<std::size_t>(i)] =
        brute_force_worst_case(loss, row, b.y[static_cast<std::size_t>(i)], epsilon, grid_points,
                               budget)
            .loss;
  }
  return out;
}

double cross_eval(const ResidualNet& target, const ResidualNet& source, const MethodRef& method,
                  const Dataset& ds, int batch_size) {
  check(ds.size() > 0, "cross_eval: empty dataset");
  check(target.config().flat_input_dim() == source.config().flat_input_dim(),
        "cross_eval: source and target input shapes differ (" +
            std::to_string(source.config().flat_input_dim()) + " vs " +
            std::to_string(target.config().flat_input_dim()) + ")");
  std::vector<int> order(static_cast<std::size_t>(ds.size()));
  for (int i = 0; i < ds.size(); ++i) order[static_cast<std::size_t>(i)] = i;

  std::size_t hits = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(batch_size)) {
    std::size_t count = std::min(static_cast<std::size_t>(batch_size), order.size() - begin);
    Batch b = take_batch(ds, order, begin, count);
    PerturbationSet ps = method_perturb(method, source, b);
    // only the input-site perturbation transfers across models
    PerturbationSet input_only;
    input_only.input_delta = ps.input_delta;
    Graph g;
    NetBinding nb = target.bind(g, b.x, &input_only);
    std::vector<int> pred = argmax_rows(g.value(nb.logits));
    for (std::size_t i = 0; i < count; ++i)
      if (pred[i] == b.y[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

std::vector<GapRecord> gap_series(const std::vector<std::string>& checkpoint_paths,
                                  const MethodDesc& a, const MethodDesc& b, const Batch& batch) {
  check(!checkpoint_paths.empty(), "gap_series: no checkpoints");
  std::vector<GapRecord> out;
  ArchConfig arch;
  bool first = true;
  for (const std::string& path : checkpoint_paths) {
    Checkpoint ck = load_checkpoint(path);
    if (first) {
      arch = ck.arch;
      first = false;
    } else {
      check(ck.arch == arch, "gap_series: checkpoint " + path + " has a different architecture");
    }
    ResidualNet net = ck.restore_net();

    OmegaStore store_a, store_b;
    auto resolve = [&](const MethodDesc& d, OmegaStore& store) {
      if (d.kind == MethodDesc::Kind::attack) return MethodRef::of_attack(d.attack);
      check(ck.has_generator, "gap_series: checkpoint " + path + " has no generator state");
      GeneratorParams gen = GeneratorParams::make(GeneratorConfig{},
                                                  static_cast<int>(ck.alpha.size()), 1.0);
      ck.restore_generator(gen, store);
      // projection budget: reuse the attack epsilon of the other side when
      // present; the caller pins it via desc.attack.epsilon on this side too
      double eps = d.attack.epsilon > 0 ? d.attack.epsilon : 8.0 / 255.0;
      return MethodRef::of_apart(gen, &store, eps);
    };
    MethodRef ma = resolve(a, store_a);
    MethodRef mb = resolve(b, store_b);
    out.push_back(strength_gap(net, ma, mb, batch, ck.epoch));
  }
  return out;
}

std::vector<SweepRow> epsilon_sweep(const TrainConfig& base, const ArchConfig& arch,
                                    const Dataset& train, const Dataset& test,
                                    std::span<const double> epsilons,
                                    const AttackSpec& eval_attack) {
  std::vector<SweepRow> rows;
  for (double eps : epsilons) {
    SweepRow row;
    row.epsilon = eps;
    try {
      check(eps >= 0.0, "sweep: negative epsilon");
      TrainConfig cfg = base;
      cfg.eval_attacks = {eval_attack};
      if (eps == 0.0) {
        cfg.regime = Regime::standard;  // zero training budget is standard training
      } else {
        cfg.epsilon = eps;
      }
      std::vector<MetricsRecord> metrics = train_run(cfg, arch, train, test);
      row.clean_acc = metrics.back().test_clean_acc;
      row.robust_acc = metrics.back().test_robust_acc.at(eval_attack.name());
      row.ok = true;
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace advlab
