#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "advlab/attack.hpp"
#include "advlab/dataset.hpp"
#include "advlab/generator.hpp"
#include "advlab/nn.hpp"

namespace advlab {

enum class Regime {
  standard,
  fgsm,
  f_plus_fgsm,
  pgd_n,
  fgsm_plus,
  apart,
  apart_no_layerwise,
  apart_no_init,
};

Regime regime_from_name(const std::string& name);
std::string regime_name(Regime r);
bool regime_uses_generator(Regime r);

struct TrainConfig {
  Regime regime = Regime::standard;
  int epochs = 10;
  int batch_size = 64;
  double momentum = 0.9;
  double max_lr = 0.2;
  double epsilon = 8.0 / 255.0;
  bool clamp_pixels = false;
  bool augment = false;  // image kinds: horizontal flip + pad/crop per example
  int aug_pad = 1;
  AttackSpec train_attack;  // pgd-n parameters (steps, step size, init)
  GeneratorConfig generator;
  std::vector<AttackSpec> eval_attacks;
  std::uint64_t seed = 1;
  int checkpoint_every = 1;

  std::int64_t total_steps = 0;  // resolved against the dataset before training

  void validate() const;
};

/// Per-epoch evaluation row. Wall time is carried in memory and in the csv
/// summary; the jsonl stream holds only the deterministic fields so
/// fixed-seed runs are reproducible byte for byte.
struct MetricsRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_robust_acc = 0.0;  // accuracy on the perturbed batches used for updates
  double test_clean_acc = 0.0;
  std::map<std::string, double> test_robust_acc;
  std::vector<double> alpha;  // generator regimes only
  double wall_time_sec = 0.0;

  void check_ranges() const;
  bool same_numbers(const MetricsRecord& o) const;  // ignores wall time
};

/// Triangular schedule: 0 -> max over the first half, max -> 0 over the
/// second. Steps past `total` are rejected.
double cyclic_lr(std::int64_t step, std::int64_t total, double max_lr);

/// v' = momentum * v + g; theta' = theta - lr * v'.
void sgd_momentum_update(std::vector<Tensor>& theta, const std::vector<Tensor>& grads,
                         std::vector<Tensor>& velocity, double lr, double momentum);

struct TrainState {
  ResidualNet net;
  GeneratorParams gen;
  OmegaStore omega;
  std::vector<Tensor> velocity;
  std::int64_t global_step = 0;

  TrainState(const ArchConfig& arch, const TrainConfig& cfg);
};

struct EvalResult {
  double clean_acc = 0.0;
  std::map<std::string, double> robust;  // keyed by attack name
};

/// Clean accuracy plus accuracy under each attack, regenerated per example
/// with seeds pinned to (run seed, epoch, attack, example id). Never mutates
/// the model. A zero-budget attack degenerates to a second clean pass.
EvalResult evaluate(const ResidualNet& net, const Dataset& ds,
                    const std::vector<AttackSpec>& attacks, std::uint64_t seed, int epoch,
                    int batch_size);

/// One pass over the training set under the configured regime, then a test
/// evaluation. Throws on non-finite losses; rows already produced by earlier
/// epochs stay valid.
MetricsRecord train_epoch(const TrainConfig& cfg, TrainState& st, const Dataset& train,
                          const Dataset& test, int epoch);

/// Convenience wrapper: fresh state, `epochs` passes, metrics per epoch.
std::vector<MetricsRecord> train_run(const TrainConfig& cfg, const ArchConfig& arch,
                                     const Dataset& train, const Dataset& test,
                                     TrainState* out_state = nullptr);

std::int64_t steps_per_epoch(int dataset_size, int batch_size);

}  // namespace advlab
