#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "advlab/attack.hpp"
#include "advlab/checkpoint.hpp"
#include "advlab/dataset.hpp"
#include "advlab/generator.hpp"
#include "advlab/nn.hpp"
#include "advlab/train.hpp"

namespace advlab {

/// A perturbation source bound to concrete state: either a plain attack or
/// the learnable generator with its learned parameters and start-point
/// store. For the generator, perturbations are produced exactly as in
/// training (input delta plus per-block deltas).
struct MethodRef {
  enum class Tag { attack, apart };
  Tag tag = Tag::attack;
  AttackSpec attack;
  GeneratorParams gen;
  OmegaStore* omega = nullptr;  // rows for unseen ids initialize on demand
  double epsilon = 0.0;         // generator projection budget

  std::string name() const;
  static MethodRef of_attack(const AttackSpec& spec);
  static MethodRef of_apart(const GeneratorParams& gen, OmegaStore* omega, double epsilon);
};

/// Declarative counterpart used by the CLI: "apart" resolves against each
/// checkpoint's stored generator state.
struct MethodDesc {
  enum class Kind { attack, apart } kind = Kind::attack;
  AttackSpec attack;
  std::string name() const;
};

PerturbationSet method_perturb(const MethodRef& method, const ResidualNet& net, const Batch& b);

/// Mean loss and accuracy of the net on the batch under a full perturbation
/// set (input delta at the input site, block deltas in the branches).
struct LossUnder {
  double loss = 0.0;
  double acc = 0.0;
  std::vector<double> per_example;
};
LossUnder loss_under(const ResidualNet& net, const Batch& b, const PerturbationSet& ps);

struct GapRecord {
  int epoch = 0;
  std::string method_a;
  std::string method_b;
  double gap = 0.0;  // loss_b - loss_a, exactly
  double loss_a = 0.0;
  double loss_b = 0.0;
};

/// G_{A->B} = L(theta; x + f_B(theta,x,y), y) - L(theta; x + delta_A, y),
/// batch mean. delta_A comes from A exactly as used in training.
GapRecord strength_gap(const ResidualNet& net, const MethodRef& a, const MethodRef& b,
                       const Batch& batch, int epoch = 0);

/// Exhaustive grid search over the epsilon-box around one example
/// (grid_points per axis, corners included). Exact for losses monotone per
/// coordinate; otherwise a documented grid approximation.
struct WorstCase {
  Tensor delta;   // [1, D]
  double loss = 0.0;
};
WorstCase brute_force_worst_case(const BatchLoss& loss, const Tensor& x_row, int y,
                                 double epsilon, int grid_points,
                                 std::int64_t budget = 1'000'000);

/// Per-example worst-case losses over a batch (same grid oracle).
std::vector<double> brute_force_batch(const BatchLoss& loss, const Batch& b, double epsilon,
                                      int grid_points, std::int64_t budget = 1'000'000);

/// Accuracy of `target` under input perturbations generated against
/// `source`. Only the input-site component transfers; generator block
/// deltas are model-internal and stay behind.
double cross_eval(const ResidualNet& target, const ResidualNet& source, const MethodRef& method,
                  const Dataset& ds, int batch_size);

/// One GapRecord per checkpoint (ascending epochs expected). When A or B is
/// the generator, its state is restored from each checkpoint.
std::vector<GapRecord> gap_series(const std::vector<std::string>& checkpoint_paths,
                                  const MethodDesc& a, const MethodDesc& b, const Batch& batch);

struct SweepRow {
  double epsilon = 0.0;
  double clean_acc = 0.0;
  double robust_acc = 0.0;
  bool ok = false;
  std::string error;
};

/// Trains one model per training epsilon and evaluates it under the fixed
/// attack. epsilon = 0 degenerates to standard training. Per-cell failures
/// are recorded and the sweep continues.
std::vector<SweepRow> epsilon_sweep(const TrainConfig& base, const ArchConfig& arch,
                                    const Dataset& train, const Dataset& test,
                                    std::span<const double> epsilons,
                                    const AttackSpec& eval_attack);

}  // namespace advlab
