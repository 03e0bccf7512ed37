#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "advlab/perturbation.hpp"
#include "advlab/tensor.hpp"

namespace advlab {

/// Desk-scale pre-activation residual architectures.
///
/// micro-preact: n dense residual blocks at the input width, no stem, so the
/// first block input is the model input. Block transform:
/// dense2(relu(dense1(relu(affine(x))))) with a learnable per-feature affine
/// standing in for normalization.
///
/// micro-conv: one stem conv, then n conv residual blocks at a fixed channel
/// count; per-channel affine, two 3x3 convs per block, dense head on the
/// flattened features.
struct ArchConfig {
  std::string arch = "micro-preact";  // "micro-preact" | "micro-conv"
  int classes = 2;

  // micro-preact
  int input_dim = 2;
  int blocks = 3;
  int hidden = 32;

  // micro-conv
  int in_channels = 1;
  int image_h = 8;
  int image_w = 8;
  int conv_channels = 4;
  int conv_blocks = 2;
  int kernel = 3;

  bool residual_skip = true;  // disabled only by structure-guard tests

  void validate() const;
  bool is_conv() const { return arch == "micro-conv"; }
  int num_blocks() const { return is_conv() ? conv_blocks : blocks; }
  int flat_input_dim() const { return is_conv() ? in_channels * image_h * image_w : input_dim; }

  bool operator==(const ArchConfig&) const = default;
};

std::string arch_to_json(const ArchConfig& cfg);  // canonical (sorted keys)
ArchConfig arch_from_json(const std::string& text);

/// Block-input taps from one bound forward pass. `inputs` has one entry for
/// the model input followed by one per block; with no stem the first two
/// entries alias the same node. Gradients are read from the graph after
/// backward().
struct BlockTaps {
  std::vector<Var> inputs;  // [model input, x_1, ..., x_n]
};

/// Per-block perturbations as graph nodes, for callers that need gradients
/// to flow into the deltas (the learnable generator). Invalid Vars mean "no
/// injection at this site".
struct PerturbationVars {
  Var input_delta;               // added to the model input
  std::vector<Var> block_deltas;  // entry i-1 injected into block i's branch
};

/// One instantiation of the network on a graph: parameter leaves, the model
/// input node, block taps and logits.
struct NetBinding {
  std::vector<Var> params;
  Var input;
  BlockTaps taps;
  Var logits;
};

class ResidualNet {
 public:
  ResidualNet(ArchConfig cfg, std::uint64_t seed);
  ResidualNet(const ResidualNet& o);
  ResidualNet& operator=(const ResidualNet& o);

  const ArchConfig& config() const { return cfg_; }
  int num_blocks() const { return cfg_.num_blocks(); }

  std::size_t param_count() const;  // total scalar parameters
  static std::size_t param_count_formula(const ArchConfig& cfg);

  const std::vector<Tensor>& params() const { return params_; }
  std::vector<Tensor>& params() { return params_; }
  const std::vector<std::string>& param_names() const { return names_; }

  std::vector<double> flat_theta() const;
  void set_flat_theta(const std::vector<double>& theta);
  std::uint64_t theta_hash() const;

  /// Builds the forward pass on `g` from a flat input batch [B, D]. When
  /// `deltas` is given, its input delta is added at the model input and each
  /// defined block delta is injected into that block's transform branch
  /// (the skip path stays untouched). Counts one forward pass.
  NetBinding bind(Graph& g, const Tensor& x_flat, const PerturbationSet* deltas = nullptr) const;

  /// Same, but the input (and optionally the deltas) are existing graph
  /// nodes, so gradients can flow into them.
  NetBinding bind_var(Graph& g, Var x_flat, const PerturbationVars* deltas = nullptr) const;

  /// Mean softmax cross-entropy over the batch.
  Var mean_loss(Graph& g, Var logits, const std::vector<int>& labels) const;
  Var per_example_loss(Graph& g, Var logits, const std::vector<int>& labels) const;

  /// backward() wrapper that feeds the pass probe.
  void run_backward(Graph& g, Var loss) const;

  /// Gradients of the master parameters after run_backward, aligned with
  /// params().
  std::vector<Tensor> param_grads(const Graph& g, const NetBinding& b) const;

  // pass probe (cumulative; snapshot around a region to count its cost)
  std::uint64_t forward_passes() const { return fw_.load(); }
  std::uint64_t backward_passes() const { return bw_.load(); }

 private:
  void init_params(std::uint64_t seed);

  ArchConfig cfg_;
  std::vector<Tensor> params_;
  std::vector<std::string> names_;
  mutable std::atomic<std::uint64_t> fw_{0};
  mutable std::atomic<std::uint64_t> bw_{0};
};

/// Runs one backward pass through the bound loss and returns the gradient at
/// every tap, aligned with taps.inputs. Rejected when the taps belong to a
/// different (or reset) graph.
std::vector<Tensor> block_input_grads(const ResidualNet& net, Graph& g, Var loss,
                                      const BlockTaps& taps);

/// Tap gradients from a graph whose backward already ran.
std::vector<Tensor> tap_grads(const Graph& g, const BlockTaps& taps);

Var labels_leaf(Graph& g, const std::vector<int>& labels);
std::vector<int> argmax_rows(const Tensor& logits);
double accuracy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace advlab
