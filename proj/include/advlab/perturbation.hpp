#pragma once

#include <string>
#include <vector>

#include "advlab/tensor.hpp"

namespace advlab {

/// Perturbations produced by one generator invocation. `input_delta` is
/// applied at the model input (before any stem), so it reaches both the skip
/// and transform paths of the first block. `block_deltas`, when present, has
/// one entry per residual block and is injected into the transform branch
/// only: block i computes x_i + CNNs(x_i + delta_i). Entry 0 is always
/// absent; the first block's perturbation is the input delta.
struct PerturbationSet {
  Tensor input_delta;
  std::vector<Tensor> block_deltas;
  std::string provenance;
  double epsilon_bound = 0.0;  // L-inf budget the input delta was built under

  bool has_block_deltas() const {
    for (const Tensor& t : block_deltas)
      if (t.defined()) return true;
    return false;
  }

  /// |input_delta|_inf <= epsilon_bound; generators call this before
  /// handing a set out.
  void check_bounded() const {
    if (!input_delta.defined() || epsilon_bound <= 0.0) return;
    check(linf_norm(input_delta) <= epsilon_bound * (1.0 + 1e-12),
          "PerturbationSet(" + provenance + "): input delta exceeds epsilon " +
              std::to_string(epsilon_bound));
  }
};

}  // namespace advlab
