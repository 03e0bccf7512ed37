#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "advlab/generator.hpp"
#include "advlab/nn.hpp"

namespace advlab {

/// On-disk model snapshot. The binary layout (documented in
/// docs/formats.md) is fully deterministic, so save -> load -> save
/// reproduces the file byte for byte.
struct Checkpoint {
  ArchConfig arch;
  int epoch = 0;
  std::uint64_t seed = 0;
  std::vector<double> theta;

  bool has_generator = false;
  std::vector<double> alpha;
  double alpha_omega = 0.0;
  std::vector<std::pair<std::int64_t, Tensor>> omega;  // ascending ids

  static Checkpoint of(const ResidualNet& net, int epoch, std::uint64_t seed);
  static Checkpoint of(const ResidualNet& net, const GeneratorParams& gen,
                       const OmegaStore& store, int epoch, std::uint64_t seed);

  ResidualNet restore_net() const;
  void restore_generator(GeneratorParams& gen, OmegaStore& store) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace advlab
