#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "advlab/rng.hpp"
#include "advlab/tensor.hpp"

namespace advlab {

struct DatasetDescriptor {
  std::string kind = "synthetic-moons";  // synthetic-moons | synthetic-blobs |
                                         // idx-images | csv-table
  // synthetic kinds
  int n = 512;
  double noise = 0.1;
  int classes = 2;
  int dim = 2;  // synthetic-blobs feature dimension
  double train_fraction = 0.8;

  // idx-images
  std::string train_images, train_labels, test_images, test_labels;

  // csv-table ("label" must be the last header column)
  std::string train_csv, test_csv;

  // image augmentation (horizontal flip + pad/crop); image kinds only
  bool augment = false;
  int aug_pad = 1;

  void validate() const;
  bool is_synthetic() const { return kind == "synthetic-moons" || kind == "synthetic-blobs"; }
};

struct Dataset {
  Tensor features;  // [N, D], values in [0, 1]
  std::vector<int> labels;
  std::vector<std::int64_t> ids;  // stable global indices (omega store keys)
  int classes = 0;
  bool image_kind = false;
  int img_c = 0, img_h = 0, img_w = 0;

  int size() const { return features.defined() ? features.shape[0] : 0; }
  int dim() const { return features.defined() ? features.shape[1] : 0; }
};

/// Loads and normalizes a dataset; synthetic kinds are generated and split
/// deterministically from the seed.
std::pair<Dataset, Dataset> load_dataset(const DatasetDescriptor& desc, std::uint64_t seed);

struct Batch {
  Tensor x;
  std::vector<int> y;
  std::vector<std::int64_t> ids;
};

Batch take_batch(const Dataset& ds, std::span<const int> order, std::size_t begin,
                 std::size_t count);

/// First `count` rows of a seeded shuffle; the analysis modules use this for
/// their fixed evaluation subsets.
Batch sample_batch(const Dataset& ds, std::size_t count, std::uint64_t seed);

// --- augmentation -----------------------------------------------------------
// x' = crop(pad(flip(x))): optional horizontal flip, zero padding of `pad`
// pixels each side, then an h x w crop at offset (dy, dx) in [0, 2*pad]^2.

struct AugmentOp {
  bool flip = false;
  int dy = 0;
  int dx = 0;
  int pad = 0;
};

AugmentOp sample_augment(std::uint64_t seed, int pad);

/// Applies one transform per batch row ([B, c*h*w]).
Tensor apply_augment(const Tensor& x, int c, int h, int w, std::span<const AugmentOp> ops);

/// Writes an updated batch (in augmented coordinates) back into the stored
/// rows (unaugmented coordinates). Coordinates that fell into the padding
/// margin are dropped; stored coordinates outside the crop window keep their
/// previous values.
void augment_writeback(Tensor& stored, const Tensor& updated, int c, int h, int w,
                       std::span<const AugmentOp> ops);

}  // namespace advlab
