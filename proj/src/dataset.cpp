#include "advlab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace advlab {

void DatasetDescriptor::validate() const {
  check(kind == "synthetic-moons" || kind == "synthetic-blobs" || kind == "idx-images" ||
            kind == "csv-table",
        "dataset: unknown kind \"" + kind + "\"");
  check(classes >= 2, "dataset: classes must be >= 2");
  if (is_synthetic()) {
    check(n >= 2 * classes, "dataset: n too small");
    check(noise >= 0.0, "dataset: noise must be >= 0");
    check(train_fraction > 0.0 && train_fraction < 1.0, "dataset: train_fraction in (0,1)");
    check(kind != "synthetic-moons" || classes == 2, "dataset: moons is a 2-class set");
    check(kind != "synthetic-blobs" || dim >= 1, "dataset: blobs dim must be >= 1");
  }
  if (kind == "idx-images")
    check(!train_images.empty() && !train_labels.empty() && !test_images.empty() &&
              !test_labels.empty(),
          "dataset: idx-images needs all four file paths");
  if (kind == "csv-table")
    check(!train_csv.empty() && !test_csv.empty(), "dataset: csv-table needs both file paths");
  check(!augment || kind == "idx-images", "dataset: augmentation is for image kinds only");
  check(aug_pad >= 0, "dataset: aug_pad must be >= 0");
}

namespace {

void minmax_normalize(Tensor& features) {
  if (!features.defined() || features.numel() == 0) return;
  int n = features.shape[0], d = features.shape[1];
  for (int j = 0; j < d; ++j) {
    double lo = features[j], hi = features[j];
    for (int i = 1; i < n; ++i) {
      lo = std::min(lo, features[static_cast<std::int64_t>(i) * d + j]);
      hi = std::max(hi, features[static_cast<std::int64_t>(i) * d + j]);
    }
    double span = hi - lo;
    for (int i = 0; i < n; ++i) {
      double& v = features.data[static_cast<std::size_t>(i) * d + j];
      v = span > 0 ? (v - lo) / span : 0.0;
    }
  }
}

std::pair<Dataset, Dataset> split(Tensor features, std::vector<int> labels, int classes,
                                  double train_fraction, std::uint64_t seed) {
  int n = features.shape[0], d = features.shape[1];
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(mix_seed(seed, "split"));
  rng.shuffle(order);
  int n_train = static_cast<int>(std::floor(train_fraction * n));
  check(n_train > 0 && n_train < n, "dataset: split leaves an empty side");

  auto gather = [&](int begin, int count) {
    Dataset ds;
    ds.features = Tensor({count, d});
    ds.labels.resize(static_cast<std::size_t>(count));
    ds.ids.resize(static_cast<std::size_t>(count));
    ds.classes = classes;
    for (int i = 0; i < count; ++i) {
      int src = order[static_cast<std::size_t>(begin + i)];
      std::copy(features.data.begin() + static_cast<std::ptrdiff_t>(src) * d,
                features.data.begin() + static_cast<std::ptrdiff_t>(src + 1) * d,
                ds.features.data.begin() + static_cast<std::ptrdiff_t>(i) * d);
      ds.labels[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(src)];
      ds.ids[static_cast<std::size_t>(i)] = src;
    }
    return ds;
  };
  return {gather(0, n_train), gather(n_train, n - n_train)};
}

std::pair<Dataset, Dataset> make_moons(const DatasetDescriptor& desc, std::uint64_t seed) {
  int n = desc.n;
  Tensor features({n, 2});
  std::vector<int> labels(static_cast<std::size_t>(n));
  Rng rng(mix_seed(seed, "moons"));
  for (int i = 0; i < n; ++i) {
    int cls = i % 2;
    double t = std::numbers::pi * rng.next_double();
    double x, y;
    if (cls == 0) {
      x = std::cos(t);
      y = std::sin(t);
    } else {
      x = 1.0 - std::cos(t);
      y = 0.5 - std::sin(t);
    }
    features[static_cast<std::int64_t>(i) * 2] = x + rng.gaussian(0.0, desc.noise);
    features[static_cast<std::int64_t>(i) * 2 + 1] = y + rng.gaussian(0.0, desc.noise);
    labels[static_cast<std::size_t>(i)] = cls;
  }
  minmax_normalize(features);
  return split(std::move(features), std::move(labels), 2, desc.train_fraction, seed);
}

std::pair<Dataset, Dataset> make_blobs(const DatasetDescriptor& desc, std::uint64_t seed) {
  int n = desc.n, d = desc.dim, k = desc.classes;
  // class centers: on the unit circle for d == 2, random unit directions
  // otherwise
  std::vector<std::vector<double>> centers(static_cast<std::size_t>(k),
                                           std::vector<double>(static_cast<std::size_t>(d)));
  Rng crng(mix_seed(seed, "blob-centers"));
  for (int c = 0; c < k; ++c) {
    if (d == 2) {
      double a = 2.0 * std::numbers::pi * c / k;
      centers[static_cast<std::size_t>(c)] = {std::cos(a), std::sin(a)};
    } else {
      double norm = 0;
      for (int j = 0; j < d; ++j) {
        double v = crng.gaussian(0, 1);
        centers[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] = v;
        norm += v * v;
      }
      norm = std::sqrt(std::max(norm, 1e-12));
      for (int j = 0; j < d; ++j) centers[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] /= norm;
    }
  }
  Tensor features({n, d});
  std::vector<int> labels(static_cast<std::size_t>(n));
  Rng rng(mix_seed(seed, "blobs"));
  for (int i = 0; i < n; ++i) {
    int cls = i % k;  // balanced by construction
    for (int j = 0; j < d; ++j)
      features[static_cast<std::int64_t>(i) * d + j] =
          centers[static_cast<std::size_t>(cls)][static_cast<std::size_t>(j)] +
          rng.gaussian(0.0, desc.noise);
    labels[static_cast<std::size_t>(i)] = cls;
  }
  minmax_normalize(features);
  return split(std::move(features), std::move(labels), k, desc.train_fraction, seed);
}

// --- IDX ---------------------------------------------------------------------

std::uint32_t read_be32(std::istream& in, const std::string& path, std::size_t offset) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  check(static_cast<bool>(in), "idx: " + path + ": unexpected end of file at offset " +
                                   std::to_string(offset));
  return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

struct IdxImages {
  int count = 0, rows = 0, cols = 0;
  std::vector<unsigned char> pixels;
};

IdxImages read_idx_images(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(static_cast<bool>(in), "idx: cannot open " + path);
  std::uint32_t magic = read_be32(in, path, 0);
  check(magic == 0x00000803u,
        "idx: " + path + ": bad magic at offset 0: expected 0x00000803, found 0x" +
            [](std::uint32_t m) {
              char buf[16];
              std::snprintf(buf, sizeof buf, "%08x", m);
              return std::string(buf);
            }(magic));
  IdxImages img;
  img.count = static_cast<int>(read_be32(in, path, 4));
  img.rows = static_cast<int>(read_be32(in, path, 8));
  img.cols = static_cast<int>(read_be32(in, path, 12));
  check(img.count > 0 && img.rows > 0 && img.cols > 0, "idx: " + path + ": empty image set");
  std::size_t total = static_cast<std::size_t>(img.count) * img.rows * img.cols;
  img.pixels.resize(total);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(total));
  check(static_cast<bool>(in), "idx: " + path + ": truncated pixel data");
  return img;
}

std::vector<int> read_idx_labels(const std::string& path, int classes) {
  std::ifstream in(path, std::ios::binary);
  check(static_cast<bool>(in), "idx: cannot open " + path);
  std::uint32_t magic = read_be32(in, path, 0);
  check(magic == 0x00000801u,
        "idx: " + path + ": bad magic at offset 0: expected 0x00000801, found 0x" +
            [](std::uint32_t m) {
              char buf[16];
              std::snprintf(buf, sizeof buf, "%08x", m);
              return std::string(buf);
            }(magic));
  int count = static_cast<int>(read_be32(in, path, 4));
  std::vector<unsigned char> raw(static_cast<std::size_t>(count));
  in.read(reinterpret_cast<char*>(raw.data()), count);
  check(static_cast<bool>(in), "idx: " + path + ": truncated label data");
  std::vector<int> labels(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    labels[static_cast<std::size_t>(i)] = raw[static_cast<std::size_t>(i)];
    check(labels[static_cast<std::size_t>(i)] < classes,
          "idx: " + path + ": label out of range at row " + std::to_string(i));
  }
  return labels;
}

Dataset idx_split(const std::string& img_path, const std::string& lbl_path, int classes,
                  std::int64_t id_base) {
  IdxImages img = read_idx_images(img_path);
  std::vector<int> labels = read_idx_labels(lbl_path, classes);
  check(static_cast<int>(labels.size()) == img.count,
        "idx: " + img_path + ": image/label count mismatch");
  Dataset ds;
  int d = img.rows * img.cols;
  ds.features = Tensor({img.count, d});
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    ds.features.data[i] = static_cast<double>(img.pixels[i]) / 255.0;
  ds.labels = std::move(labels);
  ds.classes = classes;
  ds.image_kind = true;
  ds.img_c = 1;
  ds.img_h = img.rows;
  ds.img_w = img.cols;
  ds.ids.resize(static_cast<std::size_t>(img.count));
  for (int i = 0; i < img.count; ++i) ds.ids[static_cast<std::size_t>(i)] = id_base + i;
  return ds;
}

// --- CSV ---------------------------------------------------------------------

Dataset read_csv(const std::string& path, int classes, std::int64_t id_base) {
  std::ifstream in(path);
  check(static_cast<bool>(in), "csv: cannot open " + path);
  std::string line;
  check(static_cast<bool>(std::getline(in, line)), "csv: " + path + ": missing header");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  check(header.size() >= 2 && header.back() == "label",
        "csv: " + path + ": header must end with a \"label\" column");
  int d = static_cast<int>(header.size()) - 1;

  std::vector<double> values;
  std::vector<int> labels;
  int row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++row;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> fields;
    while (std::getline(ss, cell, ',')) {
      try {
        fields.push_back(std::stod(cell));
      } catch (const std::exception&) {
        fail("csv: " + path + ": unparsable value \"" + cell + "\" at row " + std::to_string(row));
      }
    }
    check(static_cast<int>(fields.size()) == d + 1,
          "csv: " + path + ": row " + std::to_string(row) + " has " +
              std::to_string(fields.size()) + " fields, expected " + std::to_string(d + 1));
    double lab = fields.back();
    check(lab == std::floor(lab) && lab >= 0 && lab < classes,
          "csv: " + path + ": label out of range at row " + std::to_string(row));
    labels.push_back(static_cast<int>(lab));
    values.insert(values.end(), fields.begin(), fields.end() - 1);
  }
  check(row > 0, "csv: " + path + ": no data rows");
  Dataset ds;
  ds.features = Tensor({row, d}, std::move(values));
  ds.labels = std::move(labels);
  ds.classes = classes;
  ds.ids.resize(static_cast<std::size_t>(row));
  for (int i = 0; i < row; ++i) ds.ids[static_cast<std::size_t>(i)] = id_base + i;
  return ds;
}

void csv_normalize_pair(Dataset& train, Dataset& test) {
  // min-max per feature, computed on the training split
  int d = train.dim();
  for (int j = 0; j < d; ++j) {
    double lo = train.features[j], hi = train.features[j];
    for (int i = 1; i < train.size(); ++i) {
      double v = train.features[static_cast<std::int64_t>(i) * d + j];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    double span = hi - lo;
    auto apply = [&](Dataset& ds) {
      for (int i = 0; i < ds.size(); ++i) {
        double& v = ds.features.data[static_cast<std::size_t>(i) * d + j];
        v = span > 0 ? (v - lo) / span : 0.0;
        v = std::min(std::max(v, 0.0), 1.0);
      }
    };
    apply(train);
    apply(test);
  }
}

}  // namespace

std::pair<Dataset, Dataset> load_dataset(const DatasetDescriptor& desc, std::uint64_t seed) {
  desc.validate();
  if (desc.kind == "synthetic-moons") return make_moons(desc, seed);
  if (desc.kind == "synthetic-blobs") return make_blobs(desc, seed);
  if (desc.kind == "idx-images") {
    Dataset train = idx_split(desc.train_images, desc.train_labels, desc.classes, 0);
    Dataset test =
        idx_split(desc.test_images, desc.test_labels, desc.classes, train.size());
    check(train.dim() == test.dim(), "idx: train/test image shapes differ");
    return {std::move(train), std::move(test)};
  }
  Dataset train = read_csv(desc.train_csv, desc.classes, 0);
  Dataset test = read_csv(desc.test_csv, desc.classes, train.size());
  check(train.dim() == test.dim(), "csv: train/test widths differ");
  csv_normalize_pair(train, test);
  return {std::move(train), std::move(test)};
}

Batch take_batch(const Dataset& ds, std::span<const int> order, std::size_t begin,
                 std::size_t count) {
  check(begin + count <= order.size(), "take_batch: slice out of range");
  int d = ds.dim();
  Batch b;
  b.x = Tensor({static_cast<int>(count), d});
  b.y.resize(count);
  b.ids.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    int src = order[begin + i];
    std::copy(ds.features.data.begin() + static_cast<std::ptrdiff_t>(src) * d,
              ds.features.data.begin() + static_cast<std::ptrdiff_t>(src + 1) * d,
              b.x.data.begin() + static_cast<std::ptrdiff_t>(i) * d);
    b.y[i] = ds.labels[static_cast<std::size_t>(src)];
    b.ids[i] = ds.ids[static_cast<std::size_t>(src)];
  }
  return b;
}

Batch sample_batch(const Dataset& ds, std::size_t count, std::uint64_t seed) {
  std::vector<int> order(static_cast<std::size_t>(ds.size()));
  for (int i = 0; i < ds.size(); ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(mix_seed(seed, "sample"));
  rng.shuffle(order);
  return take_batch(ds, order, 0, std::min(count, order.size()));
}

AugmentOp sample_augment(std::uint64_t seed, int pad) {
  Rng rng(seed);
  AugmentOp op;
  op.pad = pad;
  op.flip = rng.next_double() < 0.5;
  op.dy = static_cast<int>(rng.next_index(static_cast<std::uint64_t>(2 * pad + 1)));
  op.dx = static_cast<int>(rng.next_index(static_cast<std::uint64_t>(2 * pad + 1)));
  return op;
}

Tensor apply_augment(const Tensor& x, int c, int h, int w, std::span<const AugmentOp> ops) {
  check(x.ndim() == 2 && x.shape[1] == c * h * w, "augment: batch shape " + x.shape_str() +
                                                      " does not match image dims");
  check(ops.size() == static_cast<std::size_t>(x.shape[0]), "augment: one op per row required");
  Tensor out(x.shape);
  for (int b = 0; b < x.shape[0]; ++b) {
    const AugmentOp& op = ops[static_cast<std::size_t>(b)];
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          int si = i + op.dy - op.pad;
          int sj = j + op.dx - op.pad;
          double v = 0.0;
          if (si >= 0 && si < h && sj >= 0 && sj < w) {
            int col = op.flip ? w - 1 - sj : sj;
            v = x[(static_cast<std::int64_t>(b) * c + ch) * h * w + si * w + col];
          }
          out[(static_cast<std::int64_t>(b) * c + ch) * h * w + i * w + j] = v;
        }
  }
  return out;
}

void augment_writeback(Tensor& stored, const Tensor& updated, int c, int h, int w,
                       std::span<const AugmentOp> ops) {
  check(stored.shape == updated.shape, "augment_writeback: shape mismatch");
  for (int b = 0; b < stored.shape[0]; ++b) {
    const AugmentOp& op = ops[static_cast<std::size_t>(b)];
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          int si = i + op.dy - op.pad;
          int sj = j + op.dx - op.pad;
          if (si < 0 || si >= h || sj < 0 || sj >= w) continue;  // fell in the margin
          int col = op.flip ? w - 1 - sj : sj;
          stored.data[static_cast<std::size_t>(
              (static_cast<std::int64_t>(b) * c + ch) * h * w + si * w + col)] =
              updated[(static_cast<std::int64_t>(b) * c + ch) * h * w + i * w + j];
        }
  }
}

}  // namespace advlab
