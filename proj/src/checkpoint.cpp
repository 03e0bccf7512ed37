#include "advlab/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace advlab {

namespace {

constexpr char kMagic[8] = {'A', 'D', 'V', 'L', 'C', 'K', 'P', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& out, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(out, v);
}

void put_f64s(std::ostream& out, const std::vector<double>& v) {
  for (double d : v) put_f64(out, d);
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  check(static_cast<bool>(in), "checkpoint: " + path + ": truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& in, const std::string& path) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  check(static_cast<bool>(in), "checkpoint: " + path + ": truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in, const std::string& path) {
  std::uint64_t v = get_u64(in, path);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

}  // namespace

Checkpoint Checkpoint::of(const ResidualNet& net, int epoch, std::uint64_t seed) {
  Checkpoint ck;
  ck.arch = net.config();
  ck.epoch = epoch;
  ck.seed = seed;
  ck.theta = net.flat_theta();
  return ck;
}

Checkpoint Checkpoint::of(const ResidualNet& net, const GeneratorParams& gen,
                          const OmegaStore& store, int epoch, std::uint64_t seed) {
  Checkpoint ck = of(net, epoch, seed);
  ck.has_generator = true;
  ck.alpha = gen.alpha;
  ck.alpha_omega = gen.alpha_omega;
  for (const auto& [id, row] : store.entries()) ck.omega.emplace_back(id, row);
  return ck;
}

ResidualNet Checkpoint::restore_net() const {
  ResidualNet net(arch, seed);
  net.set_flat_theta(theta);
  return net;
}

void Checkpoint::restore_generator(GeneratorParams& gen, OmegaStore& store) const {
  check(has_generator, "checkpoint: no generator state recorded");
  gen.alpha = alpha;
  gen.alpha_omega = alpha_omega;
  for (const auto& [id, row] : omega) store.insert(id, row);
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check(static_cast<bool>(out), "checkpoint: cannot write " + path);
  out.write(kMagic, 8);

  nlohmann::json meta;
  meta["arch"] = nlohmann::json::parse(arch_to_json(ck.arch));
  meta["epoch"] = ck.epoch;
  meta["seed"] = ck.seed;
  std::string meta_str = meta.dump();
  put_u32(out, static_cast<std::uint32_t>(meta_str.size()));
  out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));

  put_u64(out, ck.theta.size());
  put_f64s(out, ck.theta);

  out.put(ck.has_generator ? 1 : 0);
  if (ck.has_generator) {
    put_u32(out, static_cast<std::uint32_t>(ck.alpha.size()));
    put_f64s(out, ck.alpha);
    put_f64(out, ck.alpha_omega);
    put_u64(out, ck.omega.size());
    for (const auto& [id, row] : ck.omega) {
      put_u64(out, static_cast<std::uint64_t>(id));
      put_u32(out, static_cast<std::uint32_t>(row.numel()));
      put_f64s(out, row.data);
    }
  }
  check(static_cast<bool>(out), "checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(static_cast<bool>(in), "checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  check(static_cast<bool>(in) && std::memcmp(magic, kMagic, 8) == 0,
        "checkpoint: " + path + ": bad magic (expected ADVLCKP1)");

  Checkpoint ck;
  std::uint32_t meta_len = get_u32(in, path);
  std::string meta_str(meta_len, '\0');
  in.read(meta_str.data(), meta_len);
  check(static_cast<bool>(in), "checkpoint: " + path + ": truncated metadata");
  try {
    nlohmann::json meta = nlohmann::json::parse(meta_str);
    ck.arch = arch_from_json(meta.at("arch").dump());
    ck.epoch = meta.at("epoch").get<int>();
    ck.seed = meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail("checkpoint: " + path + ": bad metadata: " + e.what());
  }

  std::uint64_t n = get_u64(in, path);
  ck.theta.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) ck.theta[i] = get_f64(in, path);

  int has_gen = in.get();
  check(has_gen == 0 || has_gen == 1, "checkpoint: " + path + ": bad generator flag");
  ck.has_generator = has_gen == 1;
  if (ck.has_generator) {
    std::uint32_t na = get_u32(in, path);
    ck.alpha.resize(na);
    for (std::uint32_t i = 0; i < na; ++i) ck.alpha[i] = get_f64(in, path);
    ck.alpha_omega = get_f64(in, path);
    std::uint64_t nw = get_u64(in, path);
    for (std::uint64_t i = 0; i < nw; ++i) {
      std::int64_t id = static_cast<std::int64_t>(get_u64(in, path));
      std::uint32_t numel = get_u32(in, path);
      Tensor row({static_cast<int>(numel)});
      for (std::uint32_t j = 0; j < numel; ++j) row[j] = get_f64(in, path);
      ck.omega.emplace_back(id, std::move(row));
    }
  }
  return ck;
}

}  // namespace advlab
