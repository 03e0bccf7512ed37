#include "advlab/nn.hpp"

#include <cmath>

#include "advlab/rng.hpp"
#include "json.hpp"

namespace advlab {

void ArchConfig::validate() const {
  check(arch == "micro-preact" || arch == "micro-conv", "arch: unknown architecture \"" + arch + "\"");
  check(classes >= 2, "arch: classes must be >= 2");
  if (is_conv()) {
    check(in_channels > 0 && image_h > 0 && image_w > 0, "arch: bad image dims");
    check(conv_channels > 0 && conv_blocks > 0, "arch: bad conv config");
    check(kernel > 0 && kernel % 2 == 1, "arch: kernel must be odd");
    check(kernel <= image_h && kernel <= image_w, "arch: kernel larger than image");
  } else {
    check(input_dim > 0 && blocks > 0 && hidden > 0, "arch: bad dense config");
  }
}

std::string arch_to_json(const ArchConfig& cfg) {
  nlohmann::json j;
  j["arch"] = cfg.arch;
  j["classes"] = cfg.classes;
  j["residual_skip"] = cfg.residual_skip;
  if (cfg.is_conv()) {
    j["in_channels"] = cfg.in_channels;
    j["image_h"] = cfg.image_h;
    j["image_w"] = cfg.image_w;
    j["conv_channels"] = cfg.conv_channels;
    j["conv_blocks"] = cfg.conv_blocks;
    j["kernel"] = cfg.kernel;
  } else {
    j["input_dim"] = cfg.input_dim;
    j["blocks"] = cfg.blocks;
    j["hidden"] = cfg.hidden;
  }
  return j.dump();
}

ArchConfig arch_from_json(const std::string& text) {
  try {
    nlohmann::json j = nlohmann::json::parse(text);
    ArchConfig cfg;
    cfg.arch = j.at("arch").get<std::string>();
    check(cfg.arch == "micro-preact" || cfg.arch == "micro-conv",
          "arch: unknown architecture \"" + cfg.arch + "\"");
    cfg.classes = j.at("classes").get<int>();
    cfg.residual_skip = j.value("residual_skip", true);
    if (cfg.is_conv()) {
      cfg.in_channels = j.at("in_channels").get<int>();
      cfg.image_h = j.at("image_h").get<int>();
      cfg.image_w = j.at("image_w").get<int>();
      cfg.conv_channels = j.at("conv_channels").get<int>();
      cfg.conv_blocks = j.at("conv_blocks").get<int>();
      cfg.kernel = j.at("kernel").get<int>();
    } else {
      cfg.input_dim = j.at("input_dim").get<int>();
      cfg.blocks = j.at("blocks").get<int>();
      cfg.hidden = j.at("hidden").get<int>();
    }
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("arch config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

ResidualNet::ResidualNet(ArchConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  init_params(seed);
}

ResidualNet::ResidualNet(const ResidualNet& o) : cfg_(o.cfg_), params_(o.params_), names_(o.names_) {}

ResidualNet& ResidualNet::operator=(const ResidualNet& o) {
  cfg_ = o.cfg_;
  params_ = o.params_;
  names_ = o.names_;
  return *this;
}

namespace {

Tensor glorot(std::vector<int> shape, int fan_in, int fan_out, Rng& rng) {
  double s = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(-s, s);
  return t;
}

}  // namespace

void ResidualNet::init_params(std::uint64_t seed) {
  params_.clear();
  names_.clear();
  auto push = [&](const std::string& name, Tensor t) {
    names_.push_back(name);
    params_.push_back(std::move(t));
  };
  int pidx = 0;
  auto stream = [&]() { return Rng(mix_seed(seed, "param", static_cast<std::uint64_t>(pidx++))); };

  if (!cfg_.is_conv()) {
    int D = cfg_.input_dim, H = cfg_.hidden;
    for (int b = 1; b <= cfg_.blocks; ++b) {
      std::string p = "block" + std::to_string(b) + ".";
      push(p + "gamma", Tensor({D}, 1.0));
      push(p + "beta", Tensor({D}, 0.0));
      Rng r1 = stream();
      push(p + "w1", glorot({D, H}, D, H, r1));
      push(p + "b1", Tensor({H}, 0.0));
      Rng r2 = stream();
      push(p + "w2", glorot({H, D}, H, D, r2));
      push(p + "b2", Tensor({D}, 0.0));
    }
    Rng rh = stream();
    push("head.w", glorot({D, cfg_.classes}, D, cfg_.classes, rh));
    push("head.b", Tensor({cfg_.classes}, 0.0));
  } else {
    int C = cfg_.in_channels, F = cfg_.conv_channels, K = cfg_.kernel;
    int fan_stem_in = C * K * K, fan_stem_out = F * K * K;
    Rng rs = stream();
    push("stem.k", glorot({F, C, K, K}, fan_stem_in, fan_stem_out, rs));
    push("stem.b", Tensor({F}, 0.0));
    int fan = F * K * K;
    for (int b = 1; b <= cfg_.conv_blocks; ++b) {
      std::string p = "block" + std::to_string(b) + ".";
      push(p + "gamma", Tensor({F}, 1.0));
      push(p + "beta", Tensor({F}, 0.0));
      Rng r1 = stream();
      push(p + "k1", glorot({F, F, K, K}, fan, fan, r1));
      push(p + "b1", Tensor({F}, 0.0));
      Rng r2 = stream();
      push(p + "k2", glorot({F, F, K, K}, fan, fan, r2));
      push(p + "b2", Tensor({F}, 0.0));
    }
    int feat = F * cfg_.image_h * cfg_.image_w;
    Rng rh = stream();
    push("head.w", glorot({feat, cfg_.classes}, feat, cfg_.classes, rh));
    push("head.b", Tensor({cfg_.classes}, 0.0));
  }
}

std::size_t ResidualNet::param_count() const {
  std::size_t n = 0;
  for (const Tensor& t : params_) n += static_cast<std::size_t>(t.numel());
  return n;
}

std::size_t ResidualNet::param_count_formula(const ArchConfig& cfg) {
  if (!cfg.is_conv()) {
    std::size_t D = cfg.input_dim, H = cfg.hidden;
    std::size_t per_block = 2 * D + (D * H + H) + (H * D + D);
    return static_cast<std::size_t>(cfg.blocks) * per_block + (D * cfg.classes + cfg.classes);
  }
  std::size_t C = cfg.in_channels, F = cfg.conv_channels, K = cfg.kernel;
  std::size_t stem = F * C * K * K + F;
  std::size_t per_block = 2 * F + 2 * (F * F * K * K + F);
  std::size_t feat = F * cfg.image_h * cfg.image_w;
  return stem + static_cast<std::size_t>(cfg.conv_blocks) * per_block +
         (feat * cfg.classes + cfg.classes);
}

std::vector<double> ResidualNet::flat_theta() const {
  std::vector<double> out;
  out.reserve(param_count());
  for (const Tensor& t : params_) out.insert(out.end(), t.data.begin(), t.data.end());
  return out;
}

void ResidualNet::set_flat_theta(const std::vector<double>& theta) {
  check(theta.size() == param_count(), "set_flat_theta: expected " + std::to_string(param_count()) +
                                           " values, got " + std::to_string(theta.size()));
  std::size_t off = 0;
  for (Tensor& t : params_) {
    std::copy(theta.begin() + off, theta.begin() + off + t.data.size(), t.data.begin());
    off += t.data.size();
  }
}

std::uint64_t ResidualNet::theta_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Tensor& t : params_) h = hash_bytes(t.data.data(), t.data.size() * sizeof(double), h);
  return h;
}

NetBinding ResidualNet::bind(Graph& g, const Tensor& x_flat, const PerturbationSet* deltas) const {
  PerturbationVars vars;
  if (deltas) {
    if (deltas->input_delta.defined()) vars.input_delta = g.leaf(deltas->input_delta);
    if (!deltas->block_deltas.empty()) {
      check(static_cast<int>(deltas->block_deltas.size()) == num_blocks(),
            "bind: expected " + std::to_string(num_blocks()) + " block deltas, got " +
                std::to_string(deltas->block_deltas.size()));
      vars.block_deltas.resize(deltas->block_deltas.size());
      for (std::size_t i = 0; i < deltas->block_deltas.size(); ++i)
        if (deltas->block_deltas[i].defined())
          vars.block_deltas[i] = g.leaf(deltas->block_deltas[i]);
    }
  }
  Var x = g.leaf(x_flat);
  return bind_var(g, x, deltas ? &vars : nullptr);
}

NetBinding ResidualNet::bind_var(Graph& g, Var x_flat, const PerturbationVars* deltas) const {
  // note: node storage reallocates as leaves are pushed; take values, not
  // references, from the graph here
  const std::vector<int> xshape = g.value(x_flat).shape;
  check(xshape.size() == 2, "bind: input must be [B, D], got " + shape_str(xshape));
  int B = xshape[0];
  check(xshape[1] == cfg_.flat_input_dim(),
        "bind: input width " + std::to_string(xshape[1]) + " does not match architecture (" +
            std::to_string(cfg_.flat_input_dim()) + ")");

  NetBinding nb;
  std::size_t pi = 0;
  auto param = [&]() { return nb.params[pi++]; };
  for (const Tensor& t : params_) nb.params.push_back(g.leaf(t, true));

  auto block_delta = [&](int block_index) -> Var {  // 1-based
    if (!deltas || deltas->block_deltas.empty()) return Var{};
    check(static_cast<int>(deltas->block_deltas.size()) >= block_index,
          "bind: missing delta slot for block " + std::to_string(block_index));
    return deltas->block_deltas[static_cast<std::size_t>(block_index) - 1];
  };
  auto check_delta_shape = [&](Var d, const std::vector<int>& want, int block_index) {
    if (!d.valid()) return;
    check(g.value(d).shape == want, "bind: delta for block " + std::to_string(block_index) +
                                        " has shape " + g.value(d).shape_str() + ", expected " +
                                        shape_str(want));
  };

  Var input = x_flat;
  if (deltas && deltas->input_delta.valid()) {
    check(g.value(deltas->input_delta).shape == xshape,
          "bind: input delta shape " + g.value(deltas->input_delta).shape_str() +
              " does not match input " + shape_str(xshape));
    input = g.add(x_flat, deltas->input_delta);
  }
  nb.input = input;
  nb.taps.inputs.push_back(input);

  if (!cfg_.is_conv()) {
    Var h = input;
    for (int b = 1; b <= cfg_.blocks; ++b) {
      nb.taps.inputs.push_back(h);
      Var gamma = param(), beta = param(), w1 = param(), b1 = param(), w2 = param(), b2 = param();
      Var branch = h;
      Var d = block_delta(b);
      check_delta_shape(d, g.value(h).shape, b);
      if (d.valid()) branch = g.add(h, d);
      Var t = g.add(g.mul(branch, gamma), beta);
      t = g.relu(t);
      t = g.add(g.matmul(t, w1), b1);
      t = g.relu(t);
      t = g.add(g.matmul(t, w2), b2);
      h = cfg_.residual_skip ? g.add(h, t) : t;
    }
    Var wh = param(), bh = param();
    nb.logits = g.add(g.matmul(h, wh), bh);
  } else {
    int C = cfg_.in_channels, H = cfg_.image_h, W = cfg_.image_w, F = cfg_.conv_channels;
    int pad = cfg_.kernel / 2;
    Var x4 = g.reshape(input, {B, C, H, W});
    Var ks = param(), bs = param();
    Var h = g.add(g.conv2d(x4, ks, pad), bs);
    for (int b = 1; b <= cfg_.conv_blocks; ++b) {
      nb.taps.inputs.push_back(h);
      Var gamma = param(), beta = param(), k1 = param(), b1 = param(), k2 = param(), b2 = param();
      Var branch = h;
      Var d = block_delta(b);
      check_delta_shape(d, g.value(h).shape, b);
      if (d.valid()) branch = g.add(h, d);
      Var t = g.add(g.mul(branch, gamma), beta);
      t = g.relu(t);
      t = g.add(g.conv2d(t, k1, pad), b1);
      t = g.relu(t);
      t = g.add(g.conv2d(t, k2, pad), b2);
      h = cfg_.residual_skip ? g.add(h, t) : t;
    }
    Var flat = g.reshape(h, {B, F * H * W});
    Var wh = param(), bh = param();
    nb.logits = g.add(g.matmul(flat, wh), bh);
  }
  fw_.fetch_add(1);
  return nb;
}

Var ResidualNet::per_example_loss(Graph& g, Var logits, const std::vector<int>& labels) const {
  return g.softmax_xent(logits, labels_leaf(g, labels));
}

Var ResidualNet::mean_loss(Graph& g, Var logits, const std::vector<int>& labels) const {
  return g.batch_mean(per_example_loss(g, logits, labels));
}

void ResidualNet::run_backward(Graph& g, Var loss) const {
  g.backward(loss);
  bw_.fetch_add(1);
}

std::vector<Tensor> ResidualNet::param_grads(const Graph& g, const NetBinding& b) const {
  std::vector<Tensor> out;
  out.reserve(b.params.size());
  for (Var p : b.params) out.push_back(g.grad(p));
  return out;
}

std::vector<Tensor> block_input_grads(const ResidualNet& net, Graph& g, Var loss,
                                      const BlockTaps& taps) {
  for (Var v : taps.inputs) check(v.graph == g.id(), "block_input_grads: taps are stale");
  net.run_backward(g, loss);
  return tap_grads(g, taps);
}

std::vector<Tensor> tap_grads(const Graph& g, const BlockTaps& taps) {
  std::vector<Tensor> out;
  out.reserve(taps.inputs.size());
  for (Var v : taps.inputs) out.push_back(g.grad(v));
  return out;
}

Var labels_leaf(Graph& g, const std::vector<int>& labels) {
  Tensor t({static_cast<int>(labels.size())});
  for (std::size_t i = 0; i < labels.size(); ++i) t[static_cast<std::int64_t>(i)] = labels[i];
  return g.leaf(std::move(t));
}

std::vector<int> argmax_rows(const Tensor& logits) {
  check(logits.ndim() == 2, "argmax_rows: expected [B,C], got " + logits.shape_str());
  int B = logits.shape[0], C = logits.shape[1];
  std::vector<int> out(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    int best = 0;
    for (int c = 1; c < C; ++c)
      if (logits[static_cast<std::int64_t>(b) * C + c] >
          logits[static_cast<std::int64_t>(b) * C + best])
        best = c;
    out[static_cast<std::size_t>(b)] = best;
  }
  return out;
}

double accuracy(const Tensor& logits, const std::vector<int>& labels) {
  std::vector<int> pred = argmax_rows(logits);
  check(pred.size() == labels.size(), "accuracy: label count mismatch");
  check(!labels.empty(), "accuracy: empty batch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (pred[i] == labels[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

}  // namespace advlab
