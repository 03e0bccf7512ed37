#include "advlab/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

namespace advlab {

[[noreturn]] void fail(const std::string& msg) { throw Error(msg); }

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

Tensor::Tensor(std::vector<int> s, double fill) : shape(std::move(s)) {
  for (int d : shape) check(d > 0, "Tensor: nonpositive dimension in " + advlab::shape_str(shape));
  data.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
}

Tensor::Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  check(static_cast<std::int64_t>(data.size()) == shape_numel(shape),
        "Tensor: data length " + std::to_string(data.size()) + " does not match shape " +
            advlab::shape_str(shape));
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(data.size()); }

double Tensor::item() const {
  check(numel() == 1, "Tensor::item: expected scalar, got shape " + advlab::shape_str(shape));
  return data[0];
}

std::string Tensor::shape_str() const { return advlab::shape_str(shape); }

Tensor sign_of(const Tensor& t) {
  Tensor out(t.shape);
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    double v = t[i];
    out[i] = (v > 0.0) ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
  }
  return out;
}

Tensor clamp_of(const Tensor& t, double lo, double hi) {
  Tensor out(t.shape);
  for (std::int64_t i = 0; i < t.numel(); ++i) out[i] = std::min(std::max(t[i], lo), hi);
  return out;
}

double linf_norm(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data) m = std::max(m, std::fabs(v));
  return m;
}

bool all_finite(const Tensor& t) {
  for (double v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor add_of(const Tensor& a, const Tensor& b) {
  check(a.same_shape(b), "add_of: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor out(a.shape);
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  return out;
}

Tensor sub_of(const Tensor& a, const Tensor& b) {
  check(a.same_shape(b), "sub_of: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor out(a.shape);
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
  return out;
}

Tensor scale_of(const Tensor& t, double c) {
  Tensor out(t.shape);
  for (std::int64_t i = 0; i < t.numel(); ++i) out[i] = c * t[i];
  return out;
}

// ---------------------------------------------------------------------------

OpKind op_kind_from_name(const std::string& name) {
  if (name == "add") return OpKind::add;
  if (name == "sub") return OpKind::sub;
  if (name == "elementwise-mul" || name == "mul") return OpKind::mul;
  if (name == "matmul") return OpKind::matmul;
  if (name == "conv2d") return OpKind::conv2d;
  if (name == "relu") return OpKind::relu;
  if (name == "batch-mean") return OpKind::batch_mean;
  if (name == "sum") return OpKind::sum;
  if (name == "softmax-cross-entropy") return OpKind::softmax_xent;
  if (name == "sign") return OpKind::sign;
  if (name == "clamp") return OpKind::clamp;
  if (name == "scalar-mul") return OpKind::scalar_mul;
  if (name == "sum-of-squares") return OpKind::sum_squares;
  if (name == "reshape") return OpKind::reshape;
  fail("unknown op kind: \"" + name + "\"");
}

std::string op_kind_name(OpKind k) {
  switch (k) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "elementwise-mul";
    case OpKind::matmul: return "matmul";
    case OpKind::conv2d: return "conv2d";
    case OpKind::relu: return "relu";
    case OpKind::batch_mean: return "batch-mean";
    case OpKind::sum: return "sum";
    case OpKind::softmax_xent: return "softmax-cross-entropy";
    case OpKind::sign: return "sign";
    case OpKind::clamp: return "clamp";
    case OpKind::scalar_mul: return "scalar-mul";
    case OpKind::sum_squares: return "sum-of-squares";
    case OpKind::reshape: return "reshape";
  }
  return "?";
}

namespace {

std::atomic<std::uint64_t> g_graph_counter{1};

// Broadcast patterns accepted by add/sub/mul: identical shapes, a trailing
// scalar, per-feature rows ([B,D] op [D]) and per-channel maps
// ([B,C,H,W] op [C]).
enum class Bcast { same, scalar, row, channel };

Bcast broadcast_kind(const std::vector<int>& a, const std::vector<int>& b, const char* op) {
  if (a == b) return Bcast::same;
  if (b.size() == 1 && b[0] == 1) return Bcast::scalar;
  if (a.size() == 2 && b.size() == 1 && b[0] == a[1]) return Bcast::row;
  if (a.size() == 4 && b.size() == 1 && b[0] == a[1]) return Bcast::channel;
  fail(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// index of the b-element matched with flat index i of a
std::int64_t broadcast_index(Bcast k, const std::vector<int>& a, std::int64_t i) {
  switch (k) {
    case Bcast::same: return i;
    case Bcast::scalar: return 0;
    case Bcast::row: return i % a[1];
    case Bcast::channel: {
      std::int64_t hw = static_cast<std::int64_t>(a[2]) * a[3];
      return (i / hw) % a[1];
    }
  }
  return 0;
}

}  // namespace

Graph::Graph() : id_(g_graph_counter.fetch_add(1)) {}

int Graph::check_var(Var v, const char* what) const {
  check(v.valid(), std::string(what) + ": invalid handle");
  check(v.graph == id_, std::string(what) + ": handle is stale or belongs to another graph");
  check(v.id < static_cast<int>(nodes_.size()), std::string(what) + ": handle out of range");
  return v.id;
}

Var Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1, id_};
}

Var Graph::leaf(Tensor value, bool requires_grad) {
  check(value.defined(), "leaf: undefined tensor");
  Node n;
  n.kind = OpKind::leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Var Graph::add(Var a, Var b) {
  int ia = check_var(a, "add"), ib = check_var(b, "add");
  const Tensor& ta = nodes_[ia].value;
  const Tensor& tb = nodes_[ib].value;
  Bcast k = broadcast_kind(ta.shape, tb.shape, "add");
  Node n;
  n.kind = OpKind::add;
  n.in0 = ia;
  n.in1 = ib;
  n.value = Tensor(ta.shape);
  for (std::int64_t i = 0; i < ta.numel(); ++i)
    n.value[i] = ta[i] + tb[broadcast_index(k, ta.shape, i)];
  return push(std::move(n));
}

Var Graph::sub(Var a, Var b) {
  int ia = check_var(a, "sub"), ib = check_var(b, "sub");
  const Tensor& ta = nodes_[ia].value;
  const Tensor& tb = nodes_[ib].value;
  Bcast k = broadcast_kind(ta.shape, tb.shape, "sub");
  Node n;
  n.kind = OpKind::sub;
  n.in0 = ia;
  n.in1 = ib;
  n.value = Tensor(ta.shape);
  for (std::int64_t i = 0; i < ta.numel(); ++i)
    n.value[i] = ta[i] - tb[broadcast_index(k, ta.shape, i)];
  return push(std::move(n));
}

Var Graph::mul(Var a, Var b) {
  int ia = check_var(a, "mul"), ib = check_var(b, "mul");
  const Tensor& ta = nodes_[ia].value;
  const Tensor& tb = nodes_[ib].value;
  Bcast k = broadcast_kind(ta.shape, tb.shape, "elementwise-mul");
  Node n;
  n.kind = OpKind::mul;
  n.in0 = ia;
  n.in1 = ib;
  n.value = Tensor(ta.shape);
  for (std::int64_t i = 0; i < ta.numel(); ++i)
    n.value[i] = ta[i] * tb[broadcast_index(k, ta.shape, i)];
  return push(std::move(n));
}

Var Graph::matmul(Var a, Var b) {
  int ia = check_var(a, "matmul"), ib = check_var(b, "matmul");
  const Tensor& ta = nodes_[ia].value;
  const Tensor& tb = nodes_[ib].value;
  check(ta.ndim() == 2 && tb.ndim() == 2,
        "matmul: expected 2-D operands, got " + ta.shape_str() + " and " + tb.shape_str());
  check(ta.shape[1] == tb.shape[0],
        "matmul: inner dimensions disagree, " + ta.shape_str() + " x " + tb.shape_str());
  int m = ta.shape[0], kk = ta.shape[1], nn = tb.shape[1];
  Node n;
  n.kind = OpKind::matmul;
  n.in0 = ia;
  n.in1 = ib;
  n.value = Tensor({m, nn});
  for (int i = 0; i < m; ++i)
    for (int k2 = 0; k2 < kk; ++k2) {
      double av = ta[static_cast<std::int64_t>(i) * kk + k2];
      if (av == 0.0) continue;
      for (int j = 0; j < nn; ++j)
        n.value[static_cast<std::int64_t>(i) * nn + j] +=
            av * tb[static_cast<std::int64_t>(k2) * nn + j];
    }
  return push(std::move(n));
}

Var Graph::conv2d(Var x, Var kernel, int pad) {
  int ix = check_var(x, "conv2d"), ik = check_var(kernel, "conv2d");
  const Tensor& tx = nodes_[ix].value;
  const Tensor& tk = nodes_[ik].value;
  check(tx.ndim() == 4, "conv2d: input must be [B,C,H,W], got " + tx.shape_str());
  check(tk.ndim() == 4, "conv2d: kernel must be [Cout,Cin,kh,kw], got " + tk.shape_str());
  check(tx.shape[1] == tk.shape[1], "conv2d: channel mismatch, input " + tx.shape_str() +
                                        " vs kernel " + tk.shape_str());
  check(pad >= 0, "conv2d: negative padding");
  int B = tx.shape[0], C = tx.shape[1], H = tx.shape[2], W = tx.shape[3];
  int F = tk.shape[0], kh = tk.shape[2], kw = tk.shape[3];
  int Ho = H + 2 * pad - kh + 1;
  int Wo = W + 2 * pad - kw + 1;
  check(Ho > 0 && Wo > 0, "conv2d: kernel " + tk.shape_str() + " too large for input " +
                              tx.shape_str() + " with pad " + std::to_string(pad));
  Node n;
  n.kind = OpKind::conv2d;
  n.in0 = ix;
  n.in1 = ik;
  n.attrs.pad = pad;
  n.value = Tensor({B, F, Ho, Wo});
  auto xat = [&](int b, int c, int i, int j) {
    return tx[((static_cast<std::int64_t>(b) * C + c) * H + i) * W + j];
  };
  for (int b = 0; b < B; ++b)
    for (int f = 0; f < F; ++f)
      for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j) {
          double acc = 0.0;
          for (int c = 0; c < C; ++c)
            for (int u = 0; u < kh; ++u) {
              int yi = i + u - pad;
              if (yi < 0 || yi >= H) continue;
              for (int v = 0; v < kw; ++v) {
                int xj = j + v - pad;
                if (xj < 0 || xj >= W) continue;
                acc += xat(b, c, yi, xj) *
                       tk[((static_cast<std::int64_t>(f) * C + c) * kh + u) * kw + v];
              }
            }
          n.value[((static_cast<std::int64_t>(b) * F + f) * Ho + i) * Wo + j] = acc;
        }
  return push(std::move(n));
}

Var Graph::relu(Var a) {
  int ia = check_var(a, "relu");
  const Tensor& ta = nodes_[ia].value;
  Node n;
  n.kind = OpKind::relu;
  n.in0 = ia;
  n.value = Tensor(ta.shape);
  for (std::int64_t i = 0; i < ta.numel(); ++i) n.value[i] = ta[i] > 0.0 ? ta[i] : 0.0;
  return push(std::move(n));
}

Var Graph::batch_mean(Var a) {
  int ia = check_var(a, "batch-mean");
  const Tensor& ta = nodes_[ia].value;
  double s = 0.0;
  for (double v : ta.data) s += v;
  Node n;
  n.kind = OpKind::batch_mean;
  n.in0 = ia;
  n.value = Tensor::scalar(s / static_cast<double>(ta.numel()));
  return push(std::move(n));
}

Var Graph::sum(Var a) {
  int ia = check_var(a, "sum");
  const Tensor& ta = nodes_[ia].value;
  double s = 0.0;
  for (double v : ta.data) s += v;
  Node n;
  n.kind = OpKind::sum;
  n.in0 = ia;
  n.value = Tensor::scalar(s);
  return push(std::move(n));
}

Var Graph::softmax_xent(Var logits, Var labels) {
  int il = check_var(logits, "softmax-cross-entropy");
  int iy = check_var(labels, "softmax-cross-entropy");
  Tensor tl = nodes_[il].value;
  bool was_1d = tl.ndim() == 1;
  if (was_1d) tl.shape = {1, tl.shape[0]};
  check(tl.ndim() == 2, "softmax-cross-entropy: logits must be [B,C] or [C], got " +
                            nodes_[il].value.shape_str());
  const Tensor& ty = nodes_[iy].value;
  int B = tl.shape[0], C = tl.shape[1];
  check(ty.numel() == B, "softmax-cross-entropy: expected " + std::to_string(B) +
                             " labels, got " + std::to_string(ty.numel()));
  Node n;
  n.kind = OpKind::softmax_xent;
  n.in0 = il;
  n.in1 = iy;
  n.value = Tensor({B});
  n.aux = Tensor({B, C});  // softmax probabilities, saved for backward
  for (int b = 0; b < B; ++b) {
    double y = ty[b];
    check(y == std::floor(y) && y >= 0 && y < C,
          "softmax-cross-entropy: label " + std::to_string(y) + " out of range for " +
              std::to_string(C) + " classes (example " + std::to_string(b) + ")");
    int yi = static_cast<int>(y);
    double mx = tl[static_cast<std::int64_t>(b) * C];
    for (int c = 1; c < C; ++c) mx = std::max(mx, tl[static_cast<std::int64_t>(b) * C + c]);
    double z = 0.0;
    for (int c = 0; c < C; ++c) z += std::exp(tl[static_cast<std::int64_t>(b) * C + c] - mx);
    for (int c = 0; c < C; ++c)
      n.aux[static_cast<std::int64_t>(b) * C + c] =
          std::exp(tl[static_cast<std::int64_t>(b) * C + c] - mx) / z;
    n.value[b] = std::log(z) - (tl[static_cast<std::int64_t>(b) * C + yi] - mx);
  }
  return push(std::move(n));
}

Var Graph::sign(Var a) {
  int ia = check_var(a, "sign");
  Node n;
  n.kind = OpKind::sign;
  n.in0 = ia;
  n.value = sign_of(nodes_[ia].value);
  return push(std::move(n));
}

Var Graph::clamp(Var a, double lo, double hi) {
  int ia = check_var(a, "clamp");
  check(lo <= hi, "clamp: lo > hi");
  Node n;
  n.kind = OpKind::clamp;
  n.in0 = ia;
  n.attrs.lo = lo;
  n.attrs.hi = hi;
  n.value = clamp_of(nodes_[ia].value, lo, hi);
  return push(std::move(n));
}

Var Graph::scalar_mul(Var a, double c) {
  int ia = check_var(a, "scalar-mul");
  Node n;
  n.kind = OpKind::scalar_mul;
  n.in0 = ia;
  n.attrs.c = c;
  n.value = scale_of(nodes_[ia].value, c);
  return push(std::move(n));
}

Var Graph::sum_squares(Var a) {
  int ia = check_var(a, "sum-of-squares");
  const Tensor& ta = nodes_[ia].value;
  double s = 0.0;
  for (double v : ta.data) s += v * v;
  Node n;
  n.kind = OpKind::sum_squares;
  n.in0 = ia;
  n.value = Tensor::scalar(s);
  return push(std::move(n));
}

Var Graph::reshape(Var a, std::vector<int> shape) {
  int ia = check_var(a, "reshape");
  const Tensor& ta = nodes_[ia].value;
  check(shape_numel(shape) == ta.numel(), "reshape: cannot view " + ta.shape_str() + " as " +
                                              shape_str(shape));
  Node n;
  n.kind = OpKind::reshape;
  n.in0 = ia;
  n.value = Tensor(shape, ta.data);
  return push(std::move(n));
}

Var Graph::forward_op(const std::string& kind, const std::vector<Var>& inputs,
                      const OpAttrs& attrs) {
  OpKind k = op_kind_from_name(kind);
  auto want = [&](std::size_t n) {
    check(inputs.size() == n, kind + ": expected " + std::to_string(n) + " inputs, got " +
                                  std::to_string(inputs.size()));
  };
  switch (k) {
    case OpKind::add: want(2); return add(inputs[0], inputs[1]);
    case OpKind::sub: want(2); return sub(inputs[0], inputs[1]);
    case OpKind::mul: want(2); return mul(inputs[0], inputs[1]);
    case OpKind::matmul: want(2); return matmul(inputs[0], inputs[1]);
    case OpKind::conv2d: want(2); return conv2d(inputs[0], inputs[1], attrs.pad);
    case OpKind::relu: want(1); return relu(inputs[0]);
    case OpKind::batch_mean: want(1); return batch_mean(inputs[0]);
    case OpKind::sum: want(1); return sum(inputs[0]);
    case OpKind::softmax_xent: want(2); return softmax_xent(inputs[0], inputs[1]);
    case OpKind::sign: want(1); return sign(inputs[0]);
    case OpKind::clamp: want(1); return clamp(inputs[0], attrs.lo, attrs.hi);
    case OpKind::scalar_mul: want(1); return scalar_mul(inputs[0], attrs.c);
    case OpKind::sum_squares: want(1); return sum_squares(inputs[0]);
    case OpKind::reshape: want(1); return reshape(inputs[0], attrs.shape);
    case OpKind::leaf: break;
  }
  fail("forward_op: \"" + kind + "\" is not an op");
}

const Tensor& Graph::value(Var v) const { return nodes_[check_var(v, "value")].value; }

const Tensor& Graph::grad(Var v) const {
  int i = check_var(v, "grad");
  check(backward_done_, "grad: backward() has not run on this graph");
  return nodes_[i].grad;
}

bool Graph::requires_grad(Var v) const { return nodes_[check_var(v, "requires_grad")].requires_grad; }

void Graph::reset_grads() {
  for (Node& n : nodes_) n.grad = Tensor();
  backward_done_ = false;
}

void Graph::backward(Var loss) {
  int il = check_var(loss, "backward");
  check(!backward_done_, "backward: already run on this graph; call reset_grads() first");
  check(nodes_[il].value.numel() == 1,
        "backward: loss must be scalar, got shape " + nodes_[il].value.shape_str());
  for (Node& n : nodes_) n.grad = Tensor(n.value.shape);
  nodes_[il].grad[0] = 1.0;
  for (int i = il; i >= 0; --i) backward_node(i);
  backward_done_ = true;
}

void Graph::backward_node(int id) {
  Node& n = nodes_[id];
  const Tensor& g = n.grad;
  switch (n.kind) {
    case OpKind::leaf:
    case OpKind::sign:  // zero derivative by convention
      return;
    case OpKind::add:
    case OpKind::sub: {
      Tensor& ga = nodes_[n.in0].grad;
      Tensor& gb = nodes_[n.in1].grad;
      const Tensor& ta = nodes_[n.in0].value;
      Bcast k = broadcast_kind(ta.shape, nodes_[n.in1].value.shape, "add");
      double sgn = n.kind == OpKind::sub ? -1.0 : 1.0;
      for (std::int64_t i = 0; i < g.numel(); ++i) {
        ga[i] += g[i];
        gb[broadcast_index(k, ta.shape, i)] += sgn * g[i];
      }
      return;
    }
    case OpKind::mul: {
      Tensor& ga = nodes_[n.in0].grad;
      Tensor& gb = nodes_[n.in1].grad;
      const Tensor& ta = nodes_[n.in0].value;
      const Tensor& tb = nodes_[n.in1].value;
      Bcast k = broadcast_kind(ta.shape, tb.shape, "mul");
      for (std::int64_t i = 0; i < g.numel(); ++i) {
        std::int64_t j = broadcast_index(k, ta.shape, i);
        ga[i] += g[i] * tb[j];
        gb[j] += g[i] * ta[i];
      }
      return;
    }
    case OpKind::matmul: {
      const Tensor& ta = nodes_[n.in0].value;
      const Tensor& tb = nodes_[n.in1].value;
      Tensor& ga = nodes_[n.in0].grad;
      Tensor& gb = nodes_[n.in1].grad;
      int m = ta.shape[0], kk = ta.shape[1], nn = tb.shape[1];
      // dA = G B^T ; dB = A^T G
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < nn; ++j) {
          double gv = g[static_cast<std::int64_t>(i) * nn + j];
          if (gv == 0.0) continue;
          for (int k2 = 0; k2 < kk; ++k2) {
            ga[static_cast<std::int64_t>(i) * kk + k2] +=
                gv * tb[static_cast<std::int64_t>(k2) * nn + j];
            gb[static_cast<std::int64_t>(k2) * nn + j] +=
                gv * ta[static_cast<std::int64_t>(i) * kk + k2];
          }
        }
      return;
    }
    case OpKind::conv2d: {
      const Tensor& tx = nodes_[n.in0].value;
      const Tensor& tk = nodes_[n.in1].value;
      Tensor& gx = nodes_[n.in0].grad;
      Tensor& gk = nodes_[n.in1].grad;
      int pad = n.attrs.pad;
      int B = tx.shape[0], C = tx.shape[1], H = tx.shape[2], W = tx.shape[3];
      int F = tk.shape[0], kh = tk.shape[2], kw = tk.shape[3];
      int Ho = n.value.shape[2], Wo = n.value.shape[3];
      for (int b = 0; b < B; ++b)
        for (int f = 0; f < F; ++f)
          for (int i = 0; i < Ho; ++i)
            for (int j = 0; j < Wo; ++j) {
              double gv = g[((static_cast<std::int64_t>(b) * F + f) * Ho + i) * Wo + j];
              if (gv == 0.0) continue;
              for (int c = 0; c < C; ++c)
                for (int u = 0; u < kh; ++u) {
                  int yi = i + u - pad;
                  if (yi < 0 || yi >= H) continue;
                  for (int v = 0; v < kw; ++v) {
                    int xj = j + v - pad;
                    if (xj < 0 || xj >= W) continue;
                    std::int64_t xi = ((static_cast<std::int64_t>(b) * C + c) * H + yi) * W + xj;
                    std::int64_t ki = ((static_cast<std::int64_t>(f) * C + c) * kh + u) * kw + v;
                    gx[xi] += gv * tk[ki];
                    gk[ki] += gv * tx[xi];
                  }
                }
            }
      return;
    }
    case OpKind::relu: {
      Tensor& ga = nodes_[n.in0].grad;
      const Tensor& ta = nodes_[n.in0].value;
      for (std::int64_t i = 0; i < g.numel(); ++i)
        if (ta[i] > 0.0) ga[i] += g[i];
      return;
    }
    case OpKind::batch_mean: {
      Tensor& ga = nodes_[n.in0].grad;
      double gv = g[0] / static_cast<double>(ga.numel());
      for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += gv;
      return;
    }
    case OpKind::sum: {
      Tensor& ga = nodes_[n.in0].grad;
      for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += g[0];
      return;
    }
    case OpKind::softmax_xent: {
      Tensor& gl = nodes_[n.in0].grad;
      const Tensor& ty = nodes_[n.in1].value;
      int B = n.aux.shape[0], C = n.aux.shape[1];
      for (int b = 0; b < B; ++b) {
        double gv = g[b];
        if (gv == 0.0) continue;
        int yi = static_cast<int>(ty[b]);
        for (int c = 0; c < C; ++c) {
          double p = n.aux[static_cast<std::int64_t>(b) * C + c];
          gl[static_cast<std::int64_t>(b) * C + c] += gv * (p - (c == yi ? 1.0 : 0.0));
        }
      }
      return;
    }
    case OpKind::clamp: {
      Tensor& ga = nodes_[n.in0].grad;
      const Tensor& ta = nodes_[n.in0].value;
      for (std::int64_t i = 0; i < g.numel(); ++i)
        if (ta[i] >= n.attrs.lo && ta[i] <= n.attrs.hi) ga[i] += g[i];
      return;
    }
    case OpKind::scalar_mul: {
      Tensor& ga = nodes_[n.in0].grad;
      for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += n.attrs.c * g[i];
      return;
    }
    case OpKind::sum_squares: {
      Tensor& ga = nodes_[n.in0].grad;
      const Tensor& ta = nodes_[n.in0].value;
      for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += 2.0 * ta[i] * g[0];
      return;
    }
    case OpKind::reshape: {
      Tensor& ga = nodes_[n.in0].grad;
      for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
      return;
    }
  }
}

// ---------------------------------------------------------------------------

FiniteDiffReport finite_diff_check(const std::function<Var(Graph&, Var)>& f, const Tensor& point,
                                   double h) {
  check(h > 0, "finite_diff_check: h must be positive");
  FiniteDiffReport rep;

  Graph g;
  Var x = g.leaf(point, true);
  Var loss = f(g, x);
  check(g.value(loss).numel() == 1, "finite_diff_check: f must be scalar-valued");
  g.backward(loss);
  Tensor analytic = g.grad(x);

  auto eval_at = [&](const Tensor& p) {
    Graph ge;
    Var xe = ge.leaf(p);
    return ge.value(f(ge, xe)).item();
  };

  Tensor probe = point;
  double f0 = eval_at(point);
  for (std::int64_t i = 0; i < point.numel(); ++i) {
    double x0 = point[i];
    probe[i] = x0 + h;
    double fp = eval_at(probe);
    probe[i] = x0 - h;
    double fm = eval_at(probe);
    probe[i] = x0;
    if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(f0)) {
      rep.unstable = true;
      rep.worst_coord = static_cast<int>(i);
      rep.note = "non-finite evaluation at coordinate " + std::to_string(i);
      return rep;
    }
    double central = (fp - fm) / (2.0 * h);
    double fwd = (fp - f0) / h;
    double bwd = (f0 - fm) / h;
    // A kink shows up as the one-sided estimates disagreeing far beyond the
    // O(h) curvature term.
    if (std::fabs(fwd - bwd) > 1e-2 * std::max(1.0, std::fabs(central))) {
      rep.unstable = true;
      rep.worst_coord = static_cast<int>(i);
      rep.note = "one-sided estimates disagree at coordinate " + std::to_string(i) +
                 " (non-differentiable point?)";
    }
    double err = std::fabs(analytic[i] - central) / std::max(1.0, std::fabs(analytic[i]));
    if (err > rep.max_rel_error) {
      rep.max_rel_error = err;
      if (!rep.unstable) rep.worst_coord = static_cast<int>(i);
    }
  }
  return rep;
}

}  // namespace advlab
