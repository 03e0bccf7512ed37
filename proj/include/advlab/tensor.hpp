#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace advlab {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

[[noreturn]] void fail(const std::string& msg);

inline void check(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

/// Dense n-dimensional array of doubles, row-major. A default-constructed
/// Tensor is "absent" (defined() == false) and is used where an optional
/// perturbation or gradient may be missing.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0);
  Tensor(std::vector<int> s, std::vector<double> d);

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

  std::int64_t numel() const;
  int ndim() const { return static_cast<int>(shape.size()); }
  bool defined() const { return !shape.empty(); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  double item() const;  // requires numel() == 1

  double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  std::string shape_str() const;
};

std::string shape_str(const std::vector<int>& shape);
std::int64_t shape_numel(const std::vector<int>& shape);

// Raw tensor math (no graph involvement); used by the attack iterations and
// the optimizers.
Tensor sign_of(const Tensor& t);  // sign(0) = 0
Tensor clamp_of(const Tensor& t, double lo, double hi);
double linf_norm(const Tensor& t);
bool all_finite(const Tensor& t);
Tensor add_of(const Tensor& a, const Tensor& b);
Tensor sub_of(const Tensor& a, const Tensor& b);
Tensor scale_of(const Tensor& t, double c);

// ---------------------------------------------------------------------------
// Reverse-mode graph
// ---------------------------------------------------------------------------

enum class OpKind {
  leaf,
  add,
  sub,
  mul,
  matmul,
  conv2d,
  relu,
  batch_mean,
  sum,
  softmax_xent,
  sign,
  clamp,
  scalar_mul,
  sum_squares,
  reshape,
};

/// Parses the documented op-kind names ("add", "matmul", "2d-conv" is
/// spelled "conv2d", ...). Unknown names are rejected.
OpKind op_kind_from_name(const std::string& name);
std::string op_kind_name(OpKind k);

struct OpAttrs {
  double lo = 0.0;
  double hi = 0.0;
  double c = 0.0;
  int pad = 0;
  std::vector<int> shape;
};

class Graph;

/// Handle to a node inside one Graph. Handles are only valid against the
/// graph that created them; using one against another graph (or after the
/// graph was cleared) is rejected.
struct Var {
  int id = -1;
  std::uint64_t graph = 0;
  bool valid() const { return id >= 0; }
};

/// Tape of operations. Node order is creation order, which is topological by
/// construction; one backward() sweep visits each node exactly once, in
/// reverse. Graphs are single-threaded; run independent graphs on
/// independent threads.
class Graph {
 public:
  Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  Var leaf(Tensor value, bool requires_grad = false);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise; b may broadcast (scalar, row, channel)
  Var matmul(Var a, Var b);
  Var conv2d(Var x, Var kernel, int pad);  // stride 1, zero padding
  Var relu(Var a);
  Var batch_mean(Var a);  // mean over all elements -> scalar
  Var sum(Var a);
  Var softmax_xent(Var logits, Var labels);  // per-example losses [B]
  Var sign(Var a);                           // zero derivative everywhere
  Var clamp(Var a, double lo, double hi);    // gradient passes inside [lo,hi]
  Var scalar_mul(Var a, double c);
  Var sum_squares(Var a);
  Var reshape(Var a, std::vector<int> shape);

  /// Generic entry point used by the op-level conformance tests; dispatches
  /// on kind and validates input arity.
  Var forward_op(const std::string& kind, const std::vector<Var>& inputs,
                 const OpAttrs& attrs = {});

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape once. Rejected when loss
  /// is not scalar or when called twice without reset_grads().
  void backward(Var loss);
  void reset_grads();
  bool backward_done() const { return backward_done_; }

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;  // valid after backward()
  bool requires_grad(Var v) const;

  std::uint64_t id() const { return id_; }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    OpKind kind = OpKind::leaf;
    int in0 = -1;
    int in1 = -1;
    Tensor value;
    Tensor grad;
    Tensor aux;  // softmax probabilities; other per-op payloads
    OpAttrs attrs;
    bool requires_grad = false;
  };

  int check_var(Var v, const char* what) const;
  Var push(Node n);
  void backward_node(int id);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
  std::uint64_t id_ = 0;
};

// ---------------------------------------------------------------------------
// Finite-difference verification oracle
// ---------------------------------------------------------------------------

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  int worst_coord = -1;
  bool unstable = false;  // non-finite evaluation or one-sided disagreement
  std::string note;
};

/// Compares the analytic gradient of a scalar-valued graph function against
/// central finite differences, coordinate by coordinate. Relative error is
/// |analytic - central| / max(1, |analytic|). Non-finite evaluations and
/// kinks (forward/backward one-sided estimates disagreeing) set `unstable`
/// and name the coordinate.
FiniteDiffReport finite_diff_check(const std::function<Var(Graph&, Var)>& f,
                                   const Tensor& point, double h);

}  // namespace advlab
