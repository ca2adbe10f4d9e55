#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pbact {

class Rng;

/// Dimension list. Rank 0 denotes a scalar (numel 1); ranks 1 and 2 cover
/// everything the policy model needs. No implicit broadcasting exists beyond
/// the explicit *_rowvec ops.
using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until needed; values.size() afterwards
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;  // fills parents' grads from own
  bool backward_done = false;

  void ensure_grad();
};

bool grad_mode_enabled();

}  // namespace detail

/// Handle to one node of the computation graph. Copies share the node.
/// Values are immutable once created except through mutable_values(), which
/// exists for optimizer updates on leaf parameters between graph builds.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& s, bool requires_grad = false);
  static Tensor full(const Shape& s, double v, bool requires_grad = false);
  /// Rejects non-finite values: NaN/Inf never enter the graph from outside.
  static Tensor from(const Shape& s, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor randn(const Shape& s, Rng& rng, double stddev,
                      bool requires_grad = false);
  static Tensor rand_uniform(const Shape& s, Rng& rng, double lo, double hi,
                             bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int64_t numel() const;
  int rows() const;  // rank-2 only
  int cols() const;  // rank-2 only
  bool requires_grad() const;
  const char* op() const;

  std::span<const double> values() const;
  /// In-place access for optimizers; only meaningful on leaf parameters.
  std::span<double> mutable_values();
  double value_at(int64_t i) const;
  /// Scalar extraction; throws unless numel() == 1.
  double item() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  detail::TensorNode* node() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::TensorNode> node_;

  friend Tensor make_op_result(const char* op, Shape shape,
                               std::vector<double> values,
                               std::vector<Tensor> parents,
                               std::function<void(detail::TensorNode&)> backprop);
};

/// Builds one graph node from computed values plus a gradient rule; the
/// extension point every op above goes through. When grad mode is off or no
/// parent requires grad, the parents and rule are dropped.
Tensor make_op_result(const char* op, Shape shape, std::vector<double> values,
                      std::vector<Tensor> parents,
                      std::function<void(detail::TensorNode&)> backprop);

/// Disables graph recording for its scope (thread-local). Forward passes in
/// rollouts and scoring run under this to skip tape construction.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// ---------------------------------------------------------------------------
// Registered differentiable ops. Each op name appears in registered_op_names()
// and carries a gradient rule exercised by the finite-difference suite.
// ---------------------------------------------------------------------------

/// [m,k] x [k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Fused affine map: x[m,k] x w[k,n] + b[n] broadcast over rows.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor transpose(const Tensor& x);
/// Row-wise softmax with per-row max subtraction; rank 1 or 2.
Tensor softmax_rows(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
/// x[m,n] + v[n] broadcast over rows (the only sanctioned broadcasts).
Tensor add_rowvec(const Tensor& x, const Tensor& v);
Tensor mul_rowvec(const Tensor& x, const Tensor& v);
Tensor scale(const Tensor& x, double c);
Tensor add_const(const Tensor& x, double c);
/// ln(max(x, 1e-8)); genuinely negative inputs (< -1e-6) raise NumericError.
Tensor log(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor abs(const Tensor& x);
/// Full reduction to a rank-0 scalar.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Row-wise standardization (zero mean, unit variance per row, eps 1e-5);
/// affine gain/bias are applied by callers via mul_rowvec/add_rowvec.
Tensor layer_norm(const Tensor& x);
Tensor col_slice(const Tensor& x, int start, int len);
Tensor col_concat(std::span<const Tensor> parts);
Tensor reshape(const Tensor& x, const Shape& s);

/// Names of every differentiable op above; the gradient test suite asserts
/// full coverage against this list.
std::span<const char* const> registered_op_names();

// ---------------------------------------------------------------------------
// Graph traversal and reverse pass.
// ---------------------------------------------------------------------------

/// Topological view of the graph reachable from a root: parents precede
/// children in `order`; `leaves` are the requires_grad parameters.
struct Graph {
  std::vector<detail::TensorNode*> order;
  std::vector<detail::TensorNode*> leaves;

  static Graph from_root(const Tensor& root);
};

/// Reverse-mode sweep from a scalar root. Populates grad on every
/// requires_grad leaf; gradients of shared subexpressions accumulate.
/// A second call on the same root without rebuilding the graph throws.
void backward(const Tensor& root);

/// Xavier/Glorot uniform init for a [fan_in, fan_out] weight matrix.
Tensor xavier_uniform(int fan_in, int fan_out, Rng& rng);

}  // namespace pbact
