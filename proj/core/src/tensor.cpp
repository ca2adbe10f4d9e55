#include "pbact/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "pbact/errors.hpp"
#include "pbact/rng.hpp"

namespace pbact {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

namespace detail {

void TensorNode::ensure_grad() {
  if (grad.empty()) grad.assign(values.size(), 0.0);
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_mode_enabled() { return g_grad_enabled; }

}  // namespace detail

using detail::TensorNode;

NoGradGuard::NoGradGuard() : prev_(detail::g_grad_enabled) {
  detail::g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { detail::g_grad_enabled = prev_; }

namespace {

std::shared_ptr<TensorNode> new_node(Shape shape, std::vector<double> values,
                                     bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  return n;
}

void check_shape(const Shape& s) {
  for (int d : s) {
    if (d <= 0) throw DimensionError("non-positive dimension in " + shape_str(s));
  }
}

void check_finite(std::span<const double> vals) {
  for (double v : vals) {
    if (!std::isfinite(v)) throw NumericError("non-finite value at graph boundary");
  }
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.shape().size() != 2)
    throw DimensionError(std::string(op) + ": expected rank-2, got " +
                         shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Rows/cols for rank-1 (one row) or rank-2 tensors.
void rows_cols(const Tensor& t, const char* op, int& m, int& n) {
  const auto& s = t.shape();
  if (s.size() == 1) {
    m = 1;
    n = s[0];
  } else if (s.size() == 2) {
    m = s[0];
    n = s[1];
  } else {
    throw DimensionError(std::string(op) + ": expected rank 1 or 2, got " +
                         shape_str(t.shape()));
  }
}

}  // namespace

// --------------------------------------------------------------------------
// Tensor basics
// --------------------------------------------------------------------------

Tensor make_op_result(const char* op, Shape shape, std::vector<double> values,
                      std::vector<Tensor> parents,
                      std::function<void(TensorNode&)> backprop) {
  bool rg = false;
  if (detail::grad_mode_enabled()) {
    for (const auto& p : parents) rg = rg || p.requires_grad();
  }
  auto n = new_node(std::move(shape), std::move(values), rg);
  n->op = op;
  if (rg) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node_);
    n->backprop = std::move(backprop);
  }
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(const Shape& s, bool requires_grad) {
  check_shape(s);
  return Tensor(new_node(s, std::vector<double>(shape_numel(s), 0.0), requires_grad));
}

Tensor Tensor::full(const Shape& s, double v, bool requires_grad) {
  check_shape(s);
  check_finite({&v, 1});
  return Tensor(new_node(s, std::vector<double>(shape_numel(s), v), requires_grad));
}

Tensor Tensor::from(const Shape& s, std::vector<double> values, bool requires_grad) {
  check_shape(s);
  if (static_cast<int64_t>(values.size()) != shape_numel(s))
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(s));
  check_finite(values);
  return Tensor(new_node(s, std::move(values), requires_grad));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  check_finite({&v, 1});
  return Tensor(new_node(Shape{}, {v}, requires_grad));
}

Tensor Tensor::randn(const Shape& s, Rng& rng, double stddev, bool requires_grad) {
  check_shape(s);
  std::vector<double> vals(shape_numel(s));
  for (auto& v : vals) v = rng.normal(0.0, stddev);
  return Tensor(new_node(s, std::move(vals), requires_grad));
}

Tensor Tensor::rand_uniform(const Shape& s, Rng& rng, double lo, double hi,
                            bool requires_grad) {
  check_shape(s);
  std::vector<double> vals(shape_numel(s));
  for (auto& v : vals) v = rng.uniform(lo, hi);
  return Tensor(new_node(s, std::move(vals), requires_grad));
}

Tensor xavier_uniform(int fan_in, int fan_out, Rng& rng) {
  double bound = std::sqrt(6.0 / (fan_in + fan_out));
  return Tensor::rand_uniform({fan_in, fan_out}, rng, -bound, bound, true);
}

const Shape& Tensor::shape() const { return node_->shape; }
int64_t Tensor::numel() const { return static_cast<int64_t>(node_->values.size()); }

int Tensor::rows() const {
  require_rank2(*this, "rows");
  return node_->shape[0];
}
int Tensor::cols() const {
  require_rank2(*this, "cols");
  return node_->shape[1];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
const char* Tensor::op() const { return node_->op; }

std::span<const double> Tensor::values() const { return node_->values; }
std::span<double> Tensor::mutable_values() { return node_->values; }
double Tensor::value_at(int64_t i) const { return node_->values[static_cast<size_t>(i)]; }

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item(): tensor is not scalar");
  return node_->values[0];
}

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (node_->grad.empty()) throw UsageError("grad(): no gradient populated");
  return node_->grad;
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  node_->backward_done = false;
}

// --------------------------------------------------------------------------
// Ops
// --------------------------------------------------------------------------

namespace {

constexpr const char* kOpNames[] = {
    "matmul",     "linear",    "transpose",    "softmax_rows", "add",
    "sub",        "hadamard",  "add_rowvec",   "mul_rowvec",   "scale",
    "add_const",  "log",       "relu",         "gelu",         "abs",
    "sum",        "mean",      "layer_norm",   "col_slice",    "col_concat",
    "reshape",
};

constexpr double kLogFloor = 1e-8;
constexpr double kLayerNormEps = 1e-5;

// dC[m,n] x B[k,n]^T accumulated into dA[m,k]; and A^T x dC into dB.
// Inner loops run over contiguous j so they vectorize.
void matmul_backward(const std::vector<double>& g, const std::vector<double>& a,
                     const std::vector<double>& b, int m, int k, int n,
                     std::vector<double>* da, std::vector<double>* db) {
  if (da) {
    for (int i = 0; i < m; ++i) {
      const double* grow = &g[static_cast<size_t>(i) * n];
      for (int kk = 0; kk < k; ++kk) {
        const double* brow = &b[static_cast<size_t>(kk) * n];
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
        (*da)[static_cast<size_t>(i) * k + kk] += acc;
      }
    }
  }
  if (db) {
    for (int i = 0; i < m; ++i) {
      const double* grow = &g[static_cast<size_t>(i) * n];
      for (int kk = 0; kk < k; ++kk) {
        const double aik = a[static_cast<size_t>(i) * k + kk];
        double* drow = &(*db)[static_cast<size_t>(kk) * n];
        for (int j = 0; j < n; ++j) drow[j] += aik * grow[j];
      }
    }
  }
}

}  // namespace

std::span<const char* const> registered_op_names() { return kOpNames; }

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const int m = a.shape()[0], k = a.shape()[1];
  const int k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    throw DimensionError("matmul: inner dimensions disagree " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  const auto av = a.values(), bv = b.values();
  for (int i = 0; i < m; ++i) {
    double* crow = &out[static_cast<size_t>(i) * n];
    for (int kk = 0; kk < k; ++kk) {
      const double aik = av[static_cast<size_t>(i) * k + kk];
      const double* brow = &bv[static_cast<size_t>(kk) * n];
      for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
  return make_op_result(
      "matmul", {m, n}, std::move(out), {a, b}, [m, k, n](TensorNode& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        std::vector<double>*da = nullptr, *db = nullptr;
        if (pa.requires_grad) {
          pa.ensure_grad();
          da = &pa.grad;
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          db = &pb.grad;
        }
        matmul_backward(self.grad, pa.values, pb.values, m, k, n, da, db);
      });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank2(x, "linear");
  require_rank2(w, "linear");
  const int m = x.shape()[0], k = x.shape()[1];
  const int k2 = w.shape()[0], n = w.shape()[1];
  if (k != k2 || b.shape().size() != 1 || b.shape()[0] != n)
    throw DimensionError("linear: incompatible shapes " + shape_str(x.shape()) +
                         " x " + shape_str(w.shape()) + " + " + shape_str(b.shape()));
  const auto xv = x.values(), wv = w.values(), bv = b.values();
  std::vector<double> out(static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i) {
    double* crow = &out[static_cast<size_t>(i) * n];
    for (int j = 0; j < n; ++j) crow[j] = bv[j];
    for (int kk = 0; kk < k; ++kk) {
      const double xik = xv[static_cast<size_t>(i) * k + kk];
      const double* wrow = &wv[static_cast<size_t>(kk) * n];
      for (int j = 0; j < n; ++j) crow[j] += xik * wrow[j];
    }
  }
  return make_op_result(
      "linear", {m, n}, std::move(out), {x, w, b}, [m, k, n](TensorNode& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        std::vector<double>*dx = nullptr, *dw = nullptr;
        if (px.requires_grad) {
          px.ensure_grad();
          dx = &px.grad;
        }
        if (pw.requires_grad) {
          pw.ensure_grad();
          dw = &pw.grad;
        }
        matmul_backward(self.grad, px.values, pw.values, m, k, n, dx, dw);
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (int i = 0; i < m; ++i) {
            const double* grow = &self.grad[static_cast<size_t>(i) * n];
            for (int j = 0; j < n; ++j) pb.grad[j] += grow[j];
          }
        }
      });
}

Tensor transpose(const Tensor& x) {
  require_rank2(x, "transpose");
  const int m = x.shape()[0], n = x.shape()[1];
  std::vector<double> out(static_cast<size_t>(m) * n);
  const auto xv = x.values();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(j) * m + i] = xv[static_cast<size_t>(i) * n + j];
  return make_op_result("transpose", {n, m}, std::move(out), {x},
                        [m, n](TensorNode& self) {
                          auto& p = *self.parents[0];
                          if (!p.requires_grad) return;
                          p.ensure_grad();
                          for (int i = 0; i < m; ++i)
                            for (int j = 0; j < n; ++j)
                              p.grad[static_cast<size_t>(i) * n + j] +=
                                  self.grad[static_cast<size_t>(j) * m + i];
                        });
}

Tensor softmax_rows(const Tensor& x) {
  int m, n;
  rows_cols(x, "softmax_rows", m, n);
  std::vector<double> out(static_cast<size_t>(m) * n);
  const auto xv = x.values();
  for (int i = 0; i < m; ++i) {
    const size_t row = static_cast<size_t>(i) * n;
    double mx = xv[row];
    for (int j = 1; j < n; ++j) mx = std::max(mx, xv[row + j]);
    double denom = 0.0;
    for (int j = 0; j < n; ++j) {
      out[row + j] = std::exp(xv[row + j] - mx);
      denom += out[row + j];
    }
    for (int j = 0; j < n; ++j) out[row + j] /= denom;
  }
  return make_op_result("softmax_rows", x.shape(), std::move(out), {x},
                        [m, n](TensorNode& self) {
                          auto& p = *self.parents[0];
                          if (!p.requires_grad) return;
                          p.ensure_grad();
                          for (int i = 0; i < m; ++i) {
                            const size_t row = static_cast<size_t>(i) * n;
                            double dot = 0.0;
                            for (int j = 0; j < n; ++j)
                              dot += self.grad[row + j] * self.values[row + j];
                            for (int j = 0; j < n; ++j)
                              p.grad[row + j] += self.values[row + j] *
                                                 (self.grad[row + j] - dot);
                          }
                        });
}

namespace {

// Shared scaffolding for same-shape binary ops.
template <typename Fwd, typename Bwd>
Tensor binary_same_shape(const char* name, const Tensor& a, const Tensor& b,
                         Fwd fwd, Bwd bwd) {
  require_same_shape(a, b, name);
  const size_t n = static_cast<size_t>(a.numel());
  std::vector<double> out(n);
  const auto av = a.values(), bv = b.values();
  for (size_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i]);
  return make_op_result(name, a.shape(), std::move(out), {a, b},
                        [n, bwd](TensorNode& self) {
                          auto& pa = *self.parents[0];
                          auto& pb = *self.parents[1];
                          if (pa.requires_grad) pa.ensure_grad();
                          if (pb.requires_grad) pb.ensure_grad();
                          for (size_t i = 0; i < n; ++i) {
                            double da, db;
                            bwd(pa.values[i], pb.values[i], &da, &db);
                            if (pa.requires_grad) pa.grad[i] += self.grad[i] * da;
                            if (pb.requires_grad) pb.grad[i] += self.grad[i] * db;
                          }
                        });
}

template <typename Fwd, typename Bwd>
Tensor unary_elementwise(const char* name, const Tensor& x, Fwd fwd, Bwd bwd) {
  const size_t n = static_cast<size_t>(x.numel());
  std::vector<double> out(n);
  const auto xv = x.values();
  for (size_t i = 0; i < n; ++i) out[i] = fwd(xv[i]);
  return make_op_result(name, x.shape(), std::move(out), {x},
                        [n, bwd](TensorNode& self) {
                          auto& p = *self.parents[0];
                          if (!p.requires_grad) return;
                          p.ensure_grad();
                          for (size_t i = 0; i < n; ++i)
                            p.grad[i] += self.grad[i] * bwd(p.values[i], self.values[i]);
                        });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double* da, double* db) { *da = 1.0, *db = 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double* da, double* db) { *da = 1.0, *db = -1.0; });
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      "hadamard", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double* da, double* db) { *da = y, *db = x; });
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  require_rank2(x, "add_rowvec");
  if (v.shape().size() != 1 || v.shape()[0] != x.shape()[1])
    throw DimensionError("add_rowvec: vector " + shape_str(v.shape()) +
                         " does not match columns of " + shape_str(x.shape()));
  const int m = x.shape()[0], n = x.shape()[1];
  std::vector<double> out(static_cast<size_t>(m) * n);
  const auto xv = x.values(), vv = v.values();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(i) * n + j] = xv[static_cast<size_t>(i) * n + j] + vv[j];
  return make_op_result("add_rowvec", x.shape(), std::move(out), {x, v},
                        [m, n](TensorNode& self) {
                          auto& px = *self.parents[0];
                          auto& pv = *self.parents[1];
                          if (px.requires_grad) {
                            px.ensure_grad();
                            for (size_t i = 0; i < self.grad.size(); ++i)
                              px.grad[i] += self.grad[i];
                          }
                          if (pv.requires_grad) {
                            pv.ensure_grad();
                            for (int i = 0; i < m; ++i)
                              for (int j = 0; j < n; ++j)
                                pv.grad[j] += self.grad[static_cast<size_t>(i) * n + j];
                          }
                        });
}

Tensor mul_rowvec(const Tensor& x, const Tensor& v) {
  require_rank2(x, "mul_rowvec");
  if (v.shape().size() != 1 || v.shape()[0] != x.shape()[1])
    throw DimensionError("mul_rowvec: vector " + shape_str(v.shape()) +
                         " does not match columns of " + shape_str(x.shape()));
  const int m = x.shape()[0], n = x.shape()[1];
  std::vector<double> out(static_cast<size_t>(m) * n);
  const auto xv = x.values(), vv = v.values();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(i) * n + j] = xv[static_cast<size_t>(i) * n + j] * vv[j];
  return make_op_result(
      "mul_rowvec", x.shape(), std::move(out), {x, v}, [m, n](TensorNode& self) {
        auto& px = *self.parents[0];
        auto& pv = *self.parents[1];
        if (px.requires_grad) px.ensure_grad();
        if (pv.requires_grad) pv.ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) {
            const size_t idx = static_cast<size_t>(i) * n + j;
            if (px.requires_grad) px.grad[idx] += self.grad[idx] * pv.values[j];
            if (pv.requires_grad) pv.grad[j] += self.grad[idx] * px.values[idx];
          }
      });
}

Tensor scale(const Tensor& x, double c) {
  check_finite({&c, 1});
  return unary_elementwise(
      "scale", x, [c](double v) { return c * v; },
      [c](double, double) { return c; });
}

Tensor add_const(const Tensor& x, double c) {
  check_finite({&c, 1});
  return unary_elementwise(
      "add_const", x, [c](double v) { return v + c; },
      [](double, double) { return 1.0; });
}

Tensor log(const Tensor& x) {
  for (double v : x.values()) {
    if (v < -1e-6)
      throw NumericError("log: negative argument beyond the epsilon floor");
  }
  return unary_elementwise(
      "log", x, [](double v) { return std::log(std::max(v, kLogFloor)); },
      [](double v, double) { return v > kLogFloor ? 1.0 / v : 0.0; });
}

Tensor relu(const Tensor& x) {
  return unary_elementwise(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  // Exact erf form; derivative is Phi(x) + x*phi(x).
  return unary_elementwise(
      "gelu", x,
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
        return cdf + v * pdf;
      });
}

Tensor abs(const Tensor& x) {
  return unary_elementwise(
      "abs", x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return make_op_result("sum", Shape{}, {acc}, {x}, [](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const double g = self.grad[0];
    for (auto& pg : p.grad) pg += g;
  });
}

Tensor mean(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.numel());
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return make_op_result("mean", Shape{}, {acc * inv}, {x}, [inv](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const double g = self.grad[0] * inv;
    for (auto& pg : p.grad) pg += g;
  });
}

Tensor layer_norm(const Tensor& x) {
  require_rank2(x, "layer_norm");
  const int m = x.shape()[0], n = x.shape()[1];
  std::vector<double> out(static_cast<size_t>(m) * n);
  std::vector<double> inv_std(m);
  const auto xv = x.values();
  for (int i = 0; i < m; ++i) {
    const size_t row = static_cast<size_t>(i) * n;
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += xv[row + j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      const double d = xv[row + j] - mu;
      var += d * d;
    }
    var /= n;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_std[i] = inv;
    for (int j = 0; j < n; ++j) out[row + j] = (xv[row + j] - mu) * inv;
  }
  return make_op_result(
      "layer_norm", x.shape(), std::move(out), {x},
      [m, n, inv_std = std::move(inv_std)](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (int i = 0; i < m; ++i) {
          const size_t row = static_cast<size_t>(i) * n;
          double g_mean = 0.0, gy_mean = 0.0;
          for (int j = 0; j < n; ++j) {
            g_mean += self.grad[row + j];
            gy_mean += self.grad[row + j] * self.values[row + j];
          }
          g_mean /= n;
          gy_mean /= n;
          for (int j = 0; j < n; ++j)
            p.grad[row + j] += inv_std[i] * (self.grad[row + j] - g_mean -
                                             self.values[row + j] * gy_mean);
        }
      });
}

Tensor col_slice(const Tensor& x, int start, int len) {
  require_rank2(x, "col_slice");
  const int m = x.shape()[0], n = x.shape()[1];
  if (start < 0 || len <= 0 || start + len > n)
    throw DimensionError("col_slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of " +
                         std::to_string(n) + " columns");
  std::vector<double> out(static_cast<size_t>(m) * len);
  const auto xv = x.values();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < len; ++j)
      out[static_cast<size_t>(i) * len + j] = xv[static_cast<size_t>(i) * n + start + j];
  return make_op_result("col_slice", {m, len}, std::move(out), {x},
                        [m, n, start, len](TensorNode& self) {
                          auto& p = *self.parents[0];
                          if (!p.requires_grad) return;
                          p.ensure_grad();
                          for (int i = 0; i < m; ++i)
                            for (int j = 0; j < len; ++j)
                              p.grad[static_cast<size_t>(i) * n + start + j] +=
                                  self.grad[static_cast<size_t>(i) * len + j];
                        });
}

Tensor col_concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw UsageError("col_concat: no inputs");
  const int m = parts[0].shape().size() == 2 ? parts[0].shape()[0] : -1;
  int total = 0;
  for (const auto& p : parts) {
    require_rank2(p, "col_concat");
    if (p.shape()[0] != m)
      throw DimensionError("col_concat: row count mismatch");
    total += p.shape()[1];
  }
  std::vector<double> out(static_cast<size_t>(m) * total);
  std::vector<int> widths;
  int off = 0;
  for (const auto& p : parts) {
    const int w = p.shape()[1];
    const auto pv = p.values();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j)
        out[static_cast<size_t>(i) * total + off + j] = pv[static_cast<size_t>(i) * w + j];
    widths.push_back(w);
    off += w;
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make_op_result(
      "col_concat", {m, total}, std::move(out), std::move(parents),
      [m, total, widths = std::move(widths)](TensorNode& self) {
        int off2 = 0;
        for (size_t pi = 0; pi < self.parents.size(); ++pi) {
          auto& p = *self.parents[pi];
          const int w = widths[pi];
          if (p.requires_grad) {
            p.ensure_grad();
            for (int i = 0; i < m; ++i)
              for (int j = 0; j < w; ++j)
                p.grad[static_cast<size_t>(i) * w + j] +=
                    self.grad[static_cast<size_t>(i) * total + off2 + j];
          }
          off2 += w;
        }
      });
}

Tensor reshape(const Tensor& x, const Shape& s) {
  check_shape(s);
  if (shape_numel(s) != x.numel())
    throw DimensionError("reshape: numel mismatch " + shape_str(x.shape()) +
                         " -> " + shape_str(s));
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_op_result("reshape", s, std::move(out), {x}, [](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

// --------------------------------------------------------------------------
// Graph + backward
// --------------------------------------------------------------------------

Graph Graph::from_root(const Tensor& root) {
  Graph g;
  if (!root.defined()) return g;
  std::unordered_set<TensorNode*> visited;
  // Iterative post-order DFS: parents land before children in g.order.
  struct Frame {
    TensorNode* node;
    size_t next_parent;
  };
  std::vector<Frame> stack{{root.node(), 0}};
  visited.insert(root.node());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorNode* p = f.node->parents[f.next_parent++].get();
      if (visited.insert(p).second) stack.push_back({p, 0});
    } else {
      g.order.push_back(f.node);
      stack.pop_back();
    }
  }
  for (auto* n : g.order) {
    if (n->requires_grad && !n->backprop) g.leaves.push_back(n);
  }
  return g;
}

void backward(const Tensor& root) {
  if (!root.defined()) throw UsageError("backward: undefined tensor");
  if (root.numel() != 1)
    throw UsageError("backward: root must be scalar, got " + shape_str(root.shape()));
  TensorNode* rn = root.node();
  if (rn->backward_done)
    throw UsageError("backward: already ran on this root; rebuild the graph or zero_grad");
  rn->backward_done = true;
  if (!rn->requires_grad) return;  // constant root: nothing to do, not an error

  Graph g = Graph::from_root(root);
  rn->ensure_grad();
  rn->grad[0] += 1.0;
  for (auto it = g.order.rbegin(); it != g.order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backprop && n->requires_grad && !n->grad.empty()) n->backprop(*n);
  }
}

}  // namespace pbact
