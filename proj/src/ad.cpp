#include "dercfr/ad.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <sstream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace dercfr::ad {

namespace {

#ifdef __GLIBC__
// Tapes allocate and free many multi-megabyte matrices per step. Keeping them
// on the heap instead of fresh mmap pages avoids a page-fault storm.
const bool kAllocatorTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 1024 * 1024 * 1024);
  return true;
}();
#endif

std::string shape_str(const Tensor& t) {
  std::ostringstream os;
  os << t.rows() << "x" << t.cols();
  return os.str();
}

Tape& common_tape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (!a.defined() || !b.defined()) throw ContractError(std::string(op) + ": undefined operand");
  if (&a.tape() != &b.tape()) throw ContractError(std::string(op) + ": operands live on different tapes");
  return a.tape();
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ContractError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

void require_defined(const Tensor& a, std::string_view op) {
  if (!a.defined()) throw ContractError(std::string(op) + ": undefined operand");
}

}  // namespace

Parameter::Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)) {
  grad = Matrix::Zero(value.rows(), value.cols());
}

// ---- Tensor ---------------------------------------------------------------

Index Tensor::rows() const { return value().rows(); }
Index Tensor::cols() const { return value().cols(); }
const Matrix& Tensor::value() const { return tape_->value(id_); }
bool Tensor::requires_grad() const { return tape_->needs_grad(id_); }

Tape& Tensor::tape() const {
  if (tape_ == nullptr) throw ContractError("use of an undefined tensor");
  return *tape_;
}

double Tensor::item() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ContractError("item() on a non-scalar tensor");
  return v(0, 0);
}

// ---- Tape -----------------------------------------------------------------

Tensor Tape::constant(Matrix value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  if (!all_finite(n.value)) throw NumericError("non-finite value in constant");
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int>(nodes_.size() - 1));
}

Tensor Tape::parameter(Parameter& p) {
  Node n;
  n.op = "parameter:" + p.name;
  n.value = p.value;
  n.param = &p;
  n.requires_grad = true;
  if (!all_finite(n.value)) throw NumericError("non-finite value in parameter " + p.name);
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int>(nodes_.size() - 1));
}

Tensor Tape::detach(const Tensor& t) { return constant(t.value()); }

Tensor Tape::record(std::string_view op, Matrix value, std::vector<int> parents, BackwardRule rule) {
  if (!all_finite(value)) throw NumericError("non-finite result in " + std::string(op));
  Node n;
  n.op = std::string(op);
  n.value = std::move(value);
  n.requires_grad = std::any_of(parents.begin(), parents.end(), [this](int p) { return needs_grad(p); });
  if (n.requires_grad) n.rule = std::move(rule);
  n.parents = std::move(parents);
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::backward(const Tensor& loss) {
  if (&loss.tape() != this) throw ContractError("backward: loss lives on another tape");
  if (loss.value().size() != 1) {
    throw ContractError("backward: loss must be a scalar, got " + shape_str(loss));
  }
  for (Node& n : nodes_) {
    n.has_grad = false;
    if (n.param != nullptr) n.param->grad.setZero(n.param->value.rows(), n.param->value.cols());
  }
  const int root = loss.node_id();
  if (!nodes_[static_cast<std::size_t>(root)].requires_grad) return;
  accumulate(root, Matrix::Ones(1, 1));
  for (int i = root; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.has_grad) continue;
    if (n.rule) n.rule(*this, i);
    if (n.param != nullptr) n.param->grad += n.grad;
  }
}

Matrix Tape::grad(const Tensor& t) const {
  const Node& n = nodes_[static_cast<std::size_t>(t.node_id())];
  if (!n.has_grad) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

// ---- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape& tape = common_tape(a, b, "matmul");
  if (a.cols() != b.rows()) {
    throw ContractError("matmul: inner dimension mismatch " + shape_str(a) + " * " + shape_str(b));
  }
  Matrix out = a.value() * b.value();
  const int ia = a.node_id(), ib = b.node_id();
  return tape.record("matmul", std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    if (t.needs_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.needs_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Tensor transpose(const Tensor& a) {
  require_defined(a, "transpose");
  const int ia = a.node_id();
  return a.tape().record("transpose", a.value().transpose(), {ia},
                         [ia](Tape& t, int self) { t.accumulate(ia, t.upstream(self).transpose()); });
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tape& tape = common_tape(a, b, "add");
  require_same_shape(a, b, "add");
  const int ia = a.node_id(), ib = b.node_id();
  return tape.record("add", a.value() + b.value(), {ia, ib}, [ia, ib](Tape& t, int self) {
    t.accumulate(ia, t.upstream(self));
    t.accumulate(ib, t.upstream(self));
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tape& tape = common_tape(a, b, "sub");
  require_same_shape(a, b, "sub");
  const int ia = a.node_id(), ib = b.node_id();
  return tape.record("sub", a.value() - b.value(), {ia, ib}, [ia, ib](Tape& t, int self) {
    t.accumulate(ia, t.upstream(self));
    t.accumulate(ib, -t.upstream(self));
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tape& tape = common_tape(a, b, "mul");
  require_same_shape(a, b, "mul");
  const int ia = a.node_id(), ib = b.node_id();
  Matrix out = a.value().cwiseProduct(b.value());
  return tape.record("mul", std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    if (t.needs_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    if (t.needs_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  Tape& tape = common_tape(x, bias, "add_bias");
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw ContractError("add_bias: bias " + shape_str(bias) + " does not fit " + shape_str(x));
  }
  const int ix = x.node_id(), ib = bias.node_id();
  Matrix out = x.value().rowwise() + bias.value().row(0);
  return tape.record("add_bias", std::move(out), {ix, ib}, [ix, ib](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    t.accumulate(ix, g);
    if (t.needs_grad(ib)) t.accumulate(ib, g.colwise().sum());
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  Tape& tape = common_tape(x, w, "linear");
  common_tape(x, bias, "linear");
  if (x.cols() != w.rows()) throw ContractError("linear: inner dimension mismatch " + shape_str(x) + " * " + shape_str(w));
  if (bias.rows() != 1 || bias.cols() != w.cols()) {
    throw ContractError("linear: bias " + shape_str(bias) + " does not fit " + shape_str(w));
  }
  Matrix out(x.rows(), w.cols());
  out.noalias() = x.value() * w.value();
  out.rowwise() += bias.value().row(0);
  const int ix = x.node_id(), iw = w.node_id(), ib = bias.node_id();
  return tape.record("linear", std::move(out), {ix, iw, ib}, [ix, iw, ib](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    if (t.needs_grad(ix)) t.accumulate(ix, g * t.value(iw).transpose());
    if (t.needs_grad(iw)) t.accumulate(iw, t.value(ix).transpose() * g);
    if (t.needs_grad(ib)) t.accumulate(ib, g.colwise().sum());
  });
}

Tensor scale(const Tensor& x, double factor) {
  require_defined(x, "scale");
  const int ix = x.node_id();
  return x.tape().record("scale", x.value() * factor, {ix},
                         [ix, factor](Tape& t, int self) { t.accumulate(ix, t.upstream(self) * factor); });
}

Tensor add_scalar(const Tensor& x, double c) {
  require_defined(x, "add_scalar");
  const int ix = x.node_id();
  Matrix out = x.value().array() + c;
  return x.tape().record("add_scalar", std::move(out), {ix},
                         [ix](Tape& t, int self) { t.accumulate(ix, t.upstream(self)); });
}

Tensor div_scalar(const Tensor& x, const Tensor& s) {
  Tape& tape = common_tape(x, s, "div_scalar");
  if (s.value().size() != 1) throw ContractError("div_scalar: divisor must be 1x1, got " + shape_str(s));
  const double d = s.item();
  if (d == 0.0) throw NumericError("non-finite result in div_scalar (division by zero)");
  const int ix = x.node_id(), is = s.node_id();
  return tape.record("div_scalar", x.value() / d, {ix, is}, [ix, is, d](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    if (t.needs_grad(ix)) t.accumulate(ix, g / d);
    if (t.needs_grad(is)) {
      const double gs = -(g.cwiseProduct(t.value(ix))).sum() / (d * d);
      t.accumulate(is, Matrix::Constant(1, 1, gs));
    }
  });
}

Tensor square(const Tensor& x) {
  require_defined(x, "square");
  const int ix = x.node_id();
  return x.tape().record("square", x.value().array().square().matrix(), {ix}, [ix](Tape& t, int self) {
    t.accumulate(ix, (2.0 * t.upstream(self).array() * t.value(ix).array()).matrix());
  });
}

Tensor abs(const Tensor& x) {
  require_defined(x, "abs");
  const int ix = x.node_id();
  return x.tape().record("abs", x.value().cwiseAbs(), {ix}, [ix](Tape& t, int self) {
    Matrix sign = t.value(ix).unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
    t.accumulate(ix, t.upstream(self).cwiseProduct(sign));
  });
}

Tensor exp(const Tensor& x) {
  require_defined(x, "exp");
  const int ix = x.node_id();
  return x.tape().record("exp", x.value().array().exp().matrix(), {ix}, [ix](Tape& t, int self) {
    t.accumulate(ix, t.upstream(self).cwiseProduct(t.value(self)));
  });
}

bool all_finite(const Matrix& m) {
  constexpr std::uint64_t kExponent = 0x7FF0000000000000ULL;
  const double* p = m.data();
  std::uint64_t bad = 0;
  for (Index i = 0; i < m.size(); ++i) {
    std::uint64_t u;
    std::memcpy(&u, p + i, sizeof u);
    bad |= static_cast<std::uint64_t>((u & kExponent) == kExponent);
  }
  return bad == 0;
}

double elu_value(double x) { return x > 0.0 ? x : std::expm1(x); }

Tensor elu(const Tensor& x) {
  require_defined(x, "elu");
  const int ix = x.node_id();
  const auto v = x.value().array();
  // vectorized form of x > 0 ? x : exp(x) - 1
  Matrix out = v.max(0.0) + (v.min(0.0).exp() - 1.0);
  return x.tape().record("elu", std::move(out), {ix}, [ix](Tape& t, int self) {
    // 1 for x > 0, y + 1 otherwise
    const auto d = t.value(self).array() - t.value(ix).array().max(0.0) + 1.0;
    t.accumulate(ix, (t.upstream(self).array() * d).matrix());
  });
}

Tensor sigmoid(const Tensor& x) {
  require_defined(x, "sigmoid");
  const int ix = x.node_id();
  Matrix out = x.value().unaryExpr([](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  return x.tape().record("sigmoid", std::move(out), {ix}, [ix](Tape& t, int self) {
    const Matrix& y = t.value(self);
    t.accumulate(ix, (t.upstream(self).array() * y.array() * (1.0 - y.array())).matrix());
  });
}

double softplus_value(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double softplus_inverse(double y) {
  if (!(y > 0.0)) throw ContractError("softplus_inverse: argument must be positive");
  // log(exp(y) - 1), stable for both small and large y
  return y > 30.0 ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y));
}

Tensor softplus(const Tensor& x) {
  require_defined(x, "softplus");
  const int ix = x.node_id();
  Matrix out = x.value().unaryExpr([](double v) { return softplus_value(v); });
  return x.tape().record("softplus", std::move(out), {ix}, [ix](Tape& t, int self) {
    Matrix d = t.value(ix).unaryExpr([](double v) {
      if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
      const double e = std::exp(v);
      return e / (1.0 + e);
    });
    t.accumulate(ix, t.upstream(self).cwiseProduct(d));
  });
}

Tensor clamp_min(const Tensor& x, double lo) {
  require_defined(x, "clamp_min");
  const int ix = x.node_id();
  Matrix out = x.value().cwiseMax(lo);
  return x.tape().record("clamp_min", std::move(out), {ix}, [ix, lo](Tape& t, int self) {
    Matrix mask = t.value(ix).unaryExpr([lo](double v) { return v > lo ? 1.0 : 0.0; });
    t.accumulate(ix, t.upstream(self).cwiseProduct(mask));
  });
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  const int ix = x.node_id();
  const Index r = x.rows(), c = x.cols();
  return x.tape().record("sum", Matrix::Constant(1, 1, x.value().sum()), {ix}, [ix, r, c](Tape& t, int self) {
    t.accumulate(ix, Matrix::Constant(r, c, t.upstream(self)(0, 0)));
  });
}

Tensor mean(const Tensor& x) {
  require_defined(x, "mean");
  if (x.value().size() == 0) throw ContractError("mean: empty tensor");
  const int ix = x.node_id();
  const Index r = x.rows(), c = x.cols();
  const double inv = 1.0 / static_cast<double>(r * c);
  return x.tape().record("mean", Matrix::Constant(1, 1, x.value().mean()), {ix},
                         [ix, r, c, inv](Tape& t, int self) {
                           t.accumulate(ix, Matrix::Constant(r, c, t.upstream(self)(0, 0) * inv));
                         });
}

Tensor row_mean(const Tensor& x) {
  require_defined(x, "row_mean");
  if (x.cols() == 0) throw ContractError("row_mean: zero columns");
  const int ix = x.node_id();
  const Index c = x.cols();
  Matrix out = x.value().rowwise().mean();
  return x.tape().record("row_mean", std::move(out), {ix}, [ix, c](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    Matrix d = g.replicate(1, c) / static_cast<double>(c);
    t.accumulate(ix, std::move(d));
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  Tape& tape = common_tape(a, b, "concat_cols");
  if (a.rows() != b.rows()) throw ContractError("concat_cols: row mismatch " + shape_str(a) + " vs " + shape_str(b));
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const int ia = a.node_id(), ib = b.node_id();
  const Index ca = a.cols(), cb = b.cols();
  return tape.record("concat_cols", std::move(out), {ia, ib}, [ia, ib, ca, cb](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    if (t.needs_grad(ia)) t.accumulate(ia, g.leftCols(ca));
    if (t.needs_grad(ib)) t.accumulate(ib, g.rightCols(cb));
  });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  Tape& tape = common_tape(a, b, "concat_rows");
  if (a.cols() != b.cols()) throw ContractError("concat_rows: column mismatch " + shape_str(a) + " vs " + shape_str(b));
  Matrix out(a.rows() + b.rows(), a.cols());
  out << a.value(), b.value();
  const int ia = a.node_id(), ib = b.node_id();
  const Index ra = a.rows(), rb = b.rows();
  return tape.record("concat_rows", std::move(out), {ia, ib}, [ia, ib, ra, rb](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    if (t.needs_grad(ia)) t.accumulate(ia, g.topRows(ra));
    if (t.needs_grad(ib)) t.accumulate(ib, g.bottomRows(rb));
  });
}

Tensor gather_rows(const Tensor& x, std::span<const Index> rows) {
  require_defined(x, "gather_rows");
  const Index n = x.rows();
  Matrix out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= n) throw ContractError("gather_rows: row index out of range");
    out.row(static_cast<Index>(k)) = x.value().row(rows[k]);
  }
  const int ix = x.node_id();
  std::vector<Index> idx(rows.begin(), rows.end());
  const Index c = x.cols();
  return x.tape().record("gather_rows", std::move(out), {ix}, [ix, idx = std::move(idx), n, c](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    Matrix d = Matrix::Zero(n, c);
    for (std::size_t k = 0; k < idx.size(); ++k) d.row(idx[k]) += g.row(static_cast<Index>(k));
    t.accumulate(ix, std::move(d));
  });
}

Tensor l2_normalize_rows(const Tensor& x) {
  require_defined(x, "l2_normalize_rows");
  Eigen::VectorXd norms = x.value().rowwise().norm().cwiseMax(1e-12);
  Matrix out = x.value().array().colwise() / norms.array();
  const int ix = x.node_id();
  return x.tape().record("l2_normalize_rows", std::move(out), {ix},
                         [ix, norms = std::move(norms)](Tape& t, int self) {
                           const Matrix& g = t.upstream(self);
                           const Matrix& y = t.value(self);
                           Eigen::VectorXd proj = g.cwiseProduct(y).rowwise().sum();
                           Matrix d = g - (y.array().colwise() * proj.array()).matrix();
                           d = (d.array().colwise() / norms.array()).matrix();
                           t.accumulate(ix, std::move(d));
                         });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                  Eigen::RowVectorXd* batch_mean, Eigen::RowVectorXd* batch_var) {
  Tape& tape = common_tape(x, gamma, "batch_norm");
  common_tape(x, beta, "batch_norm");
  const Index n = x.rows(), c = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != c || beta.rows() != 1 || beta.cols() != c) {
    throw ContractError("batch_norm: scale/shift must be 1x" + std::to_string(c));
  }
  if (n == 0) throw ContractError("batch_norm: empty batch");
  Eigen::RowVectorXd mu = x.value().colwise().mean();
  Matrix centered = x.value().rowwise() - mu;
  Eigen::RowVectorXd var = centered.array().square().colwise().mean();
  Eigen::RowVectorXd inv_std = (var.array() + eps).rsqrt();
  Matrix xhat = centered.array().rowwise() * inv_std.array();
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  if (batch_mean != nullptr) *batch_mean = mu;
  if (batch_var != nullptr) *batch_var = var;
  const int ix = x.node_id(), ig = gamma.node_id(), ib = beta.node_id();
  return tape.record(
      "batch_norm", std::move(out), {ix, ig, ib},
      [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std), n](Tape& t, int self) {
        const Matrix& g = t.upstream(self);
        const Eigen::RowVectorXd g_sum = g.colwise().sum();
        const Eigen::RowVectorXd gx_sum = g.cwiseProduct(xhat).colwise().sum();
        if (t.needs_grad(ib)) t.accumulate(ib, g_sum);
        if (t.needs_grad(ig)) t.accumulate(ig, gx_sum);
        if (t.needs_grad(ix)) {
          // dx = inv_std * gamma * (g - mean(g) - xhat * mean(g * xhat))
          const Eigen::RowVectorXd a = t.value(ig).row(0).cwiseProduct(inv_std);
          const Eigen::RowVectorXd m1 = a.cwiseProduct(g_sum) / static_cast<double>(n);
          const Eigen::RowVectorXd m2 = a.cwiseProduct(gx_sum) / static_cast<double>(n);
          Matrix dx = (g.array().rowwise() * a.array()).rowwise() - m1.array();
          dx.array() -= xhat.array().rowwise() * m2.array();
          t.accumulate(ix, std::move(dx));
        }
      });
}

Tensor batch_norm_frozen(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         const Eigen::RowVectorXd& running_mean, const Eigen::RowVectorXd& running_var,
                         double eps) {
  Tape& tape = common_tape(x, gamma, "batch_norm_frozen");
  common_tape(x, beta, "batch_norm_frozen");
  const Index c = x.cols();
  if (gamma.cols() != c || beta.cols() != c || running_mean.size() != c || running_var.size() != c) {
    throw ContractError("batch_norm_frozen: statistics do not match input width");
  }
  Eigen::RowVectorXd inv_std = (running_var.array() + eps).rsqrt();
  Matrix xhat = (x.value().rowwise() - running_mean).array().rowwise() * inv_std.array();
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  const int ix = x.node_id(), ig = gamma.node_id(), ib = beta.node_id();
  return tape.record("batch_norm_frozen", std::move(out), {ix, ig, ib},
                     [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, int self) {
                       const Matrix& g = t.upstream(self);
                       if (t.needs_grad(ib)) t.accumulate(ib, g.colwise().sum());
                       if (t.needs_grad(ig)) t.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
                       if (t.needs_grad(ix)) {
                         Matrix d = g.array().rowwise() * (t.value(ig).row(0).array() * inv_std.array());
                         t.accumulate(ix, std::move(d));
                       }
                     });
}

Tensor pairwise_sq_dists(const Tensor& a, const Tensor& b) {
  Tape& tape = common_tape(a, b, "pairwise_sq_dists");
  if (a.cols() != b.cols()) throw ContractError("pairwise_sq_dists: feature mismatch");
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix out(av.rows(), bv.rows());
  for (Index i = 0; i < av.rows(); ++i) {
    for (Index j = 0; j < bv.rows(); ++j) out(i, j) = (av.row(i) - bv.row(j)).squaredNorm();
  }
  const int ia = a.node_id(), ib = b.node_id();
  return tape.record("pairwise_sq_dists", std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    const Matrix& av = t.value(ia);
    const Matrix& bv = t.value(ib);
    // d/da_i = 2 sum_j g_ij (a_i - b_j); d/db_j = -2 sum_i g_ij (a_i - b_j)
    if (t.needs_grad(ia)) {
      Eigen::VectorXd rs = g.rowwise().sum();
      Matrix d = 2.0 * ((av.array().colwise() * rs.array()).matrix() - g * bv);
      t.accumulate(ia, std::move(d));
    }
    if (t.needs_grad(ib)) {
      Eigen::VectorXd cs = g.colwise().sum().transpose();
      Matrix d = 2.0 * ((bv.array().colwise() * cs.array()).matrix() - g.transpose() * av);
      t.accumulate(ib, std::move(d));
    }
  });
}

Tensor binary_log_loss(const Tensor& prob, const Matrix& target) {
  require_defined(prob, "binary_log_loss");
  if (prob.rows() != target.rows() || prob.cols() != target.cols()) {
    throw ContractError("binary_log_loss: target shape does not match predictions");
  }
  const Matrix p = prob.value().cwiseMax(kLogFloor).cwiseMin(1.0 - kLogFloor);
  Matrix out = -(target.array() * p.array().log() + (1.0 - target.array()) * (1.0 - p.array()).log()).matrix();
  const int ip = prob.node_id();
  return prob.tape().record("binary_log_loss", std::move(out), {ip}, [ip, p, target](Tape& t, int self) {
    Matrix d = (-target.array() / p.array() + (1.0 - target.array()) / (1.0 - p.array())).matrix();
    t.accumulate(ip, t.upstream(self).cwiseProduct(d));
  });
}

// ---- Adam -----------------------------------------------------------------

void adam_step(AdamState& state, std::span<Parameter* const> params) {
  if (state.m.empty() && state.v.empty()) {
    for (const Parameter* p : params) {
      state.m.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      state.v.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adam_step: optimizer state tracks a different parameter set");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Parameter& p = *params[k];
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols() || state.m[k].rows() != p.value.rows() ||
        state.m[k].cols() != p.value.cols()) {
      throw ContractError("adam_step: shape mismatch for parameter " + p.name);
    }
    if (!all_finite(p.grad)) throw NumericError("adam_step: non-finite gradient for parameter " + p.name);
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    Matrix& m = state.m[k];
    Matrix& v = state.v[k];
    m = state.beta1 * m + (1.0 - state.beta1) * p.grad;
    v = state.beta2 * v + (1.0 - state.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= state.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + state.epsilon);
  }
}

}  // namespace dercfr::ad
