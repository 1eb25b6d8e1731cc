#pragma once
// Reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation applied to Tensors in execution order, so
// the parents of a node always precede it and a single reverse sweep visits
// each node once. Parameters live outside the tape; Tape::parameter() makes
// a leaf that reads Parameter::value and Tape::backward() writes
// Parameter::grad.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dercfr/errors.hpp"

namespace dercfr::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string name, Matrix value);
};

class Tape;

// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
class Tensor {
 public:
  Tensor() = default;

  bool defined() const { return tape_ != nullptr; }
  Index rows() const;
  Index cols() const;
  const Matrix& value() const;
  double item() const;
  bool requires_grad() const;
  int node_id() const { return id_; }
  Tape& tape() const;

 private:
  friend class Tape;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  // Called with the id of the node whose gradient is being propagated.
  using BackwardRule = std::function<void(Tape&, int)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor constant(Matrix value);
  Tensor parameter(Parameter& p);
  // Same value, no gradient path.
  Tensor detach(const Tensor& t);

  // Appends an operation node. Throws NumericError naming `op` when the value
  // has a NaN/Inf. The rule is dropped if no parent requires a gradient.
  Tensor record(std::string_view op, Matrix value, std::vector<int> parents, BackwardRule rule);

  // Zeroes the gradient of every parameter registered on this tape, then
  // propagates d(loss)/d(node) backward. May be called several times on the
  // same tape with different losses.
  void backward(const Tensor& loss);

  // Gradient of the last backward() w.r.t. `t`; zeros if `t` was unreachable.
  Matrix grad(const Tensor& t) const;

  std::size_t size() const { return nodes_.size(); }

  // Accessors for backward rules.
  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Matrix& upstream(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  void accumulate(int id, Matrix&& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.has_grad) {
      n.grad += g;
    } else {
      n.grad = std::move(g);
      n.has_grad = true;
    }
  }

  template <typename Expr>
  void accumulate(int id, const Expr& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    // a rule never reads the gradient it writes, so aliasing is impossible
    if (n.has_grad) {
      n.grad.noalias() += g;
    } else {
      n.grad.noalias() = g;
      n.has_grad = true;
    }
  }

 private:
  friend class Tensor;

  struct Node {
    std::string op;
    Matrix value;
    Matrix grad;
    std::vector<int> parents;
    BackwardRule rule;
    Parameter* param = nullptr;
    bool requires_grad = false;
    bool has_grad = false;
  };

  std::vector<Node> nodes_;
};

// ---- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// x (n×c) + b (1×c) broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
// x * w + bias as a single node.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double c);
// x / s with s a 1×1 tensor.
Tensor div_scalar(const Tensor& x, const Tensor& s);
Tensor square(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor elu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor clamp_min(const Tensor& x, double lo);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// n×c -> n×1
Tensor row_mean(const Tensor& x);

Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor gather_rows(const Tensor& x, std::span<const Index> rows);

Tensor l2_normalize_rows(const Tensor& x);

// Training-mode batch normalization over the rows of x. gamma/beta are 1×c.
// Batch statistics (biased variance) are written to the optional outputs.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                  Eigen::RowVectorXd* batch_mean = nullptr, Eigen::RowVectorXd* batch_var = nullptr);
// Evaluation-mode batch normalization with frozen statistics.
Tensor batch_norm_frozen(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         const Eigen::RowVectorXd& running_mean, const Eigen::RowVectorXd& running_var,
                         double eps);

// D(i,j) = |a_i - b_j|^2
Tensor pairwise_sq_dists(const Tensor& a, const Tensor& b);

// Elementwise -[y log p + (1-y) log(1-p)], p clamped to [1e-12, 1-1e-12].
Tensor binary_log_loss(const Tensor& prob, const Matrix& target);

inline constexpr double kLogFloor = 1e-12;

double elu_value(double x);

// True when no entry is NaN or infinite (exponent-bit test, no FP compares).
bool all_finite(const Matrix& m);
double softplus_value(double x);
double softplus_inverse(double y);

// ---- optimizer ------------------------------------------------------------

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

// One bias-corrected Adam update of `params` using their current grad.
// Throws NumericError (and leaves everything untouched) on a non-finite
// gradient, ContractError when shapes disagree with the state.
void adam_step(AdamState& state, std::span<Parameter* const> params);

}  // namespace dercfr::ad
