#include "dercfr/losses.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>

#include "dercfr/errors.hpp"

namespace dercfr {

using ad::Index;
using ad::Matrix;
using ad::Tape;
using ad::Tensor;

KernelSpec KernelSpec::rbf(double bw) {
  if (!(bw > 0.0) || !std::isfinite(bw)) throw ConfigError("rbf bandwidth must be positive");
  return {Kind::rbf, bw};
}

KernelSpec KernelSpec::parse(const std::string& s) {
  if (s == "linear") return linear();
  if (s == "rbf") return rbf_median();
  if (s.rfind("rbf:", 0) == 0) {
    const std::string v = s.substr(4);
    double bw = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), bw);
    if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("bad rbf bandwidth '" + v + "'");
    return rbf(bw);
  }
  throw ConfigError("unknown kernel '" + s + "' (expected linear, rbf or rbf:<bandwidth>)");
}

std::string KernelSpec::str() const {
  if (kind == Kind::linear) return "linear";
  if (!bandwidth) return "rbf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), *bandwidth);
  return "rbf:" + std::string(buf, res.ptr);
}

double median_heuristic_bandwidth(const Matrix& a, const Matrix& b) {
  Matrix pooled(a.rows() + b.rows(), a.cols());
  pooled << a, b;
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(pooled.rows() * (pooled.rows() - 1) / 2));
  for (Index i = 0; i < pooled.rows(); ++i) {
    for (Index j = i + 1; j < pooled.rows(); ++j) d.push_back((pooled.row(i) - pooled.row(j)).norm());
  }
  if (d.empty()) return 1.0;
  const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  double med = *mid;
  if (d.size() % 2 == 0) med = 0.5 * (med + *std::max_element(d.begin(), mid));
  return med > 0.0 ? med : 1.0;
}

namespace {

Tensor normalized_weights(Tape& tape, const Tensor& w, Index n, const char* group) {
  if (!w.defined()) return tape.constant(Matrix::Constant(n, 1, 1.0 / static_cast<double>(n)));
  if (w.rows() != n || w.cols() != 1) {
    throw ContractError(std::string("mmd: weights of group ") + group + " must be " + std::to_string(n) + "x1");
  }
  if ((w.value().array() < 0.0).any()) throw DegenerateInputError(std::string("mmd: negative weight in group ") + group);
  if (!(w.value().sum() > 0.0)) throw DegenerateInputError(std::string("mmd: all-zero weights in group ") + group);
  return ad::div_scalar(w, ad::sum(w));
}

// p^T K q as a 1x1 tensor
Tensor bilinear(const Tensor& p, const Tensor& k, const Tensor& q) { return ad::matmul(ad::transpose(p), ad::matmul(k, q)); }

}  // namespace

Tensor mmd(const Tensor& a, const Tensor& b, const Tensor& w_a, const Tensor& w_b, const KernelSpec& kernel) {
  if (!a.defined() || !b.defined()) throw ContractError("mmd: undefined sample tensor");
  if (a.rows() == 0) throw DegenerateInputError("mmd: first group is empty");
  if (b.rows() == 0) throw DegenerateInputError("mmd: second group is empty");
  if (a.cols() != b.cols()) throw ContractError("mmd: groups have different feature dimensions");
  Tape& tape = a.tape();
  Tensor p = normalized_weights(tape, w_a, a.rows(), "a");
  Tensor q = normalized_weights(tape, w_b, b.rows(), "b");

  if (kernel.kind == KernelSpec::Kind::linear) {
    Tensor diff = ad::sub(ad::matmul(ad::transpose(p), a), ad::matmul(ad::transpose(q), b));
    return ad::sum(ad::square(diff));
  }

  const double bw = kernel.bandwidth ? *kernel.bandwidth : median_heuristic_bandwidth(a.value(), b.value());
  const double s = -1.0 / (2.0 * bw * bw);
  Tensor kaa = ad::exp(ad::scale(ad::pairwise_sq_dists(a, a), s));
  Tensor kbb = ad::exp(ad::scale(ad::pairwise_sq_dists(b, b), s));
  Tensor kab = ad::exp(ad::scale(ad::pairwise_sq_dists(a, b), s));
  Tensor v = ad::sub(ad::add(bilinear(p, kaa, p), bilinear(q, kbb, q)), ad::scale(bilinear(p, kab, q), 2.0));
  return ad::clamp_min(v, 0.0);
}

Eigen::VectorXd binarize_by_median(const Eigen::VectorXd& y, std::span<const int> t) {
  if (static_cast<std::size_t>(y.size()) != t.size()) throw ContractError("binarize_by_median: length mismatch");
  Eigen::VectorXd out(y.size());
  for (int arm = 0; arm < 2; ++arm) {
    std::vector<double> vals;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t[i] == arm) vals.push_back(y(static_cast<Index>(i)));
    }
    if (vals.empty()) throw DegenerateInputError("binarize_by_median: arm " + std::to_string(arm) + " is empty");
    std::sort(vals.begin(), vals.end());
    const std::size_t n = vals.size();
    const double med = n % 2 == 1 ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t[i] == arm) out(static_cast<Index>(i)) = y(static_cast<Index>(i)) < med ? 0.0 : 1.0;
    }
  }
  return out;
}

LossBatch LossBatch::make(std::span<const int> t, const Eigen::VectorXd& y, OutcomeType type) {
  if (static_cast<std::size_t>(y.size()) != t.size()) throw ContractError("LossBatch: t and y lengths differ");
  LossBatch b;
  b.outcome_type = type;
  b.t.assign(t.begin(), t.end());
  b.y = y;
  b.arms = ArmIndex::from_treatment(t);
  if (b.arms.control.empty() || b.arms.treated.empty()) {
    throw DegenerateInputError("batch must contain both treatment arms");
  }
  b.y_class = type == OutcomeType::binary ? y : binarize_by_median(y, t);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const int c = b.y_class(static_cast<Index>(i)) > 0.5 ? 1 : 0;
    b.cells[static_cast<std::size_t>(t[i])][static_cast<std::size_t>(c)].push_back(static_cast<Index>(i));
  }
  return b;
}

Tensor prediction_loss(const Tensor& pred, const Eigen::VectorXd& y, OutcomeType type) {
  if (pred.rows() != y.size() || pred.cols() != 1) throw ContractError("prediction_loss: prediction/target mismatch");
  Matrix target = y;
  if (type == OutcomeType::binary) return ad::binary_log_loss(pred, target);
  return ad::square(ad::sub(pred, pred.tape().constant(std::move(target))));
}

Tensor loss_adjustment(const Tensor& rep_a, const Tensor& y_adjust, const LossBatch& batch, const KernelSpec& kernel) {
  Tensor disc = mmd(ad::gather_rows(rep_a, batch.arms.control), ad::gather_rows(rep_a, batch.arms.treated), kernel);
  return ad::add(disc, ad::mean(prediction_loss(y_adjust, batch.y, batch.outcome_type)));
}

Tensor loss_balance(const Tensor& rep_c, const LossBatch& batch, const Tensor& omega, const KernelSpec& kernel) {
  const auto& c = batch.arms.control;
  const auto& t = batch.arms.treated;
  return mmd(ad::gather_rows(rep_c, c), ad::gather_rows(rep_c, t), ad::gather_rows(omega, c),
             ad::gather_rows(omega, t), kernel);
}

Tensor loss_instrument(const Tensor& rep_i, const Tensor& t_prob, const LossBatch& batch, const Tensor& omega,
                       const KernelSpec& kernel) {
  Eigen::VectorXd t(static_cast<Index>(batch.t.size()));
  for (std::size_t i = 0; i < batch.t.size(); ++i) t(static_cast<Index>(i)) = batch.t[i];
  Tensor total = ad::mean(prediction_loss(t_prob, t, OutcomeType::binary));
  for (std::size_t arm = 0; arm < 2; ++arm) {
    const auto& neg = batch.cells[arm][0];
    const auto& pos = batch.cells[arm][1];
    if (neg.empty() || pos.empty()) {
      spdlog::warn("instrument loss: arm {} has an empty outcome class; its discrepancy term is skipped", arm);
      continue;
    }
    Tensor d = mmd(ad::gather_rows(rep_i, neg), ad::gather_rows(rep_i, pos), ad::gather_rows(omega, neg),
                   ad::gather_rows(omega, pos), kernel);
    total = ad::add(total, d);
  }
  return total;
}

Tensor loss_orthogonal(const ContributionTensors& w) {
  if (w.w_i.rows() != w.w_c.rows() || w.w_c.rows() != w.w_a.rows()) {
    throw ContractError("loss_orthogonal: contribution vectors differ in length");
  }
  Tensor ic = ad::sum(ad::mul(w.w_i, w.w_c));
  Tensor ca = ad::sum(ad::mul(w.w_c, w.w_a));
  Tensor ai = ad::sum(ad::mul(w.w_a, w.w_i));
  return ad::add(ad::add(ic, ca), ai);
}

double loss_orthogonal(const ContributionProfile& w) {
  if (w.w_i.size() != w.w_c.size() || w.w_c.size() != w.w_a.size()) {
    throw ContractError("loss_orthogonal: contribution vectors differ in length");
  }
  return w.w_i.dot(w.w_c) + w.w_c.dot(w.w_a) + w.w_a.dot(w.w_i);
}

Tensor loss_regression(const Tensor& y_factual, const LossBatch& batch, const Tensor& omega) {
  if (omega.rows() != y_factual.rows()) throw ContractError("loss_regression: omega does not match batch size");
  return ad::sum(ad::mul(omega, prediction_loss(y_factual, batch.y, batch.outcome_type)));
}

Tensor weight_decay(Tape& tape, DeRCFRModel& model) {
  Tensor total = tape.constant(Matrix::Zero(1, 1));
  for (ad::Parameter* w : model.weight_matrices()) total = ad::add(total, ad::sum(ad::square(tape.parameter(*w))));
  return total;
}

Tensor sample_weight_penalty(const Tensor& omega, const ArmIndex& arms) {
  Tensor s0 = ad::add_scalar(ad::sum(ad::gather_rows(omega, arms.control)), -1.0);
  Tensor s1 = ad::add_scalar(ad::sum(ad::gather_rows(omega, arms.treated)), -1.0);
  return ad::add(ad::square(s0), ad::square(s1));
}

Tensor contribution_sum_penalty(const ContributionTensors& w) {
  Tensor ri = ad::square(ad::add_scalar(ad::sum(w.w_i), -1.0));
  Tensor rc = ad::square(ad::add_scalar(ad::sum(w.w_c), -1.0));
  Tensor ra = ad::square(ad::add_scalar(ad::sum(w.w_a), -1.0));
  return ad::add(ad::add(ri, rc), ra);
}

RegularizerTerms regularizers(Tape& tape, DeRCFRModel& model, const Tensor& omega, const ArmIndex& arms,
                              const ContributionTensors& w) {
  return {weight_decay(tape, model), sample_weight_penalty(omega, arms), contribution_sum_penalty(w)};
}

const std::vector<std::string>& LossReport::field_names() {
  static const std::vector<std::string> names = {"L_R",   "L_A",   "L_I", "L_C_B", "L_O",
                                                 "R_W",   "R_C_B", "R_O", "L",     "L_minus_omega",
                                                 "L_omega"};
  return names;
}

std::vector<double> LossReport::field_values() const {
  return {l_r, l_a, l_i, l_cb, l_o, r_w, r_cb, r_o, total, without_omega, omega_phase};
}

LossReport assemble_losses(const LossTerms& t, const LossCoefficients& c) {
  LossReport r;
  r.l_r = t.l_r;
  r.l_a = t.l_a;
  r.l_i = t.l_i;
  r.l_cb = t.l_cb;
  r.l_o = t.l_o;
  r.r_w = t.r_w;
  r.r_cb = t.r_cb;
  r.r_o = t.r_o;
  const double reg = t.r_w + t.r_cb + t.r_o;
  r.without_omega = t.l_r + c.alpha * t.l_a + c.beta * t.l_i + c.mu * t.l_o + c.lambda * reg;
  r.omega_phase = t.l_r + c.gamma * t.l_cb + c.lambda * reg;
  r.total = t.l_r + c.alpha * t.l_a + c.beta * t.l_i + c.gamma * t.l_cb + c.mu * t.l_o + c.lambda * reg;
  return r;
}

}  // namespace dercfr
