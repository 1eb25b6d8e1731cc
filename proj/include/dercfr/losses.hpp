#pragma once

#include <Eigen/Dense>

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dercfr/ad.hpp"
#include "dercfr/model.hpp"

namespace dercfr {

struct KernelSpec {
  enum class Kind { linear, rbf };
  Kind kind = Kind::linear;
  // rbf only; empty means the median pairwise distance of the pooled sample.
  std::optional<double> bandwidth;

  static KernelSpec linear() { return {}; }
  static KernelSpec rbf(double bw);
  static KernelSpec rbf_median() { return {Kind::rbf, std::nullopt}; }

  // "linear", "rbf" (median heuristic) or "rbf:<bandwidth>"
  static KernelSpec parse(const std::string& s);
  std::string str() const;
};

double median_heuristic_bandwidth(const ad::Matrix& a, const ad::Matrix& b);

// Weighted maximum mean discrepancy between the rows of `a` and `b`.
//
// Undefined weight tensors mean uniform weights. Weights are normalized to
// sum 1 within each group. Linear kernel: squared distance of weighted means.
// rbf kernel k(x,y) = exp(-|x-y|^2 / (2 bw^2)): the weighted kernel double
// sum, clamped at zero.
ad::Tensor mmd(const ad::Tensor& a, const ad::Tensor& b, const ad::Tensor& w_a, const ad::Tensor& w_b,
               const KernelSpec& kernel);
inline ad::Tensor mmd(const ad::Tensor& a, const ad::Tensor& b, const KernelSpec& kernel) {
  return mmd(a, b, ad::Tensor{}, ad::Tensor{}, kernel);
}

// Within each arm: 0 below the arm's median, 1 at or above it.
Eigen::VectorXd binarize_by_median(const Eigen::VectorXd& y, std::span<const int> t);

// Labels of one batch, with the index sets every loss needs precomputed.
struct LossBatch {
  OutcomeType outcome_type = OutcomeType::binary;
  std::vector<int> t;
  Eigen::VectorXd y;
  // y itself for binary outcomes, binarize_by_median(y, t) otherwise.
  Eigen::VectorXd y_class;
  ArmIndex arms;
  // cells[k][c]: rows with t = k and y_class = c.
  std::array<std::array<std::vector<ad::Index>, 2>, 2> cells;

  static LossBatch make(std::span<const int> t, const Eigen::VectorXd& y, OutcomeType type);
  std::size_t size() const { return t.size(); }
};

// Per-sample squared error or log-loss, n x 1.
ad::Tensor prediction_loss(const ad::Tensor& pred, const Eigen::VectorXd& y, OutcomeType type);

// disc(A | t=0, A | t=1) + mean_i l[y_i, g_A(A(x_i))]
ad::Tensor loss_adjustment(const ad::Tensor& rep_a, const ad::Tensor& y_adjust, const LossBatch& batch,
                           const KernelSpec& kernel);

// disc of the omega-weighted C representations across arms.
ad::Tensor loss_balance(const ad::Tensor& rep_c, const LossBatch& batch, const ad::Tensor& omega,
                        const KernelSpec& kernel);

// sum_k disc(I | t=k,y=0 ; I | t=k,y=1) with omega weights, plus the mean
// treatment log-loss of g_I. Arms with an empty outcome class are skipped.
ad::Tensor loss_instrument(const ad::Tensor& rep_i, const ad::Tensor& t_prob, const LossBatch& batch,
                           const ad::Tensor& omega, const KernelSpec& kernel);

ad::Tensor loss_orthogonal(const ContributionTensors& w);
double loss_orthogonal(const ContributionProfile& w);

// sum_i omega_i l[y_i, h^{t_i}(C(x_i), A(x_i))]
ad::Tensor loss_regression(const ad::Tensor& y_factual, const LossBatch& batch, const ad::Tensor& omega);

struct RegularizerTerms {
  ad::Tensor weights;         // R_W
  ad::Tensor sample_weights;  // R_C_B
  ad::Tensor contributions;   // R_O
};

ad::Tensor weight_decay(ad::Tape& tape, DeRCFRModel& model);
ad::Tensor sample_weight_penalty(const ad::Tensor& omega, const ArmIndex& arms);
ad::Tensor contribution_sum_penalty(const ContributionTensors& w);
RegularizerTerms regularizers(ad::Tape& tape, DeRCFRModel& model, const ad::Tensor& omega, const ArmIndex& arms,
                              const ContributionTensors& w);

struct LossCoefficients {
  double alpha = 1.0;   // L_A
  double beta = 1.0;    // L_I
  double gamma = 1.0;   // L_C_B
  double mu = 1.0;      // L_O
  double lambda = 1.0;  // Reg
};

struct LossTerms {
  double l_r = 0, l_a = 0, l_i = 0, l_cb = 0, l_o = 0;
  double r_w = 0, r_cb = 0, r_o = 0;
};

struct LossReport {
  double l_r = 0, l_a = 0, l_i = 0, l_cb = 0, l_o = 0;
  double r_w = 0, r_cb = 0, r_o = 0;
  double total = 0;          // L
  double without_omega = 0;  // L_{-omega}: network phase
  double omega_phase = 0;    // L_omega: sample-weight phase

  static const std::vector<std::string>& field_names();
  std::vector<double> field_values() const;
};

LossReport assemble_losses(const LossTerms& terms, const LossCoefficients& c);

}  // namespace dercfr
