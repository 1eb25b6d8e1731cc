#pragma once

#include <Eigen/Dense>

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dercfr/data.hpp"
#include "dercfr/model.hpp"

namespace dercfr {

enum class Scope { within_sample, out_of_sample };
std::string to_string(Scope s);

struct EvalReport {
  Scope scope = Scope::within_sample;
  std::size_t units = 0;
  std::optional<double> pehe;
  std::optional<double> ate_error;
  std::optional<double> policy_risk;
  std::optional<double> att_error;
};

// sqrt(mean(((yhat1 - yhat0) - (y1 - y0))^2))
double pehe(const Eigen::VectorXd& yhat1, const Eigen::VectorXd& yhat0, const Eigen::VectorXd& y1,
            const Eigen::VectorXd& y0);

// |mean(y1 - y0) - mean(yhat1 - yhat0)|
double ate_error(const Eigen::VectorXd& yhat1, const Eigen::VectorXd& yhat0, const Eigen::VectorXd& y1,
                 const Eigen::VectorXd& y0);

// Policy risk of treating when yhat1 - yhat0 > 0, estimated from factual
// outcomes of the units with rct == 1 (all units when `rct` is empty).
double policy_risk(const Eigen::VectorXd& yhat1, const Eigen::VectorXd& yhat0, const Eigen::VectorXd& yf,
                   std::span<const int> t, std::span<const int> rct);

// |ATT - mean(yhat1 - yhat0 | t = 1)| with
// ATT = mean(yf | t = 1) - mean(yf | t = 0, rct = 1).
double att_error(const Eigen::VectorXd& yhat1, const Eigen::VectorXd& yhat0, const Eigen::VectorXd& yf,
                 std::span<const int> t, std::span<const int> rct);

// Fills every metric the dataset supports: PEHE and ATE error need both
// potential outcomes, policy risk and ATT error need the RCT flag.
EvalReport evaluate(DeRCFRModel& model, const Dataset& ds, Scope scope);

struct FactorSummary {
  double true_mean = 0.0;   // mean contribution of the factor's own variables
  double other_mean = 0.0;  // mean over every other variable
  double ratio = 0.0;       // +inf when other_mean == 0 < true_mean
  std::size_t n_true = 0;
  std::size_t n_other = 0;
};

struct IdentificationRow {
  int variable = 0;  // 1-based covariate index
  std::optional<VariableRole> role;
  double w_i = 0.0, w_c = 0.0, w_a = 0.0;
};

struct IdentificationReport {
  std::vector<IdentificationRow> rows;
  // I, C, A in that order; absent without role labels.
  std::optional<std::array<FactorSummary, 3>> summary;
};

IdentificationReport identification_report(const ContributionProfile& profile, const std::vector<VariableRole>& roles);

}  // namespace dercfr
