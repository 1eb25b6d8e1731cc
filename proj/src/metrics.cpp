#include "dercfr/metrics.hpp"

#include <cmath>
#include <limits>

#include "dercfr/errors.hpp"

namespace dercfr {

std::string to_string(Scope s) { return s == Scope::within_sample ? "within_sample" : "out_of_sample"; }

namespace {

void require_same_length(Eigen::Index n, std::initializer_list<Eigen::Index> others, const char* what) {
  for (Eigen::Index k : others) {
    if (k != n) throw ContractError(std::string(what) + ": input lengths differ");
  }
}

bool in_rct(std::span<const int> rct, std::size_t i) { return rct.empty() || rct[i] == 1; }

}  // namespace

double pehe(const Eigen::VectorXd& yhat1, const Eigen::VectorXd& yhat0, const Eigen::VectorXd& y1,
            const Eigen::VectorXd& y0) {
  require_same_length(yhat1.size(), {yhat0.size(), y1.size(), y0.size()}, "pehe");
  if (yhat1.size() == 0) throw DegenerateInputError("pehe: no units");
  const Eigen::ArrayXd err = (yhat1 - yhat0).array() - (y1 - y0).array();
  return std::sqrt(err.square().mean());
}

double ate_error(const Eigen::VectorXd& yhat1, const Eigen::VectorXd& yhat0, const Eigen::VectorXd& y1,
                 const Eigen::VectorXd& y0) {
  require_same_length(yhat1.size(), {yhat0.size(), y1.size(), y0.size()}, "ate_error");
  if (yhat1.size() == 0) throw DegenerateInputError("ate_error: no units");
  return std::abs((y1 - y0).mean() - (yhat1 - yhat0).mean());
}

double policy_risk(const Eigen::VectorXd& yhat1, const Eigen::VectorXd& yhat0, const Eigen::VectorXd& yf,
                   std::span<const int> t, std::span<const int> rct) {
  const auto n = yhat1.size();
  require_same_length(n, {yhat0.size(), yf.size(), static_cast<Eigen::Index>(t.size())}, "policy_risk");
  if (!rct.empty()) require_same_length(n, {static_cast<Eigen::Index>(rct.size())}, "policy_risk");

  double n_units = 0, n_treat_policy = 0;
  double sum_11 = 0, cnt_11 = 0;  // pi = 1, t = 1
  double sum_00 = 0, cnt_00 = 0;  // pi = 0, t = 0
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    if (!in_rct(rct, ui)) continue;
    n_units += 1;
    const bool treat = yhat1(i) - yhat0(i) > 0.0;
    if (treat) n_treat_policy += 1;
    if (treat && t[ui] == 1) {
      sum_11 += yf(i);
      cnt_11 += 1;
    } else if (!treat && t[ui] == 0) {
      sum_00 += yf(i);
      cnt_00 += 1;
    }
  }
  if (n_units == 0) throw DegenerateInputError("policy_risk: empty RCT subset");
  const double p_treat = n_treat_policy / n_units;
  const double value_treat = cnt_11 > 0 ? sum_11 / cnt_11 : 0.0;
  const double value_control = cnt_00 > 0 ? sum_00 / cnt_00 : 0.0;
  return 1.0 - (value_treat * p_treat + value_control * (1.0 - p_treat));
}

double att_error(const Eigen::VectorXd& yhat1, const Eigen::VectorXd& yhat0, const Eigen::VectorXd& yf,
                 std::span<const int> t, std::span<const int> rct) {
  const auto n = yhat1.size();
  require_same_length(n, {yhat0.size(), yf.size(), static_cast<Eigen::Index>(t.size())}, "att_error");
  if (!rct.empty()) require_same_length(n, {static_cast<Eigen::Index>(rct.size())}, "att_error");
  double y_treated = 0, n_treated = 0, y_control = 0, n_control = 0, ite_treated = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    if (t[ui] == 1) {
      y_treated += yf(i);
      ite_treated += yhat1(i) - yhat0(i);
      n_treated += 1;
    } else if (in_rct(rct, ui)) {
      y_control += yf(i);
      n_control += 1;
    }
  }
  if (n_treated == 0) throw DegenerateInputError("att_error: no treated units");
  if (n_control == 0) throw DegenerateInputError("att_error: no RCT control units");
  const double att = y_treated / n_treated - y_control / n_control;
  return std::abs(att - ite_treated / n_treated);
}

EvalReport evaluate(DeRCFRModel& model, const Dataset& ds, Scope scope) {
  EvalReport r;
  r.scope = scope;
  r.units = ds.size();
  if (ds.size() == 0) return r;
  const Predictions p = model.predict(ds.x);
  if (ds.has_potential_outcomes()) {
    r.pehe = pehe(p.y1, p.y0, *ds.y1, *ds.y0);
    r.ate_error = ate_error(p.y1, p.y0, *ds.y1, *ds.y0);
  }
  if (ds.rct) {
    const std::span<const int> rct(*ds.rct);
    try {
      r.policy_risk = policy_risk(p.y1, p.y0, ds.yf, ds.t, rct);
      r.att_error = att_error(p.y1, p.y0, ds.yf, ds.t, rct);
    } catch (const DegenerateInputError&) {
      // too few RCT units in this scope; leave the metrics undefined
    }
  }
  return r;
}

IdentificationReport identification_report(const ContributionProfile& profile, const std::vector<VariableRole>& roles) {
  const auto m = profile.w_i.size();
  if (profile.w_c.size() != m || profile.w_a.size() != m) {
    throw ContractError("identification_report: contribution vectors differ in length");
  }
  const bool labelled = !roles.empty();
  if (labelled && static_cast<Eigen::Index>(roles.size()) != m) {
    throw ContractError("identification_report: roles do not match the number of variables");
  }
  IdentificationReport rep;
  for (Eigen::Index k = 0; k < m; ++k) {
    IdentificationRow row;
    row.variable = static_cast<int>(k + 1);
    if (labelled) row.role = roles[static_cast<std::size_t>(k)];
    row.w_i = profile.w_i(k);
    row.w_c = profile.w_c(k);
    row.w_a = profile.w_a(k);
    rep.rows.push_back(row);
  }
  if (!labelled) return rep;

  const std::array<VariableRole, 3> factors = {VariableRole::instrumental, VariableRole::confounder,
                                               VariableRole::adjustment};
  const std::array<const Eigen::VectorXd*, 3> vectors = {&profile.w_i, &profile.w_c, &profile.w_a};
  std::array<FactorSummary, 3> summary;
  for (std::size_t f = 0; f < 3; ++f) {
    FactorSummary& s = summary[f];
    // sums of deviations from a shared reference, so equal entries give equal means
    const double ref = m ? (*vectors[f])(0) : 0.0;
    double sum_true = 0, sum_other = 0;
    for (Eigen::Index k = 0; k < m; ++k) {
      if (roles[static_cast<std::size_t>(k)] == factors[f]) {
        sum_true += (*vectors[f])(k) - ref;
        s.n_true += 1;
      } else {
        sum_other += (*vectors[f])(k) - ref;
        s.n_other += 1;
      }
    }
    s.true_mean = s.n_true ? ref + sum_true / static_cast<double>(s.n_true) : 0.0;
    s.other_mean = s.n_other ? ref + sum_other / static_cast<double>(s.n_other) : 0.0;
    if (s.other_mean > 0.0) {
      s.ratio = s.true_mean / s.other_mean;
    } else {
      s.ratio = s.true_mean > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
    }
  }
  rep.summary = summary;
  return rep;
}

}  // namespace dercfr
