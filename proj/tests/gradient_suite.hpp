#pragma once

// Finite-difference checks of every loss and regularizer term on small random
// models.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dercfr/losses.hpp"
#include "dercfr/model.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace gradsuite {

using namespace dercfr;

struct TermResult {
  std::string term;
  std::string setting;
  oracle::GradCheck check;
};

struct Setting {
  int m = 4, d = 3, n = 12;
  bool batch_norm = false;
  bool rep_normalize = false;
  OutcomeType type = OutcomeType::binary;
  KernelSpec kernel = KernelSpec::linear();
  int layers = 2;

  std::string str() const {
    return "m=" + std::to_string(m) + " d=" + std::to_string(d) + " n=" + std::to_string(n) +
           (batch_norm ? " bn" : "") + (rep_normalize ? " norm" : "") + " " + to_string(type) + " " + kernel.str() +
           " l=" + std::to_string(layers);
  }
};

inline Setting random_setting(testing::Gen& g) {
  Setting s;
  s.m = g.integer(2, 8);
  s.d = g.integer(1, 4);
  s.n = g.integer(8, 16);
  s.batch_norm = g.coin();
  s.rep_normalize = g.coin(0.3);
  s.type = g.coin() ? OutcomeType::binary : OutcomeType::continuous;
  s.kernel = g.coin() ? KernelSpec::linear() : KernelSpec::rbf(g.uniform(0.5, 2.0));
  s.layers = g.integer(1, 2);
  return s;
}

using TermFn = std::function<ad::Tensor(ad::Tape&, DeRCFRModel&, const ForwardPass&, const LossBatch&,
                                        const ad::Tensor& omega, const ContributionTensors&)>;

inline std::vector<std::pair<std::string, TermFn>> terms(const KernelSpec& k) {
  std::vector<std::pair<std::string, TermFn>> out;
  out.emplace_back("L_R", [](ad::Tape&, DeRCFRModel&, const ForwardPass& fp, const LossBatch& b, const ad::Tensor& w,
                            const ContributionTensors&) { return loss_regression(fp.y_factual, b, w); });
  out.emplace_back("L_A", [k](ad::Tape&, DeRCFRModel&, const ForwardPass& fp, const LossBatch& b, const ad::Tensor&,
                             const ContributionTensors&) { return loss_adjustment(fp.rep_a, fp.y_adjust, b, k); });
  out.emplace_back("L_I", [k](ad::Tape&, DeRCFRModel&, const ForwardPass& fp, const LossBatch& b, const ad::Tensor& w,
                             const ContributionTensors&) { return loss_instrument(fp.rep_i, fp.t_prob, b, w, k); });
  out.emplace_back("L_C_B", [k](ad::Tape&, DeRCFRModel&, const ForwardPass& fp, const LossBatch& b,
                               const ad::Tensor& w, const ContributionTensors&) { return loss_balance(fp.rep_c, b, w, k); });
  out.emplace_back("L_O", [](ad::Tape&, DeRCFRModel&, const ForwardPass&, const LossBatch&, const ad::Tensor&,
                            const ContributionTensors& c) { return loss_orthogonal(c); });
  out.emplace_back("R_W", [](ad::Tape& tape, DeRCFRModel& m, const ForwardPass&, const LossBatch&, const ad::Tensor&,
                            const ContributionTensors&) { return weight_decay(tape, m); });
  out.emplace_back("R_C_B", [](ad::Tape&, DeRCFRModel&, const ForwardPass&, const LossBatch& b, const ad::Tensor& w,
                              const ContributionTensors&) { return sample_weight_penalty(w, b.arms); });
  out.emplace_back("R_O", [](ad::Tape&, DeRCFRModel&, const ForwardPass&, const LossBatch&, const ad::Tensor&,
                            const ContributionTensors& c) { return contribution_sum_penalty(c); });
  out.emplace_back("L", [k](ad::Tape& tape, DeRCFRModel& m, const ForwardPass& fp, const LossBatch& b,
                           const ad::Tensor& w, const ContributionTensors& c) {
    ad::Tensor l = loss_regression(fp.y_factual, b, w);
    l = ad::add(l, ad::scale(loss_adjustment(fp.rep_a, fp.y_adjust, b, k), 0.7));
    l = ad::add(l, ad::scale(loss_instrument(fp.rep_i, fp.t_prob, b, w, k), 0.3));
    l = ad::add(l, ad::scale(loss_balance(fp.rep_c, b, w, k), 1.3));
    l = ad::add(l, ad::scale(loss_orthogonal(c), 0.5));
    auto reg = regularizers(tape, m, w, b.arms, c);
    return ad::add(l, ad::scale(ad::add(ad::add(reg.weights, reg.sample_weights), reg.contributions), 0.01));
  });
  return out;
}

// Checks every term against central differences over all network parameters
// and rho. Returns one result per term.
inline std::vector<TermResult> check_setting(const Setting& s, std::uint64_t seed) {
  testing::Gen g(seed);
  Dataset ds = testing::small_dataset(g, s.n, s.m, s.type);
  ModelConfig cfg = testing::small_config(s.m, s.d, s.batch_norm, s.rep_normalize, s.type);
  DeRCFRModel model = DeRCFRModel::build(cfg, ds.t, seed);
  // |W| enters the contributions and has a kink at 0; keep every entry far
  // enough from it that both difference points lie on one side.
  for (Mlp* net : {&model.rep_i(), &model.rep_c(), &model.rep_a()}) {
    for (ad::Parameter* w : net->weights()) {
      for (Eigen::Index i = 0; i < w->value.size(); ++i) {
        double& v = w->value.data()[i];
        if (std::abs(v) < 1e-3) v = v < 0 ? -1e-3 : 1e-3;
      }
    }
  }
  // move the sample weights away from the uniform start
  for (Eigen::Index i = 0; i < model.rho().value.size(); ++i) model.rho().value(i, 0) += g.normal(0.3);
  const LossBatch batch = LossBatch::make(ds.t, ds.yf, s.type);
  const ConstrainedLayers layers = ConstrainedLayers::first(s.layers);

  std::vector<ad::Parameter*> params = model.network_parameters();
  params.push_back(&model.rho());

  std::vector<TermResult> out;
  for (const auto& [name, fn] : terms(s.kernel)) {
    auto loss = [&, fn = fn](ad::Tape& tape) {
      ForwardPass fp = model.forward_factual(tape, ds.x, batch.arms, Mode::train);
      ad::Tensor omega = model.omega(tape);
      ContributionTensors c = contribution_on_tape(tape, model, layers);
      return fn(tape, model, fp, batch, omega, c);
    };
    out.push_back({name, s.str(), oracle::finite_difference(params, loss)});
  }
  return out;
}

}  // namespace gradsuite
