#include <doctest.h>

#include <cmath>

#include "dercfr/losses.hpp"
#include "gradient_suite.hpp"
#include "oracle_values.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace dercfr;
using ad::Matrix;
using testing::mat;
using testing::vec;

namespace {

double mmd_value(const Matrix& a, const Matrix& b, const Matrix& wa, const Matrix& wb, const KernelSpec& k) {
  ad::Tape tape;
  auto ta = tape.constant(a), tb = tape.constant(b);
  auto w1 = wa.size() ? tape.constant(wa) : ad::Tensor{};
  auto w2 = wb.size() ? tape.constant(wb) : ad::Tensor{};
  return mmd(ta, tb, w1, w2, k).item();
}

double mmd_value(const Matrix& a, const Matrix& b, const KernelSpec& k) { return mmd_value(a, b, {}, {}, k); }

ContributionTensors contributions(ad::Tape& tape, const Matrix& wi, const Matrix& wc, const Matrix& wa) {
  return {tape.constant(wi), tape.constant(wc), tape.constant(wa)};
}

}  // namespace

// ---- mmd ------------------------------------------------------------------

TEST_CASE("mmd of identical sets is zero") {
  Matrix a = testing::Gen(1).normal_matrix(6, 3);
  CHECK(mmd_value(a, a, KernelSpec::linear()) == 0.0);
  CHECK(std::abs(mmd_value(a, a, KernelSpec::rbf(1.0))) < 1e-15);
  CHECK(std::abs(mmd_value(a, a, KernelSpec::rbf_median())) < 1e-15);
}

TEST_CASE("linear mmd with coinciding weighted means is zero") {
  CHECK(mmd_value(mat({{0.0}, {2.0}}), mat({{1.0}}), mat({{0.5}, {0.5}}), mat({{1.0}}), KernelSpec::linear()) == 0.0);
}

TEST_CASE("rbf mmd of two unit-distance points") {
  const double v = mmd_value(mat({{0.0}}), mat({{1.0}}), KernelSpec::rbf(1.0));
  CHECK(v == doctest::Approx(oracle::kRbfUnitPair).epsilon(1e-15));
  CHECK(v == doctest::Approx(0.78694).epsilon(1e-5));
}

TEST_CASE("mmd matches the numpy reference values") {
  Matrix a = mat({{0, 0}, {1, 0}, {0, 2}});
  Matrix b = mat({{1, 1}, {2, 0}});
  Matrix wa = mat({{1}, {2}, {1}});
  Matrix wb = mat({{3}, {1}});
  CHECK(mmd_value(a, b, wa, wb, KernelSpec::rbf(1.5)) == doctest::Approx(oracle::kRbfMmdBw15).epsilon(1e-13));
  CHECK(mmd_value(a, b, wa, wb, KernelSpec::linear()) == doctest::Approx(oracle::kLinearMmd).epsilon(1e-14));
  CHECK(median_heuristic_bandwidth(a, b) == doctest::Approx(oracle::kMedianDistance).epsilon(1e-15));
  CHECK(mmd_value(a, b, wa, wb, KernelSpec::rbf_median()) == doctest::Approx(oracle::kRbfMmdMedian).epsilon(1e-13));
  CHECK(mmd_value(a, b, KernelSpec::rbf(1.0)) == doctest::Approx(oracle::kRbfMmdUniformBw1).epsilon(1e-13));
}

TEST_CASE("mmd weights are scale invariant within a group") {
  Matrix a = mat({{0, 0}, {1, 0}, {0, 2}});
  Matrix b = mat({{1, 1}, {2, 0}});
  const double v1 = mmd_value(a, b, mat({{1}, {2}, {1}}), mat({{3}, {1}}), KernelSpec::rbf(1.0));
  const double v2 = mmd_value(a, b, mat({{10}, {20}, {10}}), mat({{0.3}, {0.1}}), KernelSpec::rbf(1.0));
  CHECK(v1 == doctest::Approx(v2).epsilon(1e-13));
}

TEST_CASE("mmd degenerate inputs") {
  Matrix a = mat({{0.0}, {1.0}});
  CHECK_THROWS_AS(mmd_value(a, Matrix(0, 1), KernelSpec::linear()), DegenerateInputError);
  CHECK_THROWS_AS(mmd_value(Matrix(0, 1), a, KernelSpec::rbf(1.0)), DegenerateInputError);
  CHECK_THROWS_AS(mmd_value(a, a, mat({{0}, {0}}), mat({{1}, {1}}), KernelSpec::linear()), DegenerateInputError);
  CHECK_THROWS_AS(mmd_value(a, a, mat({{1}, {1}}), mat({{0}, {0}}), KernelSpec::rbf(1.0)), DegenerateInputError);
  CHECK_THROWS_AS(mmd_value(a, mat({{0.0, 1.0}}), KernelSpec::linear()), ContractError);
}

TEST_CASE("weighted rbf mmd agrees with the double-loop oracle") {
  testing::for_cases(50, 2, [](testing::Gen& g, int k) {
    INFO("case " << k);
    const int na = g.integer(1, 20), nb = g.integer(1, 20), d = g.integer(1, 5);
    Matrix a = g.normal_matrix(na, d), b = g.normal_matrix(nb, d, 1.5);
    Matrix wa = g.uniform_matrix(na, 1, 0.01, 1.0), wb = g.uniform_matrix(nb, 1, 0.01, 1.0);
    const double bw = g.uniform(0.3, 3.0);
    std::vector<double> va(wa.data(), wa.data() + na), vb(wb.data(), wb.data() + nb);
    CHECK(std::abs(mmd_value(a, b, wa, wb, KernelSpec::rbf(bw)) - oracle::rbf_mmd(a, b, va, vb, bw)) <= 1e-10);
    CHECK(std::abs(mmd_value(a, b, wa, wb, KernelSpec::linear()) - oracle::linear_mmd(a, b, va, vb)) <= 1e-10);
  });
}

TEST_CASE("kernel spec parsing") {
  CHECK(KernelSpec::parse("linear").kind == KernelSpec::Kind::linear);
  auto r = KernelSpec::parse("rbf");
  CHECK(r.kind == KernelSpec::Kind::rbf);
  CHECK_FALSE(r.bandwidth.has_value());
  auto r2 = KernelSpec::parse("rbf:0.5");
  REQUIRE(r2.bandwidth.has_value());
  CHECK(*r2.bandwidth == 0.5);
  CHECK(KernelSpec::parse(r2.str()).bandwidth == r2.bandwidth);
  CHECK_THROWS(KernelSpec::parse("poly"));
  CHECK_THROWS(KernelSpec::parse("rbf:-1"));
}

// ---- median binarization --------------------------------------------------

TEST_CASE("binarize by median") {
  std::vector<int> t0{0, 0, 0, 0, 1};
  CHECK(binarize_by_median(vec({1, 2, 3, 4, 9}), t0).head(4) == vec({0, 0, 1, 1}));
  std::vector<int> t1{1, 1, 1, 0};
  CHECK(binarize_by_median(vec({5, 5, 5, 0}), t1).head(3) == vec({1, 1, 1}));
  std::vector<int> t2{0, 0, 1, 1};
  CHECK(binarize_by_median(vec({0, 10, 100, 200}), t2) == vec({0, 1, 0, 1}));
  std::vector<int> t3{0, 0, 0};
  CHECK_THROWS_AS(binarize_by_median(vec({1, 2, 3}), t3), DegenerateInputError);
}

// ---- L_A ------------------------------------------------------------------

TEST_CASE("adjustment loss examples") {
  std::vector<int> t{0, 1, 0, 1};
  SUBCASE("constant representation and exact continuous predictions") {
    Eigen::VectorXd y = vec({0.5, -1.0, 2.0, 3.0});
    auto batch = LossBatch::make(t, y, OutcomeType::continuous);
    ad::Tape tape;
    auto rep = tape.constant(Matrix::Constant(4, 3, 0.7));
    auto pred = tape.constant(Matrix(y));
    CHECK(loss_adjustment(rep, pred, batch, KernelSpec::linear()).item() == 0.0);
    CHECK(std::abs(loss_adjustment(rep, pred, batch, KernelSpec::rbf(1.0)).item()) < 1e-15);
  }
  SUBCASE("disc term equals mmd of the A representations") {
    Eigen::VectorXd y = vec({0.5, -1.0, 2.0, 3.0});
    auto batch = LossBatch::make(t, y, OutcomeType::continuous);
    ad::Tape tape;
    Matrix r = testing::Gen(4).normal_matrix(4, 2);
    auto rep = tape.constant(r);
    auto pred = tape.constant(Matrix(y));
    const double disc = mmd_value(mat({{r(0, 0), r(0, 1)}, {r(2, 0), r(2, 1)}}),
                                  mat({{r(1, 0), r(1, 1)}, {r(3, 0), r(3, 1)}}), KernelSpec::rbf(0.8));
    CHECK(loss_adjustment(rep, pred, batch, KernelSpec::rbf(0.8)).item() == doctest::Approx(disc).epsilon(1e-14));
  }
  SUBCASE("uninformative binary predictor") {
    auto batch = LossBatch::make(t, vec({0, 1, 1, 0}), OutcomeType::binary);
    ad::Tape tape;
    auto rep = tape.constant(mat({{1, 2}, {1, 2}, {3, 0}, {3, 0}}));
    auto pred = tape.constant(Matrix::Constant(4, 1, 0.5));
    CHECK(loss_adjustment(rep, pred, batch, KernelSpec::linear()).item() == doctest::Approx(oracle::kLn2).epsilon(1e-15));
  }
}

TEST_CASE("one-arm batch is degenerate") {
  std::vector<int> t{1, 1, 1};
  CHECK_THROWS_AS(LossBatch::make(t, vec({0, 1, 0}), OutcomeType::binary), DegenerateInputError);
}

// ---- L_C_B ----------------------------------------------------------------

TEST_CASE("balance loss examples") {
  SUBCASE("uniform weights and identical arms") {
    std::vector<int> t{0, 1, 0, 1};
    auto batch = LossBatch::make(t, vec({0, 0, 1, 1}), OutcomeType::binary);
    ad::Tape tape;
    auto rep = tape.constant(mat({{1, 2}, {1, 2}, {3, 0}, {3, 0}}));
    auto w = tape.constant(Matrix::Constant(4, 1, 0.5));
    CHECK(loss_balance(rep, batch, w, KernelSpec::linear()).item() == 0.0);
    CHECK(std::abs(loss_balance(rep, batch, w, KernelSpec::rbf(1.0)).item()) < 1e-15);
  }
  SUBCASE("weighted means coincide") {
    std::vector<int> t{0, 0, 1};
    auto batch = LossBatch::make(t, vec({0, 1, 0}), OutcomeType::binary);
    ad::Tape tape;
    auto rep = tape.constant(mat({{0.0}, {2.0}, {1.0}}));
    auto w = tape.constant(mat({{0.5}, {0.5}, {1.0}}));
    CHECK(loss_balance(rep, batch, w, KernelSpec::linear()).item() == 0.0);
  }
  SUBCASE("single points at unit distance under any positive weights") {
    std::vector<int> t{0, 1};
    auto batch = LossBatch::make(t, vec({0, 1}), OutcomeType::binary);
    for (double w0 : {0.01, 1.0, 37.0}) {
      ad::Tape tape;
      auto rep = tape.constant(mat({{0.0}, {1.0}}));
      auto w = tape.constant(mat({{w0}, {2.5}}));
      CHECK(loss_balance(rep, batch, w, KernelSpec::linear()).item() == 1.0);
    }
  }
}

// ---- L_I ------------------------------------------------------------------

TEST_CASE("instrument loss examples") {
  SUBCASE("constant representation per arm with exact treatment predictions") {
    std::vector<int> t{0, 0, 1, 1};
    auto batch = LossBatch::make(t, vec({0, 1, 0, 1}), OutcomeType::binary);
    ad::Tape tape;
    auto rep = tape.constant(mat({{1, 1}, {1, 1}, {-2, 0}, {-2, 0}}));
    auto prob = tape.constant(mat({{0}, {0}, {1}, {1}}));
    auto w = tape.constant(Matrix::Constant(4, 1, 0.5));
    CHECK(loss_instrument(rep, prob, batch, w, KernelSpec::linear()).item() < 1e-10);
  }
  SUBCASE("uninformative treatment head with zero discrepancies") {
    std::vector<int> t{0, 0, 1, 1};
    auto batch = LossBatch::make(t, vec({0, 1, 0, 1}), OutcomeType::binary);
    ad::Tape tape;
    auto rep = tape.constant(Matrix::Constant(4, 2, 0.3));
    auto prob = tape.constant(Matrix::Constant(4, 1, 0.5));
    auto w = tape.constant(Matrix::Constant(4, 1, 0.5));
    CHECK(loss_instrument(rep, prob, batch, w, KernelSpec::rbf(1.0)).item() == doctest::Approx(oracle::kLn2).epsilon(1e-14));
  }
  SUBCASE("arm with an empty outcome class is skipped") {
    // arm 0: y-groups {0} vs {1}; arm 1: only y = 1
    std::vector<int> t{0, 0, 1, 1};
    auto batch = LossBatch::make(t, vec({0, 1, 1, 1}), OutcomeType::binary);
    ad::Tape tape;
    auto rep = tape.constant(mat({{0.0}, {1.0}, {5.0}, {-3.0}}));
    auto prob = tape.constant(Matrix::Constant(4, 1, 0.5));
    auto w = tape.constant(Matrix::Ones(4, 1));
    CHECK(loss_instrument(rep, prob, batch, w, KernelSpec::linear()).item() ==
          doctest::Approx(1.0 + oracle::kLn2).epsilon(1e-14));
  }
}

// ---- L_O ------------------------------------------------------------------

TEST_CASE("orthogonal loss examples") {
  ad::Tape tape;
  auto e1 = mat({{1}, {0}, {0}}), e2 = mat({{0}, {1}, {0}}), e3 = mat({{0}, {0}, {1}});
  CHECK(loss_orthogonal(contributions(tape, e1, e2, e3)).item() == 0.0);
  Matrix q = Matrix::Constant(4, 1, 0.25);
  CHECK(loss_orthogonal(contributions(tape, q, q, q)).item() == 0.75);
  CHECK(loss_orthogonal(contributions(tape, mat({{1}, {0}}), mat({{1}, {0}}), mat({{0}, {1}}))).item() == 1.0);
  CHECK_THROWS_AS(loss_orthogonal(contributions(tape, e1, e2, mat({{1}, {0}}))), ContractError);

  ContributionProfile p{vec({1, 0}), vec({1, 0}), vec({0, 1}), 1};
  CHECK(loss_orthogonal(p) == 1.0);
  p.w_a = vec({1, 0, 0});
  CHECK_THROWS_AS(loss_orthogonal(p), ContractError);
}

// ---- L_R ------------------------------------------------------------------

TEST_CASE("regression loss examples") {
  std::vector<int> t{0, 1, 1};
  Eigen::VectorXd y = vec({0.5, 2.0, -1.0});
  auto batch = LossBatch::make(t, y, OutcomeType::continuous);
  ad::Tape tape;
  auto w = tape.constant(mat({{0.3}, {0.2}, {0.9}}));
  CHECK(loss_regression(tape.constant(Matrix(y)), batch, w).item() == 0.0);

  auto pred = tape.constant(mat({{0.0}, {1.0}, {1.0}}));
  const double base = loss_regression(pred, batch, w).item();
  const double doubled = loss_regression(pred, batch, ad::scale(w, 2.0)).item();
  CHECK(doubled == doctest::Approx(2.0 * base).epsilon(1e-15));

  std::vector<int> t1{0, 1};
  auto b1 = LossBatch::make(t1, vec({2.0, 0.0}), OutcomeType::continuous);
  auto w1 = tape.constant(mat({{1.0}, {0.0}}));
  CHECK(loss_regression(tape.constant(mat({{0.0}, {0.0}})), b1, w1).item() == 4.0);

  CHECK_THROWS_AS(loss_regression(pred, batch, tape.constant(Matrix::Ones(2, 1))), ContractError);
}

// ---- regularizers and assembly --------------------------------------------

TEST_CASE("regularizer examples") {
  std::vector<int> t{0, 0, 1};
  auto arms = ArmIndex::from_treatment(t);
  ad::Tape tape;
  CHECK(sample_weight_penalty(tape.constant(mat({{0.4}, {0.6}, {1.0}})), arms).item() == doctest::Approx(0.0).scale(1e-15));
  CHECK(sample_weight_penalty(tape.constant(Matrix::Zero(3, 1)), arms).item() == 2.0);
  CHECK(contribution_sum_penalty(contributions(tape, mat({{0.5}, {0.5}}), mat({{1}, {0}}), mat({{0.25}, {0.75}})))
            .item() == 0.0);
  // (0 - 1)^2 + (1 - 1)^2 + (3 - 1)^2
  CHECK(contribution_sum_penalty(contributions(tape, mat({{0}, {0}}), mat({{1}, {0}}), mat({{1}, {2}}))).item() == 5.0);
}

TEST_CASE("loss report assembly") {
  SUBCASE("all terms zero") {
    auto r = assemble_losses({}, LossCoefficients{});
    for (double v : r.field_values()) CHECK(v == 0.0);
  }
  LossTerms t{0.5, 0.25, 1.5, 0.125, 3.0, 10.0, 0.2, 0.7};
  SUBCASE("zero coefficients leave L_R plus the regularizer") {
    LossCoefficients c{0, 0, 0, 0, 0.01};
    auto r = assemble_losses(t, c);
    CHECK(r.total == doctest::Approx(0.5 + 0.01 * (10.0 + 0.2 + 0.7)).epsilon(1e-15));
  }
  SUBCASE("total is consistent with its parts") {
    LossCoefficients c{0.3, 2.0, 5.0, 0.01, 1e-3};
    auto r = assemble_losses(t, c);
    const double recomputed = r.l_r + c.alpha * r.l_a + c.beta * r.l_i + c.gamma * r.l_cb + c.mu * r.l_o +
                              c.lambda * (r.r_w + r.r_cb + r.r_o);
    CHECK(std::abs(r.total - recomputed) <= 1e-12);
    const double reg = r.r_w + r.r_cb + r.r_o;
    const double net = r.l_r + c.alpha * r.l_a + c.beta * r.l_i + c.mu * r.l_o + c.lambda * reg;
    CHECK(std::abs(r.without_omega - net) <= 1e-12);
    const double om = r.l_r + c.gamma * r.l_cb + c.lambda * reg;
    CHECK(std::abs(r.omega_phase - om) <= 1e-12);
    CHECK(LossReport::field_names().size() == r.field_values().size());
  }
}

// ---- gradients ------------------------------------------------------------

TEST_CASE("every loss term passes central-difference checks") {
  gradsuite::Setting base;
  for (bool bn : {false, true}) {
    for (auto type : {OutcomeType::binary, OutcomeType::continuous}) {
      for (const auto& kernel : {KernelSpec::linear(), KernelSpec::rbf(1.2)}) {
        gradsuite::Setting s = base;
        s.batch_norm = bn;
        s.type = type;
        s.kernel = kernel;
        for (const auto& r : gradsuite::check_setting(s, 101)) {
          INFO(r.term << " [" << r.setting << "] " << r.check.worst_where);
          CHECK(r.check.worst_rel <= 1e-4);
        }
      }
    }
  }
}
