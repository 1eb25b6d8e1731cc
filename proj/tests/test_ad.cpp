#include <doctest.h>

#include <cmath>
#include <limits>

#include "dercfr/ad.hpp"
#include "oracle_values.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace dercfr;
using ad::Matrix;
using testing::mat;

TEST_CASE("elu closed form values") {
  CHECK(ad::elu_value(0.0) == 0.0);
  CHECK(ad::elu_value(1.0) == 1.0);
  CHECK(ad::elu_value(-1.0) == doctest::Approx(oracle::kEluMinusOne).epsilon(1e-15));

  ad::Tape tape;
  auto x = tape.constant(mat({{0.0, 1.0, -1.0}}));
  auto y = ad::elu(x);
  CHECK(y.value()(0, 0) == 0.0);
  CHECK(y.value()(0, 1) == 1.0);
  CHECK(y.value()(0, 2) == doctest::Approx(oracle::kEluMinusOne).epsilon(1e-15));
}

TEST_CASE("elu and its derivative are continuous at zero") {
  ad::Parameter p("x", mat({{-1e-9, 0.0, 1e-9}}));
  ad::Tape tape;
  auto y = ad::elu(tape.parameter(p));
  tape.backward(ad::sum(y));
  for (int j = 0; j < 3; ++j) {
    CHECK(std::abs(y.value()(0, j)) < 2e-9);
    CHECK(p.grad(0, j) == doctest::Approx(1.0).epsilon(1e-8));
  }
}

TEST_CASE("identity linear layer returns its input") {
  ad::Tape tape;
  Matrix v = mat({{0.5, -2.0, 3.25}});
  auto out = ad::linear(tape.constant(v), tape.constant(Matrix::Identity(3, 3)), tape.constant(Matrix::Zero(1, 3)));
  CHECK(out.value() == v);
}

TEST_CASE("batch norm of two points standardizes to minus one and one") {
  ad::Tape tape;
  auto out = ad::batch_norm(tape.constant(mat({{1.0}, {3.0}})), tape.constant(mat({{1.0}})),
                            tape.constant(mat({{0.0}})), 0.0);
  CHECK(out.value()(0, 0) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(out.value()(1, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("batch norm matches the numpy reference") {
  ad::Tape tape;
  Eigen::RowVectorXd mean, var;
  auto out = ad::batch_norm(tape.constant(mat({{1, 10}, {3, 20}, {8, 60}})), tape.constant(mat({{2.0, 0.5}})),
                            tape.constant(mat({{0.1, -1.0}})), 1e-5, &mean, &var);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 2; ++j) CHECK(out.value()(i, j) == doctest::Approx(oracle::kBatchNorm[i][j]).epsilon(1e-12));
  }
  CHECK(mean(0) == doctest::Approx(4.0));
  CHECK(var(1) == doctest::Approx(((10 - 30.0) * (10 - 30.0) + 100 + 900) / 3.0));
}

TEST_CASE("shape mismatch is a contract violation") {
  ad::Tape tape;
  auto a = tape.constant(Matrix::Ones(2, 3));
  auto b = tape.constant(Matrix::Ones(2, 2));
  CHECK_THROWS_AS(ad::matmul(a, b), ContractError);
  CHECK_THROWS_AS(ad::add(a, b), ContractError);
  CHECK_THROWS_AS(ad::mul(a, b), ContractError);
}

TEST_CASE("non-finite result names the primitive") {
  ad::Tape tape;
  auto x = tape.constant(mat({{1000.0}}));
  try {
    (void)ad::exp(x);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("exp") != std::string::npos);
  }
}

TEST_CASE("sigmoid gradient at zero is one quarter") {
  ad::Parameter p("x", Matrix::Zero(2, 3));
  ad::Tape tape;
  tape.backward(ad::sum(ad::sigmoid(tape.parameter(p))));
  for (Eigen::Index i = 0; i < p.grad.size(); ++i) CHECK(p.grad.data()[i] == 0.25);
}

TEST_CASE("constant input has zero gradient") {
  ad::Parameter p("w", mat({{2.0}}));
  ad::Tape tape;
  auto c = tape.constant(mat({{3.0}}));
  auto loss = ad::mul(tape.parameter(p), c);
  tape.backward(loss);
  CHECK(tape.grad(c)(0, 0) == 0.0);
  CHECK(p.grad(0, 0) == 3.0);
}

TEST_CASE("unreachable constant has zero gradient") {
  ad::Parameter p("w", mat({{2.0}}));
  ad::Tape tape;
  auto c = tape.constant(mat({{3.0}}));
  auto loss = ad::square(tape.parameter(p));
  tape.backward(loss);
  CHECK(tape.grad(c)(0, 0) == 0.0);
}

TEST_CASE("non-scalar loss is a contract violation") {
  ad::Parameter p("w", Matrix::Ones(2, 2));
  ad::Tape tape;
  auto y = ad::square(tape.parameter(p));
  CHECK_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("detach blocks the gradient") {
  ad::Parameter p("w", mat({{3.0}}));
  ad::Tape tape;
  auto w = tape.parameter(p);
  tape.backward(ad::mul(w, tape.detach(w)));
  CHECK(p.grad(0, 0) == 3.0);
}

TEST_CASE("a parameter used twice accumulates both paths") {
  ad::Parameter p("w", mat({{1.5}}));
  ad::Tape tape;
  auto w = tape.parameter(p);
  tape.backward(ad::add(ad::square(w), ad::scale(w, 4.0)));
  CHECK(p.grad(0, 0) == doctest::Approx(2 * 1.5 + 4.0));
}

TEST_CASE("primitive gradients agree with central differences") {
  testing::for_cases(10, 11, [](testing::Gen& g, int k) {
    INFO("case " << k);
    ad::Parameter a("a", g.normal_matrix(3, 4));
    ad::Parameter b("b", g.normal_matrix(4, 2));
    ad::Parameter bias("bias", g.normal_matrix(1, 2));
    ad::Parameter gam("gamma", g.uniform_matrix(1, 2, 0.5, 2.0));
    ad::Parameter bet("beta", g.normal_matrix(1, 2));
    ad::Parameter s("s", g.uniform_matrix(1, 1, 0.5, 2.0));
    std::vector<ad::Index> rows{2, 0, 2};
    auto loss = [&](ad::Tape& tape) {
      auto h = ad::linear(tape.parameter(a), tape.parameter(b), tape.parameter(bias));
      auto bn = ad::batch_norm(h, tape.parameter(gam), tape.parameter(bet), 1e-5);
      auto e = ad::elu(bn);
      auto n = ad::l2_normalize_rows(ad::add_scalar(e, 2.0));
      auto d = ad::pairwise_sq_dists(n, ad::gather_rows(e, rows));
      auto sp = ad::softplus(ad::matmul(ad::transpose(tape.parameter(a)),
                                        tape.constant(Matrix::Ones(3, 1))));
      auto sig = ad::sigmoid(ad::row_mean(ad::concat_cols(e, n)));
      auto ll = ad::binary_log_loss(sig, mat({{1.0}, {0.0}, {1.0}}));
      auto r = ad::add(ad::sum(ad::exp(ad::scale(d, -0.5))), ad::mean(sp));
      r = ad::add(r, ad::sum(ll));
      r = ad::add(r, ad::sum(ad::abs(ad::concat_rows(h, tape.parameter(bias)))));
      r = ad::add(r, ad::sum(ad::clamp_min(ad::sub(h, tape.constant(Matrix::Constant(3, 2, 0.1))), -0.5)));
      return ad::add(ad::div_scalar(r, tape.parameter(s)), ad::sum(ad::mul(h, h)));
    };
    auto res = oracle::finite_difference({&a, &b, &bias, &gam, &bet, &s}, loss);
    INFO(res.worst_where);
    CHECK(res.worst_rel <= 1e-4);
  });
}

TEST_CASE("adam: zero gradient leaves the parameter unchanged and moments decay") {
  ad::Parameter q("q", mat({{0.5, -0.5}}));
  ad::AdamState fresh;
  std::vector<ad::Parameter*> qs{&q};
  q.grad = Matrix::Zero(1, 2);
  ad::adam_step(fresh, qs);
  CHECK(q.value == mat({{0.5, -0.5}}));

  ad::Parameter p("p", mat({{0.5, -0.5}}));
  ad::AdamState st;
  std::vector<ad::Parameter*> ps{&p};
  p.grad = mat({{1.0, -2.0}});
  ad::adam_step(st, ps);
  const Matrix m1 = st.m[0], v1 = st.v[0];
  p.grad = Matrix::Zero(1, 2);
  ad::adam_step(st, ps);
  CHECK((st.m[0].array().abs() < m1.array().abs()).all());
  CHECK((st.v[0].array().abs() < v1.array().abs()).all());
}

TEST_CASE("adam: first step moves each entry by the learning rate") {
  ad::Parameter p("p", mat({{1.0, 2.0, -3.0}}));
  p.grad = mat({{0.3, -7.0, 1e-3}});
  ad::AdamState st;
  st.learning_rate = 0.01;
  std::vector<ad::Parameter*> ps{&p};
  ad::adam_step(st, ps);
  CHECK(p.value(0, 0) == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(p.value(0, 1) == doctest::Approx(2.0 + 0.01).epsilon(1e-6));
  CHECK(p.value(0, 2) == doctest::Approx(-3.0 - 0.01 * 1e-3 / (1e-3 + 1e-8)).epsilon(1e-9));
}

TEST_CASE("adam: two steps match the script trace") {
  ad::Parameter p("p", mat({{0.5, -0.5}}));
  ad::AdamState st;
  st.learning_rate = 0.1;
  std::vector<ad::Parameter*> ps{&p};
  p.grad = mat({{1.0, -2.0}});
  ad::adam_step(st, ps);
  CHECK(p.value(0, 0) == doctest::Approx(oracle::kAdamStep1[0]).epsilon(1e-14));
  CHECK(p.value(0, 1) == doctest::Approx(oracle::kAdamStep1[1]).epsilon(1e-14));
  p.grad = mat({{1.0, -2.0}});
  ad::adam_step(st, ps);
  CHECK(p.value(0, 0) == doctest::Approx(oracle::kAdamStep2[0]).epsilon(1e-14));
  CHECK(p.value(0, 1) == doctest::Approx(oracle::kAdamStep2[1]).epsilon(1e-14));
}

TEST_CASE("adam: NaN gradient aborts the step") {
  ad::Parameter p("p", mat({{0.5, -0.5}}));
  ad::Parameter q("q", mat({{1.0}}));
  ad::AdamState st;
  std::vector<ad::Parameter*> ps{&p, &q};
  p.grad = mat({{1.0, 1.0}});
  q.grad = mat({{std::numeric_limits<double>::quiet_NaN()}});
  CHECK_THROWS_AS(ad::adam_step(st, ps), NumericError);
  CHECK(p.value == mat({{0.5, -0.5}}));
  CHECK(q.value(0, 0) == 1.0);
  CHECK(st.step == 0);
}

TEST_CASE("all_finite detects every kind of non-finite entry") {
  Matrix m = Matrix::Ones(5, 7);
  CHECK(ad::all_finite(m));
  m(3, 4) = std::numeric_limits<double>::infinity();
  CHECK_FALSE(ad::all_finite(m));
  m(3, 4) = -std::numeric_limits<double>::infinity();
  CHECK_FALSE(ad::all_finite(m));
  m(3, 4) = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(ad::all_finite(m));
  m(3, 4) = std::numeric_limits<double>::max();
  CHECK(ad::all_finite(m));
  m(3, 4) = std::numeric_limits<double>::denorm_min();
  CHECK(ad::all_finite(m));
}

TEST_CASE("softplus inverse round trip") {
  for (double y : {1e-6, 1.0 / 1890, 0.01, 1.0, 30.0}) {
    CHECK(ad::softplus_value(ad::softplus_inverse(y)) == doctest::Approx(y).epsilon(1e-12));
  }
}
