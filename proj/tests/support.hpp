#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dercfr/ad.hpp"
#include "dercfr/data.hpp"
#include "dercfr/losses.hpp"
#include "dercfr/model.hpp"

namespace testing {

using dercfr::ad::Index;
using dercfr::ad::Matrix;

// Hand-rolled generator for property tests.
struct Gen {
  std::mt19937_64 rng;
  explicit Gen(std::uint64_t seed) : rng(seed) {}

  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  double normal(double sd = 1.0) { return std::normal_distribution<double>(0.0, sd)(rng); }
  bool coin(double p = 0.5) { return std::bernoulli_distribution(p)(rng); }

  Matrix normal_matrix(Index r, Index c, double sd = 1.0) {
    Matrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(sd);
    return m;
  }
  Matrix uniform_matrix(Index r, Index c, double lo, double hi) {
    Matrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(lo, hi);
    return m;
  }
  // Binary vector of length n with at least `min_each` zeros and ones.
  std::vector<int> binary(int n, int min_each = 1) {
    std::vector<int> v(static_cast<std::size_t>(n));
    for (;;) {
      int ones = 0;
      for (int& x : v) ones += (x = coin() ? 1 : 0);
      if (ones >= min_each && n - ones >= min_each) return v;
    }
  }
};

// Runs `prop(gen, case_index)` for `cases` seeds; the case seed is reported by
// doctest through the INFO macro at the call site.
inline void for_cases(int cases, std::uint64_t base, const std::function<void(Gen&, int)>& prop) {
  for (int k = 0; k < cases; ++k) {
    Gen g(base * 1000003ULL + static_cast<std::uint64_t>(k));
    prop(g, k);
  }
}

inline Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

inline Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  const Index r = static_cast<Index>(rows.size());
  const Index c = r ? static_cast<Index>(rows.begin()->size()) : 0;
  Matrix m(r, c);
  Index i = 0;
  for (const auto& row : rows) {
    Index j = 0;
    for (double x : row) m(i, j++) = x;
    ++i;
  }
  return m;
}

// Small model config for gradient checks and fast training tests.
inline dercfr::ModelConfig small_config(int m, int d, bool batch_norm, bool rep_normalize,
                                        dercfr::OutcomeType type = dercfr::OutcomeType::binary) {
  dercfr::ModelConfig cfg;
  cfg.input_dim = m;
  cfg.outcome_type = type;
  cfg.representation = {m, 2, d, d, batch_norm, rep_normalize};
  cfg.outcome_head = {2 * d, 1, 3, 1, false, false};
  cfg.treatment_head = {d, 1, 3, 1, false, false};
  return cfg;
}

// Dataset of n rows where every (arm, outcome) cell is populated.
inline dercfr::Dataset small_dataset(Gen& g, int n, int m, dercfr::OutcomeType type) {
  dercfr::Dataset ds;
  ds.outcome_type = type;
  ds.x = g.normal_matrix(n, m);
  ds.t.resize(static_cast<std::size_t>(n));
  ds.yf.resize(n);
  for (int i = 0; i < n; ++i) {
    ds.t[static_cast<std::size_t>(i)] = (i / 2) % 2;
    if (type == dercfr::OutcomeType::binary) {
      ds.yf(i) = i % 2;
    } else {
      ds.yf(i) = g.normal();
    }
  }
  return ds;
}

}  // namespace testing
