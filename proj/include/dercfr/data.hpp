#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dercfr/ad.hpp"
#include "dercfr/model.hpp"

namespace dercfr {

enum class VariableRole { instrumental, confounder, adjustment, noise };

std::string to_string(VariableRole r);
VariableRole role_from_string(const std::string& s);

struct SyntheticConfig {
  int m_i = 8;
  int m_c = 8;
  int m_a = 8;
  int m_d = 2;
  int n = 3000;
  std::uint64_t seed = 0;

  void validate() const;
  int input_dim() const { return m_i + m_c + m_a + m_d; }
  // Syn_<m_I>_<m_C>_<m_A>_<n>
  std::string name() const;
};

// Coefficients drawn by the generator, kept for re-simulation.
struct GeneratorParams {
  SyntheticConfig config;
  Eigen::VectorXd theta_t;   // m_I + m_C
  Eigen::VectorXd theta_y0;  // m_C + m_A
  Eigen::VectorXd theta_y1;  // m_C + m_A
  double z0_mean = 0.0;
  double z1_mean = 0.0;
};

struct Dataset {
  ad::Matrix x;
  std::vector<int> t;
  Eigen::VectorXd yf;
  std::optional<Eigen::VectorXd> y0;
  std::optional<Eigen::VectorXd> y1;
  // Randomized-subsample flag per unit (Jobs-style data).
  std::optional<std::vector<int>> rct;
  // Ground-truth role per covariate column; empty when unknown.
  std::vector<VariableRole> roles;
  OutcomeType outcome_type = OutcomeType::continuous;
  std::optional<GeneratorParams> generator;

  std::size_t size() const { return t.size(); }
  int dims() const { return static_cast<int>(x.cols()); }
  bool has_potential_outcomes() const { return y0.has_value() && y1.has_value(); }
  std::size_t treated_count() const;

  Dataset subset(const std::vector<std::size_t>& rows) const;
  // Concatenation of rows of `a` then `b` (same schema).
  static Dataset concat(const Dataset& a, const Dataset& b);

  // Throws ContractError on inconsistent lengths or non-binary treatments.
  void validate() const;
};

Dataset generate_synthetic(const SyntheticConfig& cfg);

struct SplitSpec {
  double train = 0.63;
  double valid = 0.27;
  double test = 0.10;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Splits {
  Dataset train, valid, test;
  std::vector<std::size_t> train_rows, valid_rows, test_rows;
};

// Uniform random partition. Valid/test get floor(frac * n) rows, train the
// remainder. Throws SplitError on a part with < 2 rows or a one-arm train set.
Splits split(const Dataset& ds, const SplitSpec& spec);

// ---- CSV interchange ------------------------------------------------------

// Writes `x1..xm,t,yf[,y0,y1][,e]` plus the `<stem>.meta` sidecar.
void save_csv(const Dataset& ds, const std::filesystem::path& path);

struct CsvOptions {
  std::optional<OutcomeType> outcome_type;
  // Read `<stem>.meta` when it exists.
  bool read_meta = true;
};

Dataset load_csv(const std::filesystem::path& path, const CsvOptions& opts = {});

std::filesystem::path meta_path_for(const std::filesystem::path& csv);

// ---- Twins ----------------------------------------------------------------

struct TwinsAugmentation {
  Dataset data;
  Eigen::VectorXd propensity;
  Eigen::VectorXd w;
};

// Prepends 10 Binomial(5, 0.5) covariates, max-normalizes every column and
// resamples t ~ Bern(sigmoid(w^T x + noise)), w ~ U(-0.1, 0.1), noise with
// variance 0.1. Needs both potential outcomes.
TwinsAugmentation augment_twins(const Dataset& ds, std::uint64_t seed);

inline constexpr int kTwinsExtraCovariates = 10;

}  // namespace dercfr
