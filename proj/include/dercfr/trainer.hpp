#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dercfr/data.hpp"
#include "dercfr/losses.hpp"
#include "dercfr/metrics.hpp"
#include "dercfr/model.hpp"

namespace dercfr {

struct Hyperparams {
  LossCoefficients coefficients{1e-3, 1e-3, 1.0, 1.0, 1e-3};
  ConstrainedLayers layers = ConstrainedLayers::all();
  bool batch_norm = true;
  bool rep_normalize = false;
  int depth_rep = 2, depth_y = 2, depth_t = 3;
  int width_rep = 256, width_y = 256, width_t = 256;

  void validate() const;
  ModelConfig model_config(int input_dim, OutcomeType type) const;

  // ihdp, jobs, twins, syn
  static Hyperparams preset(const std::string& name);
  static const std::vector<std::string>& preset_names();

  // One `key=value` per line; `#` starts a comment. Keys absent from the
  // text keep the value from `base`.
  static Hyperparams parse(const std::string& text, const Hyperparams& base);
  static Hyperparams load(const std::string& path, const Hyperparams& base);
  std::string str() const;

  bool operator==(const Hyperparams&) const;
};

struct AblationFlags {
  bool no_adjustment = false;  // alpha = 0
  bool no_instrument = false;  // beta = 0
  bool no_balance = false;     // gamma = 0
  bool no_orthogonal = false;  // mu = 0

  LossCoefficients apply(LossCoefficients c) const;
  std::string str() const;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int iterations = 3000;
  KernelSpec kernel = KernelSpec::linear();
  std::uint64_t seed = 0;
  AblationFlags ablation;
  // Called after every iteration with the 0-based index.
  std::function<void(int, const LossReport&)> on_iteration;

  void validate() const;
};

struct TrainResult {
  DeRCFRModel model;
  std::vector<LossReport> trajectory;
  ContributionProfile contributions;
  double wall_seconds = 0.0;
  // Coefficients actually used after ablation flags.
  LossCoefficients effective;
  // Validation objective, present when a validation set was given.
  std::optional<double> validation_objective;
};

// Full-batch alternating optimization: per iteration one Adam step on the
// network parameters for L_{-omega}, then one Adam step on rho for L_omega.
TrainResult train(const Dataset& train_set, const Dataset* valid_set, const Hyperparams& hp, const TrainConfig& cfg);

// L_R + alpha L_A + beta L_I + mu L_O on `ds` with uniform weights 1/n_arm,
// batch norm in eval mode.
double validation_objective(DeRCFRModel& model, const Dataset& ds, const Hyperparams& hp, const KernelSpec& kernel);

// ---- hyperparameter search ------------------------------------------------

struct SearchSpace {
  std::vector<double> coefficients{1e-3, 1e-2, 1.0, 5.0, 10.0, 20.0, 50.0};
  std::vector<int> depths{1, 2, 3, 5, 7};
  std::vector<int> widths{32, 64, 128, 256};
  std::vector<ConstrainedLayers> layers{ConstrainedLayers::first(2), ConstrainedLayers::all()};

  Hyperparams sample(std::mt19937_64& rng) const;
  Hyperparams sample_capacity(std::mt19937_64& rng) const;
  Hyperparams sample_coefficients(std::mt19937_64& rng, const Hyperparams& capacity) const;
  bool contains(const Hyperparams& hp) const;
};

struct SearchConfig {
  int trials = 20;
  // > 0 runs a capacity stage with zero coefficients first.
  int capacity_trials = 0;
  std::uint64_t seed = 0;
  int threads = 1;
  TrainConfig train;
};

struct TrialRecord {
  int index = 0;
  std::string stage;  // "joint", "capacity" or "coefficients"
  Hyperparams hp;
  std::uint64_t seed = 0;
  std::optional<double> objective;
  std::string error;
  double wall_seconds = 0.0;
};

struct SearchResult {
  Hyperparams best;
  std::optional<double> best_objective;
  std::vector<TrialRecord> trials;
};

SearchResult hyper_search(const Splits& splits, const SearchSpace& space, const SearchConfig& cfg);

// ---- ablation -------------------------------------------------------------

struct AblationRow {
  std::string name;  // full, -L_O, -L_C_B, -L_I, -L_A
  AblationFlags flags;
  TrainResult result;
  EvalReport within, out;
};

const std::vector<std::pair<std::string, AblationFlags>>& ablation_grid();

std::vector<AblationRow> ablate(const Splits& splits, const Hyperparams& hp, const TrainConfig& cfg, int threads = 1);

// ---- helpers --------------------------------------------------------------

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

// Runs body(0..n-1) on up to `threads` workers. The first exception is
// rethrown after all workers finish.
void parallel_for(int n, int threads, const std::function<void(int)>& body);

}  // namespace dercfr
