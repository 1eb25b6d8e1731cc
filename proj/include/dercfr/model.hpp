#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dercfr/ad.hpp"

namespace dercfr {

enum class OutcomeType { binary, continuous };

std::string to_string(OutcomeType t);
OutcomeType outcome_type_from_string(const std::string& s);

enum class Mode { train, eval };

struct NetworkSpec {
  int input_dim = 1;
  int depth = 1;
  int hidden = 32;
  int output_dim = 1;
  bool batch_norm = false;
  bool rep_normalize = false;

  void validate(const std::string& what) const;
};

enum class OutputActivation { elu, sigmoid, identity };

// Fully connected ELU network.
//
// A representation network has `depth` linear layers (the last one maps to
// output_dim), each followed by optional batch norm and ELU, and an optional
// row-wise L2 normalization of its output. A head network has `depth` hidden
// ELU layers followed by a linear output layer and `out` activation.
class Mlp {
 public:
  enum class Kind { representation, head };

  static constexpr double kBatchNormEps = 1e-5;
  static constexpr double kBatchNormMomentum = 0.99;

  Mlp() = default;
  Mlp(std::string name, Kind kind, const NetworkSpec& spec, OutputActivation out, std::mt19937_64& rng);

  // In train mode batch norm uses the statistics of `x` and folds them into
  // the running averages.
  ad::Tensor forward(ad::Tape& tape, const ad::Tensor& x, Mode mode);

  const std::string& name() const { return name_; }
  Kind kind() const { return kind_; }
  const NetworkSpec& spec() const { return spec_; }
  OutputActivation output_activation() const { return out_; }
  std::size_t num_linear() const { return layers_.size(); }

  // Weight matrices in input-to-output order (in_dim x out_dim each).
  std::vector<ad::Parameter*> weights();
  std::vector<const ad::Parameter*> weights() const;
  std::vector<ad::Parameter*> parameters();

  struct Layer {
    ad::Parameter weight;
    ad::Parameter bias;
    bool has_batch_norm = false;
    ad::Parameter bn_scale;
    ad::Parameter bn_shift;
    Eigen::RowVectorXd running_mean;
    Eigen::RowVectorXd running_var;
  };
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

 private:
  ad::Tensor forward_layers(ad::Tape& tape, const ad::Tensor& x, Mode mode);

  std::string name_;
  Kind kind_ = Kind::representation;
  NetworkSpec spec_;
  OutputActivation out_ = OutputActivation::elu;
  std::vector<Layer> layers_;
};

struct ModelConfig {
  int input_dim = 1;
  // Shared by I, C and A. output_dim is the representation width d.
  NetworkSpec representation;
  // Spec of g_A, h0 and h1 (input/output dims are filled in by the model).
  NetworkSpec outcome_head;
  // Spec of g_I.
  NetworkSpec treatment_head;
  OutcomeType outcome_type = OutcomeType::binary;
};

// Number of leading linear layers whose weights enter the contribution
// product. `all` resolves to the depth of the representation networks.
class ConstrainedLayers {
 public:
  static ConstrainedLayers all() { return ConstrainedLayers(-1); }
  static ConstrainedLayers first(int l) { return ConstrainedLayers(l); }
  bool is_all() const { return count_ < 0; }
  int count() const { return count_; }
  int resolve(std::size_t depth) const;
  std::string str() const;
  static ConstrainedLayers parse(const std::string& s);
  bool operator==(const ConstrainedLayers&) const = default;

 private:
  explicit ConstrainedLayers(int c) : count_(c) {}
  int count_ = -1;
};

struct ContributionProfile {
  Eigen::VectorXd w_i;
  Eigen::VectorXd w_c;
  Eigen::VectorXd w_a;
  int layers = 0;
};

// Row indices of the two treatment arms within a batch.
struct ArmIndex {
  std::vector<ad::Index> control;
  std::vector<ad::Index> treated;

  static ArmIndex from_treatment(std::span<const int> t);
};

struct ForwardPass {
  ad::Tensor rep_i, rep_c, rep_a;
  ad::Tensor t_prob;    // g_I(I(X))
  ad::Tensor y_adjust;  // g_A(A(X))
  ad::Tensor y0, y1;    // h0, h1 on every row (forward_all only)
  ad::Tensor y_factual; // h^{t_i} on row i (forward_factual only)
};

struct Predictions {
  Eigen::VectorXd y0, y1, t_prob, y_adjust;
};

class DeRCFRModel {
 public:
  DeRCFRModel() = default;

  // Initial weights are N(0, 1/fan_in), biases zero, and omega_i is the
  // inverse softplus of 1/n_arm for sample i's arm.
  static DeRCFRModel build(const ModelConfig& cfg, std::span<const int> train_t, std::uint64_t seed);

  ForwardPass forward_all(ad::Tape& tape, const ad::Matrix& x, Mode mode);
  // Heads evaluated only on their own arm's rows; fills y_factual.
  ForwardPass forward_factual(ad::Tape& tape, const ad::Matrix& x, const ArmIndex& arms, Mode mode);

  Predictions predict(const ad::Matrix& x);

  // softplus(rho), n_train x 1.
  ad::Tensor omega(ad::Tape& tape);
  Eigen::VectorXd omega_values() const;

  const ModelConfig& config() const { return cfg_; }
  Mlp& rep_i() { return rep_i_; }
  Mlp& rep_c() { return rep_c_; }
  Mlp& rep_a() { return rep_a_; }
  const Mlp& rep_i() const { return rep_i_; }
  const Mlp& rep_c() const { return rep_c_; }
  const Mlp& rep_a() const { return rep_a_; }
  Mlp& head_t() { return g_i_; }
  Mlp& head_adjust() { return g_a_; }
  Mlp& head0() { return h0_; }
  Mlp& head1() { return h1_; }
  ad::Parameter& rho() { return rho_; }
  const ad::Parameter& rho() const { return rho_; }

  // Every trainable parameter except rho.
  std::vector<ad::Parameter*> network_parameters();
  // Weight matrices of I, C, A, h0, h1, g_I, g_A (no biases, no batch norm).
  std::vector<ad::Parameter*> weight_matrices();
  std::vector<Mlp*> networks();
  std::vector<const Mlp*> networks() const;

 private:
  ModelConfig cfg_;
  Mlp rep_i_, rep_c_, rep_a_;
  Mlp g_i_, g_a_;
  Mlp h0_, h1_;
  ad::Parameter rho_;
};

// Path-magnitude contribution of each input variable: row means of
// |W_1|·|W_2|···|W_l| for each representation network.
ContributionProfile contribution_profile(const DeRCFRModel& model, ConstrainedLayers layers);

struct ContributionTensors {
  ad::Tensor w_i, w_c, w_a;  // m x 1 each
};
// Same quantity recorded on a tape so that losses over it are differentiable.
ContributionTensors contribution_on_tape(ad::Tape& tape, DeRCFRModel& model, ConstrainedLayers layers);

// ---- serialization --------------------------------------------------------

inline constexpr const char* kModelMagic = "DERCFR-MODEL";
inline constexpr int kModelFormatVersion = 1;

using Metadata = std::map<std::string, std::string>;

void save_model(const std::filesystem::path& path, const DeRCFRModel& model, const Metadata& meta = {});

struct LoadedModel {
  DeRCFRModel model;
  Metadata meta;
};
LoadedModel load_model(const std::filesystem::path& path);

}  // namespace dercfr
