#include "dercfr/model.hpp"

#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "dercfr/errors.hpp"

namespace dercfr {

using ad::Index;
using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Tensor;

std::string to_string(OutcomeType t) { return t == OutcomeType::binary ? "binary" : "continuous"; }

OutcomeType outcome_type_from_string(const std::string& s) {
  if (s == "binary") return OutcomeType::binary;
  if (s == "continuous") return OutcomeType::continuous;
  throw ConfigError("unknown outcome type '" + s + "'");
}

void NetworkSpec::validate(const std::string& what) const {
  if (depth < 1) throw ConfigError(what + ": depth must be >= 1");
  if (input_dim < 1 || hidden < 1 || output_dim < 1) throw ConfigError(what + ": dimensions must be >= 1");
}

// ---- Mlp ------------------------------------------------------------------

namespace {

Matrix gaussian_init(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / static_cast<double>(rows)));
  Matrix w(rows, cols);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  return w;
}

}  // namespace

Mlp::Mlp(std::string name, Kind kind, const NetworkSpec& spec, OutputActivation out, std::mt19937_64& rng)
    : name_(std::move(name)), kind_(kind), spec_(spec), out_(out) {
  spec_.validate(name_);
  std::vector<std::pair<int, int>> dims;
  int in = spec.input_dim;
  if (kind == Kind::representation) {
    for (int k = 0; k < spec.depth; ++k) {
      const int o = (k + 1 == spec.depth) ? spec.output_dim : spec.hidden;
      dims.emplace_back(in, o);
      in = o;
    }
  } else {
    for (int k = 0; k < spec.depth; ++k) {
      dims.emplace_back(in, spec.hidden);
      in = spec.hidden;
    }
    dims.emplace_back(in, spec.output_dim);
  }
  const bool head = kind == Kind::head;
  for (std::size_t k = 0; k < dims.size(); ++k) {
    const auto [i, o] = dims[k];
    const std::string prefix = name_ + "." + std::to_string(k);
    Layer layer;
    layer.weight = Parameter(prefix + ".weight", gaussian_init(i, o, rng));
    layer.bias = Parameter(prefix + ".bias", Matrix::Zero(1, o));
    const bool output_layer = head && k + 1 == dims.size();
    layer.has_batch_norm = spec.batch_norm && !output_layer;
    if (layer.has_batch_norm) {
      layer.bn_scale = Parameter(prefix + ".bn_scale", Matrix::Ones(1, o));
      layer.bn_shift = Parameter(prefix + ".bn_shift", Matrix::Zero(1, o));
      layer.running_mean = Eigen::RowVectorXd::Zero(o);
      layer.running_var = Eigen::RowVectorXd::Ones(o);
    }
    layers_.push_back(std::move(layer));
  }
}

Tensor Mlp::forward(Tape& tape, const Tensor& x, Mode mode) {
  if (x.cols() != spec_.input_dim) {
    throw ContractError(name_ + ": expected " + std::to_string(spec_.input_dim) + " input columns, got " +
                        std::to_string(x.cols()));
  }
  try {
    return forward_layers(tape, x, mode);
  } catch (const NumericError& e) {
    throw NumericError("network " + name_ + ": " + e.what());
  }
}

Tensor Mlp::forward_layers(Tape& tape, const Tensor& x, Mode mode) {
  Tensor h = x;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    Layer& layer = layers_[k];
    const bool output_layer = kind_ == Kind::head && k + 1 == layers_.size();
    h = ad::linear(h, tape.parameter(layer.weight), tape.parameter(layer.bias));
    if (layer.has_batch_norm) {
      Tensor scale = tape.parameter(layer.bn_scale);
      Tensor shift = tape.parameter(layer.bn_shift);
      if (mode == Mode::train) {
        Eigen::RowVectorXd mu, var;
        h = ad::batch_norm(h, scale, shift, kBatchNormEps, &mu, &var);
        layer.running_mean = kBatchNormMomentum * layer.running_mean + (1.0 - kBatchNormMomentum) * mu;
        layer.running_var = kBatchNormMomentum * layer.running_var + (1.0 - kBatchNormMomentum) * var;
      } else {
        h = ad::batch_norm_frozen(h, scale, shift, layer.running_mean, layer.running_var, kBatchNormEps);
      }
    }
    if (!output_layer) {
      h = ad::elu(h);
    } else if (out_ == OutputActivation::sigmoid) {
      h = ad::sigmoid(h);
    } else if (out_ == OutputActivation::elu) {
      h = ad::elu(h);
    }
  }
  if (kind_ == Kind::representation && spec_.rep_normalize) h = ad::l2_normalize_rows(h);
  if (!ad::all_finite(h.value())) throw NumericError("non-finite activation");
  return h;
}

std::vector<Parameter*> Mlp::weights() {
  std::vector<Parameter*> out;
  for (Layer& l : layers_) out.push_back(&l.weight);
  return out;
}

std::vector<const Parameter*> Mlp::weights() const {
  std::vector<const Parameter*> out;
  for (const Layer& l : layers_) out.push_back(&l.weight);
  return out;
}

std::vector<Parameter*> Mlp::parameters() {
  std::vector<Parameter*> out;
  for (Layer& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
    if (l.has_batch_norm) {
      out.push_back(&l.bn_scale);
      out.push_back(&l.bn_shift);
    }
  }
  return out;
}

// ---- ConstrainedLayers ----------------------------------------------------

int ConstrainedLayers::resolve(std::size_t depth) const {
  if (is_all()) return static_cast<int>(depth);
  if (count_ == 0) throw ConfigError("constrained layer count must be >= 1");
  if (static_cast<std::size_t>(count_) > depth) {
    throw ConfigError("constrained layer count " + std::to_string(count_) + " exceeds representation depth " +
                      std::to_string(depth));
  }
  return count_;
}

std::string ConstrainedLayers::str() const { return is_all() ? "all" : std::to_string(count_); }

ConstrainedLayers ConstrainedLayers::parse(const std::string& s) {
  if (s == "all") return all();
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || v < 1) {
    throw ConfigError("constrained layers must be a positive integer or 'all', got '" + s + "'");
  }
  return first(v);
}

// ---- ArmIndex -------------------------------------------------------------

ArmIndex ArmIndex::from_treatment(std::span<const int> t) {
  ArmIndex a;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] == 0) {
      a.control.push_back(static_cast<Index>(i));
    } else if (t[i] == 1) {
      a.treated.push_back(static_cast<Index>(i));
    } else {
      throw ContractError("treatment values must be 0 or 1");
    }
  }
  return a;
}

// ---- DeRCFRModel ----------------------------------------------------------

namespace {

struct Assembled {
  Mlp rep_i, rep_c, rep_a, g_i, g_a, h0, h1;
};

Assembled assemble(const ModelConfig& cfg, std::mt19937_64& rng) {
  if (cfg.input_dim < 1) throw ConfigError("input dimension must be >= 1");
  NetworkSpec rep = cfg.representation;
  rep.input_dim = cfg.input_dim;
  NetworkSpec tspec = cfg.treatment_head;
  tspec.input_dim = rep.output_dim;
  tspec.output_dim = 1;
  tspec.rep_normalize = false;
  NetworkSpec aspec = cfg.outcome_head;
  aspec.input_dim = rep.output_dim;
  aspec.output_dim = 1;
  aspec.rep_normalize = false;
  NetworkSpec hspec = aspec;
  hspec.input_dim = 2 * rep.output_dim;
  const OutputActivation y_out =
      cfg.outcome_type == OutcomeType::binary ? OutputActivation::sigmoid : OutputActivation::identity;
  using K = Mlp::Kind;
  Assembled a;
  a.rep_i = Mlp("I", K::representation, rep, OutputActivation::elu, rng);
  a.rep_c = Mlp("C", K::representation, rep, OutputActivation::elu, rng);
  a.rep_a = Mlp("A", K::representation, rep, OutputActivation::elu, rng);
  a.g_i = Mlp("g_I", K::head, tspec, OutputActivation::sigmoid, rng);
  a.g_a = Mlp("g_A", K::head, aspec, y_out, rng);
  a.h0 = Mlp("h0", K::head, hspec, y_out, rng);
  a.h1 = Mlp("h1", K::head, hspec, y_out, rng);
  return a;
}

}  // namespace

DeRCFRModel DeRCFRModel::build(const ModelConfig& cfg, std::span<const int> train_t, std::uint64_t seed) {
  if (train_t.size() < 2) throw ConfigError("need at least two training samples");
  const ArmIndex arms = ArmIndex::from_treatment(train_t);
  if (arms.control.empty() || arms.treated.empty()) {
    throw ConfigError("both treatment arms need at least one training sample");
  }
  std::mt19937_64 rng(seed);
  Assembled a = assemble(cfg, rng);
  DeRCFRModel m;
  m.cfg_ = cfg;
  m.rep_i_ = std::move(a.rep_i);
  m.rep_c_ = std::move(a.rep_c);
  m.rep_a_ = std::move(a.rep_a);
  m.g_i_ = std::move(a.g_i);
  m.g_a_ = std::move(a.g_a);
  m.h0_ = std::move(a.h0);
  m.h1_ = std::move(a.h1);
  const double r0 = ad::softplus_inverse(1.0 / static_cast<double>(arms.control.size()));
  const double r1 = ad::softplus_inverse(1.0 / static_cast<double>(arms.treated.size()));
  Matrix rho(static_cast<Index>(train_t.size()), 1);
  for (std::size_t i = 0; i < train_t.size(); ++i) rho(static_cast<Index>(i), 0) = train_t[i] == 0 ? r0 : r1;
  m.rho_ = Parameter("rho", std::move(rho));
  return m;
}

ForwardPass DeRCFRModel::forward_all(Tape& tape, const Matrix& x, Mode mode) {
  if (x.cols() != cfg_.input_dim) {
    throw ContractError("forward: expected " + std::to_string(cfg_.input_dim) + " covariates, got " +
                        std::to_string(x.cols()));
  }
  ForwardPass fp;
  Tensor input = tape.constant(x);
  fp.rep_i = rep_i_.forward(tape, input, mode);
  fp.rep_c = rep_c_.forward(tape, input, mode);
  fp.rep_a = rep_a_.forward(tape, input, mode);
  fp.t_prob = g_i_.forward(tape, fp.rep_i, mode);
  fp.y_adjust = g_a_.forward(tape, fp.rep_a, mode);
  Tensor z = ad::concat_cols(fp.rep_c, fp.rep_a);
  fp.y0 = h0_.forward(tape, z, mode);
  fp.y1 = h1_.forward(tape, z, mode);
  return fp;
}

ForwardPass DeRCFRModel::forward_factual(Tape& tape, const Matrix& x, const ArmIndex& arms, Mode mode) {
  if (x.cols() != cfg_.input_dim) {
    throw ContractError("forward: expected " + std::to_string(cfg_.input_dim) + " covariates, got " +
                        std::to_string(x.cols()));
  }
  const Index n = x.rows();
  if (static_cast<Index>(arms.control.size() + arms.treated.size()) != n) {
    throw ContractError("forward_factual: arm index does not cover the batch");
  }
  ForwardPass fp;
  Tensor input = tape.constant(x);
  fp.rep_i = rep_i_.forward(tape, input, mode);
  fp.rep_c = rep_c_.forward(tape, input, mode);
  fp.rep_a = rep_a_.forward(tape, input, mode);
  fp.t_prob = g_i_.forward(tape, fp.rep_i, mode);
  fp.y_adjust = g_a_.forward(tape, fp.rep_a, mode);
  Tensor z = ad::concat_cols(fp.rep_c, fp.rep_a);
  Tensor y0 = h0_.forward(tape, ad::gather_rows(z, arms.control), mode);
  Tensor y1 = h1_.forward(tape, ad::gather_rows(z, arms.treated), mode);
  std::vector<Index> position(static_cast<std::size_t>(n));
  Index k = 0;
  for (Index i : arms.control) position[static_cast<std::size_t>(i)] = k++;
  for (Index i : arms.treated) position[static_cast<std::size_t>(i)] = k++;
  fp.y_factual = ad::gather_rows(ad::concat_rows(y0, y1), position);
  return fp;
}

Predictions DeRCFRModel::predict(const Matrix& x) {
  Tape tape;
  ForwardPass fp = forward_all(tape, x, Mode::eval);
  Predictions p;
  p.y0 = fp.y0.value().col(0);
  p.y1 = fp.y1.value().col(0);
  p.t_prob = fp.t_prob.value().col(0);
  p.y_adjust = fp.y_adjust.value().col(0);
  return p;
}

Tensor DeRCFRModel::omega(Tape& tape) { return ad::softplus(tape.parameter(rho_)); }

Eigen::VectorXd DeRCFRModel::omega_values() const {
  return rho_.value.col(0).unaryExpr([](double r) { return ad::softplus_value(r); });
}

std::vector<Mlp*> DeRCFRModel::networks() { return {&rep_i_, &rep_c_, &rep_a_, &h0_, &h1_, &g_i_, &g_a_}; }

std::vector<const Mlp*> DeRCFRModel::networks() const {
  return {&rep_i_, &rep_c_, &rep_a_, &h0_, &h1_, &g_i_, &g_a_};
}

std::vector<Parameter*> DeRCFRModel::network_parameters() {
  std::vector<Parameter*> out;
  for (Mlp* net : networks()) {
    auto p = net->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<Parameter*> DeRCFRModel::weight_matrices() {
  std::vector<Parameter*> out;
  for (Mlp* net : networks()) {
    auto p = net->weights();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

// ---- contributions --------------------------------------------------------

namespace {

Eigen::VectorXd path_contribution(const Mlp& net, int l) {
  const auto w = net.weights();
  Matrix product = w[0]->value.cwiseAbs();
  for (int k = 1; k < l; ++k) product = product * w[static_cast<std::size_t>(k)]->value.cwiseAbs();
  return product.rowwise().mean();
}

Tensor path_contribution(Tape& tape, Mlp& net, int l) {
  const auto w = net.weights();
  Tensor product = ad::abs(tape.parameter(*w[0]));
  for (int k = 1; k < l; ++k) product = ad::matmul(product, ad::abs(tape.parameter(*w[static_cast<std::size_t>(k)])));
  return ad::row_mean(product);
}

}  // namespace

ContributionProfile contribution_profile(const DeRCFRModel& model, ConstrainedLayers layers) {
  const int l = layers.resolve(model.rep_i().num_linear());
  ContributionProfile p;
  p.layers = l;
  p.w_i = path_contribution(model.rep_i(), l);
  p.w_c = path_contribution(model.rep_c(), l);
  p.w_a = path_contribution(model.rep_a(), l);
  return p;
}

ContributionTensors contribution_on_tape(Tape& tape, DeRCFRModel& model, ConstrainedLayers layers) {
  const int l = layers.resolve(model.rep_i().num_linear());
  return {path_contribution(tape, model.rep_i(), l), path_contribution(tape, model.rep_c(), l),
          path_contribution(tape, model.rep_a(), l)};
}

// ---- serialization --------------------------------------------------------

namespace {

void write_double(std::ostream& os, double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  os.write(buf, res.ptr - buf);
}

double parse_double(const std::string& tok, const std::string& ctx) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) throw ParseError(ctx + ": bad number '" + tok + "'");
  return v;
}

void write_spec(std::ostream& os, const std::string& key, const NetworkSpec& s) {
  os << "network " << key << ' ' << s.input_dim << ' ' << s.depth << ' ' << s.hidden << ' ' << s.output_dim << ' '
     << s.batch_norm << ' ' << s.rep_normalize << '\n';
}

void write_matrix(std::ostream& os, const std::string& tag, const std::string& name, const Matrix& m) {
  os << tag << ' ' << name << ' ' << m.rows() << ' ' << m.cols();
  for (Index i = 0; i < m.size(); ++i) {
    os << ' ';
    write_double(os, m.data()[i]);
  }
  os << '\n';
}

bool is_single_line(const std::string& s) { return s.find('\n') == std::string::npos; }

}  // namespace

void save_model(const std::filesystem::path& path, const DeRCFRModel& model, const Metadata& meta) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open model file for writing: " + path.string());
  const ModelConfig& cfg = model.config();
  os << kModelMagic << ' ' << kModelFormatVersion << '\n';
  os << "outcome_type " << to_string(cfg.outcome_type) << '\n';
  os << "input_dim " << cfg.input_dim << '\n';
  write_spec(os, "representation", cfg.representation);
  write_spec(os, "outcome_head", cfg.outcome_head);
  write_spec(os, "treatment_head", cfg.treatment_head);
  for (const auto& [k, v] : meta) {
    if (k.empty() || k.find_first_of(" \n") != std::string::npos || !is_single_line(v)) {
      throw ContractError("metadata key/value not serializable: " + k);
    }
    os << "meta " << k << ' ' << v << '\n';
  }
  for (const Mlp* net : model.networks()) {
    for (const Mlp::Layer& l : net->layers()) {
      write_matrix(os, "param", l.weight.name, l.weight.value);
      write_matrix(os, "param", l.bias.name, l.bias.value);
      if (l.has_batch_norm) {
        write_matrix(os, "param", l.bn_scale.name, l.bn_scale.value);
        write_matrix(os, "param", l.bn_shift.name, l.bn_shift.value);
        write_matrix(os, "stat", l.weight.name + ".running_mean", l.running_mean);
        write_matrix(os, "stat", l.weight.name + ".running_var", l.running_var);
      }
    }
  }
  write_matrix(os, "param", model.rho().name, model.rho().value);
  os << "end\n";
  if (!os) throw std::runtime_error("failed writing model file " + path.string());
}

LoadedModel load_model(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open model file: " + path.string());
  const std::string ctx = "model file " + path.string();
  std::string magic;
  int version = 0;
  is >> magic >> version;
  if (magic != kModelMagic) throw ParseError(ctx + ": bad magic header");
  if (version != kModelFormatVersion) throw ParseError(ctx + ": unsupported format version " + std::to_string(version));

  ModelConfig cfg;
  Metadata meta;
  std::unordered_map<std::string, Matrix> mats;
  std::string line;
  std::getline(is, line);
  bool ended = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "end") {
      ended = true;
      break;
    } else if (tag == "outcome_type") {
      std::string v;
      ls >> v;
      cfg.outcome_type = outcome_type_from_string(v);
    } else if (tag == "input_dim") {
      ls >> cfg.input_dim;
    } else if (tag == "network") {
      std::string key;
      NetworkSpec s;
      ls >> key >> s.input_dim >> s.depth >> s.hidden >> s.output_dim >> s.batch_norm >> s.rep_normalize;
      if (!ls) throw ParseError(ctx + ": malformed network line");
      if (key == "representation") {
        cfg.representation = s;
      } else if (key == "outcome_head") {
        cfg.outcome_head = s;
      } else if (key == "treatment_head") {
        cfg.treatment_head = s;
      } else {
        throw ParseError(ctx + ": unknown network '" + key + "'");
      }
    } else if (tag == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      meta[key] = value;
    } else if (tag == "param" || tag == "stat") {
      std::string name;
      Index rows = 0, cols = 0;
      ls >> name >> rows >> cols;
      if (!ls || rows < 0 || cols < 0) throw ParseError(ctx + ": malformed matrix header for " + name);
      Matrix m(rows, cols);
      std::string tok;
      for (Index i = 0; i < m.size(); ++i) {
        if (!(ls >> tok)) throw ParseError(ctx + ": truncated values for " + name);
        m.data()[i] = parse_double(tok, ctx);
      }
      mats[name] = std::move(m);
    } else {
      throw ParseError(ctx + ": unknown record '" + tag + "'");
    }
  }
  if (!ended) throw ParseError(ctx + ": missing end marker");

  auto take = [&](const std::string& name, Index rows, Index cols) -> Matrix {
    auto it = mats.find(name);
    if (it == mats.end()) throw ParseError(ctx + ": missing " + name);
    if (it->second.rows() != rows || it->second.cols() != cols) throw ParseError(ctx + ": shape mismatch for " + name);
    return it->second;
  };

  auto rho_it = mats.find("rho");
  if (rho_it == mats.end() || rho_it->second.cols() != 1) throw ParseError(ctx + ": missing rho");
  std::vector<int> dummy_t(static_cast<std::size_t>(std::max<Index>(rho_it->second.rows(), 2)), 0);
  dummy_t[1] = 1;
  LoadedModel out;
  out.model = DeRCFRModel::build(cfg, dummy_t, 0);
  out.meta = std::move(meta);
  for (Mlp* net : out.model.networks()) {
    for (Mlp::Layer& l : net->layers()) {
      l.weight.value = take(l.weight.name, l.weight.value.rows(), l.weight.value.cols());
      l.bias.value = take(l.bias.name, l.bias.value.rows(), l.bias.value.cols());
      if (l.has_batch_norm) {
        l.bn_scale.value = take(l.bn_scale.name, 1, l.bn_scale.value.cols());
        l.bn_shift.value = take(l.bn_shift.name, 1, l.bn_shift.value.cols());
        l.running_mean = take(l.weight.name + ".running_mean", 1, l.running_mean.size()).row(0);
        l.running_var = take(l.weight.name + ".running_var", 1, l.running_var.size()).row(0);
      }
    }
  }
  out.model.rho().value = rho_it->second;
  out.model.rho().grad = Matrix::Zero(rho_it->second.rows(), 1);
  return out;
}

}  // namespace dercfr
