#include "dercfr/trainer.hpp"

#include <spdlog/spdlog.h>

#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "dercfr/errors.hpp"

namespace dercfr {

using ad::Matrix;
using ad::Tape;
using ad::Tensor;

// ---- Hyperparams ----------------------------------------------------------

void Hyperparams::validate() const {
  const LossCoefficients& c = coefficients;
  for (double v : {c.alpha, c.beta, c.gamma, c.mu, c.lambda}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("hyperparameters: coefficients must be finite and >= 0");
  }
  for (int d : {depth_rep, depth_y, depth_t}) {
    if (d < 1) throw ConfigError("hyperparameters: depths must be >= 1");
  }
  for (int w : {width_rep, width_y, width_t}) {
    if (w < 1) throw ConfigError("hyperparameters: widths must be >= 1");
  }
  if (!layers.is_all() && layers.count() > depth_rep) {
    throw ConfigError("hyperparameters: layers=" + layers.str() + " exceeds depth_rep=" + std::to_string(depth_rep));
  }
}

ModelConfig Hyperparams::model_config(int input_dim, OutcomeType type) const {
  ModelConfig cfg;
  cfg.input_dim = input_dim;
  cfg.outcome_type = type;
  cfg.representation = {input_dim, depth_rep, width_rep, width_rep, batch_norm, rep_normalize};
  cfg.outcome_head = {2 * width_rep, depth_y, width_y, 1, false, false};
  cfg.treatment_head = {width_rep, depth_t, width_t, 1, false, false};
  return cfg;
}

const std::vector<std::string>& Hyperparams::preset_names() {
  static const std::vector<std::string> names = {"ihdp", "jobs", "twins", "syn"};
  return names;
}

Hyperparams Hyperparams::preset(const std::string& name) {
  Hyperparams hp;
  if (name == "ihdp") {
    hp.layers = ConstrainedLayers::first(2);
    hp.batch_norm = false;
    hp.rep_normalize = true;
    hp.depth_rep = 7, hp.depth_y = 4, hp.depth_t = 1;
    hp.width_rep = 32, hp.width_y = 256, hp.width_t = 256;
    hp.coefficients = {5, 50, 1, 10, 1e-2};
  } else if (name == "jobs") {
    hp.layers = ConstrainedLayers::first(2);
    hp.batch_norm = true;
    hp.rep_normalize = true;
    hp.depth_rep = 5, hp.depth_y = 4, hp.depth_t = 1;
    hp.width_rep = 32, hp.width_y = 128, hp.width_t = 128;
    hp.coefficients = {1e-2, 1, 1e-2, 5, 1e-3};
  } else if (name == "twins") {
    hp.layers = ConstrainedLayers::all();
    hp.batch_norm = true;
    hp.rep_normalize = true;
    hp.depth_rep = 7, hp.depth_y = 7, hp.depth_t = 3;
    hp.width_rep = 64, hp.width_y = 64, hp.width_t = 64;
    hp.coefficients = {1e-2, 1e-4, 1e-4, 5, 5};
  } else if (name == "syn") {
    hp.layers = ConstrainedLayers::all();
    hp.batch_norm = true;
    hp.rep_normalize = false;
    hp.depth_rep = 2, hp.depth_y = 2, hp.depth_t = 3;
    hp.width_rep = 256, hp.width_y = 256, hp.width_t = 256;
    hp.coefficients = {1e-3, 1e-3, 1, 1, 1e-3};
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected ihdp, jobs, twins or syn)");
  }
  return hp;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ParseError("hyperparameters: bad number for " + key + ": '" + v + "'");
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ParseError("hyperparameters: bad integer for " + key + ": '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ParseError("hyperparameters: bad flag for " + key + ": '" + v + "'");
}

std::string fmt_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

}  // namespace

Hyperparams Hyperparams::parse(const std::string& text, const Hyperparams& base) {
  Hyperparams hp = base;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("hyperparameters line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "alpha") hp.coefficients.alpha = parse_double(key, val);
    else if (key == "beta") hp.coefficients.beta = parse_double(key, val);
    else if (key == "gamma") hp.coefficients.gamma = parse_double(key, val);
    else if (key == "mu") hp.coefficients.mu = parse_double(key, val);
    else if (key == "lambda") hp.coefficients.lambda = parse_double(key, val);
    else if (key == "layers") {
      try {
        hp.layers = ConstrainedLayers::parse(val);
      } catch (const std::exception& e) {
        throw ConfigError(std::string("hyperparameters: ") + e.what());
      }
    } else if (key == "batch_norm") hp.batch_norm = parse_bool(key, val);
    else if (key == "rep_normalize") hp.rep_normalize = parse_bool(key, val);
    else if (key == "depth_rep") hp.depth_rep = parse_int(key, val);
    else if (key == "depth_y") hp.depth_y = parse_int(key, val);
    else if (key == "depth_t") hp.depth_t = parse_int(key, val);
    else if (key == "width_rep") hp.width_rep = parse_int(key, val);
    else if (key == "width_y") hp.width_y = parse_int(key, val);
    else if (key == "width_t") hp.width_t = parse_int(key, val);
    else throw ConfigError("hyperparameters line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  hp.validate();
  return hp;
}

Hyperparams Hyperparams::load(const std::string& path, const Hyperparams& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open hyperparameter file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), base);
}

std::string Hyperparams::str() const {
  std::ostringstream o;
  o << "alpha=" << fmt_double(coefficients.alpha) << '\n'
    << "beta=" << fmt_double(coefficients.beta) << '\n'
    << "gamma=" << fmt_double(coefficients.gamma) << '\n'
    << "mu=" << fmt_double(coefficients.mu) << '\n'
    << "lambda=" << fmt_double(coefficients.lambda) << '\n'
    << "layers=" << layers.str() << '\n'
    << "batch_norm=" << (batch_norm ? "true" : "false") << '\n'
    << "rep_normalize=" << (rep_normalize ? "true" : "false") << '\n'
    << "depth_rep=" << depth_rep << '\n'
    << "depth_y=" << depth_y << '\n'
    << "depth_t=" << depth_t << '\n'
    << "width_rep=" << width_rep << '\n'
    << "width_y=" << width_y << '\n'
    << "width_t=" << width_t << '\n';
  return o.str();
}

bool Hyperparams::operator==(const Hyperparams& o) const {
  const auto& a = coefficients;
  const auto& b = o.coefficients;
  return a.alpha == b.alpha && a.beta == b.beta && a.gamma == b.gamma && a.mu == b.mu && a.lambda == b.lambda &&
         layers == o.layers && batch_norm == o.batch_norm && rep_normalize == o.rep_normalize &&
         depth_rep == o.depth_rep && depth_y == o.depth_y && depth_t == o.depth_t && width_rep == o.width_rep &&
         width_y == o.width_y && width_t == o.width_t;
}

LossCoefficients AblationFlags::apply(LossCoefficients c) const {
  if (no_adjustment) c.alpha = 0.0;
  if (no_instrument) c.beta = 0.0;
  if (no_balance) c.gamma = 0.0;
  if (no_orthogonal) c.mu = 0.0;
  return c;
}

std::string AblationFlags::str() const {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += ',';
    s += name;
  };
  add(no_adjustment, "-L_A");
  add(no_instrument, "-L_I");
  add(no_balance, "-L_C_B");
  add(no_orthogonal, "-L_O");
  return s.empty() ? "none" : s;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be > 0");
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
}

// ---- training -------------------------------------------------------------

namespace {

struct IterationTensors {
  Tensor network_objective;
  Tensor omega_objective;
  LossTerms terms;
};

void check_term(double v, const char* name) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite loss term ") + name);
}

Tensor weighted(const Tensor& acc, const Tensor& term, double coefficient) {
  if (coefficient == 0.0) return acc;
  return ad::add(acc, ad::scale(term, coefficient));
}

IterationTensors build_iteration(Tape& tape, DeRCFRModel& model, const Dataset& ds, const LossBatch& batch,
                                 const Hyperparams& hp, const LossCoefficients& c, const KernelSpec& kernel) {
  ForwardPass fp = model.forward_factual(tape, ds.x, batch.arms, Mode::train);
  Tensor omega = model.omega(tape);
  Tensor omega_fixed = tape.detach(omega);
  ContributionTensors w = contribution_on_tape(tape, model, hp.layers);

  // network phase, omega held constant
  Tensor l_r = loss_regression(fp.y_factual, batch, omega_fixed);
  Tensor l_a = loss_adjustment(fp.rep_a, fp.y_adjust, batch, kernel);
  Tensor l_i = loss_instrument(fp.rep_i, fp.t_prob, batch, omega_fixed, kernel);
  Tensor l_o = loss_orthogonal(w);
  Tensor r_w = weight_decay(tape, model);
  Tensor r_o = contribution_sum_penalty(w);

  // omega phase, network outputs held constant
  Tensor l_r_omega = loss_regression(tape.detach(fp.y_factual), batch, omega);
  Tensor l_cb = loss_balance(tape.detach(fp.rep_c), batch, omega, kernel);
  Tensor r_cb = sample_weight_penalty(omega, batch.arms);

  IterationTensors it;
  it.terms = {l_r.item(), l_a.item(), l_i.item(), l_cb.item(), l_o.item(), r_w.item(), r_cb.item(), r_o.item()};
  check_term(it.terms.l_r, "L_R");
  check_term(it.terms.l_a, "L_A");
  check_term(it.terms.l_i, "L_I");
  check_term(it.terms.l_cb, "L_C_B");
  check_term(it.terms.l_o, "L_O");
  check_term(it.terms.r_w, "R_W");
  check_term(it.terms.r_cb, "R_C_B");
  check_term(it.terms.r_o, "R_O");

  Tensor net = l_r;
  net = weighted(net, l_a, c.alpha);
  net = weighted(net, l_i, c.beta);
  net = weighted(net, l_o, c.mu);
  net = weighted(net, ad::add(r_w, r_o), c.lambda);
  it.network_objective = net;

  Tensor om = l_r_omega;
  om = weighted(om, l_cb, c.gamma);
  om = weighted(om, r_cb, c.lambda);
  it.omega_objective = om;
  return it;
}

}  // namespace

TrainResult train(const Dataset& train_set, const Dataset* valid_set, const Hyperparams& hp, const TrainConfig& cfg) {
  cfg.validate();
  hp.validate();
  train_set.validate();
  const auto started = std::chrono::steady_clock::now();

  const LossBatch batch = LossBatch::make(train_set.t, train_set.yf, train_set.outcome_type);
  TrainResult res;
  res.effective = cfg.ablation.apply(hp.coefficients);
  res.model = DeRCFRModel::build(hp.model_config(train_set.dims(), train_set.outcome_type), train_set.t, cfg.seed);
  DeRCFRModel& model = res.model;

  ad::AdamState net_state;
  ad::AdamState omega_state;
  net_state.learning_rate = cfg.learning_rate;
  omega_state.learning_rate = cfg.learning_rate;
  const std::vector<ad::Parameter*> net_params = model.network_parameters();
  const std::vector<ad::Parameter*> omega_params = {&model.rho()};

  res.trajectory.reserve(static_cast<std::size_t>(cfg.iterations));
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    try {
      Tape tape;
      IterationTensors it = build_iteration(tape, model, train_set, batch, hp, res.effective, cfg.kernel);
      res.trajectory.push_back(assemble_losses(it.terms, res.effective));
      tape.backward(it.network_objective);
      ad::adam_step(net_state, net_params);
      tape.backward(it.omega_objective);
      ad::adam_step(omega_state, omega_params);
    } catch (const NumericError& e) {
      throw NumericError("iteration " + std::to_string(iter) + ": " + e.what());
    }
    if (cfg.on_iteration) cfg.on_iteration(iter, res.trajectory.back());
  }

  res.contributions = contribution_profile(model, hp.layers);
  if (valid_set != nullptr && valid_set->size() > 0) {
    Hyperparams eff = hp;
    eff.coefficients = res.effective;
    res.validation_objective = validation_objective(model, *valid_set, eff, cfg.kernel);
  }
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return res;
}

double validation_objective(DeRCFRModel& model, const Dataset& ds, const Hyperparams& hp, const KernelSpec& kernel) {
  const LossBatch batch = LossBatch::make(ds.t, ds.yf, ds.outcome_type);
  Tape tape;
  ForwardPass fp = model.forward_factual(tape, ds.x, batch.arms, Mode::eval);
  Matrix uniform(static_cast<ad::Index>(ds.size()), 1);
  const double w0 = 1.0 / static_cast<double>(batch.arms.control.size());
  const double w1 = 1.0 / static_cast<double>(batch.arms.treated.size());
  for (std::size_t i = 0; i < ds.size(); ++i) uniform(static_cast<ad::Index>(i), 0) = ds.t[i] == 1 ? w1 : w0;
  Tensor omega = tape.constant(std::move(uniform));
  ContributionTensors w = contribution_on_tape(tape, model, hp.layers);
  const LossCoefficients& c = hp.coefficients;
  double v = loss_regression(fp.y_factual, batch, omega).item();
  if (c.alpha != 0.0) v += c.alpha * loss_adjustment(fp.rep_a, fp.y_adjust, batch, kernel).item();
  if (c.beta != 0.0) v += c.beta * loss_instrument(fp.rep_i, fp.t_prob, batch, omega, kernel).item();
  if (c.mu != 0.0) v += c.mu * loss_orthogonal(w).item();
  return v;
}

// ---- search ---------------------------------------------------------------

namespace {

template <typename T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
  if (v.empty()) throw ConfigError("search space has an empty dimension");
  std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
  return v[d(rng)];
}

bool coin(std::mt19937_64& rng) { return std::uniform_int_distribution<int>(0, 1)(rng) == 1; }

template <typename T>
bool member(const std::vector<T>& v, const T& x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

}  // namespace

Hyperparams SearchSpace::sample_capacity(std::mt19937_64& rng) const {
  Hyperparams hp;
  hp.coefficients = {0, 0, 0, 0, 0};
  hp.layers = ConstrainedLayers::all();
  hp.depth_rep = pick(depths, rng);
  hp.depth_y = pick(depths, rng);
  hp.depth_t = pick(depths, rng);
  hp.width_rep = pick(widths, rng);
  hp.width_y = pick(widths, rng);
  hp.width_t = pick(widths, rng);
  hp.batch_norm = coin(rng);
  hp.rep_normalize = coin(rng);
  return hp;
}

Hyperparams SearchSpace::sample_coefficients(std::mt19937_64& rng, const Hyperparams& capacity) const {
  Hyperparams hp = capacity;
  hp.coefficients.alpha = pick(coefficients, rng);
  hp.coefficients.beta = pick(coefficients, rng);
  hp.coefficients.gamma = pick(coefficients, rng);
  hp.coefficients.mu = pick(coefficients, rng);
  hp.coefficients.lambda = pick(coefficients, rng);
  std::vector<ConstrainedLayers> fit;
  for (const auto& l : layers) {
    if (l.is_all() || l.count() <= hp.depth_rep) fit.push_back(l);
  }
  hp.layers = fit.empty() ? ConstrainedLayers::all() : pick(fit, rng);
  return hp;
}

Hyperparams SearchSpace::sample(std::mt19937_64& rng) const { return sample_coefficients(rng, sample_capacity(rng)); }

bool SearchSpace::contains(const Hyperparams& hp) const {
  const auto& c = hp.coefficients;
  for (double v : {c.alpha, c.beta, c.gamma, c.mu, c.lambda}) {
    if (!member(coefficients, v)) return false;
  }
  for (int d : {hp.depth_rep, hp.depth_y, hp.depth_t}) {
    if (!member(depths, d)) return false;
  }
  for (int w : {hp.width_rep, hp.width_y, hp.width_t}) {
    if (!member(widths, w)) return false;
  }
  return member(layers, hp.layers);
}

namespace {

void run_trials(const Splits& splits, const SearchConfig& cfg, std::vector<TrialRecord>& records) {
  parallel_for(static_cast<int>(records.size()), cfg.threads, [&](int k) {
    TrialRecord& rec = records[static_cast<std::size_t>(k)];
    TrainConfig tc = cfg.train;
    tc.seed = rec.seed;
    tc.on_iteration = nullptr;
    const auto started = std::chrono::steady_clock::now();
    try {
      TrainResult r = train(splits.train, &splits.valid, rec.hp, tc);
      rec.objective = r.validation_objective;
      if (!rec.objective || !std::isfinite(*rec.objective)) {
        rec.objective.reset();
        rec.error = "non-finite validation objective";
      }
    } catch (const std::exception& e) {
      rec.error = e.what();
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  });
  for (const TrialRecord& rec : records) {
    if (!rec.error.empty()) spdlog::warn("search trial {} ({}) failed: {}", rec.index, rec.stage, rec.error);
  }
}

const TrialRecord* best_of(const std::vector<TrialRecord>& records, std::size_t from) {
  const TrialRecord* best = nullptr;
  for (std::size_t i = from; i < records.size(); ++i) {
    const TrialRecord& r = records[i];
    if (!r.objective) continue;
    if (best == nullptr || *r.objective < *best->objective) best = &r;
  }
  return best;
}

}  // namespace

SearchResult hyper_search(const Splits& splits, const SearchSpace& space, const SearchConfig& cfg) {
  if (cfg.trials < 1) throw ConfigError("search: trials must be >= 1");
  if (cfg.capacity_trials < 0) throw ConfigError("search: capacity trials must be >= 0");
  std::mt19937_64 rng(cfg.seed);
  SearchResult out;
  int index = 0;
  auto make = [&](const std::string& stage, const Hyperparams& hp) {
    TrialRecord r;
    r.index = index;
    r.stage = stage;
    r.hp = hp;
    r.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(index));
    ++index;
    return r;
  };

  if (cfg.capacity_trials == 0) {
    for (int k = 0; k < cfg.trials; ++k) out.trials.push_back(make("joint", space.sample(rng)));
    run_trials(splits, cfg, out.trials);
  } else {
    for (int k = 0; k < cfg.capacity_trials; ++k) out.trials.push_back(make("capacity", space.sample_capacity(rng)));
    run_trials(splits, cfg, out.trials);
    const TrialRecord* cap = best_of(out.trials, 0);
    if (cap == nullptr) throw NumericError("search: every capacity trial failed");
    const Hyperparams capacity = cap->hp;
    std::vector<TrialRecord> second;
    for (int k = 0; k < cfg.trials; ++k) second.push_back(make("coefficients", space.sample_coefficients(rng, capacity)));
    run_trials(splits, cfg, second);
    out.trials.insert(out.trials.end(), second.begin(), second.end());
  }

  const std::size_t from = cfg.capacity_trials == 0 ? 0 : static_cast<std::size_t>(cfg.capacity_trials);
  const TrialRecord* best = best_of(out.trials, from);
  if (best == nullptr) throw NumericError("search: every trial failed");
  out.best = best->hp;
  out.best_objective = best->objective;
  return out;
}

// ---- ablation -------------------------------------------------------------

const std::vector<std::pair<std::string, AblationFlags>>& ablation_grid() {
  static const std::vector<std::pair<std::string, AblationFlags>> grid = {
      {"full", {}},
      {"-L_O", {false, false, false, true}},
      {"-L_C_B", {false, false, true, false}},
      {"-L_I", {false, true, false, false}},
      {"-L_A", {true, false, false, false}},
  };
  return grid;
}

std::vector<AblationRow> ablate(const Splits& splits, const Hyperparams& hp, const TrainConfig& cfg, int threads) {
  const auto& grid = ablation_grid();
  std::vector<AblationRow> rows(grid.size());
  const Dataset within = Dataset::concat(splits.train, splits.valid);
  parallel_for(static_cast<int>(grid.size()), threads, [&](int k) {
    AblationRow& row = rows[static_cast<std::size_t>(k)];
    row.name = grid[static_cast<std::size_t>(k)].first;
    row.flags = grid[static_cast<std::size_t>(k)].second;
    TrainConfig tc = cfg;
    tc.ablation = row.flags;
    tc.on_iteration = nullptr;
    row.result = train(splits.train, &splits.valid, hp, tc);
    row.within = evaluate(row.result.model, within, Scope::within_sample);
    row.out = evaluate(row.result.model, splits.test, Scope::out_of_sample);
  });
  return rows;
}

// ---- helpers --------------------------------------------------------------

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  // splitmix64 over the combined value
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void parallel_for(int n, int threads, const std::function<void(int)>& body) {
  if (n <= 0) return;
  const int workers = std::max(1, std::min(threads, n));
  if (workers == 1) {
    for (int k = 0; k < n; ++k) body(k);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int k = next++; k < n; k = next++) {
        try {
          body(k);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!first) first = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

}  // namespace dercfr
