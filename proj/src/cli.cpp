#include "dercfr/cli.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>

#include "dercfr/data.hpp"
#include "dercfr/errors.hpp"
#include "dercfr/metrics.hpp"
#include "dercfr/model.hpp"
#include "dercfr/report.hpp"
#include "dercfr/trainer.hpp"

namespace dercfr::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void init_logging() {
  static std::once_flag once;
  std::call_once(once, [] {
    auto logger = spdlog::stderr_color_mt("dercfr");
    logger->set_pattern("%^%l%$: %v");
    spdlog::set_default_logger(logger);
  });
}

int threads_from(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("DERCFR_THREADS")) {
    try {
      const int v = std::stoi(env);
      if (v > 0) return v;
    } catch (const std::exception&) {
    }
    spdlog::warn("ignoring DERCFR_THREADS='{}'", env);
  }
  return 1;
}

// ---- shared option groups -------------------------------------------------

struct DataOpts {
  std::string path;
  std::string outcome;  // "", binary, continuous
  double train = 0.63, valid = 0.27, test = 0.10;

  void add(CLI::App* app) {
    app->add_option("--data", path, "dataset CSV")->required();
    app->add_option("--outcome", outcome, "override outcome type")->check(CLI::IsMember({"binary", "continuous"}));
    app->add_option("--train-frac", train, "training fraction");
    app->add_option("--valid-frac", valid, "validation fraction");
    app->add_option("--test-frac", test, "test fraction");
  }
  Dataset load() const {
    CsvOptions o;
    if (!outcome.empty()) o.outcome_type = outcome_type_from_string(outcome);
    return load_csv(path, o);
  }
  SplitSpec split_spec(std::uint64_t seed) const { return {train, valid, test, seed}; }
};

struct ModelOpts {
  std::string preset;
  std::string hp_file;

  void add(CLI::App* app) {
    app->add_option("--preset", preset, "named hyperparameter preset")
        ->check(CLI::IsMember(Hyperparams::preset_names()));
    app->add_option("--hp-file", hp_file, "key=value hyperparameter file (applied over the preset)");
  }
  Hyperparams resolve() const {
    Hyperparams hp = preset.empty() ? Hyperparams{} : Hyperparams::preset(preset);
    if (!hp_file.empty()) hp = Hyperparams::load(hp_file, hp);
    hp.validate();
    return hp;
  }
  json echo() const {
    return {{"preset", preset.empty() ? json(nullptr) : json(preset)},
            {"hp_file", hp_file.empty() ? json(nullptr) : json(hp_file)}};
  }
};

struct RunOpts {
  std::uint64_t seed = 0;
  int reps = 1;
  int threads = 0;
  int iterations = 3000;
  double lr = 1e-3;
  std::string kernel = "linear";
  std::string out;
  bool verbose = false;

  void add(CLI::App* app, bool with_reps) {
    app->add_option("--seed", seed, "base seed");
    if (with_reps) app->add_option("--reps", reps, "replications with derived seeds")->check(CLI::PositiveNumber);
    app->add_option("--threads", threads, "worker threads (default: DERCFR_THREADS or 1)")->check(CLI::PositiveNumber);
    app->add_option("--iterations", iterations, "training iterations")->check(CLI::PositiveNumber);
    app->add_option("--lr", lr, "Adam learning rate")->check(CLI::PositiveNumber);
    app->add_option("--kernel", kernel, "linear | rbf | rbf:<bandwidth>");
    app->add_option("--out", out, "output directory")->required();
    app->add_flag("--verbose", verbose, "log losses every 100 iterations");
  }
  TrainConfig train_config(std::uint64_t s) const {
    TrainConfig tc;
    tc.learning_rate = lr;
    tc.iterations = iterations;
    try {
      tc.kernel = KernelSpec::parse(kernel);
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
    tc.seed = s;
    if (verbose) {
      tc.on_iteration = [s](int k, const LossReport& r) {
        if ((k + 1) % 100 == 0) spdlog::info("seed {} iteration {}: L={} L_R={}", s, k + 1, r.total, r.l_r);
      };
    }
    return tc;
  }
  std::uint64_t rep_seed(int k) const { return reps == 1 ? seed : derive_seed(seed, static_cast<std::uint64_t>(k)); }
  fs::path rep_dir(int k) const { return reps == 1 ? fs::path(out) : fs::path(out) / ("rep_" + std::to_string(k)); }
};

std::string roles_string(const std::vector<VariableRole>& roles) {
  std::string s;
  for (std::size_t k = 0; k < roles.size(); ++k) {
    if (k) s += ',';
    s += to_string(roles[k]);
  }
  return s;
}

std::vector<VariableRole> roles_from_string(const std::string& s) {
  std::vector<VariableRole> roles;
  if (s.empty()) return roles;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) roles.push_back(role_from_string(tok));
  return roles;
}

json metrics_json(const EvalReport& within, const EvalReport& out) {
  return {{"within_sample", to_json(within)}, {"out_of_sample", to_json(out)}};
}

void collect(std::map<std::string, std::vector<double>>& acc, const std::string& prefix, const EvalReport& r) {
  if (r.pehe) acc[prefix + "pehe"].push_back(*r.pehe);
  if (r.ate_error) acc[prefix + "ate_error"].push_back(*r.ate_error);
  if (r.policy_risk) acc[prefix + "policy_risk"].push_back(*r.policy_risk);
  if (r.att_error) acc[prefix + "att_error"].push_back(*r.att_error);
}

json aggregate_json(const std::map<std::string, std::vector<double>>& acc) {
  json j = json::object();
  for (const auto& [k, v] : acc) j[k] = to_json(mean_std(v));
  return j;
}

std::string opt_cell(const std::optional<double>& v) { return v ? format_number(*v) : ""; }

// ---- gen ------------------------------------------------------------------

struct GenCmd {
  SyntheticConfig cfg;
  std::string out;
  std::string file = "syn.csv";

  void add(CLI::App* app) {
    app->add_option("--mi", cfg.m_i, "instrumental dims");
    app->add_option("--mc", cfg.m_c, "confounder dims");
    app->add_option("--ma", cfg.m_a, "adjustment dims");
    app->add_option("--md", cfg.m_d, "noise dims");
    app->add_option("--n", cfg.n, "sample count");
    app->add_option("--seed", cfg.seed, "generator seed");
    app->add_option("--out", out, "output directory")->required();
    app->add_option("--file", file, "file name inside the output directory");
  }
  int run(std::ostream& os) const {
    cfg.validate();
    const Dataset ds = generate_synthetic(cfg);
    fs::create_directories(out);
    const fs::path path = fs::path(out) / file;
    save_csv(ds, path);
    os << "wrote " << path.string() << " (" << ds.size() << " rows, " << ds.dims() << " covariates, "
       << ds.treated_count() << " treated)\n";
    return kExitOk;
  }
};

// ---- train ----------------------------------------------------------------

struct TrainCmd {
  DataOpts data;
  ModelOpts model;
  RunOpts run_opts;

  void add(CLI::App* app) {
    data.add(app);
    model.add(app);
    run_opts.add(app, true);
  }

  int run(std::ostream& os) const {
    (void)run_opts.train_config(0);  // surface kernel errors before any work
    const Hyperparams hp = model.resolve();
    const Dataset ds = data.load();
    const int reps = run_opts.reps;
    std::vector<json> results(static_cast<std::size_t>(reps));
    std::vector<std::pair<EvalReport, EvalReport>> evals(static_cast<std::size_t>(reps));
    parallel_for(reps, threads_from(run_opts.threads), [&](int k) {
      const std::uint64_t seed = run_opts.rep_seed(k);
      const SplitSpec sp = data.split_spec(seed);
      const Splits s = split(ds, sp);
      const TrainConfig tc = run_opts.train_config(seed);
      TrainResult r = train(s.train, &s.valid, hp, tc);
      const EvalReport within = evaluate(r.model, Dataset::concat(s.train, s.valid), Scope::within_sample);
      const EvalReport out = evaluate(r.model, s.test, Scope::out_of_sample);
      evals[static_cast<std::size_t>(k)] = {within, out};

      const fs::path dir = run_opts.rep_dir(k);
      fs::create_directories(dir);
      Metadata meta = {{"seed", std::to_string(seed)},
                       {"split_seed", std::to_string(sp.seed)},
                       {"split_train", format_number(sp.train)},
                       {"split_valid", format_number(sp.valid)},
                       {"split_test", format_number(sp.test)},
                       {"data_rows", std::to_string(ds.size())},
                       {"layers", hp.layers.str()},
                       {"kernel", tc.kernel.str()}};
      if (!ds.roles.empty()) meta["roles"] = roles_string(ds.roles);
      save_model(dir / "model.dercfr", r.model, meta);
      write_losses_csv(dir / "losses.csv", r.trajectory);
      write_identification_csv(dir / "contributions.csv", identification_report(r.contributions, ds.roles));

      json j = {{"command", "train"},
                {"data", data.path},
                {"model", model.echo()},
                {"hyperparams", to_json(hp)},
                {"train_config", to_json(tc)},
                {"effective_coefficients",
                 {{"alpha", r.effective.alpha},
                  {"beta", r.effective.beta},
                  {"gamma", r.effective.gamma},
                  {"mu", r.effective.mu},
                  {"lambda", r.effective.lambda}}},
                {"split", to_json(sp)},
                {"seed", seed},
                {"replication", k},
                {"iterations_run", r.trajectory.size()},
                {"final_loss", r.trajectory.empty() ? json(nullptr) : json(r.trajectory.back().total)},
                {"validation_objective",
                 r.validation_objective ? json(*r.validation_objective) : json(nullptr)},
                {"metrics", metrics_json(within, out)},
                {"wall_clock_seconds", r.wall_seconds}};
      write_json(dir / "result.json", j);
      results[static_cast<std::size_t>(k)] = j;
    });

    if (reps > 1) {
      std::map<std::string, std::vector<double>> acc;
      for (const auto& [w, o] : evals) {
        collect(acc, "within_sample.", w);
        collect(acc, "out_of_sample.", o);
      }
      json summary = {{"command", "train"},
                      {"data", data.path},
                      {"model", model.echo()},
                      {"hyperparams", to_json(hp)},
                      {"train_config", to_json(run_opts.train_config(run_opts.seed))},
                      {"reps", reps},
                      {"base_seed", run_opts.seed},
                      {"aggregate", aggregate_json(acc)}};
      write_json(fs::path(run_opts.out) / "summary.json", summary);
    }
    for (int k = 0; k < reps; ++k) {
      const auto& [w, o] = evals[static_cast<std::size_t>(k)];
      os << "rep " << k << ": within-sample pehe " << opt_cell(w.pehe) << ", out-of-sample pehe " << opt_cell(o.pehe)
         << '\n';
    }
    return kExitOk;
  }
};

// ---- eval -----------------------------------------------------------------

struct EvalCmd {
  std::string model_path;
  std::string data_path;
  std::string out;
  bool whole = false;

  void add(CLI::App* app) {
    app->add_option("--model", model_path, "trained model file")->required();
    app->add_option("--data", data_path, "dataset CSV")->required();
    app->add_option("--out", out, "output directory")->required();
    app->add_flag("--whole", whole, "score every row as out-of-sample instead of re-deriving the training split");
  }

  int run(std::ostream& os) const {
    LoadedModel lm = load_model(model_path);
    CsvOptions o;
    o.outcome_type = lm.model.config().outcome_type;
    const Dataset ds = load_csv(data_path, o);
    if (ds.dims() != lm.model.config().input_dim) {
      throw ConfigError("data has " + std::to_string(ds.dims()) + " covariates but the model expects " +
                        std::to_string(lm.model.config().input_dim));
    }
    json j = {{"command", "eval"}, {"model", model_path}, {"data", data_path}, {"model_meta", lm.meta}};
    const auto& meta = lm.meta;
    const bool has_split = meta.count("split_seed") && meta.count("split_train") && meta.count("split_valid") &&
                           meta.count("split_test") && meta.count("data_rows");
    if (!whole && has_split) {
      if (std::stoull(meta.at("data_rows")) != ds.size()) {
        throw ConfigError("data has " + std::to_string(ds.size()) + " rows but the model was trained on a " +
                          meta.at("data_rows") + "-row dataset (use --whole to score it as new data)");
      }
      const SplitSpec sp{std::stod(meta.at("split_train")), std::stod(meta.at("split_valid")),
                         std::stod(meta.at("split_test")), std::stoull(meta.at("split_seed"))};
      const Splits s = split(ds, sp);
      const EvalReport within = evaluate(lm.model, Dataset::concat(s.train, s.valid), Scope::within_sample);
      const EvalReport outr = evaluate(lm.model, s.test, Scope::out_of_sample);
      j["split"] = to_json(sp);
      j["metrics"] = metrics_json(within, outr);
      os << "within-sample pehe " << opt_cell(within.pehe) << ", out-of-sample pehe " << opt_cell(outr.pehe) << '\n';
    } else {
      const EvalReport outr = evaluate(lm.model, ds, Scope::out_of_sample);
      j["split"] = nullptr;
      j["metrics"] = {{"within_sample", nullptr}, {"out_of_sample", to_json(outr)}};
      os << "pehe " << opt_cell(outr.pehe) << '\n';
    }
    fs::create_directories(out);
    write_json(fs::path(out) / "metrics.json", j);
    return kExitOk;
  }
};

// ---- ablate ---------------------------------------------------------------

struct AblateCmd {
  DataOpts data;
  ModelOpts model;
  RunOpts run_opts;

  void add(CLI::App* app) {
    data.add(app);
    model.add(app);
    run_opts.add(app, true);
  }

  int run(std::ostream& os) const {
    (void)run_opts.train_config(0);
    const Hyperparams hp = model.resolve();
    const Dataset ds = data.load();
    const int threads = threads_from(run_opts.threads);
    const auto& grid = ablation_grid();

    fs::create_directories(run_opts.out);
    std::ofstream runs(fs::path(run_opts.out) / "ablation_runs.csv");
    if (!runs) throw ParseError("cannot write " + (fs::path(run_opts.out) / "ablation_runs.csv").string());
    runs << "rep,seed,row,alpha,beta,gamma,mu,lambda,pehe_within,pehe_out,ate_within,ate_out,policy_risk_within,"
            "policy_risk_out,att_within,att_out,validation_objective,final_loss\n";

    std::vector<std::map<std::string, std::vector<double>>> acc(grid.size());
    json per_rep = json::array();
    for (int k = 0; k < run_opts.reps; ++k) {
      const std::uint64_t seed = run_opts.rep_seed(k);
      const Splits s = split(ds, data.split_spec(seed));
      const std::vector<AblationRow> rows = ablate(s, hp, run_opts.train_config(seed), threads);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const AblationRow& row = rows[r];
        const LossCoefficients& c = row.result.effective;
        runs << k << ',' << seed << ',' << row.name << ',' << format_number(c.alpha) << ',' << format_number(c.beta)
             << ',' << format_number(c.gamma) << ',' << format_number(c.mu) << ',' << format_number(c.lambda) << ','
             << opt_cell(row.within.pehe) << ',' << opt_cell(row.out.pehe) << ',' << opt_cell(row.within.ate_error)
             << ',' << opt_cell(row.out.ate_error) << ',' << opt_cell(row.within.policy_risk) << ','
             << opt_cell(row.out.policy_risk) << ',' << opt_cell(row.within.att_error) << ','
             << opt_cell(row.out.att_error) << ',' << opt_cell(row.result.validation_objective) << ','
             << format_number(row.result.trajectory.back().total) << '\n';
        collect(acc[r], "within_sample.", row.within);
        collect(acc[r], "out_of_sample.", row.out);
        per_rep.push_back({{"rep", k},
                           {"seed", seed},
                           {"row", row.name},
                           {"metrics", metrics_json(row.within, row.out)},
                           {"wall_clock_seconds", row.result.wall_seconds}});
      }
    }

    std::ofstream table(fs::path(run_opts.out) / "ablation.csv");
    if (!table) throw ParseError("cannot write " + (fs::path(run_opts.out) / "ablation.csv").string());
    table << "row,L_A,L_I,L_C_B,L_O,reps,pehe_within_mean,pehe_within_std,pehe_out_mean,pehe_out_std,"
             "ate_within_mean,ate_within_std,ate_out_mean,ate_out_std\n";
    json rows_json = json::array();
    for (std::size_t r = 0; r < grid.size(); ++r) {
      const AblationFlags& f = grid[r].second;
      auto cell = [&](const std::string& key) {
        const auto it = acc[r].find(key);
        if (it == acc[r].end()) return std::string(",");
        const MeanStd m = mean_std(it->second);
        return format_number(m.mean) + "," + format_number(m.std);
      };
      table << grid[r].first << ',' << !f.no_adjustment << ',' << !f.no_instrument << ',' << !f.no_balance << ','
            << !f.no_orthogonal << ',' << run_opts.reps << ',' << cell("within_sample.pehe") << ','
            << cell("out_of_sample.pehe") << ',' << cell("within_sample.ate_error") << ','
            << cell("out_of_sample.ate_error") << '\n';
      rows_json.push_back({{"row", grid[r].first}, {"aggregate", aggregate_json(acc[r])}});
      const auto it = acc[r].find("within_sample.pehe");
      os << grid[r].first << ": within-sample pehe "
         << (it == acc[r].end() ? std::string("n/a") : format_number(mean_std(it->second).mean)) << '\n';
    }
    json j = {{"command", "ablate"},
              {"data", data.path},
              {"model", model.echo()},
              {"hyperparams", to_json(hp)},
              {"train_config", to_json(run_opts.train_config(run_opts.seed))},
              {"reps", run_opts.reps},
              {"base_seed", run_opts.seed},
              {"rows", rows_json},
              {"runs", per_rep}};
    write_json(fs::path(run_opts.out) / "ablation.json", j);
    return kExitOk;
  }
};

// ---- search ---------------------------------------------------------------

struct SearchCmd {
  DataOpts data;
  RunOpts run_opts;
  int trials = 20;
  int capacity_trials = 0;

  void add(CLI::App* app) {
    data.add(app);
    run_opts.add(app, false);
    app->add_option("--trials", trials, "random configurations to train")->check(CLI::PositiveNumber);
    app->add_option("--capacity-trials", capacity_trials, "capacity-stage trials before the coefficient stage")
        ->check(CLI::NonNegativeNumber);
  }

  int run(std::ostream& os) const {
    (void)run_opts.train_config(0);
    const Dataset ds = data.load();
    const SplitSpec sp = data.split_spec(run_opts.seed);
    const Splits s = split(ds, sp);
    SearchConfig sc;
    sc.trials = trials;
    sc.capacity_trials = capacity_trials;
    sc.seed = run_opts.seed;
    sc.threads = threads_from(run_opts.threads);
    sc.train = run_opts.train_config(run_opts.seed);
    const SearchResult res = hyper_search(s, SearchSpace{}, sc);

    fs::create_directories(run_opts.out);
    std::ofstream csv(fs::path(run_opts.out) / "trials.csv");
    if (!csv) throw ParseError("cannot write " + (fs::path(run_opts.out) / "trials.csv").string());
    csv << "trial,stage,seed,objective,error,alpha,beta,gamma,mu,lambda,layers,batch_norm,rep_normalize,depth_rep,"
           "depth_y,depth_t,width_rep,width_y,width_t,wall_clock_seconds\n";
    json trials_json = json::array();
    for (const TrialRecord& t : res.trials) {
      const auto& c = t.hp.coefficients;
      std::string err = t.error;
      for (char& ch : err) {
        if (ch == ',' || ch == '\n' || ch == '"') ch = ' ';
      }
      csv << t.index << ',' << t.stage << ',' << t.seed << ',' << opt_cell(t.objective) << ',' << err << ','
          << format_number(c.alpha) << ',' << format_number(c.beta) << ',' << format_number(c.gamma) << ','
          << format_number(c.mu) << ',' << format_number(c.lambda) << ',' << t.hp.layers.str() << ','
          << t.hp.batch_norm << ',' << t.hp.rep_normalize << ',' << t.hp.depth_rep << ',' << t.hp.depth_y << ','
          << t.hp.depth_t << ',' << t.hp.width_rep << ',' << t.hp.width_y << ',' << t.hp.width_t << ','
          << format_number(t.wall_seconds) << '\n';
      trials_json.push_back({{"trial", t.index},
                             {"stage", t.stage},
                             {"seed", t.seed},
                             {"objective", t.objective ? json(*t.objective) : json(nullptr)},
                             {"error", t.error},
                             {"hyperparams", to_json(t.hp)}});
    }
    write_text(fs::path(run_opts.out) / "best.hp", res.best.str());
    json j = {{"command", "search"},
              {"data", data.path},
              {"split", to_json(sp)},
              {"train_config", to_json(sc.train)},
              {"trials", trials},
              {"capacity_trials", capacity_trials},
              {"seed", run_opts.seed},
              {"best", to_json(res.best)},
              {"best_objective", res.best_objective ? json(*res.best_objective) : json(nullptr)},
              {"records", trials_json}};
    write_json(fs::path(run_opts.out) / "search.json", j);
    os << "best validation objective " << opt_cell(res.best_objective) << '\n';
    return kExitOk;
  }
};

// ---- report ---------------------------------------------------------------

struct ReportCmd {
  std::string model_path;
  std::string out;
  std::string layers;

  void add(CLI::App* app) {
    app->add_option("--model", model_path, "trained model file")->required();
    app->add_option("--out", out, "output directory")->required();
    app->add_option("--layers", layers, "constrained layers (default: the training value)");
  }

  int run(std::ostream& os) const {
    LoadedModel lm = load_model(model_path);
    std::string l = layers;
    if (l.empty()) l = lm.meta.count("layers") ? lm.meta.at("layers") : "all";
    const ConstrainedLayers cl = ConstrainedLayers::parse(l);
    const std::vector<VariableRole> roles =
        lm.meta.count("roles") ? roles_from_string(lm.meta.at("roles")) : std::vector<VariableRole>{};
    const IdentificationReport rep = identification_report(contribution_profile(lm.model, cl), roles);
    fs::create_directories(out);
    write_identification_csv(fs::path(out) / "identification.csv", rep);
    json j = to_json(rep);
    j["command"] = "report";
    j["model"] = model_path;
    j["layers"] = cl.str();
    write_json(fs::path(out) / "radar.json", j);
    if (rep.summary) {
      const char* names[] = {"I", "C", "A"};
      for (std::size_t f = 0; f < 3; ++f) {
        const FactorSummary& s = (*rep.summary)[f];
        os << names[f] << ": true " << format_number(s.true_mean) << ", other " << format_number(s.other_mean)
           << ", ratio " << format_number(s.ratio) << '\n';
      }
    } else {
      os << "no role labels; wrote the per-variable table only\n";
    }
    return kExitOk;
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  init_logging();
  CLI::App app{"Decomposed representations for counterfactual regression", "dercfr"};
  app.require_subcommand(1);
  GenCmd gen;
  TrainCmd train_cmd;
  EvalCmd eval_cmd;
  AblateCmd ablate_cmd;
  SearchCmd search_cmd;
  ReportCmd report_cmd;
  CLI::App* g = app.add_subcommand("gen", "generate a synthetic dataset");
  gen.add(g);
  CLI::App* t = app.add_subcommand("train", "train a model");
  train_cmd.add(t);
  CLI::App* e = app.add_subcommand("eval", "evaluate a trained model");
  eval_cmd.add(e);
  CLI::App* a = app.add_subcommand("ablate", "train the five ablation variants");
  ablate_cmd.add(a);
  CLI::App* s = app.add_subcommand("search", "random hyperparameter search");
  search_cmd.add(s);
  CLI::App* r = app.add_subcommand("report", "variable identification report");
  report_cmd.add(r);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (g->parsed()) return gen.run(out);
    if (t->parsed()) return train_cmd.run(out);
    if (e->parsed()) return eval_cmd.run(out);
    if (a->parsed()) return ablate_cmd.run(out);
    if (s->parsed()) return search_cmd.run(out);
    if (r->parsed()) return report_cmd.run(out);
  } catch (const UsageError& ex) {
    err << "error: " << ex.what() << '\n' << app.help();
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitRuntime;
  }
  err << app.help();
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int k = 1; k < argc; ++k) args.emplace_back(argv[k]);
  return run(args, std::cout, std::cerr);
}

}  // namespace dercfr::cli
