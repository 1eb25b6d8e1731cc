#include "dercfr/data.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "dercfr/errors.hpp"

namespace dercfr {

using ad::Index;

std::string to_string(VariableRole r) {
  switch (r) {
    case VariableRole::instrumental:
      return "I";
    case VariableRole::confounder:
      return "C";
    case VariableRole::adjustment:
      return "A";
    case VariableRole::noise:
      return "noise";
  }
  return "noise";
}

VariableRole role_from_string(const std::string& s) {
  if (s == "I") return VariableRole::instrumental;
  if (s == "C") return VariableRole::confounder;
  if (s == "A") return VariableRole::adjustment;
  if (s == "noise" || s == "D") return VariableRole::noise;
  throw ParseError("unknown variable role '" + s + "'");
}

void SyntheticConfig::validate() const {
  if (m_i < 1 || m_c < 1 || m_a < 1) throw ConfigError("synthetic: m_I, m_C, m_A must be >= 1");
  if (m_d < 0) throw ConfigError("synthetic: m_D must be >= 0");
  if (n < 10) throw ConfigError("synthetic: n must be >= 10");
}

std::string SyntheticConfig::name() const {
  return "Syn_" + std::to_string(m_i) + "_" + std::to_string(m_c) + "_" + std::to_string(m_a) + "_" + std::to_string(n);
}

std::size_t Dataset::treated_count() const { return static_cast<std::size_t>(std::count(t.begin(), t.end(), 1)); }

void Dataset::validate() const {
  const auto n = static_cast<Index>(t.size());
  if (x.rows() != n || yf.size() != n) throw ContractError("dataset: X, t and yf lengths differ");
  if (y0 && y0->size() != n) throw ContractError("dataset: y0 length differs");
  if (y1 && y1->size() != n) throw ContractError("dataset: y1 length differs");
  if (rct && static_cast<Index>(rct->size()) != n) throw ContractError("dataset: rct flag length differs");
  if (!roles.empty() && static_cast<Index>(roles.size()) != x.cols()) throw ContractError("dataset: roles length differs");
  for (int v : t) {
    if (v != 0 && v != 1) throw ContractError("dataset: treatment must be 0 or 1");
  }
  if (outcome_type == OutcomeType::binary) {
    for (Index i = 0; i < yf.size(); ++i) {
      if (yf(i) != 0.0 && yf(i) != 1.0) throw ContractError("dataset: binary outcome outside {0,1}");
    }
  }
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  Dataset out;
  const auto k = static_cast<Index>(rows.size());
  out.x.resize(k, x.cols());
  out.yf.resize(k);
  if (y0) out.y0 = Eigen::VectorXd(k);
  if (y1) out.y1 = Eigen::VectorXd(k);
  if (rct) out.rct = std::vector<int>(rows.size());
  out.t.resize(rows.size());
  for (std::size_t j = 0; j < rows.size(); ++j) {
    const auto i = static_cast<Index>(rows[j]);
    if (rows[j] >= t.size()) throw ContractError("dataset subset: row out of range");
    const auto jj = static_cast<Index>(j);
    out.x.row(jj) = x.row(i);
    out.t[j] = t[rows[j]];
    out.yf(jj) = yf(i);
    if (y0) (*out.y0)(jj) = (*y0)(i);
    if (y1) (*out.y1)(jj) = (*y1)(i);
    if (rct) (*out.rct)[j] = (*rct)[rows[j]];
  }
  out.roles = roles;
  out.outcome_type = outcome_type;
  out.generator = generator;
  return out;
}

Dataset Dataset::concat(const Dataset& a, const Dataset& b) {
  if (a.x.cols() != b.x.cols()) throw ContractError("dataset concat: covariate counts differ");
  if (a.y0.has_value() != b.y0.has_value() || a.rct.has_value() != b.rct.has_value()) {
    throw ContractError("dataset concat: schemas differ");
  }
  Dataset out;
  out.x.resize(a.x.rows() + b.x.rows(), a.x.cols());
  out.x << a.x, b.x;
  out.t = a.t;
  out.t.insert(out.t.end(), b.t.begin(), b.t.end());
  out.yf.resize(a.yf.size() + b.yf.size());
  out.yf << a.yf, b.yf;
  if (a.y0) {
    out.y0 = Eigen::VectorXd(out.yf.size());
    out.y1 = Eigen::VectorXd(out.yf.size());
    *out.y0 << *a.y0, *b.y0;
    *out.y1 << *a.y1, *b.y1;
  }
  if (a.rct) {
    out.rct = *a.rct;
    out.rct->insert(out.rct->end(), b.rct->begin(), b.rct->end());
  }
  out.roles = a.roles;
  out.outcome_type = a.outcome_type;
  out.generator = a.generator;
  return out;
}

// ---- synthetic generator --------------------------------------------------

Dataset generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> coef(8.0, 16.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  const int m_ic = cfg.m_i + cfg.m_c;
  const int m_ca = cfg.m_c + cfg.m_a;
  const int m = cfg.input_dim();
  const auto n = static_cast<Index>(cfg.n);

  GeneratorParams gp;
  gp.config = cfg;
  gp.theta_t.resize(m_ic);
  gp.theta_y0.resize(m_ca);
  gp.theta_y1.resize(m_ca);
  for (Index k = 0; k < m_ic; ++k) gp.theta_t(k) = coef(rng);
  for (Index k = 0; k < m_ca; ++k) gp.theta_y0(k) = coef(rng);
  for (Index k = 0; k < m_ca; ++k) gp.theta_y1(k) = coef(rng);

  Dataset ds;
  ds.outcome_type = OutcomeType::binary;
  ds.x.resize(n, m);
  for (Index i = 0; i < ds.x.size(); ++i) ds.x.data()[i] = normal(rng);

  const auto x_ic = ds.x.leftCols(m_ic);
  const auto x_ca = ds.x.middleCols(cfg.m_i, m_ca);
  Eigen::VectorXd z = 0.1 * (x_ic * gp.theta_t);
  for (Index i = 0; i < n; ++i) z(i) += normal(rng);
  const double denom = static_cast<double>(m_ca);
  Eigen::VectorXd z0 = 0.1 * (x_ca * gp.theta_y0) / denom;
  Eigen::VectorXd z1 = 0.1 * (x_ca.array().square().matrix() * gp.theta_y1) / denom;
  gp.z0_mean = z0.mean();
  gp.z1_mean = z1.mean();

  ds.t.resize(static_cast<std::size_t>(n));
  ds.y0 = Eigen::VectorXd(n);
  ds.y1 = Eigen::VectorXd(n);
  ds.yf.resize(n);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (Index i = 0; i < n; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-z(i)));
    const int ti = unit(rng) < p ? 1 : 0;
    ds.t[static_cast<std::size_t>(i)] = ti;
    // sign(max(0, s)) is 1 exactly when s > 0
    (*ds.y0)(i) = z0(i) - gp.z0_mean > 0.0 ? 1.0 : 0.0;
    (*ds.y1)(i) = z1(i) - gp.z1_mean > 0.0 ? 1.0 : 0.0;
    ds.yf(i) = ti == 1 ? (*ds.y1)(i) : (*ds.y0)(i);
  }

  ds.roles.reserve(static_cast<std::size_t>(m));
  ds.roles.insert(ds.roles.end(), static_cast<std::size_t>(cfg.m_i), VariableRole::instrumental);
  ds.roles.insert(ds.roles.end(), static_cast<std::size_t>(cfg.m_c), VariableRole::confounder);
  ds.roles.insert(ds.roles.end(), static_cast<std::size_t>(cfg.m_a), VariableRole::adjustment);
  ds.roles.insert(ds.roles.end(), static_cast<std::size_t>(cfg.m_d), VariableRole::noise);
  ds.generator = std::move(gp);
  return ds;
}

// ---- split ----------------------------------------------------------------

void SplitSpec::validate() const {
  if (!(train > 0.0) || !(valid > 0.0) || !(test > 0.0)) throw ConfigError("split fractions must be positive");
  if (std::abs(train + valid + test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
}

Splits split(const Dataset& ds, const SplitSpec& spec) {
  spec.validate();
  const std::size_t n = ds.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(spec.seed);
  std::shuffle(perm.begin(), perm.end(), rng);

  // small slack so that e.g. 0.27 * 3000 is not floored to 809
  const auto count = [n](double frac) {
    return static_cast<std::size_t>(std::floor(frac * static_cast<double>(n) + 1e-9));
  };
  const std::size_t n_valid = count(spec.valid);
  const std::size_t n_test = count(spec.test);
  if (n_valid + n_test > n) throw SplitError("split: fractions exceed the sample count");
  const std::size_t n_train = n - n_valid - n_test;

  Splits s;
  s.train_rows.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.valid_rows.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                      perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
  s.test_rows.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), perm.end());
  if (s.train_rows.size() < 2 || s.valid_rows.size() < 2 || s.test_rows.size() < 2) {
    throw SplitError("split: every part needs at least 2 samples (n = " + std::to_string(n) + ")");
  }
  s.train = ds.subset(s.train_rows);
  s.valid = ds.subset(s.valid_rows);
  s.test = ds.subset(s.test_rows);
  const std::size_t treated = s.train.treated_count();
  if (treated == 0 || treated == s.train.size()) throw SplitError("split: training set contains a single arm");
  return s;
}

// ---- CSV ------------------------------------------------------------------

namespace {

void put(std::ostream& os, double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  os.write(buf, res.ptr - buf);
}

void put_vector(std::ostream& os, const std::string& key, const Eigen::VectorXd& v) {
  os << key << '=';
  for (Index i = 0; i < v.size(); ++i) {
    if (i) os << ',';
    put(os, v(i));
  }
  os << '\n';
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool parse_number(const std::string& s, double& v) {
  if (s.empty()) return false;
  const char* b = s.data();
  if (*b == '+') ++b;
  const auto [ptr, ec] = std::from_chars(b, s.data() + s.size(), v);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(v);
}

Eigen::VectorXd parse_vector(const std::string& s, const std::string& key) {
  std::vector<double> vals;
  for (const std::string& tok : split_commas(s)) {
    double v = 0.0;
    if (!parse_number(tok, v)) throw ParseError("meta: bad number in " + key);
    vals.push_back(v);
  }
  return Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<Index>(vals.size()));
}

}  // namespace

std::filesystem::path meta_path_for(const std::filesystem::path& csv) {
  std::filesystem::path p = csv;
  p.replace_extension(".meta");
  return p;
}

void save_csv(const Dataset& ds, const std::filesystem::path& path) {
  ds.validate();
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  const Index m = ds.x.cols();
  for (Index k = 0; k < m; ++k) os << (k ? "," : "") << 'x' << (k + 1);
  os << ",t,yf";
  const bool po = ds.has_potential_outcomes();
  if (po) os << ",y0,y1";
  if (ds.rct) os << ",e";
  os << '\n';
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const auto i = static_cast<Index>(r);
    for (Index k = 0; k < m; ++k) {
      if (k) os << ',';
      put(os, ds.x(i, k));
    }
    os << ',' << ds.t[r] << ',';
    put(os, ds.yf(i));
    if (po) {
      os << ',';
      put(os, (*ds.y0)(i));
      os << ',';
      put(os, (*ds.y1)(i));
    }
    if (ds.rct) os << ',' << (*ds.rct)[r];
    os << '\n';
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());

  std::ofstream meta(meta_path_for(path));
  if (!meta) throw std::runtime_error("cannot open for writing: " + meta_path_for(path).string());
  if (ds.generator) {
    const SyntheticConfig& c = ds.generator->config;
    meta << "m_I=" << c.m_i << "\nm_C=" << c.m_c << "\nm_A=" << c.m_a << "\nm_D=" << c.m_d << "\nn=" << c.n
         << "\nseed=" << c.seed << '\n';
  } else {
    meta << "n=" << ds.size() << '\n';
  }
  meta << "outcome_type=" << to_string(ds.outcome_type) << '\n';
  if (!ds.roles.empty()) {
    meta << "roles=";
    for (std::size_t k = 0; k < ds.roles.size(); ++k) meta << (k ? "," : "") << to_string(ds.roles[k]);
    meta << '\n';
  }
  if (ds.generator) {
    put_vector(meta, "theta_t", ds.generator->theta_t);
    put_vector(meta, "theta_y0", ds.generator->theta_y0);
    put_vector(meta, "theta_y1", ds.generator->theta_y1);
    meta << "z0_mean=";
    put(meta, ds.generator->z0_mean);
    meta << "\nz1_mean=";
    put(meta, ds.generator->z1_mean);
    meta << '\n';
  }
}

Dataset load_csv(const std::filesystem::path& path, const CsvOptions& opts) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open data file: " + path.string());
  const std::string ctx = path.string();
  std::string line;
  if (!std::getline(is, line)) throw ParseError(ctx + ": empty file, header row required");
  const std::vector<std::string> header = split_commas(line);

  std::map<std::string, std::size_t> col;
  for (std::size_t k = 0; k < header.size(); ++k) {
    if (!col.emplace(header[k], k).second) throw ParseError(ctx + ": duplicate column '" + header[k] + "'");
  }
  for (const char* req : {"t", "yf"}) {
    if (!col.count(req)) throw ParseError(ctx + ": missing required column '" + std::string(req) + "'");
  }
  std::vector<std::size_t> xcols;
  while (col.count("x" + std::to_string(xcols.size() + 1))) xcols.push_back(col["x" + std::to_string(xcols.size() + 1)]);
  if (xcols.empty()) throw ParseError(ctx + ": missing required column 'x1'");
  for (const auto& [name, k] : col) {
    const bool known = name == "t" || name == "yf" || name == "y0" || name == "y1" || name == "e";
    const bool is_x = name.size() > 1 && name[0] == 'x';
    if (!known && !is_x) throw ParseError(ctx + ": unexpected column '" + name + "'");
    if (is_x && std::find(xcols.begin(), xcols.end(), k) == xcols.end()) {
      throw ParseError(ctx + ": covariate columns must be x1..xm without gaps ('" + name + "')");
    }
  }
  if (col.count("y0") != col.count("y1")) throw ParseError(ctx + ": y0 and y1 must appear together");
  const bool po = col.count("y0") > 0;
  const bool has_e = col.count("e") > 0;

  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells = split_commas(line);
    if (cells.size() != header.size()) {
      throw ParseError(ctx + ": row " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                       " fields, expected " + std::to_string(header.size()));
    }
    std::vector<double> vals(cells.size());
    for (std::size_t k = 0; k < cells.size(); ++k) {
      if (!parse_number(cells[k], vals[k])) {
        throw ParseError(ctx + ": row " + std::to_string(line_no) + ", column '" + header[k] +
                         "': non-numeric value '" + cells[k] + "'");
      }
    }
    const double tv = vals[col["t"]];
    if (tv != 0.0 && tv != 1.0) throw ParseError(ctx + ": row " + std::to_string(line_no) + ": t must be 0 or 1");
    if (has_e && vals[col["e"]] != 0.0 && vals[col["e"]] != 1.0) {
      throw ParseError(ctx + ": row " + std::to_string(line_no) + ": e must be 0 or 1");
    }
    rows.push_back(std::move(vals));
  }

  Dataset ds;
  const auto n = static_cast<Index>(rows.size());
  ds.x.resize(n, static_cast<Index>(xcols.size()));
  ds.yf.resize(n);
  ds.t.resize(rows.size());
  if (po) {
    ds.y0 = Eigen::VectorXd(n);
    ds.y1 = Eigen::VectorXd(n);
  }
  if (has_e) ds.rct = std::vector<int>(rows.size());
  for (Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    for (std::size_t k = 0; k < xcols.size(); ++k) ds.x(i, static_cast<Index>(k)) = r[xcols[k]];
    ds.t[static_cast<std::size_t>(i)] = static_cast<int>(r[col["t"]]);
    ds.yf(i) = r[col["yf"]];
    if (po) {
      (*ds.y0)(i) = r[col["y0"]];
      (*ds.y1)(i) = r[col["y1"]];
    }
    if (has_e) (*ds.rct)[static_cast<std::size_t>(i)] = static_cast<int>(r[col["e"]]);
  }

  const bool all_binary = (ds.yf.array() == 0.0 || ds.yf.array() == 1.0).all();
  ds.outcome_type = all_binary ? OutcomeType::binary : OutcomeType::continuous;

  const auto mpath = meta_path_for(path);
  if (opts.read_meta && std::filesystem::exists(mpath)) {
    std::ifstream ms(mpath);
    std::map<std::string, std::string> kv;
    while (std::getline(ms, line)) {
      line = trim(line);
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ParseError(mpath.string() + ": expected key=value, got '" + line + "'");
      kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    if (kv.count("outcome_type")) ds.outcome_type = outcome_type_from_string(kv["outcome_type"]);
    if (kv.count("roles")) {
      for (const std::string& r : split_commas(kv["roles"])) ds.roles.push_back(role_from_string(r));
      if (static_cast<Index>(ds.roles.size()) != ds.x.cols()) {
        throw ParseError(mpath.string() + ": roles list length does not match covariate count");
      }
    }
    if (kv.count("theta_t") && kv.count("m_I")) {
      GeneratorParams gp;
      gp.config.m_i = std::stoi(kv["m_I"]);
      gp.config.m_c = std::stoi(kv["m_C"]);
      gp.config.m_a = std::stoi(kv["m_A"]);
      gp.config.m_d = std::stoi(kv["m_D"]);
      gp.config.n = std::stoi(kv["n"]);
      gp.config.seed = std::stoull(kv["seed"]);
      gp.theta_t = parse_vector(kv["theta_t"], "theta_t");
      gp.theta_y0 = parse_vector(kv["theta_y0"], "theta_y0");
      gp.theta_y1 = parse_vector(kv["theta_y1"], "theta_y1");
      double v = 0.0;
      if (parse_number(kv["z0_mean"], v)) gp.z0_mean = v;
      if (parse_number(kv["z1_mean"], v)) gp.z1_mean = v;
      ds.generator = std::move(gp);
    }
  }
  if (opts.outcome_type) ds.outcome_type = *opts.outcome_type;
  if (ds.outcome_type == OutcomeType::binary && !all_binary) {
    throw ParseError(ctx + ": outcome declared binary but yf has values outside {0,1}");
  }
  ds.validate();
  return ds;
}

// ---- Twins ----------------------------------------------------------------

TwinsAugmentation augment_twins(const Dataset& ds, std::uint64_t seed) {
  if (!ds.has_potential_outcomes()) throw ConfigError("twins augmentation needs both potential outcomes");
  std::mt19937_64 rng(seed);
  const Index n = ds.x.rows();
  const Index m0 = ds.x.cols();
  const Index m = m0 + kTwinsExtraCovariates;

  TwinsAugmentation out;
  Dataset& d = out.data;
  d.x.resize(n, m);
  std::binomial_distribution<int> binom(5, 0.5);
  for (Index i = 0; i < n; ++i) {
    for (Index k = 0; k < kTwinsExtraCovariates; ++k) d.x(i, k) = binom(rng);
  }
  d.x.rightCols(m0) = ds.x;
  for (Index k = 0; k < m; ++k) {
    const double mx = d.x.col(k).maxCoeff();
    if (mx == 0.0) {
      spdlog::warn("twins augmentation: column {} has maximum 0, left unnormalized", k + 1);
      continue;
    }
    d.x.col(k) /= mx;
  }

  std::uniform_real_distribution<double> wdist(-0.1, 0.1);
  std::normal_distribution<double> noise(0.0, std::sqrt(0.1));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  out.w.resize(m);
  for (Index k = 0; k < m; ++k) out.w(k) = wdist(rng);
  out.propensity.resize(n);
  d.t.resize(static_cast<std::size_t>(n));
  d.yf.resize(n);
  d.y0 = ds.y0;
  d.y1 = ds.y1;
  for (Index i = 0; i < n; ++i) {
    const double s = d.x.row(i).dot(out.w) + noise(rng);
    const double p = 1.0 / (1.0 + std::exp(-s));
    out.propensity(i) = p;
    const int ti = unit(rng) < p ? 1 : 0;
    d.t[static_cast<std::size_t>(i)] = ti;
    d.yf(i) = ti == 1 ? (*d.y1)(i) : (*d.y0)(i);
  }
  d.rct = ds.rct;
  d.outcome_type = ds.outcome_type;
  d.validate();
  return out;
}

}  // namespace dercfr
