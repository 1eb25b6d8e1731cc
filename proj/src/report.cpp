#include "dercfr/report.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

#include "dercfr/errors.hpp"

namespace dercfr {

using nlohmann::json;

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

namespace {

json number_or_sentinel(double v) {
  if (std::isfinite(v)) return v;
  return format_number(v);
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path.string());
  return out;
}

}  // namespace

json to_json(const Hyperparams& hp) {
  const auto& c = hp.coefficients;
  return {{"alpha", c.alpha},
          {"beta", c.beta},
          {"gamma", c.gamma},
          {"mu", c.mu},
          {"lambda", c.lambda},
          {"layers", hp.layers.str()},
          {"batch_norm", hp.batch_norm},
          {"rep_normalize", hp.rep_normalize},
          {"depth_rep", hp.depth_rep},
          {"depth_y", hp.depth_y},
          {"depth_t", hp.depth_t},
          {"width_rep", hp.width_rep},
          {"width_y", hp.width_y},
          {"width_t", hp.width_t}};
}

json to_json(const TrainConfig& cfg) {
  return {{"learning_rate", cfg.learning_rate},
          {"iterations", cfg.iterations},
          {"kernel", cfg.kernel.str()},
          {"seed", cfg.seed},
          {"ablation", cfg.ablation.str()}};
}

json to_json(const SplitSpec& s) {
  return {{"train", s.train}, {"valid", s.valid}, {"test", s.test}, {"seed", s.seed}};
}

json to_json(const EvalReport& r) {
  json j = {{"scope", to_string(r.scope)}, {"units", r.units}};
  auto put = [&](const char* key, const std::optional<double>& v) { j[key] = v ? json(number_or_sentinel(*v)) : json(nullptr); };
  put("pehe", r.pehe);
  put("ate_error", r.ate_error);
  put("policy_risk", r.policy_risk);
  put("att_error", r.att_error);
  return j;
}

json to_json(const IdentificationReport& r) {
  json j = json::object();
  json rows = json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"variable", row.variable},
                    {"role", row.role ? to_string(*row.role) : "unknown"},
                    {"wI", row.w_i},
                    {"wC", row.w_c},
                    {"wA", row.w_a}});
  }
  j["variables"] = rows;
  if (r.summary) {
    const char* names[] = {"I", "C", "A"};
    json s = json::object();
    for (std::size_t f = 0; f < 3; ++f) {
      const FactorSummary& fs = (*r.summary)[f];
      s[names[f]] = {{"true_mean", fs.true_mean},
                     {"other_mean", fs.other_mean},
                     {"ratio", number_or_sentinel(fs.ratio)},
                     {"n_true", fs.n_true},
                     {"n_other", fs.n_other}};
    }
    j["summary"] = s;
  } else {
    j["summary"] = nullptr;
  }
  return j;
}

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  m.n = v.size();
  if (v.empty()) return m;
  double s = 0;
  for (double x : v) s += x;
  m.mean = s / static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(ss / static_cast<double>(v.size()));
  return m;
}

json to_json(const MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}, {"n", m.n}}; }

void write_losses_csv(const std::filesystem::path& path, const std::vector<LossReport>& trajectory) {
  std::ofstream out = open_out(path);
  out << "iteration";
  for (const auto& name : LossReport::field_names()) out << ',' << name;
  out << '\n';
  for (std::size_t k = 0; k < trajectory.size(); ++k) {
    out << k + 1;
    for (double v : trajectory[k].field_values()) out << ',' << format_number(v);
    out << '\n';
  }
}

void write_identification_csv(const std::filesystem::path& path, const IdentificationReport& report) {
  std::ofstream out = open_out(path);
  out << "variable,role,wI,wC,wA\n";
  for (const auto& row : report.rows) {
    out << 'x' << row.variable << ',' << (row.role ? to_string(*row.role) : "unknown") << ',' << format_number(row.w_i)
        << ',' << format_number(row.w_c) << ',' << format_number(row.w_a) << '\n';
  }
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out = open_out(path);
  out << j.dump(2) << '\n';
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out = open_out(path);
  out << text;
}

}  // namespace dercfr
