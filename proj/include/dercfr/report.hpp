#pragma once

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

#include "dercfr/data.hpp"
#include "dercfr/losses.hpp"
#include "dercfr/metrics.hpp"
#include "dercfr/trainer.hpp"

namespace dercfr {

// Shortest round-trip decimal form of v.
std::string format_number(double v);

nlohmann::json to_json(const Hyperparams& hp);
nlohmann::json to_json(const TrainConfig& cfg);
nlohmann::json to_json(const SplitSpec& s);
nlohmann::json to_json(const EvalReport& r);
nlohmann::json to_json(const IdentificationReport& r);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::size_t n = 0;
};
MeanStd mean_std(const std::vector<double>& v);
nlohmann::json to_json(const MeanStd& m);

// iteration (1-based) followed by every LossReport field.
void write_losses_csv(const std::filesystem::path& path, const std::vector<LossReport>& trajectory);
// variable, role, wI, wC, wA
void write_identification_csv(const std::filesystem::path& path, const IdentificationReport& report);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace dercfr
