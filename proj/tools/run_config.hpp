#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffsteer/baselines.hpp"
#include "diffsteer/datasets.hpp"
#include "diffsteer/denoiser.hpp"
#include "diffsteer/rfm.hpp"
#include "diffsteer/sampler.hpp"
#include "diffsteer/schedule.hpp"

namespace diffsteer::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Invalid configuration or usage; maps to exit status 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Strict view of one JSON object: every key must be consumed before finish().
class Fields {
public:
  Fields(const json& object, std::string path);

  bool has(const std::string& key) const;
  double number(const std::string& key, double fallback);
  std::optional<double> optional_number(const std::string& key);
  long integer(const std::string& key, long fallback);
  bool boolean(const std::string& key, bool fallback);
  std::string string(const std::string& key, const std::string& fallback);
  std::vector<int> int_list(const std::string& key, std::vector<int> fallback);
  /// Raw child value (marks the key used); nullptr when absent.
  const json* child(const std::string& key);
  std::string path_of(const std::string& key) const;

  /// Throws on the first key not consumed.
  void finish() const;

private:
  const json& object_;
  std::string path_;
  std::set<std::string> used_;
};

struct ScheduleConfig {
  ScheduleKind kind = ScheduleKind::linear;
  int steps = 1000;
  double beta_lo = 1e-4;
  double beta_hi = 0.02;

  NoiseSchedule build() const { return build_schedule(kind, steps, beta_lo, beta_hi); }
};

struct AttributeFiles {
  std::optional<fs::path> direction;
  std::vector<fs::path> directions_by_sigma;
  double w_rfm = 0.0;
  std::optional<fs::path> class_stats;
  double lambda = 0.0;
};

/// SteeringConfig with artifact paths in place of loaded values.
struct SteeringFiles {
  std::vector<AttributeFiles> attributes;
  std::optional<fs::path> uncond_stats;
  SteeringConfig numeric;  // scalar fields; attributes and stats left empty
};

struct ProbeOptions {
  int folds = 5;
  std::uint64_t seed = 0;
  double ridge = 1e-3;
};

struct RunConfig {
  json raw = json::object();
  fs::path base_dir = ".";
  ScheduleConfig schedule;
  std::optional<DatasetSpec> data;
  DenoiserSpec model;
  DenoiserTrainOptions train;
  RfmHyper rfm;
  ClassifierTrainOptions classifier;
  SteeringFiles steering;
  ProbeOptions probe;
};

/// Parses and validates a config; relative artifact paths resolve against base_dir.
RunConfig parse_run_config(const json& raw, const fs::path& base_dir);
RunConfig load_run_config(const std::optional<fs::path>& path);

/// Loads directions and statistics named in the steering section.
SteeringConfig resolve_steering(const SteeringFiles& files);

Oracle oracle_for(const RunConfig& config);

}  // namespace diffsteer::cli
