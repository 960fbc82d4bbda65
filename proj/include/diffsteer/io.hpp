#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "diffsteer/activations.hpp"
#include "diffsteer/baselines.hpp"
#include "diffsteer/class_stats.hpp"
#include "diffsteer/denoiser.hpp"
#include "diffsteer/rfm.hpp"

namespace diffsteer::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr const char* kToolVersion = "diffsteer 0.3.0";

/// Writes `bytes` to a temp file next to `path`, then renames it into place.
void write_atomic(const fs::path& path, const std::string& bytes);
std::string read_file(const fs::path& path);
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const fs::path& path);

/// Sidecar path of a matrix payload: "x.bin" -> "x.json".
fs::path sidecar_path(const fs::path& payload);

/// MatrixFile: little-endian row-major float32 payload plus a JSON sidecar
/// {rows, cols, dtype, byte_order, layout, ...meta}.
void write_matrix(const fs::path& payload, const Eigen::MatrixXd& m, const json& meta = json::object());
struct MatrixWithMeta {
  Eigen::MatrixXd matrix;
  json meta;
};
MatrixWithMeta read_matrix(const fs::path& payload);

void write_labels(const fs::path& payload, const Eigen::VectorXi& labels);
Eigen::VectorXi read_labels(const fs::path& payload);

/// Single-file container: [u64 header length][JSON header] then, per
/// section, [u64 byte length][float32 little-endian values].
struct Sectioned {
  json header;
  std::vector<std::vector<float>> sections;
};
std::string encode_sectioned(const Sectioned& s);
Sectioned decode_sectioned(const std::string& bytes);

void save_stats(const fs::path& path, const ClassStatistics& stats);
ClassStatistics load_stats(const fs::path& path);

void save_model(const fs::path& path, const DenoiserModel& model);
DenoiserModel load_model(const fs::path& path);

void save_direction(const fs::path& path, const SteeringDirection& d);
SteeringDirection load_direction(const fs::path& path);

void save_classifier(const fs::path& path, const NoiseConditionedClassifier& c);
NoiseConditionedClassifier load_classifier(const fs::path& path);

/// Features as a MatrixFile at `payload`, labels at "<stem>.labels.bin".
void save_activations(const fs::path& payload, const ActivationBatch& batch);
ActivationBatch load_activations(const fs::path& payload);

/// Float32 narrowing used by every writer; exposed for round-trip checks.
Eigen::MatrixXd to_stored_precision(const Eigen::MatrixXd& m);

}  // namespace diffsteer::io
