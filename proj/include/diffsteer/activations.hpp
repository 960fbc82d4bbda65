#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "diffsteer/denoiser.hpp"
#include "diffsteer/schedule.hpp"

namespace diffsteer {

enum class Process { forward, reverse };

std::string to_string(Process p);
Process process_from_string(const std::string& name);

/// Recorded activations of one block at one noise level.
struct ActivationBatch {
  Eigen::MatrixXd features;  // N x D_act
  Eigen::VectorXi labels;
  std::string block_name;
  double sigma = 0.0;
  int timestep = 0;
  Process process = Process::forward;
};

/// One-step forward noising x_t = sqrt(abar) x + sqrt(1 - abar) eps of every
/// row (row i draws its noise from stream i of `seed`), then records `block`.
ActivationBatch collect_forward_activations(const DenoiserModel& model, const Eigen::MatrixXd& data,
                                            const Eigen::VectorXi& labels, const NoiseSchedule& schedule, int t,
                                            const std::string& block, std::uint64_t seed);

using Labeler = std::function<int(const Eigen::VectorXd&)>;

struct ReverseActivations {
  std::vector<ActivationBatch> batches;  // ascending timestep order of record_steps
  Eigen::MatrixXd final_samples;
};

/// Runs unguided deterministic DDIM from seeded noise (same initial noise as
/// sample()) and records `block` at each timestep in `record_steps`. When a
/// labeler is given, each trajectory's row is labelled by the class of its
/// final sample.
ReverseActivations collect_reverse_activations(const DenoiserModel& model, const NoiseSchedule& schedule,
                                               const DdimStepMap& ddim, int n_samples, const std::string& block,
                                               const std::set<int>& record_steps, std::uint64_t seed,
                                               const Labeler& labeler = {});

}  // namespace diffsteer
