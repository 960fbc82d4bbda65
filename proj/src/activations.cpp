#include "diffsteer/activations.hpp"

#include <stdexcept>

#include "diffsteer/rng.hpp"
#include "diffsteer/sampler.hpp"

namespace diffsteer {

std::string to_string(Process p) { return p == Process::forward ? "forward" : "reverse"; }

Process process_from_string(const std::string& name) {
  if (name == "forward") return Process::forward;
  if (name == "reverse") return Process::reverse;
  throw std::invalid_argument("unknown process '" + name + "'");
}

ActivationBatch collect_forward_activations(const DenoiserModel& model, const Eigen::MatrixXd& data,
                                            const Eigen::VectorXi& labels, const NoiseSchedule& schedule, int t,
                                            const std::string& block, std::uint64_t seed) {
  if (labels.size() != data.rows()) throw std::invalid_argument("labels and data row counts differ");
  if (t < 1 || t > schedule.steps()) throw std::out_of_range("collection timestep outside [1, T]");
  require_matching_schedule(model, schedule);
  Eigen::MatrixXd noise(data.rows(), data.cols());
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    CounterRng rng(seed, static_cast<std::uint64_t>(i));
    noise.row(i) = rng.normal_vector(data.cols()).transpose();
  }
  const Eigen::MatrixXd xt = schedule.signal_scale(t) * data + schedule.noise_scale(t) * noise;

  Hooks hooks{{block, HookAction::record()}};
  auto out = forward_with_hooks(model, xt, t, hooks);

  ActivationBatch batch;
  batch.features = std::move(out.recorded.at(block));
  batch.labels = labels;
  batch.block_name = block;
  batch.sigma = schedule.sigma(t);
  batch.timestep = t;
  batch.process = Process::forward;
  return batch;
}

ReverseActivations collect_reverse_activations(const DenoiserModel& model, const NoiseSchedule& schedule,
                                               const DdimStepMap& ddim, int n_samples, const std::string& block,
                                               const std::set<int>& record_steps, std::uint64_t seed,
                                               const Labeler& labeler) {
  model.block_index(block);
  require_matching_schedule(model, schedule);
  for (int t : record_steps) {
    bool found = false;
    for (int s : ddim.step_indices) found = found || s == t;
    if (!found) throw std::invalid_argument("record step " + std::to_string(t) + " is not a DDIM timestep");
  }

  ReverseActivations out;
  std::map<int, Eigen::MatrixXd> recorded;
  Eigen::MatrixXd x = initial_noise(seed, n_samples, model.spec().data_dim);
  const Eigen::MatrixXd unused;
  for (int k = 0; k < ddim.num_inference_steps; ++k) {
    const int t = ddim.timestep_at(k);
    Hooks hooks;
    const bool record = record_steps.count(t) > 0;
    if (record) hooks.emplace(block, HookAction::record());
    auto fwd = forward_with_hooks(model, x, t, hooks);
    if (record) recorded[t] = std::move(fwd.recorded.at(block));
    // Same algebra as the unguided sampler: x0_hat, eps re-derived, DDIM step.
    const Eigen::MatrixXd x0 = denoised_estimate_rows(x, fwd.epsilon, schedule, t);
    const Eigen::MatrixXd eps = epsilon_from_estimate(x, x0, schedule, t);
    x = ddim_step_rows(x, eps, schedule, t, ddim.previous_timestep(k), 0.0, unused);
  }

  Eigen::VectorXi labels = Eigen::VectorXi::Constant(n_samples, -1);
  if (labeler)
    for (int i = 0; i < n_samples; ++i) labels(i) = labeler(x.row(i).transpose());

  for (auto& [t, features] : recorded) {
    ActivationBatch b;
    b.features = std::move(features);
    b.labels = labels;
    b.block_name = block;
    b.sigma = schedule.sigma(t);
    b.timestep = t;
    b.process = Process::reverse;
    out.batches.push_back(std::move(b));
  }
  out.final_samples = std::move(x);
  return out;
}

}  // namespace diffsteer
