#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "diffsteer/class_stats.hpp"
#include "diffsteer/denoiser.hpp"
#include "diffsteer/rfm.hpp"
#include "diffsteer/schedule.hpp"

namespace diffsteer {

/// Guidance for one attribute. Either half may be absent: a direction without
/// class statistics steers activations only, and vice versa.
struct AttributeGuidance {
  std::optional<SteeringDirection> direction;
  /// When non-empty, each step uses the entry whose source_sigma is nearest
  /// (in log sigma) to the current noise level instead of `direction`.
  std::vector<SteeringDirection> directions_by_sigma;
  double w_rfm = 0.0;
  std::optional<ClassStatistics> class_stats;
  double lambda = 0.0;

  bool steers_activations() const { return direction.has_value() || !directions_by_sigma.empty(); }
  const SteeringDirection& direction_for(double sigma) const;
};

struct SigmaWindow {
  double lo = 0.0;
  double hi = 0.0;
};

struct SteeringConfig {
  std::vector<AttributeGuidance> attributes;
  std::optional<ClassStatistics> uncond_stats;
  /// Noise alignment runs while sigma_t >= sigma_end.
  double sigma_end = std::numeric_limits<double>::infinity();
  /// RFM steering runs while lo <= sigma_t <= hi; no window disables it.
  std::optional<SigmaWindow> rfm_window;
  double cfg_scale = 1.0;
  double eta = 0.0;
  int num_inference_steps = 100;
  std::uint64_t seed = 0;
  /// Evaluate the Gaussian denoisers on raw x_t instead of x_t / sqrt(abar_t).
  bool raw_xt = false;
  /// 0 means: read DIFFSTEER_THREADS, default 1.
  int workers = 0;

  bool rfm_window_contains(double sigma) const {
    return rfm_window && sigma >= rfm_window->lo && sigma <= rfm_window->hi;
  }
  void validate() const;
};

struct StepRecord {
  int t = 0;
  double sigma = 0.0;
  bool applied_rfm = false;
  bool applied_alignment = false;
  double x_hat0_norm = 0.0;
};

struct CostLedger {
  long forward_passes = 0;
  long gradient_passes = 0;
  double wall_seconds = 0.0;

  CostLedger& operator+=(const CostLedger& o) {
    forward_passes += o.forward_passes;
    gradient_passes += o.gradient_passes;
    wall_seconds += o.wall_seconds;
    return *this;
  }
};

struct SampleTrace {
  std::vector<StepRecord> steps;
  Eigen::VectorXd final_sample;
  CostLedger cost;
};

struct SampleResult {
  Eigen::MatrixXd samples;  // n x D
  std::vector<SampleTrace> traces;
};

/// (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t).
Eigen::VectorXd denoised_estimate(const Eigen::VectorXd& x_t, const Eigen::VectorXd& eps, const NoiseSchedule& schedule,
                                  int t);
Eigen::MatrixXd denoised_estimate_rows(const Eigen::MatrixXd& x_t, const Eigen::MatrixXd& eps,
                                       const NoiseSchedule& schedule, int t);

/// Inverse of denoised_estimate: the eps consistent with x_t and x0_hat.
Eigen::MatrixXd epsilon_from_estimate(const Eigen::MatrixXd& x_t, const Eigen::MatrixXd& x0_hat,
                                      const NoiseSchedule& schedule, int t);

/// Noise std of one DDIM update for the given eta.
double ddim_sigma(const NoiseSchedule& schedule, int t, int t_prev, double eta);

/// DDIM update from t to t_prev < t. z (same shape as x_t) is only read when
/// eta > 0.
Eigen::MatrixXd ddim_step_rows(const Eigen::MatrixXd& x_t, const Eigen::MatrixXd& eps, const NoiseSchedule& schedule,
                               int t, int t_prev, double eta, const Eigen::MatrixXd& z);
Eigen::VectorXd ddim_step(const Eigen::VectorXd& x_t, const Eigen::VectorXd& eps, const NoiseSchedule& schedule,
                          int t, int t_prev, double eta, std::uint64_t noise_seed);

/// Row i is the x_T draw of sample i: stream i of `seed`, independent of batching.
Eigen::MatrixXd initial_noise(std::uint64_t seed, int n, int dim);

/// Guided DDIM sampling. Per step: plain forward pass; inside the RFM window a
/// second pass with every attribute's direction injected into its block and
/// a CFG-style boost of x0_hat; at sigma >= sigma_end the weighted
/// noise-alignment signals are added to x0_hat; eps is re-derived from the
/// guided x0_hat and the DDIM update applied.
SampleResult sample(const DenoiserModel& model, const NoiseSchedule& schedule, const SteeringConfig& config, int n);

/// Model evaluations recorded in a trace: one per step plus one per RFM step.
long count_forward_passes(const SampleTrace& trace);

int resolve_workers(int requested);

}  // namespace diffsteer
