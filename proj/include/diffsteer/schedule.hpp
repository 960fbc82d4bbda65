#pragma once

#include <string>
#include <vector>

namespace diffsteer {

enum class ScheduleKind { linear, cosine };

std::string to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(const std::string& name);

/// Discrete variance-preserving noise schedule over timesteps 1..T.
///
/// Index 0 is the clean-data convention (alpha_bar = 1, sigma = 0). The
/// noise level sigma_t = sqrt((1 - alpha_bar_t) / alpha_bar_t) is the noise
/// std of the rescaled variable x_t / sqrt(alpha_bar_t).
class NoiseSchedule {
public:
  NoiseSchedule() = default;

  ScheduleKind kind() const { return kind_; }
  int steps() const { return static_cast<int>(betas_.size()); }
  double beta_lo() const { return beta_lo_; }
  double beta_hi() const { return beta_hi_; }

  /// Per-step beta, t in [1, T].
  double beta(int t) const;
  /// Cumulative product, t in [0, T].
  double alpha_bar(int t) const;
  /// Signal coefficient sqrt(alpha_bar_t).
  double signal_scale(int t) const;
  /// Noise coefficient sqrt(1 - alpha_bar_t).
  double noise_scale(int t) const;
  /// sigma_t for t in [1, T]; sigma(0) is 0.
  double sigma(int t) const;
  /// Smallest t whose sigma_t >= sigma, clamped to [1, T].
  int t_of_sigma(double sigma) const;

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

private:
  friend NoiseSchedule build_schedule(ScheduleKind, int, double, double);

  void check_index(int t, int lo) const;

  ScheduleKind kind_ = ScheduleKind::linear;
  double beta_lo_ = 0.0;
  double beta_hi_ = 0.0;
  std::vector<double> betas_;       // betas_[t-1] = beta_t
  std::vector<double> alpha_bars_;  // alpha_bars_[t-1] = alpha_bar_t
  std::vector<double> sigmas_;
};

/// Linear kind interpolates beta from beta_lo to beta_hi; the cosine kind
/// ignores the bounds and uses the improved-DDPM recipe (offset 0.008,
/// beta clipped at 0.999).
NoiseSchedule build_schedule(ScheduleKind kind, int steps, double beta_lo = 1e-4, double beta_hi = 0.02);

inline double sigma_of_t(const NoiseSchedule& s, int t) { return s.sigma(t); }
inline int t_of_sigma(const NoiseSchedule& s, double sigma) { return s.t_of_sigma(sigma); }

/// Uniform-stride DDIM sub-sampling of {1..T}.
struct DdimStepMap {
  int num_inference_steps = 0;
  std::vector<int> step_indices;  // strictly increasing

  /// Timestep visited at sampling step k (k = 0 is the noisiest step).
  int timestep_at(int k) const { return step_indices[step_indices.size() - 1 - k]; }
  /// Timestep visited after step k; 0 for the final step.
  int previous_timestep(int k) const {
    const auto n = static_cast<int>(step_indices.size());
    return k + 1 < n ? step_indices[n - 2 - k] : 0;
  }
};

/// Picks t_j = 1 + j * (T / n) for j = 0..n-1, so 100 steps over 1000
/// visit 991, 981, ..., 1.
DdimStepMap make_ddim_steps(const NoiseSchedule& schedule, int num_inference_steps);

/// Converts a window given in sampling-step units [first, last] (0 = noisiest
/// step) to the equivalent closed sigma interval {lo, hi}.
std::pair<double, double> step_window_to_sigma(const NoiseSchedule& schedule, const DdimStepMap& map,
                                               int first_step, int last_step);

}  // namespace diffsteer
