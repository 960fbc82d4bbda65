#include "diffsteer/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace diffsteer {

std::string to_string(ScheduleKind kind) {
  return kind == ScheduleKind::linear ? "linear" : "cosine";
}

ScheduleKind schedule_kind_from_string(const std::string& name) {
  if (name == "linear") return ScheduleKind::linear;
  if (name == "cosine") return ScheduleKind::cosine;
  throw std::invalid_argument("unknown schedule kind '" + name + "'");
}

NoiseSchedule build_schedule(ScheduleKind kind, int steps, double beta_lo, double beta_hi) {
  if (steps < 1) throw std::invalid_argument("schedule needs at least one step");
  NoiseSchedule s;
  s.kind_ = kind;
  s.betas_.resize(static_cast<std::size_t>(steps));
  if (kind == ScheduleKind::linear) {
    if (!(beta_lo > 0.0 && beta_lo <= beta_hi && beta_hi < 1.0))
      throw std::invalid_argument("linear schedule requires 0 < beta_lo <= beta_hi < 1");
    s.beta_lo_ = beta_lo;
    s.beta_hi_ = beta_hi;
    for (int i = 0; i < steps; ++i) {
      const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
      s.betas_[static_cast<std::size_t>(i)] = beta_lo + frac * (beta_hi - beta_lo);
    }
  } else {
    constexpr double offset = 0.008;
    auto f = [&](double t) {
      const double c = std::cos((t / steps + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
      return c * c;
    };
    for (int i = 0; i < steps; ++i) {
      const double b = 1.0 - f(i + 1.0) / f(i);
      s.betas_[static_cast<std::size_t>(i)] = std::clamp(b, 1e-12, 0.999);
    }
  }

  s.alpha_bars_.resize(s.betas_.size());
  s.sigmas_.resize(s.betas_.size());
  double prod = 1.0;
  for (std::size_t i = 0; i < s.betas_.size(); ++i) {
    prod *= 1.0 - s.betas_[i];
    s.alpha_bars_[i] = prod;
    s.sigmas_[i] = std::sqrt((1.0 - prod) / prod);
  }
  return s;
}

void NoiseSchedule::check_index(int t, int lo) const {
  if (t < lo || t > steps())
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                            std::to_string(steps()) + "]");
}

double NoiseSchedule::beta(int t) const {
  check_index(t, 1);
  return betas_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
  check_index(t, 0);
  return t == 0 ? 1.0 : alpha_bars_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::signal_scale(int t) const { return std::sqrt(alpha_bar(t)); }

double NoiseSchedule::noise_scale(int t) const { return std::sqrt(1.0 - alpha_bar(t)); }

double NoiseSchedule::sigma(int t) const {
  check_index(t, 0);
  return t == 0 ? 0.0 : sigmas_[static_cast<std::size_t>(t - 1)];
}

int NoiseSchedule::t_of_sigma(double sigma) const {
  auto it = std::lower_bound(sigmas_.begin(), sigmas_.end(), sigma);
  if (it == sigmas_.end()) return steps();
  return static_cast<int>(it - sigmas_.begin()) + 1;
}

DdimStepMap make_ddim_steps(const NoiseSchedule& schedule, int num_inference_steps) {
  const int T = schedule.steps();
  if (num_inference_steps < 1 || num_inference_steps > T)
    throw std::invalid_argument("num_inference_steps must lie in [1, T]");
  DdimStepMap map;
  map.num_inference_steps = num_inference_steps;
  const int stride = T / num_inference_steps;
  map.step_indices.reserve(static_cast<std::size_t>(num_inference_steps));
  for (int j = 0; j < num_inference_steps; ++j) map.step_indices.push_back(1 + j * stride);
  return map;
}

std::pair<double, double> step_window_to_sigma(const NoiseSchedule& schedule, const DdimStepMap& map,
                                               int first_step, int last_step) {
  if (first_step < 0 || last_step >= map.num_inference_steps || first_step > last_step)
    throw std::invalid_argument("step window outside [0, num_inference_steps)");
  return {schedule.sigma(map.timestep_at(last_step)), schedule.sigma(map.timestep_at(first_step))};
}

}  // namespace diffsteer
