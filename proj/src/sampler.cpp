#include "diffsteer/sampler.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <thread>

#include "diffsteer/rng.hpp"

namespace diffsteer {

const SteeringDirection& AttributeGuidance::direction_for(double sigma) const {
  if (directions_by_sigma.empty()) {
    if (!direction) throw std::logic_error("attribute has no steering direction");
    return *direction;
  }
  const double target = std::log(std::max(sigma, 1e-12));
  const SteeringDirection* best = &directions_by_sigma.front();
  double best_gap = std::numeric_limits<double>::infinity();
  for (const auto& d : directions_by_sigma) {
    const double gap = std::abs(std::log(std::max(d.source_sigma, 1e-12)) - target);
    if (gap < best_gap) {
      best_gap = gap;
      best = &d;
    }
  }
  return *best;
}

void SteeringConfig::validate() const {
  if (!(sigma_end >= 0.0)) throw std::invalid_argument("sigma_end must be >= 0");
  if (rfm_window && !(rfm_window->lo <= rfm_window->hi)) throw std::invalid_argument("rfm_window requires lo <= hi");
  if (!std::isfinite(cfg_scale)) throw std::invalid_argument("cfg_scale must be finite");
  if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("eta must lie in [0, 1]");
  if (num_inference_steps < 1) throw std::invalid_argument("num_inference_steps must be positive");
  for (const auto& a : attributes) {
    if (!std::isfinite(a.w_rfm) || !std::isfinite(a.lambda)) throw std::invalid_argument("attribute strengths must be finite");
    if (a.class_stats && !uncond_stats) throw std::invalid_argument("noise alignment requires uncond_stats");
    if (a.class_stats && a.class_stats->dim() != uncond_stats->dim())
      throw std::invalid_argument("class and unconditional statistics differ in dimension");
  }
}

Eigen::VectorXd denoised_estimate(const Eigen::VectorXd& x_t, const Eigen::VectorXd& eps, const NoiseSchedule& schedule,
                                  int t) {
  if (t < 1) throw std::out_of_range("denoised_estimate requires t >= 1");
  return (x_t - schedule.noise_scale(t) * eps) / schedule.signal_scale(t);
}

Eigen::MatrixXd denoised_estimate_rows(const Eigen::MatrixXd& x_t, const Eigen::MatrixXd& eps,
                                       const NoiseSchedule& schedule, int t) {
  if (t < 1) throw std::out_of_range("denoised_estimate requires t >= 1");
  return (x_t - schedule.noise_scale(t) * eps) / schedule.signal_scale(t);
}

Eigen::MatrixXd epsilon_from_estimate(const Eigen::MatrixXd& x_t, const Eigen::MatrixXd& x0_hat,
                                      const NoiseSchedule& schedule, int t) {
  return (x_t - schedule.signal_scale(t) * x0_hat) / schedule.noise_scale(t);
}

double ddim_sigma(const NoiseSchedule& schedule, int t, int t_prev, double eta) {
  if (eta == 0.0) return 0.0;
  const double ab_t = schedule.alpha_bar(t);
  const double ab_prev = schedule.alpha_bar(t_prev);
  // eta * (beta_prev / beta_t) * sqrt(1 - alpha_t^2 / alpha_prev^2)
  return eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_prev);
}

Eigen::MatrixXd ddim_step_rows(const Eigen::MatrixXd& x_t, const Eigen::MatrixXd& eps, const NoiseSchedule& schedule,
                               int t, int t_prev, double eta, const Eigen::MatrixXd& z) {
  if (!(t_prev < t)) throw std::invalid_argument("ddim_step requires t_prev < t");
  if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("eta must lie in [0, 1]");
  const Eigen::MatrixXd x0 = denoised_estimate_rows(x_t, eps, schedule, t);
  const double s = ddim_sigma(schedule, t, t_prev, eta);
  const double dir = std::sqrt(std::max(0.0, 1.0 - schedule.alpha_bar(t_prev) - s * s));
  Eigen::MatrixXd out = schedule.signal_scale(t_prev) * x0 + dir * eps;
  if (s > 0.0) out += s * z;
  return out;
}

Eigen::VectorXd ddim_step(const Eigen::VectorXd& x_t, const Eigen::VectorXd& eps, const NoiseSchedule& schedule,
                          int t, int t_prev, double eta, std::uint64_t noise_seed) {
  CounterRng rng(noise_seed);
  const Eigen::MatrixXd z = eta > 0.0 ? Eigen::MatrixXd(rng.normal_vector(x_t.size()).transpose())
                                      : Eigen::MatrixXd::Zero(1, x_t.size());
  return ddim_step_rows(x_t.transpose(), eps.transpose(), schedule, t, t_prev, eta, z).row(0).transpose();
}

Eigen::MatrixXd initial_noise(std::uint64_t seed, int n, int dim) {
  Eigen::MatrixXd x(n, dim);
  for (int i = 0; i < n; ++i) {
    CounterRng rng(seed, static_cast<std::uint64_t>(i));
    x.row(i) = rng.normal_vector(dim).transpose();
  }
  return x;
}

int resolve_workers(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("DIFFSTEER_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 1;
}

namespace {

constexpr int kSampleBlock = 64;

void check_finite(const Eigen::MatrixXd& m, int step) {
  if (!m.allFinite()) throw std::runtime_error("non-finite sampler state at step " + std::to_string(step));
}

void sample_chunk(const DenoiserModel& model, const NoiseSchedule& schedule, const SteeringConfig& config,
                  const DdimStepMap& map, int first, int count, SampleResult& result) {
  const auto start = std::chrono::steady_clock::now();
  const int dim = model.spec().data_dim;
  std::vector<CounterRng> rngs;
  Eigen::MatrixXd x(count, dim);
  for (int i = 0; i < count; ++i) {
    rngs.emplace_back(config.seed, static_cast<std::uint64_t>(first + i));
    x.row(i) = rngs.back().normal_vector(dim).transpose();
  }

  bool any_rfm = false;
  bool any_alignment = false;
  for (const auto& a : config.attributes) {
    any_rfm = any_rfm || a.steers_activations();
    any_alignment = any_alignment || a.class_stats.has_value();
  }

  std::vector<std::vector<StepRecord>> records(static_cast<std::size_t>(count));
  long rfm_steps = 0;
  for (int k = 0; k < map.num_inference_steps; ++k) {
    const int t = map.timestep_at(k);
    const int t_prev = map.previous_timestep(k);
    const double sigma = schedule.sigma(t);

    const Eigen::MatrixXd eps = forward_with_hooks(model, x, t).epsilon;
    Eigen::MatrixXd x0 = denoised_estimate_rows(x, eps, schedule, t);

    const bool apply_rfm = any_rfm && config.rfm_window_contains(sigma);
    if (apply_rfm) {
      Hooks hooks;
      for (const auto& a : config.attributes) {
        if (!a.steers_activations()) continue;
        const SteeringDirection& d = a.direction_for(sigma);
        hooks.emplace(d.block_name, HookAction::add_direction(d.vector, a.w_rfm));
      }
      const Eigen::MatrixXd eps_rfm = forward_with_hooks(model, x, t, hooks).epsilon;
      const Eigen::MatrixXd x0_rfm = denoised_estimate_rows(x, eps_rfm, schedule, t);
      x0 += config.cfg_scale * (x0_rfm - x0);
      ++rfm_steps;
    }

    const bool apply_alignment = any_alignment && sigma >= config.sigma_end;
    if (apply_alignment) {
      const Eigen::MatrixXd probe = config.raw_xt ? x : Eigen::MatrixXd(x / schedule.signal_scale(t));
      for (const auto& a : config.attributes) {
        if (!a.class_stats) continue;
        x0 += a.lambda * noise_alignment_signal_rows(*a.class_stats, *config.uncond_stats, probe, sigma);
      }
    }
    check_finite(x0, k);

    const Eigen::MatrixXd eps_guided = epsilon_from_estimate(x, x0, schedule, t);
    Eigen::MatrixXd z;
    if (config.eta > 0.0) {
      z.resize(count, dim);
      for (int i = 0; i < count; ++i) z.row(i) = rngs[static_cast<std::size_t>(i)].normal_vector(dim).transpose();
    }
    x = ddim_step_rows(x, eps_guided, schedule, t, t_prev, config.eta, z);
    check_finite(x, k);

    const Eigen::VectorXd norms = x0.rowwise().norm();
    for (int i = 0; i < count; ++i)
      records[static_cast<std::size_t>(i)].push_back({t, sigma, apply_rfm, apply_alignment, norms(i)});
  }

  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (int i = 0; i < count; ++i) {
    SampleTrace& tr = result.traces[static_cast<std::size_t>(first + i)];
    tr.steps = std::move(records[static_cast<std::size_t>(i)]);
    tr.final_sample = x.row(i).transpose();
    tr.cost.forward_passes = map.num_inference_steps + rfm_steps;
    tr.cost.gradient_passes = 0;
    tr.cost.wall_seconds = seconds / count;
    result.samples.row(first + i) = x.row(i);
  }
}

}  // namespace

SampleResult sample(const DenoiserModel& model, const NoiseSchedule& schedule, const SteeringConfig& config, int n) {
  if (n < 1) throw std::invalid_argument("sample: n must be positive");
  require_matching_schedule(model, schedule);
  config.validate();
  for (const auto& a : config.attributes) {
    if (a.class_stats && a.class_stats->dim() != model.spec().data_dim)
      throw std::invalid_argument("class statistics dimension does not match the model");
    if (!a.steers_activations()) continue;
    auto check = [&](const SteeringDirection& d) {
      const int idx = model.block_index(d.block_name);
      if (d.vector.size() != model.blocks()[static_cast<std::size_t>(idx)].width)
        throw std::invalid_argument("direction length does not match block '" + d.block_name + "'");
    };
    if (a.direction) check(*a.direction);
    for (const auto& d : a.directions_by_sigma) check(d);
  }

  const DdimStepMap map = make_ddim_steps(schedule, config.num_inference_steps);
  SampleResult result;
  result.samples.resize(n, model.spec().data_dim);
  result.traces.resize(static_cast<std::size_t>(n));

  // Fixed-size blocks keep every row's arithmetic identical whatever the worker count.
  const int blocks = (n + kSampleBlock - 1) / kSampleBlock;
  auto run_block = [&](int b) {
    const int first = b * kSampleBlock;
    sample_chunk(model, schedule, config, map, first, std::min(kSampleBlock, n - first), result);
  };
  const int workers = std::min(resolve_workers(config.workers), blocks);
  if (workers <= 1) {
    for (int b = 0; b < blocks; ++b) run_block(b);
    return result;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int b = w; b < blocks; b += workers) run_block(b);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return result;
}

long count_forward_passes(const SampleTrace& trace) {
  long total = 0;
  for (const auto& r : trace.steps) total += r.applied_rfm ? 2 : 1;
  return total;
}

}  // namespace diffsteer
