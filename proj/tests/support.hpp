#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "diffsteer/denoiser.hpp"
#include "diffsteer/rng.hpp"
#include "diffsteer/schedule.hpp"

namespace testing {

// Gaussian elimination with partial pivoting, written out longhand.
inline Eigen::VectorXd dense_solve(Eigen::MatrixXd a, Eigen::VectorXd b) {
  const auto n = a.rows();
  for (Eigen::Index c = 0; c < n; ++c) {
    Eigen::Index p = c;
    for (Eigen::Index r = c + 1; r < n; ++r)
      if (std::abs(a(r, c)) > std::abs(a(p, c))) p = r;
    a.row(c).swap(a.row(p));
    std::swap(b(c), b(p));
    for (Eigen::Index r = c + 1; r < n; ++r) {
      const double f = a(r, c) / a(c, c);
      for (Eigen::Index k = c; k < n; ++k) a(r, k) -= f * a(c, k);
      b(r) -= f * b(c);
    }
  }
  Eigen::VectorXd x(n);
  for (Eigen::Index r = n - 1; r >= 0; --r) {
    double s = b(r);
    for (Eigen::Index k = r + 1; k < n; ++k) s -= a(r, k) * x(k);
    x(r) = s / a(r, r);
  }
  return x;
}

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(1e-12, std::abs(want));
}

inline double rel_err(const Eigen::VectorXd& got, const Eigen::VectorXd& want) {
  return (got - want).norm() / std::max(1e-12, want.norm());
}

inline Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  return diffsteer::CounterRng(seed).normal_matrix(r, c);
}

inline diffsteer::NoiseSchedule default_schedule() {
  return diffsteer::build_schedule(diffsteer::ScheduleKind::linear, 1000, 1e-4, 0.02);
}

inline diffsteer::DenoiserSpec small_spec(int dim = 2) {
  diffsteer::DenoiserSpec s;
  s.data_dim = dim;
  s.encoder_widths = {12, 10};
  s.bottleneck_width = 8;
  s.time_embedding_dim = 8;
  return s;
}

inline diffsteer::DenoiserModel small_model(int dim = 2, std::uint64_t seed = 3) {
  auto m = diffsteer::DenoiserModel::initialize(small_spec(dim), default_schedule(), seed);
  // Non-zero head so every block influences the output.
  diffsteer::CounterRng rng(seed, 99);
  for (Eigen::Index i = 0; i < m.parameter_count(); ++i) m.parameters()(i) += 0.05 * rng.normal();
  return m;
}

}  // namespace testing

#include "diffsteer/datasets.hpp"

namespace testing {

// Small model trained once per test binary on the symmetric two-Gaussian toy.
struct TrainedToy {
  diffsteer::GaussianMixture mixture = diffsteer::symmetric_two_gaussians(4.0, 0.5);
  diffsteer::Dataset data;
  diffsteer::DenoiserModel model;
};

inline const TrainedToy& trained_toy() {
  static const TrainedToy toy = [] {
    TrainedToy t;
    t.data = t.mixture.sample(2048, 1);
    diffsteer::DenoiserSpec spec;
    spec.data_dim = 2;
    spec.encoder_widths = {32, 32};
    spec.bottleneck_width = 32;
    spec.time_embedding_dim = 16;
    diffsteer::DenoiserTrainOptions opt;
    opt.steps = 1500;
    opt.seed = 7;
    t.model = diffsteer::train_denoiser(t.data.data, default_schedule(), spec, opt);
    return t;
  }();
  return toy;
}

}  // namespace testing
