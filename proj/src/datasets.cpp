#include "diffsteer/datasets.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "diffsteer/rng.hpp"

namespace diffsteer {

GaussianMixture::GaussianMixture(std::vector<Eigen::VectorXd> means, std::vector<Eigen::MatrixXd> covariances,
                                 std::vector<double> weights)
    : means_(std::move(means)), covariances_(std::move(covariances)), weights_(std::move(weights)) {
  if (means_.empty()) throw std::invalid_argument("mixture needs at least one component");
  if (covariances_.size() != means_.size() || weights_.size() != means_.size())
    throw std::invalid_argument("mixture means, covariances and weights differ in length");
  double total = 0.0;
  for (std::size_t c = 0; c < means_.size(); ++c) {
    const auto d = means_.front().size();
    if (means_[c].size() != d || covariances_[c].rows() != d || covariances_[c].cols() != d)
      throw std::invalid_argument("mixture component dimension mismatch");
    if (!(weights_[c] > 0.0)) throw std::invalid_argument("mixture weights must be positive");
    total += weights_[c];
    factors_.emplace_back(covariances_[c]);
    if (factors_.back().info() != Eigen::Success) throw std::invalid_argument("mixture covariance not positive definite");
    const Eigen::MatrixXd l = factors_.back().matrixL();
    log_norm_.push_back(-l.diagonal().array().log().sum() - 0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi));
  }
  for (auto& w : weights_) w /= total;
}

Dataset GaussianMixture::sample(int n, std::uint64_t seed) const {
  if (n < 1) throw std::invalid_argument("sample size must be positive");
  Dataset out;
  out.data.resize(n, dim());
  out.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    CounterRng rng(seed, static_cast<std::uint64_t>(i));
    const double u = rng.uniform();
    int c = 0;
    double acc = weights_[0];
    while (u > acc && c + 1 < num_classes()) acc += weights_[static_cast<std::size_t>(++c)];
    const Eigen::MatrixXd l = factors_[static_cast<std::size_t>(c)].matrixL();
    out.data.row(i) = (means_[static_cast<std::size_t>(c)] + l * rng.normal_vector(dim())).transpose();
    out.labels(i) = c;
  }
  return out;
}

Eigen::VectorXd GaussianMixture::log_joint(const Eigen::VectorXd& x) const {
  Eigen::VectorXd out(num_classes());
  for (int c = 0; c < num_classes(); ++c) {
    const auto cc = static_cast<std::size_t>(c);
    const Eigen::VectorXd w = factors_[cc].matrixL().solve(x - means_[cc]);
    out(c) = std::log(weights_[cc]) + log_norm_[cc] - 0.5 * w.squaredNorm();
  }
  return out;
}

int GaussianMixture::classify(const Eigen::VectorXd& x) const {
  Eigen::Index best = 0;
  log_joint(x).maxCoeff(&best);
  return static_cast<int>(best);
}

Oracle GaussianMixture::oracle() const {
  return [mixture = *this](const Eigen::VectorXd& x) { return mixture.classify(x); };
}

GaussianMixture symmetric_two_gaussians(double separation, double stddev) {
  Eigen::Vector2d a(-separation / 2.0, 0.0), b(separation / 2.0, 0.0);
  const Eigen::MatrixXd cov = Eigen::Matrix2d::Identity() * stddev * stddev;
  return GaussianMixture({a, b}, {cov, cov}, {0.5, 0.5});
}

GaussianMixture ring_mixture(int classes, double radius, double stddev) {
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covs;
  for (int c = 0; c < classes; ++c) {
    const double angle = 2.0 * std::numbers::pi * c / classes;
    means.push_back(Eigen::Vector2d(radius * std::cos(angle), radius * std::sin(angle)));
    covs.push_back(Eigen::Matrix2d::Identity() * stddev * stddev);
  }
  return GaussianMixture(means, covs, std::vector<double>(static_cast<std::size_t>(classes), 1.0));
}

GaussianMixture shared_mean_mixture(double major, double minor) {
  const Eigen::Vector2d zero = Eigen::Vector2d::Zero();
  Eigen::Matrix2d a = Eigen::Matrix2d::Zero(), b = Eigen::Matrix2d::Zero();
  a(0, 0) = minor * minor;
  a(1, 1) = minor * minor;
  b(0, 0) = minor * minor;
  b(1, 1) = major * major;
  return GaussianMixture({zero, zero}, {a, b}, {0.5, 0.5});
}

Dataset two_moons(int n, double noise, std::uint64_t seed) {
  Dataset out;
  out.data.resize(n, 2);
  out.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    CounterRng rng(seed, static_cast<std::uint64_t>(i));
    const int c = static_cast<int>(rng.below(2));
    const double angle = std::numbers::pi * rng.uniform();
    double x = std::cos(angle), y = std::sin(angle);
    if (c == 1) {
      x = 1.0 - x;
      y = 0.5 - y;
    }
    out.data(i, 0) = x + noise * rng.normal();
    out.data(i, 1) = y + noise * rng.normal();
    out.labels(i) = c;
  }
  return out;
}

Oracle two_moons_oracle(std::uint64_t seed) {
  Dataset ref = two_moons(4000, 0.0, seed ^ 0x6d6f6f6eULL);
  return [ref = std::move(ref)](const Eigen::VectorXd& x) {
    Eigen::Index best = 0;
    (ref.data.rowwise() - x.transpose()).rowwise().squaredNorm().minCoeff(&best);
    return ref.labels(best);
  };
}

Eigen::MatrixXd image_grid_templates(int num_classes) {
  if (num_classes < 1) throw std::invalid_argument("image grid needs at least one class");
  Eigen::MatrixXd t(num_classes, 64);
  for (int c = 0; c < num_classes; ++c) {
    CounterRng rng(0x1a6e, static_cast<std::uint64_t>(c));
    for (int r = 0; r < 8; ++r)
      for (int col = 0; col < 8; ++col) {
        double v = 0.0;
        switch (c) {
          case 0: v = r < 4 ? 1.0 : -1.0; break;              // top/bottom halves
          case 1: v = col < 4 ? 1.0 : -1.0; break;            // left/right halves
          case 2: v = ((r / 2 + col / 2) % 2) ? 1.0 : -1.0; break;  // checker
          case 3: v = (r + col) < 8 ? 1.0 : -1.0; break;      // diagonal split
          default: v = rng.uniform() < 0.5 ? 1.0 : -1.0; break;
        }
        t(c, r * 8 + col) = v;
      }
  }
  return t;
}

Dataset image_grid(int n, int num_classes, double noise, std::uint64_t seed, double amplitude) {
  const Eigen::MatrixXd templates = image_grid_templates(num_classes);
  Dataset out;
  out.data.resize(n, 64);
  out.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    CounterRng rng(seed, static_cast<std::uint64_t>(i));
    const int c = static_cast<int>(rng.below(static_cast<std::uint64_t>(num_classes)));
    out.data.row(i) = amplitude * templates.row(c) + noise * rng.normal_vector(64).transpose();
    out.labels(i) = c;
  }
  return out;
}

Oracle image_grid_oracle(int num_classes) {
  return [templates = image_grid_templates(num_classes)](const Eigen::VectorXd& x) {
    Eigen::Index best = 0;
    (templates * x).maxCoeff(&best);
    return static_cast<int>(best);
  };
}

Dataset make_dataset(const DatasetSpec& spec) {
  if (spec.kind == "gaussian-mixture") return GaussianMixture(spec.means, spec.covariances, spec.weights).sample(spec.n, spec.seed);
  if (spec.kind == "two-moons") return two_moons(spec.n, spec.noise, spec.seed);
  if (spec.kind == "image-grid") return image_grid(spec.n, spec.num_classes, spec.noise, spec.seed, spec.amplitude);
  throw std::invalid_argument("unknown dataset kind '" + spec.kind + "'");
}

Oracle make_oracle(const DatasetSpec& spec) {
  if (spec.kind == "gaussian-mixture") return GaussianMixture(spec.means, spec.covariances, spec.weights).oracle();
  if (spec.kind == "two-moons") return two_moons_oracle(spec.seed);
  if (spec.kind == "image-grid") return image_grid_oracle(spec.num_classes);
  throw std::invalid_argument("unknown dataset kind '" + spec.kind + "'");
}

}  // namespace diffsteer
