#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace diffsteer {

struct Dataset {
  Eigen::MatrixXd data;  // N x D
  Eigen::VectorXi labels;
};

/// Maps a sample to a class label; evaluation oracles are built independently
/// of anything used at guidance time.
using Oracle = std::function<int(const Eigen::VectorXd&)>;

/// Labelled Gaussian mixture; component c is class c.
class GaussianMixture {
public:
  GaussianMixture(std::vector<Eigen::VectorXd> means, std::vector<Eigen::MatrixXd> covariances,
                  std::vector<double> weights);

  int num_classes() const { return static_cast<int>(means_.size()); }
  Eigen::Index dim() const { return means_.front().size(); }
  const std::vector<Eigen::VectorXd>& means() const { return means_; }
  const std::vector<Eigen::MatrixXd>& covariances() const { return covariances_; }
  const std::vector<double>& weights() const { return weights_; }

  Dataset sample(int n, std::uint64_t seed) const;
  /// Unnormalised log joint log w_c + log N(x; mu_c, Sigma_c) per class.
  Eigen::VectorXd log_joint(const Eigen::VectorXd& x) const;
  /// Bayes-optimal label.
  int classify(const Eigen::VectorXd& x) const;
  Oracle oracle() const;

private:
  std::vector<Eigen::VectorXd> means_;
  std::vector<Eigen::MatrixXd> covariances_;
  std::vector<double> weights_;
  std::vector<Eigen::LLT<Eigen::MatrixXd>> factors_;
  std::vector<double> log_norm_;
};

/// Two classes at (+-separation/2, 0) with isotropic std `stddev`, equal weights.
GaussianMixture symmetric_two_gaussians(double separation = 4.0, double stddev = 0.5);
/// `classes` isotropic components equally spaced on a circle of `radius`.
GaussianMixture ring_mixture(int classes, double radius, double stddev);
/// Two zero-mean classes: class 0 isotropic with std `minor`, class 1 with
/// covariance diag(minor^2, major^2). Only the spread along axis 1 separates them.
GaussianMixture shared_mean_mixture(double major, double minor);

Dataset two_moons(int n, double noise, std::uint64_t seed);
/// Nearest-neighbour oracle over a reference draw of two-moons.
Oracle two_moons_oracle(std::uint64_t seed);

/// Fixed 8x8 (D = 64) class templates with entries in {-1, +1}.
Eigen::MatrixXd image_grid_templates(int num_classes);
/// Equal-weight classes, amplitude * template + isotropic Gaussian noise.
Dataset image_grid(int n, int num_classes, double noise, std::uint64_t seed, double amplitude = 1.0);
/// Nearest-template oracle (Bayes-optimal for equal priors and isotropic
/// noise). Templates share one norm, so it does not depend on the amplitude.
Oracle image_grid_oracle(int num_classes);

struct DatasetSpec {
  std::string kind = "gaussian-mixture";  // gaussian-mixture | two-moons | image-grid
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covariances;
  std::vector<double> weights;
  int n = 1024;
  int num_classes = 4;  // image-grid
  double noise = 0.1;   // two-moons / image-grid
  double amplitude = 1.0;  // image-grid
  std::uint64_t seed = 0;
};

Dataset make_dataset(const DatasetSpec& spec);
Oracle make_oracle(const DatasetSpec& spec);

}  // namespace diffsteer
