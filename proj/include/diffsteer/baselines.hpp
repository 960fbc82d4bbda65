#pragma once

#include <cstdint>

#include <Eigen/Dense>

#include "diffsteer/denoiser.hpp"
#include "diffsteer/sampler.hpp"

namespace diffsteer {

/// Two-layer perceptron p(y | x_t, t) with a sinusoidal timestep embedding,
/// shared across all timesteps. Gradients are analytic.
class NoiseConditionedClassifier {
public:
  NoiseConditionedClassifier() = default;
  NoiseConditionedClassifier(int data_dim, int num_classes, int hidden_width = 64, int time_embedding_dim = 32);
  static NoiseConditionedClassifier initialize(int data_dim, int num_classes, std::uint64_t seed,
                                               int hidden_width = 64, int time_embedding_dim = 32);

  int data_dim() const { return data_dim_; }
  int num_classes() const { return num_classes_; }
  int hidden_width() const { return hidden_; }
  int time_embedding_dim() const { return time_dim_; }

  /// B x C log-probabilities for rows of x at one timestep.
  Eigen::MatrixXd log_probs(const Eigen::MatrixXd& x, int t) const;
  /// Row-wise grad_x log p(target | x_t).
  Eigen::MatrixXd input_gradient(const Eigen::MatrixXd& x, int t, int target) const;

  /// Mean cross-entropy over (x, t, label) triples, optionally with its parameter gradient.
  double cross_entropy(const Eigen::MatrixXd& x, const Eigen::VectorXi& timesteps, const Eigen::VectorXi& labels,
                       Eigen::VectorXd* gradient = nullptr) const;

  Eigen::VectorXd& parameters() { return params_; }
  const Eigen::VectorXd& parameters() const { return params_; }

private:
  struct Forward;
  Forward run(const Eigen::MatrixXd& x, const Eigen::MatrixXd& temb) const;

  int data_dim_ = 0;
  int num_classes_ = 0;
  int hidden_ = 0;
  int time_dim_ = 0;
  Eigen::VectorXd params_;
};

struct ClassifierTrainOptions {
  int steps = 3000;
  int batch_size = 128;
  double learning_rate = 3e-3;
  std::uint64_t seed = 0;
};

/// Cross-entropy training on noised inputs with a uniformly drawn timestep per sample.
NoiseConditionedClassifier train_noise_classifier(const Eigen::MatrixXd& data, const Eigen::VectorXi& labels,
                                                  const NoiseSchedule& schedule, const ClassifierTrainOptions& options);

/// eps_tilde = eps - sqrt(1 - abar_t) * w * grad log p(y | x_t).
Eigen::MatrixXd classifier_guided_epsilon(const Eigen::MatrixXd& eps, const Eigen::MatrixXd& grad_log_p,
                                          const NoiseSchedule& schedule, int t, double w);

/// DDIM sampling with classifier guidance at every step. Initial noise and
/// per-sample streams match sample(); each step costs one denoiser forward
/// and one classifier gradient.
SampleResult classifier_guided_sample(const DenoiserModel& model, const NoiseConditionedClassifier& classifier,
                                      const NoiseSchedule& schedule, int target, double w,
                                      const SteeringConfig& config, int n);

/// sample() with every attribute's RFM direction replaced by `direction`.
SampleResult mean_diff_guided_sample(const DenoiserModel& model, const SteeringDirection& direction,
                                     const NoiseSchedule& schedule, const SteeringConfig& config, int n);

}  // namespace diffsteer
