#pragma once

#include <map>
#include <span>
#include <string>

#include <Eigen/Dense>

namespace diffsteer {

/// PCA summary (mean, orthonormal components, descending eigenvalues) of one
/// class or of the pooled dataset ("all"). Immutable once fitted.
struct ClassStatistics {
  std::string class_id = "all";
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  // D x k, orthonormal columns
  Eigen::VectorXd eigenvalues;  // k, descending, >= 0
  long n_samples = 0;

  Eigen::Index dim() const { return mean.size(); }
  Eigen::Index rank() const { return eigenvalues.size(); }
};

/// Top-k PCA of the rows of `data` (covariance normalised by N - 1), via a
/// thin SVD of the centred data.
ClassStatistics fit_pca(const Eigen::MatrixXd& data, int k, std::string class_id = "all");

/// One ClassStatistics per distinct label plus the pooled "all" entry. k is
/// clipped per class to min(k, N_c - 1, D).
std::map<std::string, ClassStatistics> fit_class_statistics(const Eigen::MatrixXd& data,
                                                            const Eigen::VectorXi& labels, int k);

/// Optimal linear (PCA shrinkage) denoiser for the Gaussian N(mean, V diag(lambda) V^T):
///   mean + V diag(lambda_j / (lambda_j + sigma^2)) V^T (x - mean).
Eigen::VectorXd gaussian_denoise(const ClassStatistics& stats, const Eigen::VectorXd& x, double sigma);

/// Row-wise version of gaussian_denoise for a B x D batch.
Eigen::MatrixXd gaussian_denoise_rows(const ClassStatistics& stats, const Eigen::MatrixXd& x, double sigma);

/// D_cond(x; sigma) - D_uncond(x; sigma).
Eigen::VectorXd noise_alignment_signal(const ClassStatistics& cond, const ClassStatistics& uncond,
                                       const Eigen::VectorXd& x, double sigma);

Eigen::MatrixXd noise_alignment_signal_rows(const ClassStatistics& cond, const ClassStatistics& uncond,
                                            const Eigen::MatrixXd& x, double sigma);

struct WeightedSignal {
  Eigen::VectorXd signal;
  double strength = 1.0;
};

/// Sum of strength_i * signal_i. Throws on an empty list, since the ambient
/// dimension is then unknown.
Eigen::VectorXd combine_attribute_signals(std::span<const WeightedSignal> signals);

}  // namespace diffsteer
