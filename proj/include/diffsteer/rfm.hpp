#pragma once

#include <string>

#include <Eigen/Dense>

#include "diffsteer/activations.hpp"

namespace diffsteer {

/// Mahalanobis metric M = L L^T kept in factored form so the dual path never
/// materialises a D x D matrix. An identity metric has no factor.
class Metric {
public:
  static Metric identity(Eigen::Index dim);
  /// Factors a dense symmetric PSD matrix; throws if an eigenvalue is below -1e-10.
  static Metric from_dense(const Eigen::MatrixXd& m);
  static Metric from_factor(Eigen::MatrixXd factor);

  Eigen::Index dim() const { return dim_; }
  bool is_identity() const { return identity_; }
  const Eigen::MatrixXd& factor() const { return factor_; }

  /// Rows mapped so Euclidean distance equals d_M.
  Eigen::MatrixXd transform(const Eigen::MatrixXd& rows) const;
  /// rows * M.
  Eigen::MatrixXd apply(const Eigen::MatrixXd& rows) const;
  Eigen::MatrixXd dense() const;

private:
  Eigen::Index dim_ = 0;
  bool identity_ = true;
  Eigen::MatrixXd factor_;
};

struct RfmHyper {
  double bandwidth = 1.0;
  double ridge = 1e-3;
  int iterations = 5;
  int top_k = 1;
  bool center_grads = false;
  bool dual = false;
};

/// Kernel ridge predictor f(x) = sum_j alpha_j exp(-d_M(x, c_j) / bandwidth).
struct RfmModel {
  double bandwidth = 1.0;
  double ridge = 1e-3;
  int iterations = 0;
  Metric metric;
  Eigen::MatrixXd centers;
  Eigen::VectorXd dual_coefficients;
  bool center_grads = false;

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;
};

/// Unit steering direction in a block's activation space.
struct SteeringDirection {
  Eigen::VectorXd vector;
  int top_k = 1;
  Eigen::VectorXd eigenvalues;
  /// Projection of (target class mean - batch mean) onto vector; >= 0.
  double sign_anchor = 0.0;
  double source_sigma = 0.0;
  std::string block_name;
  std::string class_id;
};

/// K_ij = exp(-d_M(x_i, z_j) / bandwidth).
Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z, const Eigen::MatrixXd& metric,
                              double bandwidth);
Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z, const Metric& metric,
                              double bandwidth);

/// Solves (K + ridge I) alpha = y; the returned residual is <= 1e-6 ||y||.
Eigen::VectorXd solve_krr(const Eigen::MatrixXd& k, const Eigen::VectorXd& y, double ridge);

/// Row i is grad f(x_i). Coincident points (d_M < 1e-12) contribute zero. With
/// center_grads the column mean is subtracted.
Eigen::MatrixXd predictor_gradients(const RfmModel& model, const Eigen::MatrixXd& x);

struct AgopSpectrum {
  Eigen::VectorXd eigenvalues;   // descending
  Eigen::MatrixXd eigenvectors;  // D x k, orthonormal
  bool truncated = false;        // fewer than top_k non-zero eigenpairs
};

/// Top eigenpairs of (1/N) G^T G. The dual path eigendecomposes the N x N
/// Gram (1/N) G G^T and maps u to G^T u / ||G^T u||.
AgopSpectrum agop(const Eigen::MatrixXd& grads, bool dual, int top_k);

struct RfmResult {
  RfmModel model;
  SteeringDirection direction;
};

/// Binary RFM (target class vs rest). Runs `iterations` metric updates, each
/// replacing M with the trace-normalised (trace = D) AGOP, then fits once more
/// and extracts the eigenvalue-weighted top-k AGOP direction.
RfmResult train_rfm(const ActivationBatch& batch, int target_class, const RfmHyper& hyper);

/// Unit-normalised E[h | y = c] - E[h].
SteeringDirection mean_difference_direction(const ActivationBatch& batch, int target_class);

}  // namespace diffsteer
