#include "diffsteer/rfm.hpp"

#include <cmath>
#include <stdexcept>

namespace diffsteer {

Metric Metric::identity(Eigen::Index dim) {
  Metric m;
  m.dim_ = dim;
  m.identity_ = true;
  return m;
}

Metric Metric::from_dense(const Eigen::MatrixXd& dense) {
  if (dense.rows() != dense.cols()) throw std::invalid_argument("metric must be square");
  if (!dense.allFinite()) throw std::invalid_argument("metric has non-finite entries");
  const Eigen::MatrixXd sym = 0.5 * (dense + dense.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  const Eigen::VectorXd& lam = eig.eigenvalues();
  if (lam.size() > 0 && lam.minCoeff() < -1e-10) throw std::invalid_argument("metric is not positive semidefinite");
  Eigen::Index keep = 0;
  for (Eigen::Index i = 0; i < lam.size(); ++i)
    if (lam(i) > 0.0) ++keep;
  Metric m;
  m.dim_ = dense.rows();
  m.identity_ = false;
  m.factor_.resize(dense.rows(), keep);
  Eigen::Index col = 0;
  for (Eigen::Index i = lam.size(); i-- > 0;)
    if (lam(i) > 0.0) m.factor_.col(col++) = eig.eigenvectors().col(i) * std::sqrt(lam(i));
  return m;
}

Metric Metric::from_factor(Eigen::MatrixXd factor) {
  Metric m;
  m.dim_ = factor.rows();
  m.identity_ = false;
  m.factor_ = std::move(factor);
  return m;
}

Eigen::MatrixXd Metric::transform(const Eigen::MatrixXd& rows) const {
  return identity_ ? rows : Eigen::MatrixXd(rows * factor_);
}

Eigen::MatrixXd Metric::apply(const Eigen::MatrixXd& rows) const {
  return identity_ ? rows : Eigen::MatrixXd((rows * factor_) * factor_.transpose());
}

Eigen::MatrixXd Metric::dense() const {
  return identity_ ? Eigen::MatrixXd::Identity(dim_, dim_) : Eigen::MatrixXd(factor_ * factor_.transpose());
}

namespace {

// Pairwise d_M by explicit differences in the transformed space, so coincident
// points give exactly zero.
Eigen::MatrixXd pairwise_distances(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z, const Metric& metric) {
  const Eigen::MatrixXd xt = metric.transform(x);
  const Eigen::MatrixXd zt = metric.transform(z);
  Eigen::MatrixXd d(x.rows(), z.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    d.row(i) = (zt.rowwise() - xt.row(i)).rowwise().norm().transpose();
  return d;
}

Eigen::MatrixXd kernel_from_distances(const Eigen::MatrixXd& d, double bandwidth) {
  return (-d.array() / bandwidth).exp().matrix();
}

}  // namespace

Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z, const Metric& metric,
                              double bandwidth) {
  if (!(bandwidth > 0.0)) throw std::invalid_argument("bandwidth must be positive");
  if (x.cols() != metric.dim() || z.cols() != metric.dim()) throw std::invalid_argument("kernel_matrix: dimension mismatch");
  return kernel_from_distances(pairwise_distances(x, z, metric), bandwidth);
}

Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z, const Eigen::MatrixXd& metric,
                              double bandwidth) {
  return kernel_matrix(x, z, Metric::from_dense(metric), bandwidth);
}

Eigen::VectorXd solve_krr(const Eigen::MatrixXd& k, const Eigen::VectorXd& y, double ridge) {
  if (k.rows() != k.cols() || k.rows() != y.size()) throw std::invalid_argument("solve_krr: shape mismatch");
  if (!(ridge > 0.0)) throw std::invalid_argument("solve_krr: ridge must be positive");
  if (!k.allFinite() || !y.allFinite()) throw std::runtime_error("solve_krr: non-finite kernel or targets");

  Eigen::MatrixXd a = k;
  a.diagonal().array() += ridge;
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  Eigen::VectorXd alpha;
  if (llt.info() == Eigen::Success) {
    alpha = llt.solve(y);
  } else {
    alpha = a.partialPivLu().solve(y);
  }
  // One round of iterative refinement is enough for well-conditioned ridge systems.
  const double tol = 1e-6 * y.norm();
  Eigen::VectorXd r = y - a * alpha;
  if (r.norm() > tol) {
    alpha += llt.info() == Eigen::Success ? Eigen::VectorXd(llt.solve(r)) : Eigen::VectorXd(a.partialPivLu().solve(r));
    r = y - a * alpha;
  }
  if (!alpha.allFinite() || r.norm() > tol) throw std::runtime_error("solve_krr: solver failed to converge");
  return alpha;
}

Eigen::VectorXd RfmModel::predict(const Eigen::MatrixXd& x) const {
  return kernel_matrix(x, centers, metric, bandwidth) * dual_coefficients;
}

Eigen::MatrixXd predictor_gradients(const RfmModel& model, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd d = pairwise_distances(x, model.centers, model.metric);
  const Eigen::MatrixXd k = kernel_from_distances(d, model.bandwidth);
  // weights_ij = alpha_j K_ij / d_ij; grad_i = -(1/h) M sum_j weights_ij (x_i - c_j)
  Eigen::MatrixXd w(d.rows(), d.cols());
  for (Eigen::Index j = 0; j < d.cols(); ++j)
    for (Eigen::Index i = 0; i < d.rows(); ++i)
      w(i, j) = d(i, j) < 1e-12 ? 0.0 : model.dual_coefficients(j) * k(i, j) / d(i, j);
  const Eigen::VectorXd row_sum = w.rowwise().sum();
  const Eigen::MatrixXd s = row_sum.asDiagonal() * x - w * model.centers;
  Eigen::MatrixXd g = model.metric.apply(s) * (-1.0 / model.bandwidth);
  if (model.center_grads) g.rowwise() -= g.colwise().mean();
  return g;
}

AgopSpectrum agop(const Eigen::MatrixXd& grads, bool dual, int top_k) {
  const Eigen::Index n = grads.rows();
  const Eigen::Index dim = grads.cols();
  if (top_k < 1 || top_k > std::min(n, dim)) throw std::invalid_argument("agop: top_k must lie in [1, min(N, D)]");
  if (!grads.allFinite()) throw std::runtime_error("agop: non-finite gradients");

  Eigen::VectorXd lam;
  Eigen::MatrixXd vecs;
  if (!dual) {
    const Eigen::MatrixXd m = grads.transpose() * grads / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
    lam = eig.eigenvalues().reverse();
    vecs = eig.eigenvectors().rowwise().reverse();
  } else {
    const Eigen::MatrixXd gram = grads * grads.transpose() / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    lam = eig.eigenvalues().reverse();
    vecs = grads.transpose() * eig.eigenvectors().rowwise().reverse();
  }

  AgopSpectrum out;
  const double top = lam.size() > 0 ? lam(0) : 0.0;
  Eigen::Index keep = 0;
  while (keep < top_k && lam(keep) > 0.0 && lam(keep) > 1e-12 * top) ++keep;
  out.truncated = keep < top_k;
  out.eigenvalues = lam.head(keep);
  out.eigenvectors.resize(dim, keep);
  for (Eigen::Index i = 0; i < keep; ++i) out.eigenvectors.col(i) = vecs.col(i).normalized();
  return out;
}

namespace {

Eigen::VectorXd binary_targets(const ActivationBatch& batch, int target_class) {
  Eigen::VectorXd y(batch.labels.size());
  Eigen::Index positives = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    y(i) = batch.labels(i) == target_class ? 1.0 : 0.0;
    positives += batch.labels(i) == target_class;
  }
  if (positives == 0 || positives == y.size())
    throw std::invalid_argument("train_rfm: labels must contain the target class and at least one other class");
  return y;
}

Eigen::VectorXd centred_class_mean(const ActivationBatch& batch, int target_class) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(batch.features.cols());
  Eigen::Index count = 0;
  for (Eigen::Index i = 0; i < batch.features.rows(); ++i)
    if (batch.labels(i) == target_class) {
      sum += batch.features.row(i).transpose();
      ++count;
    }
  if (count == 0) throw std::invalid_argument("target class " + std::to_string(target_class) + " absent from batch");
  return sum / static_cast<double>(count) - batch.features.colwise().mean().transpose();
}

Metric trace_normalised_agop(const Eigen::MatrixXd& g, bool dual) {
  const double n = static_cast<double>(g.rows());
  const double dim = static_cast<double>(g.cols());
  const double trace = g.squaredNorm() / n;
  if (!(trace > 0.0) || !std::isfinite(trace)) throw std::runtime_error("train_rfm: degenerate AGOP (zero gradients)");
  const double scale = dim / trace;
  if (dual) return Metric::from_factor(g.transpose() * std::sqrt(scale / n));
  return Metric::from_dense(g.transpose() * g * (scale / n));
}

}  // namespace

RfmResult train_rfm(const ActivationBatch& batch, int target_class, const RfmHyper& hyper) {
  if (!(hyper.bandwidth > 0.0) || !(hyper.ridge > 0.0) || hyper.iterations < 0 || hyper.top_k < 1)
    throw std::invalid_argument("train_rfm: invalid hyperparameters");
  const Eigen::MatrixXd& x = batch.features;
  if (!x.allFinite()) throw std::invalid_argument("train_rfm: non-finite activations");
  const Eigen::VectorXd y = binary_targets(batch, target_class);

  RfmModel model;
  model.bandwidth = hyper.bandwidth;
  model.ridge = hyper.ridge;
  model.iterations = hyper.iterations;
  model.center_grads = hyper.center_grads;
  model.centers = x;
  model.metric = Metric::identity(x.cols());

  Eigen::MatrixXd g;
  for (int round = 0; round <= hyper.iterations; ++round) {
    const Eigen::MatrixXd k = kernel_matrix(x, x, model.metric, model.bandwidth);
    model.dual_coefficients = solve_krr(k, y, model.ridge);
    g = predictor_gradients(model, x);
    if (!g.allFinite()) throw std::runtime_error("train_rfm: non-finite gradients in round " + std::to_string(round));
    if (round < hyper.iterations) model.metric = trace_normalised_agop(g, hyper.dual);
  }

  const int top_k = static_cast<int>(std::min<Eigen::Index>({hyper.top_k, x.rows(), x.cols()}));
  const AgopSpectrum spectrum = agop(g, hyper.dual, top_k);
  if (spectrum.eigenvalues.size() == 0) throw std::runtime_error("train_rfm: AGOP has no non-zero eigenpairs");

  const Eigen::VectorXd anchor = centred_class_mean(batch, target_class);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(x.cols());
  for (Eigen::Index i = 0; i < spectrum.eigenvalues.size(); ++i) {
    Eigen::VectorXd u = spectrum.eigenvectors.col(i);
    if (u.dot(anchor) < 0.0) u = -u;
    v += spectrum.eigenvalues(i) * u;
  }
  v.normalize();
  if (v.dot(anchor) < 0.0) v = -v;

  RfmResult out;
  out.direction.vector = v;
  out.direction.top_k = static_cast<int>(spectrum.eigenvalues.size());
  out.direction.eigenvalues = spectrum.eigenvalues;
  out.direction.sign_anchor = v.dot(anchor);
  out.direction.source_sigma = batch.sigma;
  out.direction.block_name = batch.block_name;
  out.direction.class_id = std::to_string(target_class);
  out.model = std::move(model);
  return out;
}

SteeringDirection mean_difference_direction(const ActivationBatch& batch, int target_class) {
  const Eigen::VectorXd d = centred_class_mean(batch, target_class);
  const double norm = d.norm();
  if (!(norm > 1e-12 * std::max(1.0, batch.features.cwiseAbs().maxCoeff())))
    throw std::invalid_argument("mean_difference_direction: class mean equals global mean");
  SteeringDirection out;
  out.vector = d / norm;
  out.top_k = 1;
  out.eigenvalues = Eigen::VectorXd::Constant(1, norm * norm);
  out.sign_anchor = norm;
  out.source_sigma = batch.sigma;
  out.block_name = batch.block_name;
  out.class_id = std::to_string(target_class);
  return out;
}

}  // namespace diffsteer
