#include "diffsteer/class_stats.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace diffsteer {

ClassStatistics fit_pca(const Eigen::MatrixXd& data, int k, std::string class_id) {
  const Eigen::Index n = data.rows();
  const Eigen::Index d = data.cols();
  if (n < 2) throw std::invalid_argument("fit_pca needs at least two rows");
  if (k < 1 || k > std::min<Eigen::Index>(n - 1, d))
    throw std::invalid_argument("fit_pca: k must lie in [1, min(N-1, D)]");
  if (!data.allFinite()) throw std::invalid_argument("fit_pca: non-finite data");

  ClassStatistics stats;
  stats.class_id = std::move(class_id);
  stats.n_samples = static_cast<long>(n);
  stats.mean = data.colwise().mean().transpose();

  const Eigen::MatrixXd centred = (data.rowwise() - stats.mean.transpose()) / std::sqrt(static_cast<double>(n - 1));
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeThinV);
  const Eigen::VectorXd sv = svd.singularValues();
  const Eigen::MatrixXd& v = svd.matrixV();

  stats.components = v.leftCols(k);
  stats.eigenvalues = sv.head(k).array().square();
  // Zero-variance data: SVD still returns orthonormal V, eigenvalues are exact zeros.
  return stats;
}

std::map<std::string, ClassStatistics> fit_class_statistics(const Eigen::MatrixXd& data,
                                                            const Eigen::VectorXi& labels, int k) {
  if (labels.size() != data.rows()) throw std::invalid_argument("labels and data row counts differ");
  std::map<std::string, ClassStatistics> out;
  std::set<int> classes(labels.data(), labels.data() + labels.size());
  for (int c : classes) {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < labels.size(); ++i)
      if (labels(i) == c) rows.push_back(i);
    const auto count = static_cast<Eigen::Index>(rows.size());
    if (count < 2) throw std::invalid_argument("class " + std::to_string(c) + " has fewer than two samples");
    Eigen::MatrixXd sub(count, data.cols());
    for (Eigen::Index r = 0; r < count; ++r) sub.row(r) = data.row(rows[static_cast<std::size_t>(r)]);
    const int kc = static_cast<int>(std::min<Eigen::Index>({k, count - 1, data.cols()}));
    out.emplace(std::to_string(c), fit_pca(sub, kc, std::to_string(c)));
  }
  const int ka = static_cast<int>(std::min<Eigen::Index>({k, data.rows() - 1, data.cols()}));
  out.emplace("all", fit_pca(data, ka, "all"));
  return out;
}

namespace {

Eigen::VectorXd shrinkage(const ClassStatistics& stats, double sigma) {
  if (sigma < 0.0) throw std::invalid_argument("sigma must be non-negative");
  const double s2 = sigma * sigma;
  Eigen::VectorXd f(stats.rank());
  for (Eigen::Index j = 0; j < f.size(); ++j) {
    const double lam = stats.eigenvalues(j);
    // lambda = sigma = 0 is the degenerate direction with no variance: shrink fully.
    f(j) = lam + s2 > 0.0 ? lam / (lam + s2) : 0.0;
  }
  return f;
}

}  // namespace

Eigen::VectorXd gaussian_denoise(const ClassStatistics& stats, const Eigen::VectorXd& x, double sigma) {
  if (x.size() != stats.dim()) throw std::invalid_argument("gaussian_denoise: dimension mismatch");
  const Eigen::VectorXd coeff = stats.components.transpose() * (x - stats.mean);
  return stats.mean + stats.components * shrinkage(stats, sigma).cwiseProduct(coeff);
}

Eigen::MatrixXd gaussian_denoise_rows(const ClassStatistics& stats, const Eigen::MatrixXd& x, double sigma) {
  if (x.cols() != stats.dim()) throw std::invalid_argument("gaussian_denoise: dimension mismatch");
  const Eigen::VectorXd f = shrinkage(stats, sigma);
  const Eigen::MatrixXd coeff = (x.rowwise() - stats.mean.transpose()) * stats.components;
  Eigen::MatrixXd out = (coeff * f.asDiagonal()) * stats.components.transpose();
  out.rowwise() += stats.mean.transpose();
  return out;
}

Eigen::VectorXd noise_alignment_signal(const ClassStatistics& cond, const ClassStatistics& uncond,
                                       const Eigen::VectorXd& x, double sigma) {
  if (cond.dim() != uncond.dim()) throw std::invalid_argument("noise_alignment_signal: dimension mismatch");
  return gaussian_denoise(cond, x, sigma) - gaussian_denoise(uncond, x, sigma);
}

Eigen::MatrixXd noise_alignment_signal_rows(const ClassStatistics& cond, const ClassStatistics& uncond,
                                            const Eigen::MatrixXd& x, double sigma) {
  if (cond.dim() != uncond.dim()) throw std::invalid_argument("noise_alignment_signal: dimension mismatch");
  return gaussian_denoise_rows(cond, x, sigma) - gaussian_denoise_rows(uncond, x, sigma);
}

Eigen::VectorXd combine_attribute_signals(std::span<const WeightedSignal> signals) {
  if (signals.empty()) throw std::invalid_argument("combine_attribute_signals: empty signal list");
  Eigen::VectorXd total = Eigen::VectorXd::Zero(signals.front().signal.size());
  for (const auto& s : signals) {
    if (s.signal.size() != total.size()) throw std::invalid_argument("combine_attribute_signals: dimension mismatch");
    if (!std::isfinite(s.strength)) throw std::invalid_argument("combine_attribute_signals: non-finite strength");
    total += s.strength * s.signal;
  }
  return total;
}

}  // namespace diffsteer
