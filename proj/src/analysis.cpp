#include "diffsteer/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "diffsteer/rng.hpp"

namespace diffsteer {

double linear_probe(const ActivationBatch& batch, int folds, std::uint64_t seed, double ridge) {
  const Eigen::MatrixXd& x = batch.features;
  const Eigen::Index n = x.rows();
  if (batch.labels.size() != n) throw std::invalid_argument("linear_probe: labels and features differ in length");
  if (folds < 2 || folds > n) throw std::invalid_argument("linear_probe: folds must lie in [2, N]");

  std::map<int, int> index;
  for (Eigen::Index i = 0; i < n; ++i) index.emplace(batch.labels(i), 0);
  if (index.size() < 2) throw std::invalid_argument("linear_probe: need at least two classes");
  int next = 0;
  for (auto& [label, idx] : index) idx = next++;
  const int classes = next;

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  CounterRng rng(seed, 0x9b0be);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  Eigen::Index correct = 0;
  for (int f = 0; f < folds; ++f) {
    std::vector<Eigen::Index> train, test;
    for (std::size_t i = 0; i < order.size(); ++i) (static_cast<int>(i % folds) == f ? test : train).push_back(order[i]);
    const auto nt = static_cast<Eigen::Index>(train.size());
    Eigen::MatrixXd xt(nt, x.cols());
    Eigen::MatrixXd yt = Eigen::MatrixXd::Zero(nt, classes);
    for (Eigen::Index r = 0; r < nt; ++r) {
      xt.row(r) = x.row(train[static_cast<std::size_t>(r)]);
      yt(r, index.at(batch.labels(train[static_cast<std::size_t>(r)]))) = 1.0;
    }
    const Eigen::RowVectorXd xm = xt.colwise().mean();
    const Eigen::RowVectorXd ym = yt.colwise().mean();
    xt.rowwise() -= xm;
    yt.rowwise() -= ym;
    Eigen::MatrixXd gram = xt.transpose() * xt / static_cast<double>(nt);
    gram.diagonal().array() += ridge;
    const Eigen::MatrixXd w = gram.ldlt().solve(xt.transpose() * yt / static_cast<double>(nt));
    for (Eigen::Index idx : test) {
      const Eigen::RowVectorXd score = (x.row(idx) - xm) * w + ym;
      Eigen::Index best = 0;
      score.maxCoeff(&best);
      correct += static_cast<int>(best) == index.at(batch.labels(idx));
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

void ProbeReport::add(ProbeCell cell) {
  if (!(cell.accuracy >= 0.0 && cell.accuracy <= 1.0)) throw std::invalid_argument("probe accuracy outside [0, 1]");
  if (find(cell.block, cell.sigma, cell.process)) throw std::invalid_argument("duplicate probe cell");
  cells.push_back(std::move(cell));
}

const ProbeCell* ProbeReport::find(const std::string& block, double sigma, Process process) const {
  for (const auto& c : cells)
    if (c.block == block && c.sigma == sigma && c.process == process) return &c;
  return nullptr;
}

std::string ProbeReport::to_csv() const {
  std::ostringstream out;
  out.precision(10);
  out << "block,sigma,process,accuracy,n\n";
  for (const auto& c : cells) out << c.block << ',' << c.sigma << ',' << to_string(c.process) << ',' << c.accuracy << ',' << c.n << '\n';
  return out.str();
}

TransferMatrix transfer_matrix(const std::vector<SteeringDirection>& directions) {
  if (directions.empty()) throw std::invalid_argument("transfer_matrix: no directions");
  TransferMatrix out;
  out.block = directions.front().block_name;
  const auto k = static_cast<Eigen::Index>(directions.size());
  const Eigen::Index dim = directions.front().vector.size();
  Eigen::MatrixXd units(dim, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto& d = directions[static_cast<std::size_t>(i)];
    if (d.vector.size() != dim) throw std::invalid_argument("transfer_matrix: dimension mismatch");
    if (d.block_name != out.block) throw std::invalid_argument("transfer_matrix: directions from different blocks");
    units.col(i) = d.vector.normalized();
    out.sigmas.push_back(d.source_sigma);
  }
  out.matrix = (units.transpose() * units).cwiseMax(-1.0).cwiseMin(1.0);
  out.matrix = 0.5 * (out.matrix + out.matrix.transpose()).eval();
  out.matrix.diagonal().setOnes();
  return out;
}

double evaluate_accuracy(const Eigen::MatrixXd& samples, const Oracle& oracle, int target) {
  if (samples.rows() == 0) throw std::invalid_argument("evaluate_accuracy: empty sample set");
  Eigen::Index hits = 0;
  for (Eigen::Index i = 0; i < samples.rows(); ++i) hits += oracle(samples.row(i).transpose()) == target;
  return static_cast<double>(hits) / static_cast<double>(samples.rows());
}

namespace {

Eigen::MatrixXd covariance(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& mean) {
  const Eigen::MatrixXd c = x.rowwise() - mean;
  return c.transpose() * c / static_cast<double>(x.rows() - 1);
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("frechet_distance: dimension mismatch");
  if (a.rows() < 2 || b.rows() < 2) throw std::invalid_argument("frechet_distance: need at least two rows per set");
  const Eigen::RowVectorXd ma = a.colwise().mean();
  const Eigen::RowVectorXd mb = b.colwise().mean();
  const Eigen::MatrixXd sa = covariance(a, ma);
  const Eigen::MatrixXd sb = covariance(b, mb);
  if (!sa.allFinite() || !sb.allFinite()) throw std::runtime_error("frechet_distance: non-finite moments");
  // tr((S_A S_B)^{1/2}) = tr((S_A^{1/2} S_B S_A^{1/2})^{1/2}), a symmetric PSD form.
  const Eigen::MatrixXd ra = psd_sqrt(sa);
  const Eigen::MatrixXd inner = ra * sb * ra;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (inner + inner.transpose()));
  double cross = 0.0;
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) cross += std::sqrt(std::max(eig.eigenvalues()(i), 0.0));
  const double value = (ma - mb).squaredNorm() + sa.trace() + sb.trace() - 2.0 * cross;
  return std::max(value, 0.0);
}

CostLedger cost_report(const std::vector<SampleTrace>& traces) {
  CostLedger total;
  for (const auto& t : traces) total += t.cost;
  return total;
}

}  // namespace diffsteer
