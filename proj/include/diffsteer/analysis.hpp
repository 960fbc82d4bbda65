#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "diffsteer/activations.hpp"
#include "diffsteer/datasets.hpp"
#include "diffsteer/rfm.hpp"
#include "diffsteer/sampler.hpp"

namespace diffsteer {

/// Cross-validated accuracy of a multinomial ridge classifier (one-hot least
/// squares on centred features, regularisation `ridge` on the per-sample
/// loss). Rows are shuffled with `seed` and split into `folds` folds.
double linear_probe(const ActivationBatch& batch, int folds = 5, std::uint64_t seed = 0, double ridge = 1e-3);

struct ProbeCell {
  std::string block;
  double sigma = 0.0;
  Process process = Process::forward;
  double accuracy = 0.0;
  long n = 0;
};

struct ProbeReport {
  std::string probe_kind = "ridge-linear";
  std::vector<ProbeCell> cells;

  /// Rejects duplicate (block, sigma, process) cells and accuracies outside [0, 1].
  void add(ProbeCell cell);
  const ProbeCell* find(const std::string& block, double sigma, Process process) const;
  /// Columns: block,sigma,process,accuracy,n
  std::string to_csv() const;
};

struct TransferMatrix {
  std::string block;
  std::vector<double> sigmas;
  Eigen::MatrixXd matrix;
};

/// Pairwise cosine similarity of directions (ordered by sigma by the caller).
TransferMatrix transfer_matrix(const std::vector<SteeringDirection>& directions);

/// Fraction of rows the oracle assigns to `target`.
double evaluate_accuracy(const Eigen::MatrixXd& samples, const Oracle& oracle, int target);

/// ||mu_A - mu_B||^2 + tr(S_A + S_B - 2 (S_A S_B)^{1/2}) over raw coordinates.
double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

CostLedger cost_report(const std::vector<SampleTrace>& traces);

struct ClassEval {
  int class_id = 0;
  double accuracy = 0.0;
  double frechet_distance = 0.0;
};

struct EvalReport {
  std::vector<ClassEval> classes;
  double mean_accuracy = 0.0;
  double mean_frechet_distance = 0.0;
  CostLedger cost;
};

}  // namespace diffsteer
