// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <unistd.h>

#include "diffsteer/activations.hpp"
#include "diffsteer/analysis.hpp"
#include "diffsteer/baselines.hpp"
#include "diffsteer/class_stats.hpp"
#include "diffsteer/datasets.hpp"
#include "diffsteer/io.hpp"
#include "diffsteer/rfm.hpp"
#include "diffsteer/rng.hpp"
#include "diffsteer/sampler.hpp"

using namespace diffsteer;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 3) {
  std::ostringstream s;
  s.precision(precision);
  s << std::fixed << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s.precision(2);
  s << std::scientific << v;
  return s.str();
}

Eigen::MatrixXd rows_of_class(const Dataset& d, int c) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < d.labels.size(); ++i)
    if (d.labels(i) == c) idx.push_back(i);
  return d.data(idx, Eigen::all);
}

NoiseSchedule linear_schedule() { return build_schedule(ScheduleKind::linear, 1000, 1e-4, 0.02); }

DenoiserModel train_toy_denoiser(const Eigen::MatrixXd& data, double sigma_data, int steps) {
  DenoiserSpec spec;
  spec.data_dim = static_cast<int>(data.cols());
  spec.sigma_data = sigma_data;
  DenoiserTrainOptions opt;
  opt.steps = steps;
  opt.seed = 7;
  return train_denoiser(data, linear_schedule(), spec, opt);
}

// Shared two-Gaussian benchmark: symmetric classes at -/+2 on the first axis, std 0.5.
struct TwoGaussianBench {
  GaussianMixture mixture = symmetric_two_gaussians(4.0, 0.5);
  NoiseSchedule schedule = linear_schedule();
  Dataset data;
  Eigen::MatrixXd target_reference;
  DenoiserModel model;
  std::map<std::string, ClassStatistics> stats;
  SteeringDirection direction;  // enc0, learned at sigma = 0.21
  double setup_seconds = 0.0;

  static constexpr int kTarget = 1;
  static constexpr int kSamples = 512;
  static constexpr std::uint64_t kSeed = 11;

  ActivationBatch forward_batch(double sigma, const std::string& block = "enc0") const {
    return collect_forward_activations(model, data.data.topRows(1000), data.labels.head(1000), schedule,
                                       schedule.t_of_sigma(sigma), block, 5);
  }

  static RfmHyper rfm_hyper() {
    RfmHyper h;
    h.bandwidth = 30.0;
    h.iterations = 5;
    h.top_k = 1;
    return h;
  }

  SteeringConfig alignment_only(double lambda) const {
    SteeringConfig c;
    c.seed = kSeed;
    c.uncond_stats = stats.at("all");
    c.sigma_end = 3.0;
    AttributeGuidance a;
    a.class_stats = stats.at(std::to_string(kTarget));
    a.lambda = lambda;
    c.attributes.push_back(a);
    return c;
  }

  SteeringConfig full_config() const {
    SteeringConfig c = alignment_only(1.0);
    c.rfm_window = SigmaWindow{0.0, 3.5};
    c.cfg_scale = 1.0;
    c.attributes[0].direction = direction;
    c.attributes[0].w_rfm = 1.0;
    return c;
  }

  double accuracy(const Eigen::MatrixXd& samples) const {
    return evaluate_accuracy(samples, mixture.oracle(), kTarget);
  }
};

const TwoGaussianBench& two_gaussian_bench() {
  static const TwoGaussianBench bench = [] {
    TwoGaussianBench b;
    const auto start = Clock::now();
    b.data = b.mixture.sample(4096, 1);
    b.target_reference = rows_of_class(b.data, TwoGaussianBench::kTarget);
    b.model = train_toy_denoiser(b.data.data, 0.5, 5000);
    b.stats = fit_class_statistics(b.data.data, b.data.labels, 2);
    b.direction = train_rfm(b.forward_batch(0.21), TwoGaussianBench::kTarget, TwoGaussianBench::rfm_hyper()).direction;
    b.setup_seconds = seconds_since(start);
    return b;
  }();
  return bench;
}

// 1. Gaussian denoiser against the closed-form posterior mean.
Outcome gaussian_denoiser_oracle() {
  const auto start = Clock::now();
  const int dim = 4;
  CounterRng rng(3);
  const Eigen::MatrixXd basis = rng.normal_matrix(dim, dim).householderQr().householderQ();
  const Eigen::Vector4d spectrum(4.0, 2.0, 0.5, 0.1);
  const Eigen::MatrixXd cov = basis * spectrum.asDiagonal() * basis.transpose();
  const Eigen::Vector4d mean(1.0, -2.0, 0.5, 0.0);

  ClassStatistics truth;
  truth.mean = mean;
  truth.components = basis;
  truth.eigenvalues = spectrum;
  truth.n_samples = 1;

  const Eigen::LLT<Eigen::MatrixXd> chol(cov);
  double worst = 0.0;
  for (double sigma : {0.01, 0.1, 1.0, 10.0}) {
    for (int i = 0; i < 50; ++i) {
      const Eigen::VectorXd x0 = mean + chol.matrixL() * rng.normal_vector(dim);
      const Eigen::VectorXd x = x0 + sigma * rng.normal_vector(dim);
      // E[x0 | x] = mu + Sigma (Sigma + s^2 I)^{-1} (x - mu)
      const Eigen::MatrixXd a = cov + sigma * sigma * Eigen::MatrixXd::Identity(dim, dim);
      const Eigen::VectorXd expect = mean + cov * a.fullPivLu().solve(x - mean);
      const Eigen::VectorXd got = gaussian_denoise(truth, x, sigma);
      worst = std::max(worst, (got - expect).norm() / expect.norm());
    }
  }
  const double elapsed = seconds_since(start);
  return {worst <= 1e-8 && elapsed < 1.0, "max rel err " + sci(worst) + ", " + fmt(elapsed) + " s"};
}

// 2. RFM numerics against dense and finite-difference oracles.
Outcome rfm_numerics() {
  const auto start = Clock::now();
  CounterRng rng(17);
  const Eigen::MatrixXd x = rng.normal_matrix(48, 6);
  const Eigen::MatrixXd f = rng.normal_matrix(6, 6);
  const Metric metric = Metric::from_dense(f * f.transpose() / 6.0 + 0.1 * Eigen::MatrixXd::Identity(6, 6));
  const Eigen::MatrixXd k = kernel_matrix(x, x, metric, 2.0);
  const Eigen::VectorXd y = rng.normal_vector(48);
  const Eigen::VectorXd alpha = solve_krr(k, y, 1e-3);
  const Eigen::VectorXd dense = (k + 1e-3 * Eigen::MatrixXd::Identity(48, 48)).fullPivLu().solve(y);
  const double krr_err = (alpha - dense).norm() / dense.norm();

  RfmModel model;
  model.bandwidth = 2.0;
  model.metric = metric;
  model.centers = x;
  model.dual_coefficients = alpha;
  const Eigen::MatrixXd probes = rng.normal_matrix(12, 6);
  const Eigen::MatrixXd grads = predictor_gradients(model, probes);
  double grad_err = 0.0;
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < probes.rows(); ++i) {
    Eigen::VectorXd fd(6);
    for (int d = 0; d < 6; ++d) {
      Eigen::MatrixXd up = probes.row(i), down = probes.row(i);
      up(0, d) += h;
      down(0, d) -= h;
      fd(d) = (model.predict(up)(0) - model.predict(down)(0)) / (2 * h);
    }
    grad_err = std::max(grad_err, (grads.row(i).transpose() - fd).norm() / fd.norm());
  }

  double worst_cos = 1.0;
  for (auto [n, d] : {std::pair{64, 20}, std::pair{20, 64}, std::pair{64, 64}}) {
    const Eigen::MatrixXd g = rng.normal_matrix(n, d);
    const auto primal = agop(g, false, 3);
    const auto dual = agop(g, true, 3);
    for (int i = 0; i < 3; ++i)
      worst_cos = std::min(worst_cos, std::abs(primal.eigenvectors.col(i).dot(dual.eigenvectors.col(i))));
  }
  const double elapsed = seconds_since(start);
  const bool ok = krr_err <= 1e-8 && grad_err <= 1e-4 && worst_cos >= 1.0 - 1e-8 && elapsed < 10.0;
  return {ok, "krr rel err " + sci(krr_err) + ", grad rel err " + sci(grad_err) +
                  ", min |cos| primal/dual 1 - " + sci(1.0 - worst_cos) + ", " + fmt(elapsed) + " s"};
}

// 3. Full NA-RFM steering on the two-Gaussian toy.
Outcome steering_efficacy() {
  const auto start = Clock::now();
  const auto& b = two_gaussian_bench();
  SteeringConfig plain;
  plain.seed = TwoGaussianBench::kSeed;
  const double unguided = b.accuracy(sample(b.model, b.schedule, plain, TwoGaussianBench::kSamples).samples);
  const auto guided = sample(b.model, b.schedule, b.full_config(), TwoGaussianBench::kSamples);
  const double acc = b.accuracy(guided.samples);
  const CostLedger cost = cost_report(guided.traces);
  const double elapsed = b.setup_seconds + seconds_since(start);
  const bool ok = acc >= 0.90 && std::abs(unguided - 0.5) <= 0.05 && cost.gradient_passes == 0 && elapsed < 120.0;
  return {ok, "guided " + fmt(acc) + ", unguided " + fmt(unguided) + ", gradient passes " +
                  std::to_string(cost.gradient_passes) + ", wall " + fmt(elapsed, 1) + " s incl. training"};
}

// 4. Alignment-only strength sweep and the full configuration against it.
Outcome tradeoff_curve() {
  const auto& b = two_gaussian_bench();
  const std::vector<double> lambdas{0.0, 0.5, 1.0, 2.0, 4.0, 8.0};
  std::vector<double> acc, fd;
  for (double lambda : lambdas) {
    const auto r = sample(b.model, b.schedule, b.alignment_only(lambda), TwoGaussianBench::kSamples);
    acc.push_back(b.accuracy(r.samples));
    fd.push_back(frechet_distance(r.samples, b.target_reference));
  }
  bool monotone = true;
  for (std::size_t i = 1; i < acc.size(); ++i) monotone = monotone && acc[i] >= acc[i - 1];
  // Knee: first strength reaching 95% of the best accuracy.
  const double best = *std::max_element(acc.begin(), acc.end());
  std::size_t knee = 0;
  while (acc[knee] < 0.95 * best) ++knee;
  bool fd_rises = true;
  for (std::size_t i = knee + 1; i < fd.size(); ++i) fd_rises = fd_rises && fd[i] >= fd[i - 1];

  const auto full = sample(b.model, b.schedule, b.full_config(), TwoGaussianBench::kSamples);
  const double full_acc = b.accuracy(full.samples);
  const double full_fd = frechet_distance(full.samples, b.target_reference);
  std::string dominated;
  for (std::size_t i = 0; i < lambdas.size(); ++i)
    if (full_acc > acc[i] && full_fd < fd[i]) dominated += (dominated.empty() ? "" : ",") + fmt(lambdas[i], 1);

  std::string curve;
  for (std::size_t i = 0; i < lambdas.size(); ++i)
    curve += " (" + fmt(lambdas[i], 1) + ": " + fmt(acc[i]) + ", " + fmt(fd[i]) + ")";
  return {monotone && fd_rises && !dominated.empty(),
          "lambda (acc, FD):" + curve + "; knee lambda " + fmt(lambdas[knee], 1) + "; full (" + fmt(full_acc) + ", " +
              fmt(full_fd) + ") dominates lambda {" + dominated + "}"};
}

// 5. Reverse vs forward probes at the noisiest and cleanest sampling steps.
Outcome probing_asymmetry() {
  const auto& b = two_gaussian_bench();
  const std::string block = "enc0";
  const auto map = make_ddim_steps(b.schedule, 100);
  const int noisiest = map.timestep_at(0);
  const int cleanest = map.timestep_at(99);
  const Oracle oracle = b.mixture.oracle();
  const auto reverse = collect_reverse_activations(b.model, b.schedule, map, 1000, block, {noisiest, cleanest}, 21,
                                                   [&](const Eigen::VectorXd& x) { return oracle(x); });
  const Eigen::MatrixXd data = b.data.data.topRows(1000);
  const Eigen::VectorXi labels = b.data.labels.head(1000);
  const auto fwd_high = collect_forward_activations(b.model, data, labels, b.schedule, noisiest, block, 5);
  const auto fwd_low = collect_forward_activations(b.model, data, labels, b.schedule, cleanest, block, 5);
  ActivationBatch clean = fwd_low;
  clean.features = forward_with_hooks(b.model, data, cleanest, {{block, HookAction::record()}}).recorded.at(block);

  const double rev_high = linear_probe(reverse.batches.back());
  const double fwd_high_acc = linear_probe(fwd_high);
  const double fwd_low_acc = linear_probe(fwd_low);
  const double ceiling = linear_probe(clean);
  const bool ok = rev_high - fwd_high_acc >= 0.15 && fwd_low_acc >= 0.8 * ceiling;
  return {ok, "t=" + std::to_string(noisiest) + ": reverse " + fmt(rev_high) + " vs forward " + fmt(fwd_high_acc) +
                  "; t=" + std::to_string(cleanest) + ": forward " + fmt(fwd_low_acc) + " vs clean ceiling " +
                  fmt(ceiling)};
}

// 6. Cross-sigma cosine of encoder directions and reuse of one direction across the window.
Outcome temporal_transfer() {
  const auto& b = two_gaussian_bench();
  std::vector<SteeringDirection> dirs;
  for (double sigma : {0.1, 0.21, 0.35, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0})
    dirs.push_back(train_rfm(b.forward_batch(sigma), TwoGaussianBench::kTarget, TwoGaussianBench::rfm_hyper()).direction);
  const auto tm = transfer_matrix(dirs);
  double min_adjacent = 1.0;
  std::string cosines;
  for (int i = 0; i < 3; ++i) {
    min_adjacent = std::min(min_adjacent, tm.matrix(i, i + 1));
    cosines += (i ? ", " : "") + fmt(tm.matrix(i, i + 1));
  }

  SteeringConfig cfg;
  cfg.seed = TwoGaussianBench::kSeed;
  cfg.rfm_window = SigmaWindow{0.0, 3.5};
  AttributeGuidance a;
  a.direction = dirs.front();
  a.w_rfm = 1.0;
  cfg.attributes.push_back(a);
  const double single = b.accuracy(sample(b.model, b.schedule, cfg, TwoGaussianBench::kSamples).samples);
  cfg.attributes[0].directions_by_sigma = dirs;
  const double per_sigma = b.accuracy(sample(b.model, b.schedule, cfg, TwoGaussianBench::kSamples).samples);
  const bool ok = min_adjacent >= 0.8 && per_sigma - single <= 0.05;
  return {ok, "adjacent cosines (0.1..0.5) " + cosines + "; single-direction " + fmt(single) + " vs per-sigma " +
                  fmt(per_sigma)};
}

// 7. RFM window restricted to the late or early half of sampling on the image-grid benchmark.
Outcome window_ablation() {
  const int classes = 4;
  const double amplitude = 0.25;
  const Dataset data = image_grid(8192, classes, 0.5 * amplitude, 1, amplitude);
  const NoiseSchedule schedule = linear_schedule();
  const DenoiserModel model = train_toy_denoiser(data.data, amplitude, 6000);
  const Oracle oracle = image_grid_oracle(classes);
  const int target = 0;
  const auto batch = collect_forward_activations(model, data.data.topRows(1500), data.labels.head(1500), schedule,
                                                 schedule.t_of_sigma(0.21), "enc0", 5);
  RfmHyper hyper;
  hyper.bandwidth = 10.0;
  hyper.iterations = 5;
  const auto direction = train_rfm(batch, target, hyper).direction;

  const auto map = make_ddim_steps(schedule, 100);
  auto run = [&](std::optional<SigmaWindow> window) {
    SteeringConfig cfg;
    cfg.seed = 11;
    cfg.rfm_window = window;
    AttributeGuidance a;
    a.direction = direction;
    a.w_rfm = 0.5;
    cfg.attributes.push_back(a);
    return evaluate_accuracy(sample(model, schedule, cfg, 512).samples, oracle, target);
  };
  const auto [late_lo, late_hi] = step_window_to_sigma(schedule, map, 50, 99);
  const auto [early_lo, early_hi] = step_window_to_sigma(schedule, map, 0, 49);
  const double none = run(std::nullopt);
  const double full = run(SigmaWindow{0.0, std::numeric_limits<double>::infinity()});
  const double late = run(SigmaWindow{late_lo, late_hi});
  const double early = run(SigmaWindow{early_lo, early_hi});
  const bool ok = late >= 0.8 * full && early <= 0.4 * full;
  return {ok, "full " + fmt(full) + ", late half " + fmt(late) + ", early half " + fmt(early) + ", unguided " +
                  fmt(none) + " (4-class image grid)"};
}

// 8. RFM vs mean-difference directions when class means coincide.
Outcome direction_ablation() {
  const auto mixture = shared_mean_mixture(2.0, 0.5);
  const Dataset data = mixture.sample(4096, 1);
  const NoiseSchedule schedule = linear_schedule();
  const DenoiserModel model = train_toy_denoiser(data.data, 0.5, 5000);
  const int target = 1;
  const auto batch = collect_forward_activations(model, data.data.topRows(1500), data.labels.head(1500), schedule,
                                                 schedule.t_of_sigma(0.5), "enc0", 5);
  RfmHyper hyper;
  hyper.bandwidth = 30.0;
  hyper.iterations = 5;
  const auto rfm = train_rfm(batch, target, hyper).direction;
  const auto md = mean_difference_direction(batch, target);

  SteeringConfig cfg;
  cfg.seed = 11;
  cfg.rfm_window = SigmaWindow{0.0, 3.5};
  AttributeGuidance a;
  a.direction = rfm;
  a.w_rfm = 1.0;
  cfg.attributes.push_back(a);
  const Oracle oracle = mixture.oracle();
  const double acc_rfm = evaluate_accuracy(sample(model, schedule, cfg, 512).samples, oracle, target);
  const double acc_md = evaluate_accuracy(mean_diff_guided_sample(model, md, schedule, cfg, 512).samples, oracle, target);
  return {acc_rfm - acc_md >= 0.20, "RFM " + fmt(acc_rfm) + " vs mean-difference " + fmt(acc_md)};
}

// 9. Forward and gradient pass audit.
Outcome cost_audit() {
  const auto& b = two_gaussian_bench();
  const auto guided = sample(b.model, b.schedule, b.full_config(), 64);
  bool na_ok = true;
  long max_per_step = 0;
  for (const auto& tr : guided.traces) {
    for (const auto& step : tr.steps) max_per_step = std::max<long>(max_per_step, step.applied_rfm ? 2 : 1);
    na_ok = na_ok && tr.cost.gradient_passes == 0 && count_forward_passes(tr) == tr.cost.forward_passes &&
            tr.cost.forward_passes <= 2L * static_cast<long>(tr.steps.size());
  }
  ClassifierTrainOptions opt;
  opt.steps = 1500;
  opt.seed = 4;
  const auto clf = train_noise_classifier(b.data.data, b.data.labels, b.schedule, opt);
  SteeringConfig cfg;
  cfg.seed = TwoGaussianBench::kSeed;
  const auto cg = classifier_guided_sample(b.model, clf, b.schedule, TwoGaussianBench::kTarget, 2.0, cfg, 64);
  bool cg_ok = true;
  for (const auto& tr : cg.traces) cg_ok = cg_ok && tr.cost.gradient_passes == cfg.num_inference_steps;
  const auto na = cost_report(guided.traces);
  const auto cl = cost_report(cg.traces);
  return {na_ok && max_per_step <= 2 && cg_ok,
          "NA-RFM: max " + std::to_string(max_per_step) + " forward/step, " + std::to_string(na.forward_passes / 64) +
              " forward + " + std::to_string(na.gradient_passes) + " gradient passes per sample; classifier: " +
              std::to_string(cl.gradient_passes / 64) + " gradient passes per " +
              std::to_string(cfg.num_inference_steps) + " steps"};
}

// 10. Bit-identical reruns and lossless persistence.
Outcome determinism() {
  const auto& b = two_gaussian_bench();
  bool same = true;
  std::vector<std::string> broke;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) broke.push_back(what);
    same = same && ok;
  };

  const auto cfg = b.full_config();
  expect(sample(b.model, b.schedule, cfg, 128).samples == sample(b.model, b.schedule, cfg, 128).samples, "sample");
  SteeringConfig threaded = cfg;
  threaded.workers = 4;
  expect(sample(b.model, b.schedule, cfg, 200).samples == sample(b.model, b.schedule, threaded, 200).samples,
         "sample across workers");
  const auto md = mean_difference_direction(b.forward_batch(0.21), 1);
  expect(mean_diff_guided_sample(b.model, md, b.schedule, cfg, 64).samples ==
             mean_diff_guided_sample(b.model, md, b.schedule, cfg, 64).samples,
         "mean-difference sample");
  DenoiserTrainOptions topt;
  topt.steps = 50;
  topt.seed = 9;
  expect(train_denoiser(b.data.data, b.schedule, b.model.spec(), topt).parameters() ==
             train_denoiser(b.data.data, b.schedule, b.model.spec(), topt).parameters(),
         "train_denoiser");
  const auto batch = b.forward_batch(0.21);
  expect(batch.features == b.forward_batch(0.21).features, "collect_forward_activations");
  expect(train_rfm(batch, 1, TwoGaussianBench::rfm_hyper()).direction.vector == b.direction.vector, "train_rfm");
  const auto map = make_ddim_steps(b.schedule, 100);
  expect(collect_reverse_activations(b.model, b.schedule, map, 50, "mid", {map.timestep_at(10)}, 3).batches[0].features ==
             collect_reverse_activations(b.model, b.schedule, map, 50, "mid", {map.timestep_at(10)}, 3).batches[0].features,
         "collect_reverse_activations");
  ClassifierTrainOptions copt;
  copt.steps = 100;
  const auto clf = train_noise_classifier(b.data.data, b.data.labels, b.schedule, copt);
  expect(classifier_guided_sample(b.model, clf, b.schedule, 1, 1.0, cfg, 32).samples ==
             classifier_guided_sample(b.model, clf, b.schedule, 1, 1.0, cfg, 32).samples,
         "classifier_guided_sample");

  // Persistence: every type reloads equal to its single-precision image.
  const fs::path dir = fs::temp_directory_path() / ("diffsteer_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  io::save_model(dir / "model.bin", b.model);
  const auto model = io::load_model(dir / "model.bin");
  expect(model.parameters() == io::to_stored_precision(b.model.parameters()) && model.layer_spec() == b.model.layer_spec(),
         "model round trip");
  io::save_stats(dir / "stats.bin", b.stats.at("1"));
  const auto stats = io::load_stats(dir / "stats.bin");
  expect(stats.mean == io::to_stored_precision(b.stats.at("1").mean) &&
             stats.components == io::to_stored_precision(b.stats.at("1").components) &&
             stats.eigenvalues == io::to_stored_precision(b.stats.at("1").eigenvalues) && stats.class_id == "1" &&
             stats.n_samples == b.stats.at("1").n_samples,
         "stats round trip");
  io::save_direction(dir / "dir.bin", b.direction);
  const auto dir_back = io::load_direction(dir / "dir.bin");
  expect((dir_back.vector - b.direction.vector).cwiseAbs().maxCoeff() <= 1e-7 && dir_back.block_name == "enc0" &&
             dir_back.top_k == b.direction.top_k && dir_back.source_sigma == b.direction.source_sigma,
         "direction round trip");
  io::save_classifier(dir / "clf.bin", clf);
  expect(io::load_classifier(dir / "clf.bin").parameters() == io::to_stored_precision(clf.parameters()),
         "classifier round trip");
  io::save_activations(dir / "acts.bin", batch);
  const auto acts = io::load_activations(dir / "acts.bin");
  expect(acts.features == io::to_stored_precision(batch.features) && acts.labels == batch.labels &&
             acts.block_name == batch.block_name && acts.timestep == batch.timestep,
         "activation round trip");
  io::write_labels(dir / "labels.bin", b.data.labels);
  expect(io::read_labels(dir / "labels.bin") == b.data.labels, "labels round trip");
  fs::remove_all(dir);

  std::string detail = "sampling, training, collection, RFM and 6 persisted types";
  if (!broke.empty()) {
    detail = "differs:";
    for (const auto& s : broke) detail += " " + s + ";";
  }
  return {same, detail};
}

}  // namespace

int main() {
  std::cout << std::unitbuf;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gaussian denoiser oracle", gaussian_denoiser_oracle},
      {"RFM numerics", rfm_numerics},
      {"steering efficacy", steering_efficacy},
      {"accuracy/Frechet trade-off", tradeoff_curve},
      {"probing asymmetry", probing_asymmetry},
      {"temporal transfer", temporal_transfer},
      {"window ablation", window_ablation},
      {"direction ablation", direction_ablation},
      {"cost audit", cost_audit},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome out;
    const auto start = Clock::now();
    try {
      out = criteria[i].second();
    } catch (const std::exception& e) {
      out = {false, std::string("error: ") + e.what()};
    }
    failures += !out.pass;
    std::cout << "criterion " << (i + 1) << " " << (out.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << ": "
              << out.detail << "  [" << fmt(seconds_since(start), 1) << " s]\n";
  }
  std::cout << (criteria.size() - failures) << "/" << criteria.size() << " criteria passed\n";
  return failures == 0 ? 0 : 1;
}
