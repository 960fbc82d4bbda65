#include "diffsteer/baselines.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include "diffsteer/rng.hpp"

namespace diffsteer {

namespace {

using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;
using MatMap = Eigen::Map<Eigen::MatrixXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Eigen::MatrixXd log_softmax(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out = logits;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double m = out.row(i).maxCoeff();
    const double lse = m + std::log((out.row(i).array() - m).exp().sum());
    out.row(i).array() -= lse;
  }
  return out;
}

}  // namespace

// Parameter layout: W1 (H x D), U1 (H x E), b1 (H), W2 (C x H), b2 (C).
struct NoiseConditionedClassifier::Forward {
  Eigen::MatrixXd pre;
  Eigen::MatrixXd hidden;
  Eigen::MatrixXd log_p;
};

NoiseConditionedClassifier::NoiseConditionedClassifier(int data_dim, int num_classes, int hidden_width,
                                                       int time_embedding_dim)
    : data_dim_(data_dim), num_classes_(num_classes), hidden_(hidden_width), time_dim_(time_embedding_dim) {
  if (data_dim < 1 || num_classes < 2 || hidden_width < 1 || time_embedding_dim < 2 || time_embedding_dim % 2)
    throw std::invalid_argument("invalid classifier shape");
  const Eigen::Index count = static_cast<Eigen::Index>(hidden_) * (data_dim_ + time_dim_ + 1) +
                             static_cast<Eigen::Index>(num_classes_) * (hidden_ + 1);
  params_ = Eigen::VectorXd::Zero(count);
}

NoiseConditionedClassifier NoiseConditionedClassifier::initialize(int data_dim, int num_classes, std::uint64_t seed,
                                                                  int hidden_width, int time_embedding_dim) {
  NoiseConditionedClassifier c(data_dim, num_classes, hidden_width, time_embedding_dim);
  CounterRng rng(seed, 0xc1a55);
  const Eigen::Index first = static_cast<Eigen::Index>(c.hidden_) * (c.data_dim_ + c.time_dim_);
  const double s1 = std::sqrt(2.0 / (c.data_dim_ + c.time_dim_));
  for (Eigen::Index i = 0; i < first; ++i) c.params_(i) = s1 * rng.normal();
  const Eigen::Index w2 = first + c.hidden_;
  const double s2 = std::sqrt(1.0 / c.hidden_);
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(c.num_classes_) * c.hidden_; ++i)
    c.params_(w2 + i) = s2 * rng.normal();
  return c;
}

NoiseConditionedClassifier::Forward NoiseConditionedClassifier::run(const Eigen::MatrixXd& x,
                                                                    const Eigen::MatrixXd& temb) const {
  if (x.cols() != data_dim_) throw std::invalid_argument("classifier input dimension mismatch");
  const double* p = params_.data();
  const Eigen::Index h = hidden_;
  ConstMatMap w1(p, h, data_dim_);
  ConstMatMap u1(p + h * data_dim_, h, time_dim_);
  ConstVecMap b1(p + h * (data_dim_ + time_dim_), h);
  const double* p2 = p + h * (data_dim_ + time_dim_ + 1);
  ConstMatMap w2(p2, num_classes_, h);
  ConstVecMap b2(p2 + num_classes_ * h, num_classes_);

  Forward f;
  f.pre = x * w1.transpose();
  if (temb.rows() == 1) {
    const Eigen::RowVectorXd shift = temb * u1.transpose() + b1.transpose();
    f.pre.rowwise() += shift;
  } else {
    f.pre += temb * u1.transpose();
    f.pre.rowwise() += b1.transpose();
  }
  f.hidden = f.pre.unaryExpr([](double v) { return v * sigmoid(v); });
  Eigen::MatrixXd logits = f.hidden * w2.transpose();
  logits.rowwise() += b2.transpose();
  f.log_p = log_softmax(logits);
  return f;
}

Eigen::MatrixXd NoiseConditionedClassifier::log_probs(const Eigen::MatrixXd& x, int t) const {
  return run(x, timestep_embedding(t, time_dim_)).log_p;
}

Eigen::MatrixXd NoiseConditionedClassifier::input_gradient(const Eigen::MatrixXd& x, int t, int target) const {
  if (target < 0 || target >= num_classes_) throw std::invalid_argument("classifier target out of range");
  const Forward f = run(x, timestep_embedding(t, time_dim_));
  const double* p = params_.data();
  const Eigen::Index h = hidden_;
  ConstMatMap w1(p, h, data_dim_);
  ConstMatMap w2(p + h * (data_dim_ + time_dim_ + 1), num_classes_, h);
  // d log p_y / d logits = e_y - softmax
  Eigen::MatrixXd d_logits = -f.log_p.array().exp().matrix();
  d_logits.col(target).array() += 1.0;
  const Eigen::MatrixXd d_hidden = d_logits * w2;
  const Eigen::MatrixXd d_pre = d_hidden.cwiseProduct(f.pre.unaryExpr([](double v) {
    const double s = sigmoid(v);
    return s * (1.0 + v * (1.0 - s));
  }));
  return d_pre * w1;
}

double NoiseConditionedClassifier::cross_entropy(const Eigen::MatrixXd& x, const Eigen::VectorXi& timesteps,
                                                 const Eigen::VectorXi& labels, Eigen::VectorXd* gradient) const {
  const Eigen::Index b = x.rows();
  Eigen::MatrixXd temb(b, time_dim_);
  for (Eigen::Index i = 0; i < b; ++i) temb.row(i) = timestep_embedding(timesteps(i), time_dim_);
  const Forward f = run(x, temb);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) loss -= f.log_p(i, labels(i));
  loss /= static_cast<double>(b);
  if (!gradient) return loss;

  gradient->setZero(params_.size());
  const double* p = params_.data();
  double* g = gradient->data();
  const Eigen::Index h = hidden_;
  const Eigen::Index off_u1 = h * data_dim_;
  const Eigen::Index off_b1 = h * (data_dim_ + time_dim_);
  const Eigen::Index off_w2 = off_b1 + h;
  const Eigen::Index off_b2 = off_w2 + num_classes_ * h;

  Eigen::MatrixXd d_logits = f.log_p.array().exp().matrix();
  for (Eigen::Index i = 0; i < b; ++i) d_logits(i, labels(i)) -= 1.0;
  d_logits /= static_cast<double>(b);

  MatMap(g + off_w2, num_classes_, h) = d_logits.transpose() * f.hidden;
  VecMap(g + off_b2, num_classes_) = d_logits.colwise().sum().transpose();
  const Eigen::MatrixXd d_hidden = d_logits * ConstMatMap(p + off_w2, num_classes_, h);
  const Eigen::MatrixXd d_pre = d_hidden.cwiseProduct(f.pre.unaryExpr([](double v) {
    const double s = sigmoid(v);
    return s * (1.0 + v * (1.0 - s));
  }));
  MatMap(g, h, data_dim_) = d_pre.transpose() * x;
  MatMap(g + off_u1, h, time_dim_) = d_pre.transpose() * temb;
  VecMap(g + off_b1, h) = d_pre.colwise().sum().transpose();
  return loss;
}

NoiseConditionedClassifier train_noise_classifier(const Eigen::MatrixXd& data, const Eigen::VectorXi& labels,
                                                  const NoiseSchedule& schedule,
                                                  const ClassifierTrainOptions& options) {
  if (labels.size() != data.rows()) throw std::invalid_argument("labels and data row counts differ");
  if (data.rows() < 2) throw std::invalid_argument("train_noise_classifier needs data");
  const int num_classes = labels.maxCoeff() + 1;
  if (labels.minCoeff() < 0 || num_classes < 2) throw std::invalid_argument("train_noise_classifier needs >= 2 classes");

  auto clf = NoiseConditionedClassifier::initialize(static_cast<int>(data.cols()), num_classes, options.seed);
  const Eigen::Index n_params = clf.parameters().size();
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(n_params), m2 = Eigen::VectorXd::Zero(n_params), grad(n_params);
  const int batch = options.batch_size;
  Eigen::MatrixXd x(batch, data.cols());
  Eigen::VectorXi ts(batch), ys(batch);
  for (int step = 0; step < options.steps; ++step) {
    CounterRng rng(options.seed, 0xc1a50000ULL + static_cast<std::uint64_t>(step));
    for (int i = 0; i < batch; ++i) {
      const auto row = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(data.rows())));
      ts(i) = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.steps())));
      ys(i) = labels(row);
      x.row(i) = schedule.signal_scale(ts(i)) * data.row(row) +
                 schedule.noise_scale(ts(i)) * rng.normal_vector(data.cols()).transpose();
    }
    const double loss = clf.cross_entropy(x, ts, ys, &grad);
    if (!std::isfinite(loss) || !grad.allFinite())
      throw DivergenceError("classifier training diverged at step " + std::to_string(step), step);
    m1 = 0.9 * m1 + 0.1 * grad;
    m2 = 0.999 * m2 + 0.001 * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(0.9, step + 1);
    const double c2 = 1.0 - std::pow(0.999, step + 1);
    clf.parameters().array() -= options.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + 1e-8);
  }
  return clf;
}

Eigen::MatrixXd classifier_guided_epsilon(const Eigen::MatrixXd& eps, const Eigen::MatrixXd& grad_log_p,
                                          const NoiseSchedule& schedule, int t, double w) {
  return eps - schedule.noise_scale(t) * w * grad_log_p;
}

SampleResult classifier_guided_sample(const DenoiserModel& model, const NoiseConditionedClassifier& classifier,
                                      const NoiseSchedule& schedule, int target, double w,
                                      const SteeringConfig& config, int n) {
  if (classifier.data_dim() != model.spec().data_dim)
    throw std::invalid_argument("classifier input dimension does not match the model");
  if (n < 1) throw std::invalid_argument("classifier_guided_sample: n must be positive");
  require_matching_schedule(model, schedule);
  const auto start = std::chrono::steady_clock::now();
  const DdimStepMap map = make_ddim_steps(schedule, config.num_inference_steps);
  const int dim = model.spec().data_dim;

  std::vector<CounterRng> rngs;
  Eigen::MatrixXd x(n, dim);
  for (int i = 0; i < n; ++i) {
    rngs.emplace_back(config.seed, static_cast<std::uint64_t>(i));
    x.row(i) = rngs.back().normal_vector(dim).transpose();
  }

  SampleResult result;
  result.traces.resize(static_cast<std::size_t>(n));
  for (int k = 0; k < map.num_inference_steps; ++k) {
    const int t = map.timestep_at(k);
    const Eigen::MatrixXd eps = forward_with_hooks(model, x, t).epsilon;
    const Eigen::MatrixXd grad = classifier.input_gradient(x, t, target);
    if (!grad.allFinite()) throw std::runtime_error("non-finite classifier gradient at step " + std::to_string(k));
    const Eigen::MatrixXd eps_tilde = classifier_guided_epsilon(eps, grad, schedule, t, w);
    const Eigen::MatrixXd x0 = denoised_estimate_rows(x, eps_tilde, schedule, t);
    const Eigen::MatrixXd eps_step = epsilon_from_estimate(x, x0, schedule, t);
    Eigen::MatrixXd z;
    if (config.eta > 0.0) {
      z.resize(n, dim);
      for (int i = 0; i < n; ++i) z.row(i) = rngs[static_cast<std::size_t>(i)].normal_vector(dim).transpose();
    }
    x = ddim_step_rows(x, eps_step, schedule, t, map.previous_timestep(k), config.eta, z);
    const Eigen::VectorXd norms = x0.rowwise().norm();
    for (int i = 0; i < n; ++i)
      result.traces[static_cast<std::size_t>(i)].steps.push_back({t, schedule.sigma(t), false, false, norms(i)});
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  result.samples = x;
  for (int i = 0; i < n; ++i) {
    auto& tr = result.traces[static_cast<std::size_t>(i)];
    tr.final_sample = x.row(i).transpose();
    tr.cost.forward_passes = map.num_inference_steps;
    tr.cost.gradient_passes = map.num_inference_steps;
    tr.cost.wall_seconds = seconds / n;
  }
  return result;
}

SampleResult mean_diff_guided_sample(const DenoiserModel& model, const SteeringDirection& direction,
                                     const NoiseSchedule& schedule, const SteeringConfig& config, int n) {
  SteeringConfig replaced = config;
  for (auto& a : replaced.attributes) {
    if (!a.steers_activations()) continue;
    a.direction = direction;
    a.directions_by_sigma.clear();
  }
  return sample(model, schedule, replaced, n);
}

}  // namespace diffsteer
