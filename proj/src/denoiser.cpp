#include "diffsteer/denoiser.hpp"

#include <cmath>

#include "diffsteer/rng.hpp"

namespace diffsteer {

namespace {

using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;
using MatMap = Eigen::Map<Eigen::MatrixXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Eigen::MatrixXd silu(const Eigen::MatrixXd& z) {
  return z.unaryExpr([](double v) { return v * sigmoid(v); });
}

Eigen::MatrixXd silu_grad(const Eigen::MatrixXd& z) {
  return z.unaryExpr([](double v) {
    const double s = sigmoid(v);
    return s * (1.0 + v * (1.0 - s));
  });
}

// Per-row coefficients of the output parameterization.
struct OutputCoefficients {
  Eigen::VectorXd in_scale;    // multiplies x_t before the first block
  Eigen::VectorXd skip_scale;  // multiplies x_t in the output
  Eigen::VectorXd body_scale;  // multiplies F in the output
};

OutputCoefficients output_coefficients(const DenoiserModel& model, const Eigen::VectorXi& timesteps) {
  const auto n = timesteps.size();
  OutputCoefficients c{Eigen::VectorXd::Ones(n), Eigen::VectorXd::Zero(n), Eigen::VectorXd::Ones(n)};
  if (model.spec().output == OutputParameterization::epsilon) return c;
  const double sd = model.spec().sigma_data;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double ab = model.schedule().alpha_bar(timesteps(i));
    const double q = (1.0 - ab) + ab * sd * sd;
    c.in_scale(i) = 1.0 / std::sqrt(q);
    c.skip_scale(i) = std::sqrt(1.0 - ab) / q;
    c.body_scale(i) = -std::sqrt(ab) * sd / std::sqrt(q);
  }
  return c;
}

struct Cache {
  std::vector<Eigen::MatrixXd> pre;  // pre-activation per block
  std::vector<Eigen::MatrixXd> out;  // block outputs (post skip)
  Eigen::MatrixXd input;             // scaled network input
};

// temb has either one row (broadcast) or one row per sample.
Eigen::MatrixXd run(const DenoiserModel& model, const Eigen::MatrixXd& x_raw, const OutputCoefficients& coef,
                    const Eigen::MatrixXd& temb, const Hooks* hooks, std::map<std::string, Eigen::MatrixXd>* recorded,
                    Cache* cache) {
  const Eigen::MatrixXd x = coef.in_scale.asDiagonal() * x_raw;
  const auto& blocks = model.blocks();
  const auto& layers = model.layers();
  const double* p = model.parameters().data();
  const Eigen::Index batch = x.rows();

  std::vector<Eigen::MatrixXd> outs(blocks.size());
  if (cache) cache->pre.resize(blocks.size());

  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& L = layers[i];
    ConstMatMap w(p + L.weight, L.rows, L.cols);
    ConstMatMap wt(p + L.time_weight, L.rows, temb.cols());
    ConstVecMap b(p + L.bias, L.rows);
    const Eigen::MatrixXd& input = i == 0 ? x : outs[i - 1];

    Eigen::MatrixXd z = input * w.transpose();
    if (temb.rows() == 1) {
      const Eigen::RowVectorXd shift = temb * wt.transpose() + b.transpose();
      z.rowwise() += shift;
    } else {
      z += temb * wt.transpose();
      z.rowwise() += b.transpose();
    }
    Eigen::MatrixXd a = silu(z);
    if (blocks[i].skip_from >= 0) a += outs[static_cast<std::size_t>(blocks[i].skip_from)];

    if (hooks) {
      auto [first, last] = hooks->equal_range(blocks[i].name);
      if (first != last) {
        const Eigen::VectorXd norms = a.rowwise().norm();
        Eigen::RowVectorXd shift = Eigen::RowVectorXd::Zero(a.cols());
        bool steer = false;
        for (auto it = first; it != last; ++it) {
          if (it->second.mode != HookMode::add_direction) continue;
          if (it->second.direction.size() != a.cols())
            throw std::invalid_argument("hook direction length mismatch for block '" + blocks[i].name + "'");
          shift += it->second.strength * it->second.direction.transpose();
          steer = true;
        }
        if (steer) a += norms * shift;
        if (recorded) (*recorded)[blocks[i].name] = a;
      }
    }
    if (cache) cache->pre[i] = std::move(z);
    outs[i] = std::move(a);
  }

  const auto& head = layers.back();
  ConstMatMap wo(p + head.weight, head.rows, head.cols);
  ConstVecMap bo(p + head.bias, head.rows);
  Eigen::MatrixXd body = outs.back() * wo.transpose();
  body.rowwise() += bo.transpose();
  (void)batch;
  if (cache) {
    cache->out = std::move(outs);
    cache->input = x;
  }
  return coef.skip_scale.asDiagonal() * x_raw + coef.body_scale.asDiagonal() * body;
}

void validate_hooks(const DenoiserModel& model, const Hooks& hooks) {
  for (const auto& [name, action] : hooks) {
    const int idx = model.block_index(name);
    if (action.mode == HookMode::add_direction &&
        action.direction.size() != model.blocks()[static_cast<std::size_t>(idx)].width)
      throw std::invalid_argument("hook direction length mismatch for block '" + name + "'");
    if (action.mode == HookMode::add_direction && std::abs(action.direction.norm() - 1.0) > 1e-6)
      throw std::invalid_argument("hook direction for block '" + name + "' is not unit norm");
  }
}

}  // namespace

std::string to_string(OutputParameterization p) {
  return p == OutputParameterization::epsilon ? "epsilon" : "preconditioned";
}

OutputParameterization output_parameterization_from_string(const std::string& name) {
  if (name == "epsilon") return OutputParameterization::epsilon;
  if (name == "preconditioned") return OutputParameterization::preconditioned;
  throw std::invalid_argument("unknown output parameterization '" + name + "'");
}

DenoiserModel::DenoiserModel(DenoiserSpec spec, NoiseSchedule schedule)
    : spec_(std::move(spec)), schedule_(std::move(schedule)) {
  if (spec_.data_dim < 1 || spec_.encoder_widths.empty() || spec_.bottleneck_width < 1 ||
      spec_.time_embedding_dim < 2 || spec_.time_embedding_dim % 2 != 0 || !(spec_.sigma_data > 0.0))
    throw std::invalid_argument("invalid denoiser spec");
  if (schedule_.steps() < 1) throw std::invalid_argument("denoiser needs a noise schedule");
  const int n = static_cast<int>(spec_.encoder_widths.size());
  int prev = spec_.data_dim;
  for (int i = 0; i < n; ++i) {
    blocks_.push_back({"enc" + std::to_string(i), spec_.encoder_widths[static_cast<std::size_t>(i)], prev, -1});
    prev = blocks_.back().width;
  }
  blocks_.push_back({"mid", spec_.bottleneck_width, prev, -1});
  prev = spec_.bottleneck_width;
  for (int i = n - 1; i >= 0; --i) {
    blocks_.push_back({"dec" + std::to_string(i), spec_.encoder_widths[static_cast<std::size_t>(i)], prev, i});
    prev = blocks_.back().width;
  }

  Eigen::Index offset = 0;
  for (const auto& b : blocks_) {
    Layer L;
    L.rows = b.width;
    L.cols = b.input_width;
    L.weight = offset;
    offset += static_cast<Eigen::Index>(L.rows) * L.cols;
    L.time_weight = offset;
    offset += static_cast<Eigen::Index>(L.rows) * spec_.time_embedding_dim;
    L.bias = offset;
    offset += L.rows;
    layers_.push_back(L);
  }
  Layer head;
  head.rows = spec_.data_dim;
  head.cols = prev;
  head.weight = offset;
  offset += static_cast<Eigen::Index>(head.rows) * head.cols;
  head.time_weight = offset;  // unused by the head
  head.bias = offset;
  offset += head.rows;
  layers_.push_back(head);
  params_ = Eigen::VectorXd::Zero(offset);
}

DenoiserModel DenoiserModel::initialize(const DenoiserSpec& spec, const NoiseSchedule& schedule, std::uint64_t seed) {
  DenoiserModel m(spec, schedule);
  m.seed = seed;
  CounterRng rng(seed, 0xde0);
  for (std::size_t i = 0; i + 1 < m.layers_.size(); ++i) {
    const auto& L = m.layers_[i];
    const double scale = std::sqrt(2.0 / (L.cols + spec.time_embedding_dim));
    for (Eigen::Index j = L.weight; j < L.bias; ++j) m.params_(j) = scale * rng.normal();
  }
  return m;
}

std::vector<std::pair<std::string, int>> DenoiserModel::layer_spec() const {
  std::vector<std::pair<std::string, int>> out;
  for (const auto& b : blocks_) out.emplace_back(b.name, b.width);
  return out;
}

int DenoiserModel::block_index(const std::string& name) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    if (blocks_[i].name == name) return static_cast<int>(i);
  throw std::invalid_argument("unknown block '" + name + "'");
}

bool DenoiserModel::has_block(const std::string& name) const {
  for (const auto& b : blocks_)
    if (b.name == name) return true;
  return false;
}

std::string DenoiserModel::last_encoder_block() const {
  return "enc" + std::to_string(spec_.encoder_widths.size() - 1);
}

Eigen::RowVectorXd timestep_embedding(int t, int dim) {
  const int half = dim / 2;
  Eigen::RowVectorXd e(dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e(i) = std::sin(t * freq);
    e(half + i) = std::cos(t * freq);
  }
  return e;
}

ForwardOutput forward_with_hooks(const DenoiserModel& model, const Eigen::MatrixXd& x_t, int t, const Hooks& hooks) {
  if (x_t.cols() != model.spec().data_dim) throw std::invalid_argument("forward: input dimension mismatch");
  if (t < 1 || t > model.schedule().steps()) throw std::out_of_range("forward: timestep outside [1, T]");
  validate_hooks(model, hooks);
  ForwardOutput out;
  const Eigen::MatrixXd temb = timestep_embedding(t, model.spec().time_embedding_dim);
  const OutputCoefficients coef = output_coefficients(model, Eigen::VectorXi::Constant(x_t.rows(), t));
  out.epsilon = run(model, x_t, coef, temb, hooks.empty() ? nullptr : &hooks, &out.recorded, nullptr);
  return out;
}

std::pair<Eigen::VectorXd, std::map<std::string, Eigen::VectorXd>> forward_with_hooks(const DenoiserModel& model,
                                                                                      const Eigen::VectorXd& x_t,
                                                                                      int t, const Hooks& hooks) {
  auto batch = forward_with_hooks(model, Eigen::MatrixXd(x_t.transpose()), t, hooks);
  std::map<std::string, Eigen::VectorXd> rec;
  for (auto& [name, m] : batch.recorded) rec[name] = m.row(0).transpose();
  return {batch.epsilon.row(0).transpose(), std::move(rec)};
}

double epsilon_loss(const DenoiserModel& model, const Eigen::MatrixXd& x0, const Eigen::VectorXi& timesteps,
                    const Eigen::MatrixXd& noise, Eigen::VectorXd* gradient) {
  const NoiseSchedule& schedule = model.schedule();
  const Eigen::Index batch = x0.rows();
  const int edim = model.spec().time_embedding_dim;
  Eigen::MatrixXd xt(batch, x0.cols());
  Eigen::MatrixXd temb(batch, edim);
  for (Eigen::Index i = 0; i < batch; ++i) {
    const int t = timesteps(i);
    xt.row(i) = schedule.signal_scale(t) * x0.row(i) + schedule.noise_scale(t) * noise.row(i);
    temb.row(i) = timestep_embedding(t, edim);
  }

  Cache cache;
  const OutputCoefficients coef = output_coefficients(model, timesteps);
  const Eigen::MatrixXd eps_hat = run(model, xt, coef, temb, nullptr, nullptr, gradient ? &cache : nullptr);
  const Eigen::MatrixXd diff = eps_hat - noise;
  const double count = static_cast<double>(diff.size());
  const double loss = diff.squaredNorm() / count;
  if (!gradient) return loss;

  gradient->setZero(model.parameter_count());
  double* g = gradient->data();
  const double* p = model.parameters().data();
  const auto& blocks = model.blocks();
  const auto& layers = model.layers();

  const Eigen::MatrixXd d_eps = coef.body_scale.asDiagonal() * ((2.0 / count) * diff);
  const auto& head = layers.back();
  MatMap(g + head.weight, head.rows, head.cols) += d_eps.transpose() * cache.out.back();
  VecMap(g + head.bias, head.rows) += d_eps.colwise().sum().transpose();

  std::vector<Eigen::MatrixXd> d_out(blocks.size());
  d_out.back() = d_eps * ConstMatMap(p + head.weight, head.rows, head.cols);
  for (std::size_t k = blocks.size(); k-- > 0;) {
    const auto& L = layers[k];
    if (blocks[k].skip_from >= 0) {
      auto& target = d_out[static_cast<std::size_t>(blocks[k].skip_from)];
      if (target.size() == 0) target = d_out[k];
      else target += d_out[k];
    }
    const Eigen::MatrixXd dz = d_out[k].cwiseProduct(silu_grad(cache.pre[k]));
    const Eigen::MatrixXd& input = k == 0 ? cache.input : cache.out[k - 1];
    MatMap(g + L.weight, L.rows, L.cols) += dz.transpose() * input;
    MatMap(g + L.time_weight, L.rows, edim) += dz.transpose() * temb;
    VecMap(g + L.bias, L.rows) += dz.colwise().sum().transpose();
    if (k > 0) {
      const Eigen::MatrixXd back = dz * ConstMatMap(p + L.weight, L.rows, L.cols);
      if (d_out[k - 1].size() == 0) d_out[k - 1] = back;
      else d_out[k - 1] += back;
    }
  }
  return loss;
}

DenoiserModel train_denoiser(const Eigen::MatrixXd& data, const NoiseSchedule& schedule, const DenoiserSpec& spec,
                             const DenoiserTrainOptions& options) {
  if (data.rows() < 2) throw std::invalid_argument("train_denoiser needs at least two rows");
  if (data.cols() != spec.data_dim) throw std::invalid_argument("train_denoiser: data dimension mismatch");
  if (options.steps < 0 || options.batch_size < 1) throw std::invalid_argument("train_denoiser: invalid options");

  DenoiserModel model = DenoiserModel::initialize(spec, schedule, options.seed);
  const Eigen::Index n_params = model.parameter_count();
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(n_params);
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(n_params);
  Eigen::VectorXd grad(n_params);

  const int batch = options.batch_size;
  Eigen::MatrixXd x0(batch, data.cols());
  Eigen::VectorXi ts(batch);
  for (int step = 0; step < options.steps; ++step) {
    CounterRng rng(options.seed, static_cast<std::uint64_t>(step) + 1);
    for (int i = 0; i < batch; ++i) {
      x0.row(i) = data.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(data.rows()))));
      ts(i) = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.steps())));
    }
    const Eigen::MatrixXd noise = rng.normal_matrix(batch, data.cols());

    const double loss = epsilon_loss(model, x0, ts, noise, &grad);
    if (!std::isfinite(loss) || !grad.allFinite())
      throw DivergenceError("denoiser training diverged at step " + std::to_string(step), step);

    const double progress = options.steps > 1 ? static_cast<double>(step) / (options.steps - 1) : 0.0;
    const double lr = options.learning_rate *
                      (options.final_lr_fraction +
                       (1.0 - options.final_lr_fraction) * 0.5 * (1.0 + std::cos(progress * 3.14159265358979323846)));
    m1 = options.adam_beta1 * m1 + (1.0 - options.adam_beta1) * grad;
    m2 = options.adam_beta2 * m2 + (1.0 - options.adam_beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(options.adam_beta1, step + 1);
    const double c2 = 1.0 - std::pow(options.adam_beta2, step + 1);
    model.parameters().array() -=
        lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + options.adam_epsilon);
  }
  return model;
}

void require_matching_schedule(const DenoiserModel& model, const NoiseSchedule& schedule) {
  const NoiseSchedule& own = model.schedule();
  if (own.steps() != schedule.steps() || own.kind() != schedule.kind() || own.betas() != schedule.betas())
    throw std::invalid_argument("noise schedule does not match the one the model was trained under");
}

double heldout_epsilon_mse(const DenoiserModel& model, const Eigen::MatrixXd& data, std::uint64_t seed, int draws) {
  const NoiseSchedule& schedule = model.schedule();
  double total = 0.0;
  for (int d = 0; d < draws; ++d) {
    CounterRng rng(seed, 0x4e1d0000ULL + static_cast<std::uint64_t>(d));
    Eigen::VectorXi ts(data.rows());
    for (Eigen::Index i = 0; i < data.rows(); ++i)
      ts(i) = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.steps())));
    const Eigen::MatrixXd noise = rng.normal_matrix(data.rows(), data.cols());
    total += epsilon_loss(model, data, ts, noise);
  }
  return total / draws;
}

}  // namespace diffsteer
