#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "diffsteer/schedule.hpp"

namespace diffsteer {

/// Architecture of the epsilon-prediction MLP. Encoder blocks are named
/// enc0..enc{n-1}, then "mid", then decoder blocks dec{n-1}..dec0; decoder
/// block dec_i adds the output of enc_i (additive skip), so its width
/// mirrors enc_i. Every block sees the sinusoidal timestep embedding.
///
/// With the preconditioned output the network body F sees x_t / sqrt(q) and
/// the model returns
///   eps = (beta_t / q) x_t - (alpha_t sigma_data / sqrt(q)) F,  q = beta_t^2 + alpha_t^2 sigma_data^2,
/// where alpha_t = sqrt(abar_t), beta_t = sqrt(1 - abar_t). The x_t term
/// bypasses every block, the way a U-Net carries its input on shallow skips.
/// The plain parameterization returns F directly.
enum class OutputParameterization { epsilon, preconditioned };

std::string to_string(OutputParameterization p);
OutputParameterization output_parameterization_from_string(const std::string& name);

struct DenoiserSpec {
  int data_dim = 2;
  std::vector<int> encoder_widths{64, 64};
  int bottleneck_width = 64;
  int time_embedding_dim = 32;
  OutputParameterization output = OutputParameterization::preconditioned;
  double sigma_data = 0.5;
};

struct BlockSpec {
  std::string name;
  int width = 0;
  int input_width = 0;
  int skip_from = -1;  // index of the encoder block feeding this decoder block
};

class DenoiserModel {
public:
  struct Layer {
    Eigen::Index weight = 0;  // offset of the width x input_width weight (column-major)
    Eigen::Index time_weight = 0;  // offset of the width x time_embedding_dim weight
    Eigen::Index bias = 0;
    int rows = 0;
    int cols = 0;
  };

  DenoiserModel() = default;
  /// Zero-initialised parameters.
  DenoiserModel(DenoiserSpec spec, NoiseSchedule schedule);
  /// He-style Gaussian initialisation from `seed`; output layer starts at zero.
  static DenoiserModel initialize(const DenoiserSpec& spec, const NoiseSchedule& schedule, std::uint64_t seed);

  const DenoiserSpec& spec() const { return spec_; }
  /// Schedule the model was trained under; the preconditioned output depends on it.
  const NoiseSchedule& schedule() const { return schedule_; }
  const std::vector<BlockSpec>& blocks() const { return blocks_; }
  /// (block_name, width) in execution order.
  std::vector<std::pair<std::string, int>> layer_spec() const;
  int block_index(const std::string& name) const;
  bool has_block(const std::string& name) const;
  /// Name of the last encoder block before the bottleneck.
  std::string last_encoder_block() const;

  Eigen::VectorXd& parameters() { return params_; }
  const Eigen::VectorXd& parameters() const { return params_; }
  Eigen::Index parameter_count() const { return params_.size(); }

  /// Layer i < blocks().size() is a block; the final entry is the linear output head.
  const std::vector<Layer>& layers() const { return layers_; }

  std::uint64_t seed = 0;

private:
  DenoiserSpec spec_;
  NoiseSchedule schedule_;
  std::vector<BlockSpec> blocks_;
  std::vector<Layer> layers_;
  Eigen::VectorXd params_;
};

enum class HookMode { record, add_direction };

/// Per-block intervention. add_direction replaces h by h + strength * ||h|| * direction
/// (row-wise) before the block output flows onward, skip connections included.
struct HookAction {
  HookMode mode = HookMode::record;
  Eigen::VectorXd direction;
  double strength = 0.0;

  static HookAction record() { return {}; }
  static HookAction add_direction(Eigen::VectorXd unit_direction, double strength) {
    return {HookMode::add_direction, std::move(unit_direction), strength};
  }
};

/// Several actions may target one block; all steering terms use the
/// pre-steering norm of h. Every hooked block is recorded (after steering).
using Hooks = std::multimap<std::string, HookAction>;

struct ForwardOutput {
  Eigen::MatrixXd epsilon;  // B x D
  std::map<std::string, Eigen::MatrixXd> recorded;  // block -> B x width
};

Eigen::RowVectorXd timestep_embedding(int t, int dim);

/// Batched forward pass: rows of x_t are samples, all at timestep t.
ForwardOutput forward_with_hooks(const DenoiserModel& model, const Eigen::MatrixXd& x_t, int t,
                                 const Hooks& hooks = {});

/// Single-vector convenience form.
std::pair<Eigen::VectorXd, std::map<std::string, Eigen::VectorXd>> forward_with_hooks(
    const DenoiserModel& model, const Eigen::VectorXd& x_t, int t, const Hooks& hooks = {});

struct DivergenceError : std::runtime_error {
  DivergenceError(const std::string& what, int step) : std::runtime_error(what), step(step) {}
  int step;
};

struct DenoiserTrainOptions {
  int steps = 20000;
  int batch_size = 128;
  double learning_rate = 2e-3;
  double final_lr_fraction = 0.05;  // cosine decay target
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
};

/// Mean per-coordinate epsilon MSE and its parameter gradient for explicit
/// (x0, t, eps) triples.
double epsilon_loss(const DenoiserModel& model, const Eigen::MatrixXd& x0,
                    const Eigen::VectorXi& timesteps, const Eigen::MatrixXd& noise,
                    Eigen::VectorXd* gradient = nullptr);

/// Trains with Adam on the standard epsilon-MSE objective. Deterministic given
/// options.seed; steps == 0 returns the initialisation.
DenoiserModel train_denoiser(const Eigen::MatrixXd& data, const NoiseSchedule& schedule, const DenoiserSpec& spec,
                             const DenoiserTrainOptions& options);

/// Throws std::invalid_argument unless `schedule` matches the one the model was trained under.
void require_matching_schedule(const DenoiserModel& model, const NoiseSchedule& schedule);

/// Held-out epsilon MSE with uniformly drawn timesteps; `draws` noisings per row.
double heldout_epsilon_mse(const DenoiserModel& model, const Eigen::MatrixXd& data,
                           std::uint64_t seed, int draws = 4);

}  // namespace diffsteer
