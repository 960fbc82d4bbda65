#include <algorithm>
#include <chrono>
#include <functional>
#include <limits>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "diffsteer/activations.hpp"
#include "diffsteer/analysis.hpp"
#include "diffsteer/baselines.hpp"
#include "diffsteer/class_stats.hpp"
#include "diffsteer/datasets.hpp"
#include "diffsteer/io.hpp"
#include "diffsteer/rfm.hpp"
#include "diffsteer/sampler.hpp"
#include "run_config.hpp"

using namespace diffsteer;
using namespace diffsteer::cli;

namespace {

/// Flags shared by every subcommand, plus the values each one reads.
struct Options {
  std::optional<std::string> config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<int> steps;

  std::string data, labels, model, activations, classifier, samples, traces;
  std::vector<std::string> inputs;
  std::string process = "forward";
  std::string block;
  std::string method = "steer";
  int t = 0;
  int n = 0;
  int k = 8;
  int target = 0;
  int folds = 0;
  std::optional<double> w;
  std::optional<double> bandwidth, ridge, learning_rate;
  std::optional<int> iters, top_k;
  bool center_grads = false, dual = false;
};

/// One command's run directory: artifacts first, then manifest.json.
class Run {
public:
  Run(std::string command, const Options& opt, int argc, char** argv) : command_(std::move(command)), out_(opt.out) {
    for (int i = 1; i < argc; ++i) argv_.emplace_back(argv[i]);
    fs::create_directories(out_);
    start_ = std::chrono::steady_clock::now();
  }

  fs::path out(const std::string& name) const { return out_ / name; }

  /// Records an input file (and its matrix sidecar when present) by hash.
  void input(const fs::path& p) {
    inputs_[p.string()] = io::sha256_file(p);
    const fs::path side = io::sidecar_path(p);
    if (p.extension() == ".bin" && fs::exists(side)) inputs_[side.string()] = io::sha256_file(side);
  }
  void input_activations(const fs::path& p) {
    input(p);
    fs::path labels = p;
    labels.replace_extension(".labels.bin");
    if (fs::exists(labels)) input(labels);
  }

  void finish(const json& config, std::optional<std::uint64_t> seed, json extra = json::object()) {
    json outputs = json::object();
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(out_))
      if (e.is_regular_file() && e.path().filename() != "manifest.json" && e.path().filename().string()[0] != '.')
        files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) outputs[f.filename().string()] = io::sha256_file(f);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    json m = {{"tool_version", io::kToolVersion},
              {"command", command_},
              {"argv", argv_},
              {"config", config},
              {"inputs", inputs_},
              {"outputs", outputs},
              {"seed", seed ? json(*seed) : json(nullptr)},
              {"wall_seconds", wall}};
    for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
    io::write_atomic(out("manifest.json"), m.dump(2) + "\n");
  }

private:
  std::string command_;
  fs::path out_;
  std::vector<std::string> argv_;
  json inputs_ = json::object();
  std::chrono::steady_clock::time_point start_;
};

NoiseSchedule model_schedule(const RunConfig& rc, const DenoiserModel& model) {
  // An absent schedule section means: use the one stored with the model.
  if (!rc.raw.contains("schedule")) return model.schedule();
  const NoiseSchedule s = rc.schedule.build();
  try {
    require_matching_schedule(model, s);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("schedule: ") + e.what());
  }
  return s;
}

Dataset load_dataset(Run& run, const Options& opt) {
  run.input(opt.data);
  run.input(opt.labels);
  Dataset d;
  d.data = io::read_matrix(opt.data).matrix;
  d.labels = io::read_labels(opt.labels);
  if (d.labels.size() != d.data.rows())
    throw ConfigError("--labels: " + opt.labels + " has " + std::to_string(d.labels.size()) + " rows, --data has " +
                      std::to_string(d.data.rows()));
  return d;
}

DenoiserModel load_model(Run& run, const std::string& path) {
  run.input(path);
  return io::load_model(path);
}

std::string format_double(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

/// One JSON line per step per sample, then a cost line per sample. Wall time
/// is left out so the file hashes identically on reruns.
std::string traces_jsonl(const SampleResult& r) {
  std::string out;
  for (std::size_t i = 0; i < r.traces.size(); ++i) {
    const auto& tr = r.traces[i];
    for (std::size_t k = 0; k < tr.steps.size(); ++k) {
      const auto& s = tr.steps[k];
      out += json{{"type", "step"},
                  {"sample", i},
                  {"step", k},
                  {"t", s.t},
                  {"sigma", s.sigma},
                  {"applied_rfm", s.applied_rfm},
                  {"applied_alignment", s.applied_alignment},
                  {"x_hat0_norm", s.x_hat0_norm}}
                 .dump();
      out += '\n';
    }
    out += json{{"type", "cost"},
                {"sample", i},
                {"forward_passes", tr.cost.forward_passes},
                {"gradient_passes", tr.cost.gradient_passes}}
               .dump();
    out += '\n';
  }
  return out;
}

json cost_json(const CostLedger& c, long steps, long n) {
  return {{"forward_passes", c.forward_passes},
          {"gradient_passes", c.gradient_passes},
          {"forward_passes_per_step", n * steps > 0 ? static_cast<double>(c.forward_passes) / (n * steps) : 0.0},
          {"gradient_passes_per_step", n * steps > 0 ? static_cast<double>(c.gradient_passes) / (n * steps) : 0.0},
          {"wall_seconds", c.wall_seconds}};
}

SteeringConfig sampling_config(const RunConfig& rc, const Options& opt, bool load_attributes) {
  // The classifier baseline reads only the scalar fields.
  SteeringFiles files = rc.steering;
  if (!load_attributes) {
    files.attributes.clear();
    files.uncond_stats.reset();
  }
  SteeringConfig c = resolve_steering(files);
  c.seed = *opt.seed;
  if (opt.threads) c.workers = *opt.threads;
  if (opt.steps) c.num_inference_steps = *opt.steps;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("steering: ") + e.what());
  }
  return c;
}

// ---- subcommands ----

void cmd_make_data(Run& run, RunConfig& rc, const Options& opt) {
  if (!rc.data) throw ConfigError("data: make-data needs a data section in --config");
  if (opt.n > 0) rc.data->n = opt.n;
  if (opt.seed) rc.data->seed = *opt.seed;
  const Dataset d = make_dataset(*rc.data);
  io::write_matrix(run.out("data.bin"), d.data, {{"semantic", "data"}, {"kind", rc.data->kind}});
  io::write_labels(run.out("labels.bin"), d.labels);
  run.finish(rc.raw, rc.data->seed);
}

void cmd_train_denoiser(Run& run, RunConfig& rc, const Options& opt) {
  run.input(opt.data);
  const Eigen::MatrixXd data = io::read_matrix(opt.data).matrix;
  DenoiserSpec spec = rc.model;
  spec.data_dim = static_cast<int>(data.cols());
  if (opt.steps) rc.train.steps = *opt.steps;
  if (opt.seed) rc.train.seed = *opt.seed;
  if (opt.learning_rate) rc.train.learning_rate = *opt.learning_rate;
  const DenoiserModel model = train_denoiser(data, rc.schedule.build(), spec, rc.train);
  io::save_model(run.out("model.bin"), model);
  const double mse = heldout_epsilon_mse(model, data, rc.train.seed + 1);
  io::write_atomic(run.out("train.json"),
                   json{{"steps", rc.train.steps}, {"epsilon_mse", mse}, {"parameters", model.parameter_count()}}.dump(2) +
                       "\n");
  run.finish(rc.raw, rc.train.seed);
}

void cmd_collect(Run& run, RunConfig& rc, const Options& opt) {
  const DenoiserModel model = load_model(run, opt.model);
  const NoiseSchedule schedule = model_schedule(rc, model);
  const std::string block = opt.block.empty() ? model.last_encoder_block() : opt.block;
  if (!model.has_block(block)) throw ConfigError("--block: unknown block \"" + block + "\"");
  if (opt.t < 1 || opt.t > schedule.steps())
    throw ConfigError("--t: must lie in [1, " + std::to_string(schedule.steps()) + "]");
  const Process process = [&] {
    try {
      return process_from_string(opt.process);
    } catch (const std::exception&) {
      throw ConfigError("--process: expected forward or reverse");
    }
  }();
  ActivationBatch batch;
  if (process == Process::forward) {
    if (opt.data.empty() || opt.labels.empty()) throw ConfigError("--data and --labels are required for --process forward");
    const Dataset d = load_dataset(run, opt);
    batch = collect_forward_activations(model, d.data, d.labels, schedule, opt.t, block, *opt.seed);
  } else {
    if (opt.n <= 0) throw ConfigError("--n: reverse collection needs a positive sample count");
    const int steps = opt.steps.value_or(rc.steering.numeric.num_inference_steps);
    const DdimStepMap ddim = make_ddim_steps(schedule, steps);
    if (!std::binary_search(ddim.step_indices.begin(), ddim.step_indices.end(), opt.t))
      throw ConfigError("--t: " + std::to_string(opt.t) + " is not visited by " + std::to_string(steps) +
                        "-step DDIM (visited timesteps are 1 + j*" + std::to_string(schedule.steps() / steps) + ")");
    const Oracle oracle = oracle_for(rc);
    auto rev = collect_reverse_activations(model, schedule, ddim, opt.n, block, {opt.t}, *opt.seed, oracle);
    batch = std::move(rev.batches.front());
  }
  io::save_activations(run.out("activations.bin"), batch);
  run.finish(rc.raw, opt.seed);
}

void cmd_fit_stats(Run& run, RunConfig& rc, const Options& opt) {
  const Dataset d = load_dataset(run, opt);
  if (opt.k < 1) throw ConfigError("--k: must be >= 1");
  for (const auto& [id, stats] : fit_class_statistics(d.data, d.labels, opt.k))
    io::save_stats(run.out("stats_" + id + ".bin"), stats);
  run.finish(rc.raw, std::nullopt);
}

void cmd_train_rfm(Run& run, RunConfig& rc, const Options& opt) {
  run.input_activations(opt.activations);
  const ActivationBatch batch = io::load_activations(opt.activations);
  RfmHyper h = rc.rfm;
  if (opt.bandwidth) h.bandwidth = *opt.bandwidth;
  if (opt.ridge) h.ridge = *opt.ridge;
  if (opt.iters) h.iterations = *opt.iters;
  if (opt.top_k) h.top_k = *opt.top_k;
  if (opt.center_grads) h.center_grads = true;
  if (opt.dual) h.dual = true;
  if (h.bandwidth <= 0 || h.ridge <= 0 || h.iterations < 0 || h.top_k < 1)
    throw ConfigError("train-rfm: need bandwidth > 0, ridge > 0, iters >= 0, top-k >= 1");
  if ((batch.labels.array() == opt.target).count() == 0)
    throw ConfigError("--class: no activations carry label " + std::to_string(opt.target));
  const RfmResult r = train_rfm(batch, opt.target, h);
  io::save_direction(run.out("direction.bin"), r.direction);
  run.finish(rc.raw, std::nullopt,
             {{"rfm", {{"bandwidth", h.bandwidth},
                       {"ridge", h.ridge},
                       {"iterations", h.iterations},
                       {"top_k", h.top_k},
                       {"center_grads", h.center_grads},
                       {"dual", h.dual}}}});
}

void cmd_train_classifier(Run& run, RunConfig& rc, const Options& opt) {
  const Dataset d = load_dataset(run, opt);
  if (opt.steps) rc.classifier.steps = *opt.steps;
  if (opt.seed) rc.classifier.seed = *opt.seed;
  if (opt.learning_rate) rc.classifier.learning_rate = *opt.learning_rate;
  const auto c = train_noise_classifier(d.data, d.labels, rc.schedule.build(), rc.classifier);
  io::save_classifier(run.out("classifier.bin"), c);
  run.finish(rc.raw, rc.classifier.seed);
}

SampleResult run_sampler(Run& run, const RunConfig& rc, const Options& opt, const DenoiserModel& model,
                         const NoiseSchedule& schedule, const std::string& method, int n) {
  if (method == "steer") return sample(model, schedule, sampling_config(rc, opt, true), n);
  if (method == "classifier") {
    if (opt.classifier.empty()) throw ConfigError("--classifier: required for --method classifier");
    if (!opt.w) throw ConfigError("--w: required for --method classifier");
    run.input(opt.classifier);
    const auto c = io::load_classifier(opt.classifier);
    if (opt.target < 0 || opt.target >= c.num_classes()) throw ConfigError("--class: outside the classifier's labels");
    return classifier_guided_sample(model, c, schedule, opt.target, *opt.w, sampling_config(rc, opt, false), n);
  }
  if (method == "meandiff") {
    if (opt.activations.empty()) throw ConfigError("--activations: required for --method meandiff");
    run.input_activations(opt.activations);
    const auto batch = io::load_activations(opt.activations);
    if ((batch.labels.array() == opt.target).count() == 0)
      throw ConfigError("--class: no activations carry label " + std::to_string(opt.target));
    const SteeringDirection md = mean_difference_direction(batch, opt.target);
    // Attribute entries only need w_rfm here; their RFM files are replaced anyway.
    SteeringFiles files = rc.steering;
    for (auto& a : files.attributes) {
      a.direction.reset();
      a.directions_by_sigma.clear();
    }
    RunConfig local = rc;
    local.steering = files;
    SteeringConfig c = sampling_config(local, opt, true);
    for (auto& a : c.attributes)
      if (a.w_rfm != 0.0) a.direction = md;
    return mean_diff_guided_sample(model, md, schedule, c, n);
  }
  throw ConfigError("--method: expected steer, classifier or meandiff");
}

void record_steering_inputs(Run& run, const RunConfig& rc, const std::string& method) {
  if (method == "classifier") return;
  if (rc.steering.uncond_stats && fs::exists(*rc.steering.uncond_stats)) run.input(*rc.steering.uncond_stats);
  for (const auto& a : rc.steering.attributes) {
    if (method == "steer") {
      if (a.direction && fs::exists(*a.direction)) run.input(*a.direction);
      for (const auto& p : a.directions_by_sigma)
        if (fs::exists(p)) run.input(p);
    }
    if (a.class_stats && fs::exists(*a.class_stats)) run.input(*a.class_stats);
  }
}

void cmd_sample(Run& run, RunConfig& rc, const Options& opt) {
  const DenoiserModel model = load_model(run, opt.model);
  const NoiseSchedule schedule = model_schedule(rc, model);
  if (opt.n <= 0) throw ConfigError("--n: must be positive");
  record_steering_inputs(run, rc, opt.method);
  const SampleResult r = run_sampler(run, rc, opt, model, schedule, opt.method, opt.n);
  io::write_matrix(run.out("samples.bin"), r.samples, {{"semantic", "samples"}, {"method", opt.method}});
  io::write_atomic(run.out("traces.jsonl"), traces_jsonl(r));
  const CostLedger cost = cost_report(r.traces);
  const long steps = r.traces.empty() ? 0 : static_cast<long>(r.traces.front().steps.size());
  run.finish(rc.raw, opt.seed, {{"method", opt.method}, {"cost", cost_json(cost, steps, opt.n)}});
}

void cmd_probe(Run& run, RunConfig& rc, const Options& opt) {
  const int folds = opt.folds > 0 ? opt.folds : rc.probe.folds;
  const std::uint64_t seed = opt.seed.value_or(rc.probe.seed);
  if (folds < 2) throw ConfigError("--folds: must be >= 2");
  ProbeReport report;
  for (const auto& path : opt.inputs) {
    run.input_activations(path);
    const ActivationBatch b = io::load_activations(path);
    ProbeCell cell{b.block_name, b.sigma, b.process, linear_probe(b, folds, seed, rc.probe.ridge), b.features.rows()};
    try {
      report.add(cell);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }
  io::write_atomic(run.out("probe.csv"), report.to_csv());
  json cells = json::array();
  for (const auto& c : report.cells)
    cells.push_back({{"block", c.block}, {"sigma", c.sigma}, {"process", to_string(c.process)}, {"accuracy", c.accuracy}, {"n", c.n}});
  io::write_atomic(run.out("probe.json"),
                   json{{"probe_kind", report.probe_kind}, {"folds", folds}, {"ridge", rc.probe.ridge}, {"seed", seed},
                        {"cells", cells}}
                           .dump(2) +
                       "\n");
  run.finish(rc.raw, seed);
}

void cmd_transfer(Run& run, RunConfig& rc, const Options& opt) {
  std::vector<SteeringDirection> dirs;
  for (const auto& path : opt.inputs) {
    run.input(path);
    dirs.push_back(io::load_direction(path));
  }
  std::stable_sort(dirs.begin(), dirs.end(),
                   [](const SteeringDirection& a, const SteeringDirection& b) { return a.source_sigma < b.source_sigma; });
  TransferMatrix tm;
  try {
    tm = transfer_matrix(dirs);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("--directions: ") + e.what());
  }
  std::string csv = "block,sigma_i,sigma_j,cosine\n";
  json rows = json::array();
  for (Eigen::Index i = 0; i < tm.matrix.rows(); ++i) {
    std::vector<double> row;
    for (Eigen::Index j = 0; j < tm.matrix.cols(); ++j) {
      row.push_back(tm.matrix(i, j));
      csv += tm.block + "," + format_double(tm.sigmas[i]) + "," + format_double(tm.sigmas[j]) + "," +
             format_double(tm.matrix(i, j)) + "\n";
    }
    rows.push_back(row);
  }
  io::write_atomic(run.out("transfer.csv"), csv);
  io::write_atomic(run.out("transfer.json"),
                   json{{"block", tm.block}, {"sigmas", tm.sigmas}, {"matrix", rows}}.dump(2) + "\n");
  run.finish(rc.raw, std::nullopt);
}

CostLedger read_trace_costs(const fs::path& path, long& steps_out, long& samples_out) {
  CostLedger c;
  std::istringstream in(io::read_file(path));
  std::string line;
  long steps = 0, samples = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    const std::string type = j.at("type").get<std::string>();
    if (type == "step") ++steps;
    if (type == "cost") {
      ++samples;
      c.forward_passes += j.at("forward_passes").get<long>();
      c.gradient_passes += j.at("gradient_passes").get<long>();
    }
  }
  steps_out = samples ? steps / samples : 0;
  samples_out = samples;
  return c;
}

void cmd_eval(Run& run, RunConfig& rc, const Options& opt) {
  run.input(opt.samples);
  const Eigen::MatrixXd samples = io::read_matrix(opt.samples).matrix;
  const Dataset ref = load_dataset(run, opt);
  if (samples.cols() != ref.data.cols()) throw ConfigError("--samples: dimension differs from --data");
  const Oracle oracle = oracle_for(rc);
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < ref.labels.size(); ++i)
    if (ref.labels(i) == opt.target) rows.push_back(i);
  if (rows.empty()) throw ConfigError("--class: reference data has no rows with label " + std::to_string(opt.target));
  const Eigen::MatrixXd target_ref = ref.data(rows, Eigen::all);

  EvalReport report;
  ClassEval ce;
  ce.class_id = opt.target;
  ce.accuracy = evaluate_accuracy(samples, oracle, opt.target);
  ce.frechet_distance = frechet_distance(samples, target_ref);
  report.classes.push_back(ce);
  report.mean_accuracy = ce.accuracy;
  report.mean_frechet_distance = ce.frechet_distance;
  long steps = 0, n = 0;
  if (!opt.traces.empty()) {
    run.input(opt.traces);
    report.cost = read_trace_costs(opt.traces, steps, n);
  }
  json classes = json::array();
  for (const auto& c : report.classes)
    classes.push_back({{"class", c.class_id}, {"accuracy", c.accuracy}, {"frechet_distance", c.frechet_distance}});
  json out = {{"classes", classes},
              {"mean_accuracy", report.mean_accuracy},
              {"mean_frechet_distance", report.mean_frechet_distance},
              {"frechet_reference", "target-class rows of --data"},
              {"n_samples", samples.rows()}};
  if (!opt.traces.empty()) {
    json cost = cost_json(report.cost, steps, n);
    cost.erase("wall_seconds");
    out["cost"] = cost;
  }
  io::write_atomic(run.out("eval.json"), out.dump(2) + "\n");
  run.finish(rc.raw, std::nullopt);
}

void cmd_bench(Run& run, RunConfig& rc, const Options& opt) {
  const DenoiserModel model = load_model(run, opt.model);
  const NoiseSchedule schedule = model_schedule(rc, model);
  if (opt.n <= 0) throw ConfigError("--n: must be positive");
  record_steering_inputs(run, rc, "steer");
  json methods = json::object();
  auto timed = [&](const std::string& name, const std::function<SampleResult()>& f) {
    const auto t0 = std::chrono::steady_clock::now();
    const SampleResult r = f();
    CostLedger c = cost_report(r.traces);
    c.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const long steps = r.traces.empty() ? 0 : static_cast<long>(r.traces.front().steps.size());
    methods[name] = cost_json(c, steps, opt.n);
  };
  timed("unguided", [&] {
    SteeringConfig c = rc.steering.numeric;
    c.seed = *opt.seed;
    c.rfm_window.reset();
    c.sigma_end = std::numeric_limits<double>::infinity();
    if (opt.threads) c.workers = *opt.threads;
    if (opt.steps) c.num_inference_steps = *opt.steps;
    return sample(model, schedule, c, opt.n);
  });
  timed("steer", [&] { return run_sampler(run, rc, opt, model, schedule, "steer", opt.n); });
  if (!opt.classifier.empty()) timed("classifier", [&] { return run_sampler(run, rc, opt, model, schedule, "classifier", opt.n); });
  const double base = methods["unguided"]["wall_seconds"].get<double>();
  for (auto it = methods.begin(); it != methods.end(); ++it)
    it.value()["wall_ratio_to_unguided"] = base > 0 ? it.value()["wall_seconds"].get<double>() / base : 0.0;
  io::write_atomic(run.out("bench.json"), json{{"n", opt.n}, {"methods", methods}}.dump(2) + "\n");
  run.finish(rc.raw, opt.seed);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient-free diffusion steering toolkit", "diffsteer"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(io::kToolVersion));
  Options opt;

  auto common = [&](CLI::App* s, bool needs_seed) {
    s->add_option("--config", opt.config, "JSON run config")->check(CLI::ExistingFile);
    s->add_option("--out", opt.out, "output directory")->required();
    auto* seed = s->add_option("--seed", opt.seed, "64-bit seed");
    if (needs_seed) seed->required();
  };
  auto* make = app.add_subcommand("make-data", "draw a labelled dataset from the config's data section");
  common(make, false);
  make->add_option("--n", opt.n, "number of rows");

  auto* train = app.add_subcommand("train-denoiser", "train the epsilon MLP");
  common(train, false);
  train->add_option("--data", opt.data)->required()->check(CLI::ExistingFile);
  train->add_option("--steps", opt.steps);
  train->add_option("--lr", opt.learning_rate);

  auto* collect = app.add_subcommand("collect-activations", "record one block's activations at one timestep");
  common(collect, true);
  collect->add_option("--model", opt.model)->required()->check(CLI::ExistingFile);
  collect->add_option("--process", opt.process)->check(CLI::IsMember({"forward", "reverse"}));
  collect->add_option("--block", opt.block, "block name (default: last encoder block)");
  collect->add_option("--t", opt.t, "1-based timestep")->required();
  collect->add_option("--data", opt.data)->check(CLI::ExistingFile);
  collect->add_option("--labels", opt.labels)->check(CLI::ExistingFile);
  collect->add_option("--n", opt.n, "reverse trajectories");
  collect->add_option("--steps", opt.steps, "DDIM steps for reverse collection");

  auto* stats = app.add_subcommand("fit-stats", "per-class and pooled PCA statistics");
  common(stats, false);
  stats->add_option("--data", opt.data)->required()->check(CLI::ExistingFile);
  stats->add_option("--labels", opt.labels)->required()->check(CLI::ExistingFile);
  stats->add_option("--k", opt.k)->required();

  auto* rfm = app.add_subcommand("train-rfm", "learn a steering direction");
  common(rfm, false);
  rfm->add_option("--activations", opt.activations)->required()->check(CLI::ExistingFile);
  rfm->add_option("--class", opt.target)->required();
  rfm->add_option("--bandwidth", opt.bandwidth);
  rfm->add_option("--ridge", opt.ridge);
  rfm->add_option("--iters", opt.iters);
  rfm->add_option("--top-k", opt.top_k);
  rfm->add_flag("--center-grads", opt.center_grads);
  rfm->add_flag("--dual", opt.dual);

  auto* clf = app.add_subcommand("train-classifier", "noise-conditioned classifier for the guidance baseline");
  common(clf, false);
  clf->add_option("--data", opt.data)->required()->check(CLI::ExistingFile);
  clf->add_option("--labels", opt.labels)->required()->check(CLI::ExistingFile);
  clf->add_option("--steps", opt.steps);
  clf->add_option("--lr", opt.learning_rate);

  auto* smp = app.add_subcommand("sample", "guided DDIM sampling");
  common(smp, true);
  smp->add_option("--model", opt.model)->required()->check(CLI::ExistingFile);
  smp->add_option("--n", opt.n)->required();
  smp->add_option("--method", opt.method)->check(CLI::IsMember({"steer", "classifier", "meandiff"}));
  smp->add_option("--classifier", opt.classifier)->check(CLI::ExistingFile);
  smp->add_option("--w", opt.w, "classifier guidance scale");
  smp->add_option("--class", opt.target, "target class for classifier or meandiff");
  smp->add_option("--activations", opt.activations, "activations for the meandiff direction")->check(CLI::ExistingFile);
  smp->add_option("--threads", opt.threads, "worker threads (overrides DIFFSTEER_THREADS)");
  smp->add_option("--steps", opt.steps, "DDIM steps");

  auto* probe = app.add_subcommand("probe", "linear probe accuracy per activation file");
  common(probe, false);
  probe->add_option("--activations", opt.inputs)->required()->check(CLI::ExistingFile);
  probe->add_option("--folds", opt.folds);

  auto* transfer = app.add_subcommand("transfer", "cosine similarity between directions");
  common(transfer, false);
  transfer->add_option("--directions", opt.inputs)->required()->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "target accuracy, Frechet distance and cost");
  common(eval, false);
  eval->add_option("--samples", opt.samples)->required()->check(CLI::ExistingFile);
  eval->add_option("--class", opt.target)->required();
  eval->add_option("--data", opt.data, "reference data")->required()->check(CLI::ExistingFile);
  eval->add_option("--labels", opt.labels)->required()->check(CLI::ExistingFile);
  eval->add_option("--traces", opt.traces)->check(CLI::ExistingFile);

  auto* bench = app.add_subcommand("bench", "pass counts and wall time per method");
  common(bench, true);
  bench->add_option("--model", opt.model)->required()->check(CLI::ExistingFile);
  bench->add_option("--n", opt.n)->required();
  bench->add_option("--classifier", opt.classifier)->check(CLI::ExistingFile);
  bench->add_option("--w", opt.w);
  bench->add_option("--class", opt.target);
  bench->add_option("--threads", opt.threads);
  bench->add_option("--steps", opt.steps);

  if (argc > 1 && argv[1][0] != '-' && app.get_subcommand_no_throw(argv[1]) == nullptr) {
    std::cerr << "error: unknown subcommand \"" << argv[1] << "\"\n\n" << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.front()->help());
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  try {
    RunConfig rc = load_run_config(opt.config ? std::optional<fs::path>(*opt.config) : std::nullopt);
    if (opt.threads && *opt.threads < 0) throw ConfigError("--threads: must be >= 0");
    if (opt.steps && *opt.steps < 0) throw ConfigError("--steps: must be >= 0");
    Run run(name, opt, argc, argv);
    if (opt.config) run.input(*opt.config);
    static const std::map<std::string, void (*)(Run&, RunConfig&, const Options&)> commands = {
        {"make-data", cmd_make_data}, {"train-denoiser", cmd_train_denoiser}, {"collect-activations", cmd_collect},
        {"fit-stats", cmd_fit_stats}, {"train-rfm", cmd_train_rfm},           {"train-classifier", cmd_train_classifier},
        {"sample", cmd_sample},       {"probe", cmd_probe},                   {"transfer", cmd_transfer},
        {"eval", cmd_eval},           {"bench", cmd_bench}};
    commands.at(name)(run, rc, opt);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "diffsteer " << name << ": config error: " << e.what() << "\n";
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "diffsteer " << name << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "diffsteer " << name << ": " << e.what() << "\n";
    return 1;
  }
}
