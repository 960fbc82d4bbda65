#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "diffsteer/activations.hpp"
#include "diffsteer/analysis.hpp"
#include "diffsteer/baselines.hpp"
#include "diffsteer/class_stats.hpp"
#include "diffsteer/datasets.hpp"
#include "diffsteer/denoiser.hpp"
#include "diffsteer/io.hpp"
#include "diffsteer/rfm.hpp"
#include "diffsteer/sampler.hpp"
#include "diffsteer/schedule.hpp"

namespace py = pybind11;
using namespace diffsteer;

namespace {

void define_schedule(py::module_& m) {
  py::enum_<ScheduleKind>(m, "ScheduleKind").value("linear", ScheduleKind::linear).value("cosine", ScheduleKind::cosine);

  py::class_<NoiseSchedule>(m, "NoiseSchedule")
      .def_property_readonly("kind", &NoiseSchedule::kind)
      .def_property_readonly("steps", &NoiseSchedule::steps)
      .def("beta", &NoiseSchedule::beta)
      .def("alpha_bar", &NoiseSchedule::alpha_bar)
      .def("sigma", &NoiseSchedule::sigma)
      .def("t_of_sigma", &NoiseSchedule::t_of_sigma)
      .def_property_readonly("alpha_bars", &NoiseSchedule::alpha_bars);

  m.def("build_schedule", &build_schedule, py::arg("kind") = ScheduleKind::linear, py::arg("steps") = 1000,
        py::arg("beta_lo") = 1e-4, py::arg("beta_hi") = 0.02);

  py::class_<DdimStepMap>(m, "DdimStepMap")
      .def_readonly("num_inference_steps", &DdimStepMap::num_inference_steps)
      .def_readonly("step_indices", &DdimStepMap::step_indices)
      .def("timestep_at", &DdimStepMap::timestep_at);
  m.def("make_ddim_steps", &make_ddim_steps);
}

void define_data(py::module_& m) {
  py::class_<Dataset>(m, "Dataset")
      .def_readonly("data", &Dataset::data)
      .def_readonly("labels", &Dataset::labels);

  py::class_<GaussianMixture>(m, "GaussianMixture")
      .def(py::init<std::vector<Eigen::VectorXd>, std::vector<Eigen::MatrixXd>, std::vector<double>>(),
           py::arg("means"), py::arg("covariances"), py::arg("weights"))
      .def_property_readonly("num_classes", &GaussianMixture::num_classes)
      .def("sample", &GaussianMixture::sample, py::arg("n"), py::arg("seed"))
      .def("log_joint", &GaussianMixture::log_joint)
      .def("classify", &GaussianMixture::classify)
      .def("classify_rows", [](const GaussianMixture& g, const Eigen::MatrixXd& x) {
        Eigen::VectorXi out(x.rows());
        for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = g.classify(x.row(i).transpose());
        return out;
      });

  m.def("symmetric_two_gaussians", &symmetric_two_gaussians, py::arg("separation") = 4.0, py::arg("stddev") = 0.5);
  m.def("shared_mean_mixture", &shared_mean_mixture, py::arg("major"), py::arg("minor"));
  m.def("two_moons", &two_moons, py::arg("n"), py::arg("noise"), py::arg("seed"));
  m.def("image_grid", &image_grid, py::arg("n"), py::arg("num_classes"), py::arg("noise"), py::arg("seed"),
        py::arg("amplitude") = 1.0);
}

void define_stats(py::module_& m) {
  py::class_<ClassStatistics>(m, "ClassStatistics")
      .def_readonly("class_id", &ClassStatistics::class_id)
      .def_readonly("mean", &ClassStatistics::mean)
      .def_readonly("components", &ClassStatistics::components)
      .def_readonly("eigenvalues", &ClassStatistics::eigenvalues)
      .def_readonly("n_samples", &ClassStatistics::n_samples);

  m.def("fit_pca", &fit_pca, py::arg("data"), py::arg("k"), py::arg("class_id") = "all");
  m.def("fit_class_statistics", &fit_class_statistics, py::arg("data"), py::arg("labels"), py::arg("k"));
  m.def("gaussian_denoise", &gaussian_denoise_rows, py::arg("stats"), py::arg("x"), py::arg("sigma"));
  m.def("noise_alignment_signal", &noise_alignment_signal_rows, py::arg("cond"), py::arg("uncond"), py::arg("x"),
        py::arg("sigma"));
}

void define_denoiser(py::module_& m) {
  py::enum_<OutputParameterization>(m, "OutputParameterization")
      .value("epsilon", OutputParameterization::epsilon)
      .value("preconditioned", OutputParameterization::preconditioned);

  py::class_<DenoiserSpec>(m, "DenoiserSpec")
      .def(py::init<>())
      .def_readwrite("data_dim", &DenoiserSpec::data_dim)
      .def_readwrite("encoder_widths", &DenoiserSpec::encoder_widths)
      .def_readwrite("bottleneck_width", &DenoiserSpec::bottleneck_width)
      .def_readwrite("time_embedding_dim", &DenoiserSpec::time_embedding_dim)
      .def_readwrite("output", &DenoiserSpec::output)
      .def_readwrite("sigma_data", &DenoiserSpec::sigma_data);

  py::class_<DenoiserTrainOptions>(m, "DenoiserTrainOptions")
      .def(py::init<>())
      .def_readwrite("steps", &DenoiserTrainOptions::steps)
      .def_readwrite("batch_size", &DenoiserTrainOptions::batch_size)
      .def_readwrite("learning_rate", &DenoiserTrainOptions::learning_rate)
      .def_readwrite("final_lr_fraction", &DenoiserTrainOptions::final_lr_fraction)
      .def_readwrite("seed", &DenoiserTrainOptions::seed);

  py::class_<DenoiserModel>(m, "DenoiserModel")
      .def_property_readonly("spec", &DenoiserModel::spec)
      .def_property_readonly("schedule", &DenoiserModel::schedule)
      .def("layer_spec", &DenoiserModel::layer_spec)
      .def("last_encoder_block", &DenoiserModel::last_encoder_block)
      .def_property_readonly("parameter_count", &DenoiserModel::parameter_count)
      .def(
          "epsilon",
          [](const DenoiserModel& model, const Eigen::MatrixXd& x_t, int t) {
            return forward_with_hooks(model, x_t, t).epsilon;
          },
          py::arg("x_t"), py::arg("t"))
      .def(
          "record",
          [](const DenoiserModel& model, const Eigen::MatrixXd& x_t, int t, const std::string& block) {
            Hooks hooks{{block, HookAction::record()}};
            return forward_with_hooks(model, x_t, t, hooks).recorded.at(block);
          },
          py::arg("x_t"), py::arg("t"), py::arg("block"));

  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);
  m.def("train_denoiser", &train_denoiser, py::arg("data"), py::arg("schedule"), py::arg("spec"), py::arg("options"),
        py::call_guard<py::gil_scoped_release>());
}

void define_steering(py::module_& m) {
  py::enum_<Process>(m, "Process").value("forward", Process::forward).value("reverse", Process::reverse);

  py::class_<ActivationBatch>(m, "ActivationBatch")
      .def(py::init<>())
      .def_readwrite("features", &ActivationBatch::features)
      .def_readwrite("labels", &ActivationBatch::labels)
      .def_readwrite("block_name", &ActivationBatch::block_name)
      .def_readwrite("sigma", &ActivationBatch::sigma)
      .def_readwrite("timestep", &ActivationBatch::timestep)
      .def_readwrite("process", &ActivationBatch::process);

  m.def("collect_forward_activations", &collect_forward_activations, py::arg("model"), py::arg("data"),
        py::arg("labels"), py::arg("schedule"), py::arg("t"), py::arg("block"), py::arg("seed"));

  py::class_<RfmHyper>(m, "RfmHyper")
      .def(py::init<>())
      .def_readwrite("bandwidth", &RfmHyper::bandwidth)
      .def_readwrite("ridge", &RfmHyper::ridge)
      .def_readwrite("iterations", &RfmHyper::iterations)
      .def_readwrite("top_k", &RfmHyper::top_k)
      .def_readwrite("center_grads", &RfmHyper::center_grads)
      .def_readwrite("dual", &RfmHyper::dual);

  py::class_<SteeringDirection>(m, "SteeringDirection")
      .def_readonly("vector", &SteeringDirection::vector)
      .def_readonly("top_k", &SteeringDirection::top_k)
      .def_readonly("eigenvalues", &SteeringDirection::eigenvalues)
      .def_readonly("sign_anchor", &SteeringDirection::sign_anchor)
      .def_readonly("source_sigma", &SteeringDirection::source_sigma)
      .def_readonly("block_name", &SteeringDirection::block_name)
      .def_readonly("class_id", &SteeringDirection::class_id);

  m.def(
      "train_rfm",
      [](const ActivationBatch& batch, int target_class, const RfmHyper& hyper) {
        return train_rfm(batch, target_class, hyper).direction;
      },
      py::arg("batch"), py::arg("target_class"), py::arg("hyper"), py::call_guard<py::gil_scoped_release>());
  m.def("mean_difference_direction", &mean_difference_direction, py::arg("batch"), py::arg("target_class"));

  py::class_<AttributeGuidance>(m, "AttributeGuidance")
      .def(py::init<>())
      .def_readwrite("direction", &AttributeGuidance::direction)
      .def_readwrite("directions_by_sigma", &AttributeGuidance::directions_by_sigma)
      .def_readwrite("w_rfm", &AttributeGuidance::w_rfm)
      .def_readwrite("class_stats", &AttributeGuidance::class_stats)
      .def_readwrite("lambda_", &AttributeGuidance::lambda);

  py::class_<SigmaWindow>(m, "SigmaWindow")
      .def(py::init<double, double>(), py::arg("lo"), py::arg("hi"))
      .def_readwrite("lo", &SigmaWindow::lo)
      .def_readwrite("hi", &SigmaWindow::hi);

  py::class_<SteeringConfig>(m, "SteeringConfig")
      .def(py::init<>())
      .def_readwrite("attributes", &SteeringConfig::attributes)
      .def_readwrite("uncond_stats", &SteeringConfig::uncond_stats)
      .def_readwrite("sigma_end", &SteeringConfig::sigma_end)
      .def_readwrite("rfm_window", &SteeringConfig::rfm_window)
      .def_readwrite("cfg_scale", &SteeringConfig::cfg_scale)
      .def_readwrite("eta", &SteeringConfig::eta)
      .def_readwrite("num_inference_steps", &SteeringConfig::num_inference_steps)
      .def_readwrite("seed", &SteeringConfig::seed)
      .def_readwrite("raw_xt", &SteeringConfig::raw_xt)
      .def_readwrite("workers", &SteeringConfig::workers)
      .def("validate", &SteeringConfig::validate);

  py::class_<StepRecord>(m, "StepRecord")
      .def_readonly("t", &StepRecord::t)
      .def_readonly("sigma", &StepRecord::sigma)
      .def_readonly("applied_rfm", &StepRecord::applied_rfm)
      .def_readonly("applied_alignment", &StepRecord::applied_alignment)
      .def_readonly("x_hat0_norm", &StepRecord::x_hat0_norm);

  py::class_<CostLedger>(m, "CostLedger")
      .def_readonly("forward_passes", &CostLedger::forward_passes)
      .def_readonly("gradient_passes", &CostLedger::gradient_passes)
      .def_readonly("wall_seconds", &CostLedger::wall_seconds);

  py::class_<SampleTrace>(m, "SampleTrace")
      .def_readonly("steps", &SampleTrace::steps)
      .def_readonly("final_sample", &SampleTrace::final_sample)
      .def_readonly("cost", &SampleTrace::cost);

  py::class_<SampleResult>(m, "SampleResult")
      .def_readonly("samples", &SampleResult::samples)
      .def_readonly("traces", &SampleResult::traces);

  m.def("sample", &sample, py::arg("model"), py::arg("schedule"), py::arg("config"), py::arg("n"),
        py::call_guard<py::gil_scoped_release>());
  m.def("mean_diff_guided_sample", &mean_diff_guided_sample, py::arg("model"), py::arg("direction"),
        py::arg("schedule"), py::arg("config"), py::arg("n"), py::call_guard<py::gil_scoped_release>());
  m.def("count_forward_passes", &count_forward_passes);
}

void define_baselines(py::module_& m) {
  py::class_<NoiseConditionedClassifier>(m, "NoiseConditionedClassifier")
      .def_property_readonly("num_classes", &NoiseConditionedClassifier::num_classes)
      .def("log_probs", &NoiseConditionedClassifier::log_probs, py::arg("x"), py::arg("t"));

  py::class_<ClassifierTrainOptions>(m, "ClassifierTrainOptions")
      .def(py::init<>())
      .def_readwrite("steps", &ClassifierTrainOptions::steps)
      .def_readwrite("batch_size", &ClassifierTrainOptions::batch_size)
      .def_readwrite("learning_rate", &ClassifierTrainOptions::learning_rate)
      .def_readwrite("seed", &ClassifierTrainOptions::seed);

  m.def("train_noise_classifier", &train_noise_classifier, py::arg("data"), py::arg("labels"), py::arg("schedule"),
        py::arg("options"), py::call_guard<py::gil_scoped_release>());
  m.def("classifier_guided_sample", &classifier_guided_sample, py::arg("model"), py::arg("classifier"),
        py::arg("schedule"), py::arg("target"), py::arg("w"), py::arg("config"), py::arg("n"),
        py::call_guard<py::gil_scoped_release>());
}

void define_analysis(py::module_& m) {
  m.def("linear_probe", &linear_probe, py::arg("batch"), py::arg("folds") = 5, py::arg("seed") = 0,
        py::arg("ridge") = 1e-3);
  m.def("transfer_matrix", [](const std::vector<SteeringDirection>& d) { return transfer_matrix(d).matrix; });
  m.def("frechet_distance", &frechet_distance, py::arg("a"), py::arg("b"));
  m.def("cost_report", &cost_report);
}

void define_io(py::module_& m) {
  auto io = m.def_submodule("io", "float32 artifact files");
  io.def("sha256_file", &io::sha256_file);
  io.def("write_matrix", [](const io::fs::path& p, const Eigen::MatrixXd& x) { io::write_matrix(p, x); });
  io.def("read_matrix", [](const io::fs::path& p) { return io::read_matrix(p).matrix; });
  io.def("read_labels", &io::read_labels);
  io.def("save_model", &io::save_model);
  io.def("load_model", &io::load_model);
  io.def("save_direction", &io::save_direction);
  io.def("load_direction", &io::load_direction);
  io.def("save_stats", &io::save_stats);
  io.def("load_stats", &io::load_stats);
  io.def("save_activations", &io::save_activations);
  io.def("load_activations", &io::load_activations);
}

}  // namespace

PYBIND11_MODULE(_diffsteer, m) {
  m.doc() = "Gradient-free diffusion steering: schedules, RFM directions and the guided DDIM sampler";
  m.attr("__version__") = io::kToolVersion;
  define_schedule(m);
  define_data(m);
  define_stats(m);
  define_denoiser(m);
  define_steering(m);
  define_baselines(m);
  define_analysis(m);
  define_io(m);
}
