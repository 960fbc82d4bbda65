#include "run_config.hpp"

#include <fstream>
#include <limits>

#include "diffsteer/io.hpp"

namespace diffsteer::cli {

Fields::Fields(const json& object, std::string path) : object_(object), path_(std::move(path)) {
  if (!object_.is_object()) throw ConfigError(path_ + ": expected an object");
}

bool Fields::has(const std::string& key) const { return object_.contains(key); }

std::string Fields::path_of(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

const json* Fields::child(const std::string& key) {
  used_.insert(key);
  auto it = object_.find(key);
  return it == object_.end() ? nullptr : &*it;
}

double Fields::number(const std::string& key, double fallback) {
  return optional_number(key).value_or(fallback);
}

std::optional<double> Fields::optional_number(const std::string& key) {
  const json* v = child(key);
  if (!v || v->is_null()) return std::nullopt;
  if (!v->is_number()) throw ConfigError(path_of(key) + ": expected a number");
  return v->get<double>();
}

long Fields::integer(const std::string& key, long fallback) {
  const json* v = child(key);
  if (!v) return fallback;
  if (!v->is_number_integer()) throw ConfigError(path_of(key) + ": expected an integer");
  return v->get<long>();
}

bool Fields::boolean(const std::string& key, bool fallback) {
  const json* v = child(key);
  if (!v) return fallback;
  if (!v->is_boolean()) throw ConfigError(path_of(key) + ": expected true or false");
  return v->get<bool>();
}

std::string Fields::string(const std::string& key, const std::string& fallback) {
  const json* v = child(key);
  if (!v) return fallback;
  if (!v->is_string()) throw ConfigError(path_of(key) + ": expected a string");
  return v->get<std::string>();
}

std::vector<int> Fields::int_list(const std::string& key, std::vector<int> fallback) {
  const json* v = child(key);
  if (!v) return fallback;
  if (!v->is_array()) throw ConfigError(path_of(key) + ": expected an array of integers");
  std::vector<int> out;
  for (std::size_t i = 0; i < v->size(); ++i) {
    if (!(*v)[i].is_number_integer())
      throw ConfigError(path_of(key) + "[" + std::to_string(i) + "]: expected an integer");
    out.push_back((*v)[i].get<int>());
  }
  return out;
}

void Fields::finish() const {
  for (auto it = object_.begin(); it != object_.end(); ++it)
    if (!used_.count(it.key())) throw ConfigError(path_of(it.key()) + ": unknown key");
}

namespace {

void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw ConfigError(path + ": " + what);
}

int positive_int(Fields& f, const std::string& key, int fallback) {
  const long v = f.integer(key, fallback);
  require(v >= 1 && v <= std::numeric_limits<int>::max(), f.path_of(key), "must be a positive integer");
  return static_cast<int>(v);
}

std::uint64_t seed_value(Fields& f, const std::string& key, std::uint64_t fallback) {
  const long v = f.integer(key, static_cast<long>(fallback));
  require(v >= 0, f.path_of(key), "seeds are non-negative integers");
  return static_cast<std::uint64_t>(v);
}

fs::path artifact_path(const json& v, const std::string& path, const fs::path& base) {
  require(v.is_string(), path, "expected a file path");
  const fs::path p = v.get<std::string>();
  return p.is_absolute() ? p : (base / p).lexically_normal();
}

Eigen::VectorXd vector_of(const json& v, const std::string& path) {
  require(v.is_array() && !v.empty(), path, "expected a non-empty array of numbers");
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    require(v[i].is_number(), path + "[" + std::to_string(i) + "]", "expected a number");
    out(static_cast<Eigen::Index>(i)) = v[i].get<double>();
  }
  return out;
}

Eigen::MatrixXd matrix_of(const json& v, const std::string& path) {
  require(v.is_array() && !v.empty(), path, "expected a non-empty array of rows");
  Eigen::MatrixXd out;
  for (std::size_t r = 0; r < v.size(); ++r) {
    const Eigen::VectorXd row = vector_of(v[r], path + "[" + std::to_string(r) + "]");
    if (r == 0) out.resize(static_cast<Eigen::Index>(v.size()), row.size());
    require(row.size() == out.cols(), path + "[" + std::to_string(r) + "]", "rows differ in length");
    out.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return out;
}

ScheduleConfig parse_schedule(const json& j) {
  Fields f(j, "schedule");
  ScheduleConfig s;
  const std::string kind = f.string("kind", "linear");
  try {
    s.kind = schedule_kind_from_string(kind);
  } catch (const std::exception&) {
    throw ConfigError("schedule.kind: expected \"linear\" or \"cosine\"");
  }
  s.steps = positive_int(f, "T", s.steps);
  s.beta_lo = f.number("beta_lo", s.beta_lo);
  s.beta_hi = f.number("beta_hi", s.beta_hi);
  require(s.beta_lo > 0.0 && s.beta_lo <= s.beta_hi && s.beta_hi < 1.0, "schedule", "need 0 < beta_lo <= beta_hi < 1");
  f.finish();
  return s;
}

DatasetSpec parse_data(const json& j) {
  Fields f(j, "data");
  DatasetSpec d;
  d.kind = f.string("kind", d.kind);
  d.n = positive_int(f, "n", d.n);
  d.seed = seed_value(f, "seed", d.seed);
  if (d.kind == "gaussian-mixture") {
    const json* means = f.child("means");
    const json* covs = f.child("covariances");
    require(means && covs, "data", "gaussian-mixture needs means and covariances");
    require(means->is_array() && covs->is_array() && means->size() == covs->size() && !means->empty(), "data",
            "means and covariances must be arrays of equal length");
    for (std::size_t c = 0; c < means->size(); ++c) {
      d.means.push_back(vector_of((*means)[c], "data.means[" + std::to_string(c) + "]"));
      d.covariances.push_back(matrix_of((*covs)[c], "data.covariances[" + std::to_string(c) + "]"));
    }
    if (const json* w = f.child("weights")) {
      const Eigen::VectorXd weights = vector_of(*w, "data.weights");
      require(weights.size() == static_cast<Eigen::Index>(d.means.size()), "data.weights", "one weight per component");
      d.weights.assign(weights.data(), weights.data() + weights.size());
    } else {
      d.weights.assign(d.means.size(), 1.0);
    }
  } else if (d.kind == "two-moons") {
    d.noise = f.number("noise", d.noise);
  } else if (d.kind == "image-grid") {
    d.num_classes = positive_int(f, "num_classes", d.num_classes);
    d.noise = f.number("noise", d.noise);
    d.amplitude = f.number("amplitude", d.amplitude);
  } else {
    throw ConfigError("data.kind: expected gaussian-mixture, two-moons or image-grid");
  }
  require(d.noise >= 0.0, "data.noise", "must be >= 0");
  f.finish();
  try {
    if (d.kind == "gaussian-mixture") GaussianMixture(d.means, d.covariances, d.weights);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("data: ") + e.what());
  }
  return d;
}

DenoiserSpec parse_model(const json& j) {
  Fields f(j, "model");
  DenoiserSpec m;
  m.data_dim = positive_int(f, "data_dim", m.data_dim);
  m.encoder_widths = f.int_list("encoder_widths", m.encoder_widths);
  require(!m.encoder_widths.empty(), "model.encoder_widths", "needs at least one block");
  for (int w : m.encoder_widths) require(w >= 1, "model.encoder_widths", "widths must be positive");
  m.bottleneck_width = positive_int(f, "bottleneck_width", m.bottleneck_width);
  m.time_embedding_dim = positive_int(f, "time_embedding_dim", m.time_embedding_dim);
  require(m.time_embedding_dim % 2 == 0, "model.time_embedding_dim", "must be even");
  try {
    m.output = output_parameterization_from_string(f.string("output", to_string(m.output)));
  } catch (const std::exception&) {
    throw ConfigError("model.output: expected \"epsilon\" or \"preconditioned\"");
  }
  m.sigma_data = f.number("sigma_data", m.sigma_data);
  require(m.sigma_data > 0.0, "model.sigma_data", "must be positive");
  f.finish();
  return m;
}

DenoiserTrainOptions parse_train(const json& j) {
  Fields f(j, "train");
  DenoiserTrainOptions t;
  t.steps = static_cast<int>(f.integer("steps", t.steps));
  require(t.steps >= 0, "train.steps", "must be >= 0");
  t.batch_size = positive_int(f, "batch_size", t.batch_size);
  t.learning_rate = f.number("learning_rate", t.learning_rate);
  require(t.learning_rate > 0.0, "train.learning_rate", "must be positive");
  t.final_lr_fraction = f.number("final_lr_fraction", t.final_lr_fraction);
  t.seed = seed_value(f, "seed", t.seed);
  f.finish();
  return t;
}

RfmHyper parse_rfm(const json& j) {
  Fields f(j, "rfm");
  RfmHyper r;
  r.bandwidth = f.number("bandwidth", r.bandwidth);
  require(r.bandwidth > 0.0, "rfm.bandwidth", "must be positive");
  r.ridge = f.number("ridge", r.ridge);
  require(r.ridge > 0.0, "rfm.ridge", "must be positive");
  r.iterations = static_cast<int>(f.integer("iterations", r.iterations));
  require(r.iterations >= 0, "rfm.iterations", "must be >= 0");
  r.top_k = positive_int(f, "top_k", r.top_k);
  r.center_grads = f.boolean("center_grads", r.center_grads);
  r.dual = f.boolean("dual", r.dual);
  f.finish();
  return r;
}

ClassifierTrainOptions parse_classifier(const json& j) {
  Fields f(j, "classifier");
  ClassifierTrainOptions c;
  c.steps = static_cast<int>(f.integer("steps", c.steps));
  require(c.steps >= 0, "classifier.steps", "must be >= 0");
  c.batch_size = positive_int(f, "batch_size", c.batch_size);
  c.learning_rate = f.number("learning_rate", c.learning_rate);
  c.seed = seed_value(f, "seed", c.seed);
  f.finish();
  return c;
}

AttributeFiles parse_attribute(const json& j, const std::string& path, const fs::path& base) {
  Fields f(j, path);
  AttributeFiles a;
  if (const json* d = f.child("direction"); d && !d->is_null()) a.direction = artifact_path(*d, f.path_of("direction"), base);
  if (const json* list = f.child("directions_by_sigma")) {
    require(list->is_array(), f.path_of("directions_by_sigma"), "expected an array of file paths");
    for (std::size_t i = 0; i < list->size(); ++i)
      a.directions_by_sigma.push_back(
          artifact_path((*list)[i], f.path_of("directions_by_sigma") + "[" + std::to_string(i) + "]", base));
  }
  a.w_rfm = f.number("w_rfm", 0.0);
  if (const json* s = f.child("class_stats"); s && !s->is_null()) a.class_stats = artifact_path(*s, f.path_of("class_stats"), base);
  a.lambda = f.number("lambda", 0.0);
  f.finish();
  return a;
}

SteeringFiles parse_steering(const json& j, const fs::path& base) {
  Fields f(j, "steering");
  SteeringFiles s;
  if (const json* attrs = f.child("attributes")) {
    require(attrs->is_array(), "steering.attributes", "expected an array");
    for (std::size_t i = 0; i < attrs->size(); ++i)
      s.attributes.push_back(parse_attribute((*attrs)[i], "steering.attributes[" + std::to_string(i) + "]", base));
  }
  if (const json* u = f.child("uncond_stats"); u && !u->is_null()) s.uncond_stats = artifact_path(*u, "steering.uncond_stats", base);
  SteeringConfig& c = s.numeric;
  // null disables noise alignment, matching the infinite default.
  c.sigma_end = f.optional_number("sigma_end").value_or(std::numeric_limits<double>::infinity());
  if (const json* w = f.child("rfm_window"); w && !w->is_null()) {
    Fields wf(*w, "steering.rfm_window");
    const auto lo = wf.optional_number("lo");
    const auto hi = wf.optional_number("hi");
    wf.finish();
    c.rfm_window = SigmaWindow{lo.value_or(0.0), hi.value_or(std::numeric_limits<double>::infinity())};
  }
  c.cfg_scale = f.number("cfg_scale", c.cfg_scale);
  c.eta = f.number("eta", c.eta);
  c.num_inference_steps = positive_int(f, "num_inference_steps", c.num_inference_steps);
  c.seed = seed_value(f, "seed", c.seed);
  c.raw_xt = f.boolean("raw_xt", c.raw_xt);
  c.workers = static_cast<int>(f.integer("workers", c.workers));
  require(c.workers >= 0, "steering.workers", "must be >= 0");
  f.finish();
  for (std::size_t i = 0; i < s.attributes.size(); ++i)
    if (s.attributes[i].class_stats && !s.uncond_stats)
      throw ConfigError("steering.attributes[" + std::to_string(i) + "].class_stats: noise alignment needs steering.uncond_stats");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("steering: ") + e.what());
  }
  return s;
}

ProbeOptions parse_probe(const json& j) {
  Fields f(j, "probe");
  ProbeOptions p;
  p.folds = static_cast<int>(f.integer("folds", p.folds));
  require(p.folds >= 2, "probe.folds", "must be >= 2");
  p.seed = seed_value(f, "seed", p.seed);
  p.ridge = f.number("ridge", p.ridge);
  require(p.ridge > 0.0, "probe.ridge", "must be positive");
  f.finish();
  return p;
}

}  // namespace

RunConfig parse_run_config(const json& raw, const fs::path& base_dir) {
  RunConfig rc;
  rc.raw = raw;
  rc.base_dir = base_dir;
  Fields top(raw, "");
  if (const json* j = top.child("schedule")) rc.schedule = parse_schedule(*j);
  if (const json* j = top.child("data")) rc.data = parse_data(*j);
  if (const json* j = top.child("model")) rc.model = parse_model(*j);
  if (const json* j = top.child("train")) rc.train = parse_train(*j);
  if (const json* j = top.child("rfm")) rc.rfm = parse_rfm(*j);
  if (const json* j = top.child("classifier")) rc.classifier = parse_classifier(*j);
  if (const json* j = top.child("steering")) rc.steering = parse_steering(*j, base_dir);
  if (const json* j = top.child("probe")) rc.probe = parse_probe(*j);
  top.finish();
  return rc;
}

RunConfig load_run_config(const std::optional<fs::path>& path) {
  if (!path) return parse_run_config(json::object(), ".");
  if (!fs::exists(*path)) throw ConfigError("config file not found: " + path->string());
  json raw;
  try {
    raw = json::parse(io::read_file(*path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path->string() + ": invalid JSON: " + e.what());
  }
  return parse_run_config(raw, path->parent_path().empty() ? fs::path(".") : path->parent_path());
}

SteeringConfig resolve_steering(const SteeringFiles& files) {
  auto need = [](const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) throw ConfigError(what + " not found: " + p.string());
  };
  SteeringConfig c = files.numeric;
  if (files.uncond_stats) {
    need(*files.uncond_stats, "steering.uncond_stats");
    c.uncond_stats = io::load_stats(*files.uncond_stats);
  }
  for (std::size_t i = 0; i < files.attributes.size(); ++i) {
    const auto& af = files.attributes[i];
    const std::string where = "steering.attributes[" + std::to_string(i) + "]";
    AttributeGuidance a;
    if (af.direction) {
      need(*af.direction, where + ".direction");
      a.direction = io::load_direction(*af.direction);
    }
    for (const auto& p : af.directions_by_sigma) {
      need(p, where + ".directions_by_sigma");
      a.directions_by_sigma.push_back(io::load_direction(p));
    }
    if (af.class_stats) {
      need(*af.class_stats, where + ".class_stats");
      a.class_stats = io::load_stats(*af.class_stats);
    }
    a.w_rfm = af.w_rfm;
    a.lambda = af.lambda;
    c.attributes.push_back(std::move(a));
  }
  return c;
}

Oracle oracle_for(const RunConfig& config) {
  if (!config.data) throw ConfigError("data: this command needs a data section to build the evaluation oracle");
  return make_oracle(*config.data);
}

}  // namespace diffsteer::cli
