#include "diffsteer/io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <openssl/evp.h>
#include <unistd.h>

namespace diffsteer::io {

static_assert(std::endian::native == std::endian::little, "persistence assumes a little-endian host");

void write_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return out.str();
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

fs::path sidecar_path(const fs::path& payload) {
  fs::path p = payload;
  p.replace_extension(".json");
  return p;
}

namespace {

std::vector<float> to_floats_row_major(const Eigen::MatrixXd& m) {
  std::vector<float> out(static_cast<std::size_t>(m.size()));
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[k++] = static_cast<float>(m(r, c));
  return out;
}

Eigen::MatrixXd from_floats_row_major(const std::vector<float>& v, Eigen::Index rows, Eigen::Index cols) {
  if (static_cast<Eigen::Index>(v.size()) != rows * cols) throw std::runtime_error("payload size does not match shape");
  Eigen::MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = v[k++];
  return m;
}

std::vector<float> to_floats(const Eigen::VectorXd& v) {
  std::vector<float> out(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(v(i));
  return out;
}

Eigen::VectorXd from_floats(const std::vector<float>& v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
  return out;
}

void append_u64(std::string& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

std::uint64_t read_u64(const std::string& bytes, std::size_t& pos) {
  if (pos + 8 > bytes.size()) throw std::runtime_error("truncated file");
  std::uint64_t v;
  std::memcpy(&v, bytes.data() + pos, 8);
  pos += 8;
  return v;
}

std::string floats_to_bytes(const std::vector<float>& v) {
  std::string out(v.size() * sizeof(float), '\0');
  if (!v.empty()) std::memcpy(out.data(), v.data(), out.size());
  return out;
}

std::vector<float> bytes_to_floats(const char* data, std::size_t n_bytes) {
  if (n_bytes % sizeof(float) != 0) throw std::runtime_error("payload length is not a multiple of 4");
  std::vector<float> v(n_bytes / sizeof(float));
  if (n_bytes) std::memcpy(v.data(), data, n_bytes);
  return v;
}

}  // namespace

Eigen::MatrixXd to_stored_precision(const Eigen::MatrixXd& m) {
  return m.unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
}

void write_matrix(const fs::path& payload, const Eigen::MatrixXd& m, const json& meta) {
  json side = meta;
  side["rows"] = m.rows();
  side["cols"] = m.cols();
  side["dtype"] = "f32";
  side["byte_order"] = "little";
  side["layout"] = "row-major";
  write_atomic(payload, floats_to_bytes(to_floats_row_major(m)));
  write_atomic(sidecar_path(payload), side.dump(2) + "\n");
}

MatrixWithMeta read_matrix(const fs::path& payload) {
  MatrixWithMeta out;
  out.meta = json::parse(read_file(sidecar_path(payload)));
  if (out.meta.value("dtype", "") != "f32" || out.meta.value("byte_order", "") != "little" ||
      out.meta.value("layout", "") != "row-major")
    throw std::runtime_error(payload.string() + ": unsupported matrix encoding");
  const auto rows = out.meta.at("rows").get<Eigen::Index>();
  const auto cols = out.meta.at("cols").get<Eigen::Index>();
  const std::string bytes = read_file(payload);
  if (static_cast<Eigen::Index>(bytes.size()) != rows * cols * 4)
    throw std::runtime_error(payload.string() + ": payload length does not equal rows*cols*4");
  out.matrix = from_floats_row_major(bytes_to_floats(bytes.data(), bytes.size()), rows, cols);
  return out;
}

void write_labels(const fs::path& payload, const Eigen::VectorXi& labels) {
  write_matrix(payload, labels.cast<double>(), {{"semantic", "labels"}});
}

Eigen::VectorXi read_labels(const fs::path& payload) {
  const auto m = read_matrix(payload);
  if (m.matrix.cols() != 1) throw std::runtime_error(payload.string() + ": labels must have one column");
  return m.matrix.col(0).unaryExpr([](double v) { return static_cast<int>(std::lround(v)); });
}

std::string encode_sectioned(const Sectioned& s) {
  std::string out;
  const std::string header = s.header.dump();
  append_u64(out, header.size());
  out += header;
  for (const auto& sec : s.sections) {
    append_u64(out, sec.size() * sizeof(float));
    out += floats_to_bytes(sec);
  }
  return out;
}

Sectioned decode_sectioned(const std::string& bytes) {
  Sectioned s;
  std::size_t pos = 0;
  const auto hlen = read_u64(bytes, pos);
  if (pos + hlen > bytes.size()) throw std::runtime_error("truncated header");
  s.header = json::parse(bytes.substr(pos, hlen));
  pos += hlen;
  while (pos < bytes.size()) {
    const auto len = read_u64(bytes, pos);
    if (pos + len > bytes.size()) throw std::runtime_error("truncated section");
    s.sections.push_back(bytes_to_floats(bytes.data() + pos, len));
    pos += len;
  }
  return s;
}

void save_stats(const fs::path& path, const ClassStatistics& stats) {
  Sectioned s;
  s.header = {{"class_id", stats.class_id}, {"D", stats.dim()}, {"k", stats.rank()}, {"n_samples", stats.n_samples}};
  s.sections = {to_floats(stats.mean), to_floats_row_major(stats.components), to_floats(stats.eigenvalues)};
  write_atomic(path, encode_sectioned(s));
}

ClassStatistics load_stats(const fs::path& path) {
  const Sectioned s = decode_sectioned(read_file(path));
  if (s.sections.size() != 3) throw std::runtime_error(path.string() + ": expected 3 sections");
  ClassStatistics st;
  st.class_id = s.header.at("class_id").get<std::string>();
  const auto d = s.header.at("D").get<Eigen::Index>();
  const auto k = s.header.at("k").get<Eigen::Index>();
  st.n_samples = s.header.at("n_samples").get<long>();
  st.mean = from_floats(s.sections[0]);
  st.components = from_floats_row_major(s.sections[1], d, k);
  st.eigenvalues = from_floats(s.sections[2]);
  if (st.mean.size() != d || st.eigenvalues.size() != k) throw std::runtime_error(path.string() + ": shape mismatch");
  return st;
}

void save_model(const fs::path& path, const DenoiserModel& model) {
  Sectioned s;
  json layers = json::array();
  for (const auto& [name, width] : model.layer_spec()) layers.push_back({name, width});
  const auto& spec = model.spec();
  s.header = {{"kind", "denoiser"},
              {"layer_spec", layers},
              {"data_dim", spec.data_dim},
              {"encoder_widths", spec.encoder_widths},
              {"bottleneck_width", spec.bottleneck_width},
              {"time_embedding_dim", spec.time_embedding_dim},
              {"output", to_string(spec.output)},
              {"sigma_data", spec.sigma_data},
              {"schedule",
               {{"kind", to_string(model.schedule().kind())},
                {"T", model.schedule().steps()},
                {"beta_lo", model.schedule().beta_lo()},
                {"beta_hi", model.schedule().beta_hi()}}},
              {"parameter_count", model.parameter_count()},
              {"seed", model.seed}};
  s.sections = {to_floats(model.parameters())};
  write_atomic(path, encode_sectioned(s));
}

DenoiserModel load_model(const fs::path& path) {
  const Sectioned s = decode_sectioned(read_file(path));
  if (s.header.value("kind", "") != "denoiser" || s.sections.size() != 1)
    throw std::runtime_error(path.string() + ": not a denoiser model file");
  DenoiserSpec spec;
  spec.data_dim = s.header.at("data_dim").get<int>();
  spec.encoder_widths = s.header.at("encoder_widths").get<std::vector<int>>();
  spec.bottleneck_width = s.header.at("bottleneck_width").get<int>();
  spec.time_embedding_dim = s.header.at("time_embedding_dim").get<int>();
  spec.output = output_parameterization_from_string(s.header.at("output").get<std::string>());
  spec.sigma_data = s.header.at("sigma_data").get<double>();
  const json& sch = s.header.at("schedule");
  const NoiseSchedule schedule =
      build_schedule(schedule_kind_from_string(sch.at("kind").get<std::string>()), sch.at("T").get<int>(),
                     sch.at("beta_lo").get<double>(), sch.at("beta_hi").get<double>());
  DenoiserModel model(spec, schedule);
  model.seed = s.header.at("seed").get<std::uint64_t>();
  const Eigen::VectorXd p = from_floats(s.sections[0]);
  if (p.size() != model.parameter_count()) throw std::runtime_error(path.string() + ": parameter count mismatch");
  model.parameters() = p;
  return model;
}

void save_direction(const fs::path& path, const SteeringDirection& d) {
  Sectioned s;
  std::vector<double> eig(d.eigenvalues.data(), d.eigenvalues.data() + d.eigenvalues.size());
  s.header = {{"class_id", d.class_id},   {"block", d.block_name},     {"source_sigma", d.source_sigma},
              {"top_k", d.top_k},         {"eigenvalues", eig},        {"sign_anchor", d.sign_anchor},
              {"D", d.vector.size()}};
  s.sections = {to_floats(d.vector)};
  write_atomic(path, encode_sectioned(s));
}

SteeringDirection load_direction(const fs::path& path) {
  const Sectioned s = decode_sectioned(read_file(path));
  if (s.sections.size() != 1) throw std::runtime_error(path.string() + ": expected one section");
  SteeringDirection d;
  d.class_id = s.header.at("class_id").get<std::string>();
  d.block_name = s.header.at("block").get<std::string>();
  d.source_sigma = s.header.at("source_sigma").get<double>();
  d.top_k = s.header.at("top_k").get<int>();
  const auto eig = s.header.at("eigenvalues").get<std::vector<double>>();
  d.eigenvalues = Eigen::Map<const Eigen::VectorXd>(eig.data(), static_cast<Eigen::Index>(eig.size()));
  d.sign_anchor = s.header.value("sign_anchor", 0.0);
  d.vector = from_floats(s.sections[0]);
  // Single precision storage leaves the norm off by ~1e-7; hooks require a unit vector.
  if (d.vector.norm() > 0.0) d.vector.normalize();
  return d;
}

void save_classifier(const fs::path& path, const NoiseConditionedClassifier& c) {
  Sectioned s;
  s.header = {{"kind", "noise-classifier"},
              {"data_dim", c.data_dim()},
              {"num_classes", c.num_classes()},
              {"hidden_width", c.hidden_width()},
              {"time_embedding_dim", c.time_embedding_dim()}};
  s.sections = {to_floats(c.parameters())};
  write_atomic(path, encode_sectioned(s));
}

NoiseConditionedClassifier load_classifier(const fs::path& path) {
  const Sectioned s = decode_sectioned(read_file(path));
  if (s.header.value("kind", "") != "noise-classifier" || s.sections.size() != 1)
    throw std::runtime_error(path.string() + ": not a classifier file");
  NoiseConditionedClassifier c(s.header.at("data_dim").get<int>(), s.header.at("num_classes").get<int>(),
                               s.header.at("hidden_width").get<int>(), s.header.at("time_embedding_dim").get<int>());
  const Eigen::VectorXd p = from_floats(s.sections[0]);
  if (p.size() != c.parameters().size()) throw std::runtime_error(path.string() + ": parameter count mismatch");
  c.parameters() = p;
  return c;
}

namespace {
fs::path labels_path_for(const fs::path& payload) {
  fs::path p = payload;
  p.replace_extension(".labels.bin");
  return p;
}
}  // namespace

void save_activations(const fs::path& payload, const ActivationBatch& batch) {
  const fs::path labels = labels_path_for(payload);
  write_labels(labels, batch.labels);
  write_matrix(payload, batch.features,
               {{"N", batch.features.rows()},
                {"D_act", batch.features.cols()},
                {"block", batch.block_name},
                {"sigma", batch.sigma},
                {"timestep", batch.timestep},
                {"process", to_string(batch.process)},
                {"label_file", labels.filename().string()}});
}

ActivationBatch load_activations(const fs::path& payload) {
  const auto m = read_matrix(payload);
  ActivationBatch b;
  b.features = m.matrix;
  b.block_name = m.meta.at("block").get<std::string>();
  b.sigma = m.meta.at("sigma").get<double>();
  b.timestep = m.meta.value("timestep", 0);
  b.process = process_from_string(m.meta.at("process").get<std::string>());
  b.labels = read_labels(payload.parent_path() / m.meta.at("label_file").get<std::string>());
  if (b.labels.size() != b.features.rows()) throw std::runtime_error(payload.string() + ": label count mismatch");
  return b;
}

}  // namespace diffsteer::io
