#include <doctest.h>

#include "diffsteer/analysis.hpp"
#include "support.hpp"

using namespace diffsteer;

TEST_CASE("linear probe at chance and on separated classes") {
  ActivationBatch noise;
  noise.features = testing::random_matrix(600, 5, 1);
  noise.labels.resize(600);
  for (int i = 0; i < 600; ++i) noise.labels(i) = i % 2;
  CHECK(std::abs(linear_probe(noise) - 0.5) < 0.08);

  ActivationBatch sep = noise;
  for (int i = 0; i < 600; ++i) sep.features(i, 3) += i % 2 ? 5.0 : -5.0;
  CHECK(linear_probe(sep) > 0.99);

  // Three classes, labels need not be contiguous.
  ActivationBatch three = noise;
  for (int i = 0; i < 600; ++i) {
    three.labels(i) = 10 * (i % 3);
    three.features(i, i % 3) += 6.0;
  }
  CHECK(linear_probe(three) > 0.99);
  CHECK(linear_probe(three, 5, 1) == linear_probe(three, 5, 1));

  ActivationBatch one = noise;
  one.labels.setZero();
  CHECK_THROWS_AS(linear_probe(one), std::invalid_argument);
  CHECK_THROWS_AS(linear_probe(noise, 1), std::invalid_argument);
}

TEST_CASE("probe report") {
  ProbeReport r;
  r.add({"enc0", 0.21, Process::forward, 0.75, 100});
  r.add({"enc0", 0.21, Process::reverse, 0.9, 100});
  CHECK_THROWS_AS(r.add({"enc0", 0.21, Process::forward, 0.5, 10}), std::invalid_argument);
  CHECK_THROWS_AS(r.add({"mid", 0.21, Process::forward, 1.5, 10}), std::invalid_argument);
  REQUIRE(r.find("enc0", 0.21, Process::reverse));
  CHECK(r.find("enc0", 0.21, Process::reverse)->accuracy == 0.9);
  CHECK(r.find("mid", 0.21, Process::reverse) == nullptr);
  CHECK(r.to_csv() == "block,sigma,process,accuracy,n\nenc0,0.21,forward,0.75,100\nenc0,0.21,reverse,0.9,100\n");
}

TEST_CASE("transfer matrix") {
  std::vector<SteeringDirection> ds(3);
  const double angle = 0.3;
  ds[0].vector = Eigen::Vector3d(1, 0, 0);
  ds[1].vector = Eigen::Vector3d(std::cos(angle), std::sin(angle), 0);
  ds[2].vector = Eigen::Vector3d(0, 0, -1);
  for (int i = 0; i < 3; ++i) {
    ds[i].block_name = "mid";
    ds[i].source_sigma = 0.1 * (i + 1);
  }
  const auto tm = transfer_matrix(ds);
  CHECK(tm.block == "mid");
  CHECK(tm.sigmas == std::vector<double>{0.1, 0.2, 0.30000000000000004});
  CHECK(tm.matrix(0, 1) == doctest::Approx(std::cos(angle)));
  CHECK(tm.matrix(1, 0) == tm.matrix(0, 1));
  CHECK(tm.matrix(0, 2) == doctest::Approx(0.0));
  CHECK(tm.matrix.diagonal() == Eigen::Vector3d::Ones());

  ds[2].block_name = "enc0";
  CHECK_THROWS_AS(transfer_matrix(ds), std::invalid_argument);
  CHECK_THROWS_AS(transfer_matrix({}), std::invalid_argument);
}

TEST_CASE("Frechet distance") {
  const Eigen::MatrixXd a = testing::random_matrix(300, 3, 2);
  Eigen::MatrixXd shifted = a;
  shifted.col(0).array() += 3.0;
  CHECK(frechet_distance(a, shifted) == doctest::Approx(9.0).epsilon(1e-9));
  CHECK(frechet_distance(a, a) == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));

  const Eigen::MatrixXd b = testing::random_matrix(200, 3, 3);
  CHECK(frechet_distance(a, b) == doctest::Approx(frechet_distance(b, a)).epsilon(1e-9));

  // Scaling a centred set by 2: S_B = 4 S_A, so the distance is tr(S_A).
  const Eigen::MatrixXd centred = a.rowwise() - a.colwise().mean();
  const Eigen::MatrixXd cov = centred.transpose() * centred / 299.0;
  CHECK(frechet_distance(centred, Eigen::MatrixXd(2.0 * centred)) == doctest::Approx(cov.trace()).epsilon(1e-9));

  // Diagonal covariances reduce to a per-axis sum (s_a - s_b)^2.
  Eigen::MatrixXd c = centred, d = centred;
  const Eigen::Vector3d scale_c(1.0, 2.0, 0.5), scale_d(3.0, 1.0, 0.5);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeThinV);
  const Eigen::MatrixXd white = centred * svd.matrixV() * svd.singularValues().cwiseInverse().asDiagonal() * std::sqrt(299.0);
  c = white * scale_c.asDiagonal();
  d = white * scale_d.asDiagonal();
  CHECK(frechet_distance(c, d) == doctest::Approx((scale_c - scale_d).squaredNorm()).epsilon(1e-9));

  CHECK_THROWS_AS(frechet_distance(a, testing::random_matrix(5, 2, 1)), std::invalid_argument);
  CHECK_THROWS_AS(frechet_distance(a.topRows(1), a), std::invalid_argument);
}

TEST_CASE("accuracy and cost") {
  Eigen::MatrixXd xs(4, 1);
  xs << -1, 2, 3, -4;
  const Oracle sign = [](const Eigen::VectorXd& x) { return x(0) > 0 ? 1 : 0; };
  CHECK(evaluate_accuracy(xs, sign, 1) == 0.5);
  CHECK(evaluate_accuracy(xs.topRows(3), sign, 1) == doctest::Approx(2.0 / 3));
  CHECK_THROWS_AS(evaluate_accuracy(Eigen::MatrixXd(0, 1), sign, 1), std::invalid_argument);

  std::vector<SampleTrace> traces(3);
  for (int i = 0; i < 3; ++i) traces[i].cost = {100 + i, 10L * i, 0.5};
  const auto total = cost_report(traces);
  CHECK(total.forward_passes == 303);
  CHECK(total.gradient_passes == 30);
  CHECK(total.wall_seconds == doctest::Approx(1.5));
}
