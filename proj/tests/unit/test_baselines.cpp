#include <doctest.h>

#include <limits>

#include "l2rw/baselines.hpp"
#include "test_util.hpp"

using namespace l2rw;

TEST_CASE("focal weight examples") {
  VectorXd p(3);
  p << 0.0, 0.5, 0.9;
  CHECK((focal_weights(p, 0.0).array() == 1.0).all());
  CHECK(focal_weights(p, 2.0)[1] == 0.25);
  CHECK(std::abs(focal_weights(p, 1.0)[2] - 0.1) <= 1e-12);
  CHECK(focal_weights(p, 0.5)[0] == 1.0);
  CHECK_THROWS_AS(focal_weights(p, -1.0), ConfigError);
  p[0] = 1.5;
  CHECK_THROWS_AS(focal_weights(p, 1.0), ConfigError);
}

TEST_CASE("focal weights are non-increasing in p") {
  VectorXd p = VectorXd::LinSpaced(101, 0.0, 1.0);
  for (double gamma : {0.0, 0.5, 1.0, 2.0}) {
    const VectorXd w = focal_weights(p, gamma);
    for (Index i = 1; i < w.size(); ++i) CHECK(w[i] <= w[i - 1]);
  }
}

TEST_CASE("spl weight examples") {
  VectorXd l(2);
  l << 0.1, 0.9;
  CHECK(spl_weights(l, 0.5) == (VectorXd(2) << 1, 0).finished());
  CHECK((spl_weights(l, std::numeric_limits<double>::infinity()).array() == 1.0).all());
  VectorXd z(3);
  z << 0.0, 1e-300, 2.0;
  CHECK(spl_weights(z, 0.0) == (VectorXd(3) << 1, 0, 0).finished());
  CHECK_THROWS_AS(spl_weights(l, -0.1), ConfigError);
}

TEST_CASE("spl selection grows with the threshold") {
  const VectorXd losses = test::gaussian_vec(200, 3).cwiseAbs();
  VectorXd prev = spl_weights(losses, 0.0);
  for (double th = 0.05; th < 4.0; th += 0.05) {
    const VectorXd cur = spl_weights(losses, th);
    CHECK((cur.array() >= prev.array()).all());
    prev = cur;
  }
  CHECK(prev.sum() == 200.0);
}

TEST_CASE("spl schedule ramps from a percentile to above the max loss") {
  std::vector<double> losses;
  for (int i = 0; i <= 100; ++i) losses.push_back(i * 0.01);
  const auto s = SplSchedule::from_losses(losses, 30.0, 1000);
  CHECK(s.at(0) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(s.at(1000) == doctest::Approx(3.0).epsilon(1e-12));
  double prev = s.at(0);
  for (Index t = 1; t <= 1200; t += 7) {
    CHECK(s.at(t) >= prev);
    prev = s.at(t);
  }
  VectorXd all(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) all[static_cast<Index>(i)] = losses[i];
  CHECK(spl_weights(all, s.at(1000)).sum() == static_cast<double>(losses.size()));
  CHECK_THROWS_AS(SplSchedule::from_losses({}, 30.0, 10), ConfigError);
  CHECK_THROWS_AS(SplSchedule::from_losses(losses, 130.0, 10), ConfigError);
}
