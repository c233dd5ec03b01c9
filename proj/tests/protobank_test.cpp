#include "ld3dhs/protobank.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace ld3dhs;
using namespace ld3dhs::testing;

TEST_CASE("gini: worked values") {
  CHECK(gini(std::vector<double>{1.0, 0.0}) == 0.5);
  CHECK(gini(std::vector<double>{0.25, 0.25, 0.25, 0.25}) == 0.0);
  CHECK(gini(std::vector<double>{0.97, 0.01, 0.01, 0.01}) == doctest::Approx(0.72).epsilon(1e-12));
  CHECK_THROWS_AS(gini(std::vector<double>{0.5, 0.4}), std::invalid_argument);
}

TEST_CASE("gini matches the pairwise oracle and is permutation invariant") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    auto f = random_distribution(2 + static_cast<int>(rng() % 20), rng);
    const double g = gini(f);
    CHECK(std::abs(g - gini_oracle(f)) <= 1e-12);
    CHECK(g >= 0.0);
    CHECK(g < 1.0);
    std::shuffle(f.begin(), f.end(), rng);
    CHECK(std::abs(gini(f) - g) <= 1e-12);
  }
}

TEST_CASE("imbalance gate compares against the threshold inclusively") {
  const std::vector<std::vector<double>> f{{0.25, 0.25, 0.25, 0.25}, {0.97, 0.01, 0.01, 0.01}, {1.0, 0.0}};
  CHECK(imbalance_gate(f, 0.6) == std::vector<bool>{false, true, false});
  CHECK(imbalance_gate(f, 0.5) == std::vector<bool>{false, true, true});
}

TEST_CASE("batch_prototypes equals a group-by mean") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd x = random_unit_rows(60, 5, rng) * 3.0;
    const auto labels = random_labels(60, 7, rng);
    const BatchPrototypes p = batch_prototypes(x, labels, 9);
    const auto oracle = groupby_mean(x, labels);
    for (int c = 0; c < 9; ++c) {
      const auto it = oracle.find(c);
      CHECK(p.present[c] == (it != oracle.end()));
      if (it == oracle.end()) {
        CHECK(p.means.row(c).isZero(0.0));
      } else {
        CHECK((p.means.row(c).transpose() - it->second).cwiseAbs().maxCoeff() <= 1e-12);
      }
    }
  }
}

TEST_CASE("EMA: first observation seeds the state, later ones blend") {
  PrototypeBank bank({2}, 3, 0.999);
  CHECK_FALSE(bank.initialized(0, Branch::Main, 0));
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(2, 3);
  p(0, 0) = 2.0;
  bank.ema_update(0, Branch::Main, p, {true, false});
  CHECK(bank.running_state(0, Branch::Main).row(0) == p.row(0));
  CHECK(bank.prototypes(0, Branch::Main).row(0) == Eigen::RowVector3d(1, 0, 0));
  CHECK(bank.prototypes(0, Branch::Main).row(1).isZero(0.0));
  CHECK_FALSE(bank.initialized(0, Branch::Main, 1));
  CHECK_FALSE(bank.initialized(0, Branch::Aux, 0));

  // Unit e1 state, then e2 observed once.
  PrototypeBank b2({1}, 3, 0.999);
  b2.ema_update(0, Branch::Aux, Eigen::RowVector3d(1, 0, 0), {true});
  b2.ema_update(0, Branch::Aux, Eigen::RowVector3d(0, 1, 0), {true});
  const Eigen::RowVector3d state = b2.running_state(0, Branch::Aux).row(0);
  CHECK(state(0) == doctest::Approx(0.999).epsilon(1e-15));
  CHECK(state(1) == doctest::Approx(0.001).epsilon(1e-12));
  CHECK(state(2) == 0.0);
  const Eigen::RowVector3d unit = b2.prototypes(0, Branch::Aux).row(0);
  CHECK(unit.norm() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK((unit - state / std::hypot(0.999, 0.001)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("EMA closed form over 1000 constant updates") {
  std::mt19937_64 rng(3);
  const double beta = 0.999;
  const Eigen::MatrixXd p0 = random_unit_rows(1, 6, rng);
  const Eigen::MatrixXd p = random_unit_rows(1, 6, rng);
  PrototypeBank bank({1}, 6, beta);
  bank.ema_update(0, Branch::Main, p0, {true});
  for (int k = 0; k < 1000; ++k) bank.ema_update(0, Branch::Main, p, {true});
  const double bk = std::pow(beta, 1000);
  const Eigen::MatrixXd expected = bk * p0 + (1.0 - bk) * p;
  CHECK((bank.running_state(0, Branch::Main) - expected).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("masked classes are left untouched") {
  PrototypeBank bank({3}, 2, 0.5);
  Eigen::MatrixXd p(3, 2);
  p << 1, 0, 0, 1, 1, 1;
  bank.ema_update(0, Branch::Main, p, {true, true, true});
  const Eigen::MatrixXd before = bank.running_state(0, Branch::Main);
  bank.ema_update(0, Branch::Main, Eigen::MatrixXd::Constant(3, 2, 5.0), {false, true, false});
  const Eigen::MatrixXd after = bank.running_state(0, Branch::Main);
  CHECK(after.row(0) == before.row(0));
  CHECK(after.row(2) == before.row(2));
  CHECK(after.row(1) == Eigen::RowVector2d(2.5, 3.0));
}

TEST_CASE("restore reproduces the bank and level_initialized checks only the given classes") {
  PrototypeBank a({2, 3}, 4, 0.9);
  std::mt19937_64 rng(4);
  a.ema_update(1, Branch::Aux, random_unit_rows(3, 4, rng), {true, false, true});
  PrototypeBank b({2, 3}, 4, 0.9);
  b.restore(1, Branch::Aux, a.running_state(1, Branch::Aux), a.init_flags(1, Branch::Aux));
  CHECK(a == b);
  CHECK(b.level_initialized(1, Branch::Aux, std::vector<int>{0, 2}));
  CHECK_FALSE(b.level_initialized(1, Branch::Aux, std::vector<int>{1}));
  CHECK_THROWS(b.restore(1, Branch::Aux, Eigen::MatrixXd::Zero(2, 4), {true, true}));
}
