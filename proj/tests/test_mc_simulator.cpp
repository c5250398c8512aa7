#include <cmath>
#include <random>

#include "doctest.h"
#include "dsmrf/learning_curves.hpp"
#include "dsmrf/mc_simulator.hpp"
#include "dsmrf/rng.hpp"

using namespace dsmrf;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

SimConfig small_config() {
  SimConfig c;
  c.d = 60;
  c.D = 30;
  c.n = 300;
  c.p = 40;
  c.t = 0.2;
  c.lambda = 1e-3;
  c.n_test = 512;
  c.n_mc_score = 512;
  c.seed = 5;
  return c;
}

MatrixXd randn(int r, int c, std::mt19937_64& gen) {
  std::normal_distribution<double> N;
  MatrixXd A(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) A(i, j) = N(gen);
  return A;
}

}  // namespace

TEST_CASE("philox4x32-10 known-answer vectors") {
  auto r0 = philox4x32({0, 0, 0, 0}, {0, 0});
  CHECK(r0[0] == 0x6627e8d5u);
  CHECK(r0[1] == 0xe169c58du);
  CHECK(r0[2] == 0xbc57ac4cu);
  CHECK(r0[3] == 0x9b00dbd8u);
  auto r1 = philox4x32({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
  CHECK(r1[0] == 0x408f276du);
  CHECK(r1[1] == 0x41c83b0eu);
  CHECK(r1[2] == 0xa20bc7c6u);
  CHECK(r1[3] == 0x6d5451fdu);
  auto r2 = philox4x32({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
  CHECK(r2[0] == 0xd16cfe09u);
  CHECK(r2[1] == 0x94fdccebu);
  CHECK(r2[2] == 0x5001e420u);
  CHECK(r2[3] == 0x24126ea1u);
}

TEST_CASE("normal stream moments and independence of streams") {
  const int n = 200000;
  double s1 = 0, s2 = 0, s4 = 0, cross = 0;
  for (int i = 0; i < n; ++i) {
    double x = normal_at(9, kStreamXi, uint64_t(i)), y = normal_at(9, kStreamW, uint64_t(i));
    s1 += x;
    s2 += x * x;
    s4 += x * x * x * x;
    cross += x * y;
  }
  CHECK(std::abs(s1 / n) < 0.01);
  CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.01));
  CHECK(s4 / n == doctest::Approx(3.0).epsilon(0.03));
  CHECK(std::abs(cross / n) < 0.01);
  CHECK(normal_at(9, kStreamXi, 17) == normal_at(9, kStreamXi, 17));
  CHECK(normal_at(9, kStreamXi, 17) != normal_at(10, kStreamXi, 17));
}

TEST_CASE("generated data is deterministic and nested in the feature count") {
  auto sig = ActivationProfile::tanh();
  SimConfig c = small_config();
  ManifoldData a = generate(c, sig), b = generate(c, sig);
  CHECK(a.M == b.M);
  CHECK(a.X == b.X);
  CHECK(a.W == b.W);
  CHECK(a.X == manifold_points(a.M, a.Xi, sig));
  CHECK(a.M.rows() == c.d);
  CHECK(a.M.cols() == c.D);
  CHECK(a.Xi.cols() == c.n);
  CHECK(a.W.rows() == c.p);
  SimConfig c2 = c;
  c2.p = 2 * c.p;
  CHECK(generate(c2, sig).W.topRows(c.p) == a.W);
  c2 = c;
  c2.seed = 6;
  CHECK(generate(c2, sig).M != a.M);
}

TEST_CASE("manifold points apply sigma elementwise to the projection") {
  std::mt19937_64 gen(1);
  MatrixXd M = randn(8, 3, gen), Xi = randn(3, 5, gen);
  auto sig = ActivationProfile::parse("hermite:[0.975,0.223]");
  MatrixXd X = manifold_points(M, Xi, sig);
  MatrixXd P = M * Xi / std::sqrt(3.0);
  for (int j = 0; j < 5; ++j)
    for (int i = 0; i < 8; ++i) CHECK(X(i, j) == doctest::Approx(sig(P(i, j))).epsilon(1e-13));
}

TEST_CASE("feature moments against brute-force noise averaging") {
  std::mt19937_64 gen(3);
  const int d = 20, n = 30, p = 8, nz = 20000;
  const double t = 0.3, a = std::exp(-t), h = -std::expm1(-2 * t);
  MatrixXd W = randn(p, d, gen), X = randn(d, n, gen);
  auto rho = ActivationProfile::relu();
  MatrixXd U = MatrixXd::Zero(p, p), V = MatrixXd::Zero(p, d);
  for (int l = 0; l < n; ++l) {
    MatrixXd z = randn(d, nz, gen);
    MatrixXd xt = (a * X.col(l)).replicate(1, nz) + std::sqrt(h) * z;
    MatrixXd F = rho.apply((W * xt / std::sqrt(double(d))).array()).matrix();
    U += F * F.transpose() / double(nz * n);
    V += F * z.transpose() / double(nz * n);
  }
  for (int order : {3, 6}) {
    CAPTURE(order);
    FeatureMoments fm = feature_moments(W, X, t, rho, 0, 1, order);
    CHECK((fm.U - U).cwiseAbs().maxCoeff() < 5e-3);
    CHECK((fm.V - V).cwiseAbs().maxCoeff() < 5e-3);
    CHECK((fm.U - fm.U.transpose()).norm() == 0.0);
  }
  FeatureMoments s = feature_moments(W, X, t, rho, 2000, 1);
  CHECK((s.U - U).cwiseAbs().maxCoeff() < 2e-2);
  CHECK((s.V - V).cwiseAbs().maxCoeff() < 2e-2);
}

TEST_CASE("ridge fit solves the regularized normal equations") {
  std::mt19937_64 gen(4);
  const int p = 12, d = 7;
  MatrixXd B = randn(p, p, gen);
  MatrixXd U = B * B.transpose() / p, V = randn(p, d, gen);
  const double lambda = 0.05, h = 0.3;
  MatrixXd A = fit(U, V, lambda, h);
  MatrixXd ref = -(1 / std::sqrt(h)) * V.transpose() * (U + lambda * MatrixXd::Identity(p, p)).inverse();
  CHECK((A / std::sqrt(double(p)) - ref).norm() < 1e-10 * ref.norm());
  CHECK_THROWS_AS(fit(-MatrixXd::Identity(p, p), V, lambda, h), FactorizationFailure);
  CHECK_THROWS_AS(fit(U, V, 0.0, h), std::invalid_argument);
}

TEST_CASE("zero score gives unit test and train error") {
  SimConfig c = small_config();
  auto rho = ActivationProfile::relu(), sig = ActivationProfile::identity();
  ManifoldData data = generate(c, sig);
  MatrixXd A = MatrixXd::Zero(c.d, c.p);
  ErrorEstimates e = empirical_errors(A, data.W, data.M, data.X, c, rho, sig);
  CHECK(std::abs(e.test.mean - 1) < 5 * e.test.se);
  CHECK(std::abs(e.train.mean - 1) < 5 * e.train.se);
  CHECK(e.test.se > 0);
}

TEST_CASE("exact linear score is the Gaussian score") {
  std::mt19937_64 gen(8);
  const int d = 10, D = 4;
  MatrixXd M = randn(d, D, gen), x = randn(d, 3, gen);
  const double t = 0.4, a = std::exp(-t), h = -std::expm1(-2 * t);
  ExactScoreLinear s(M, t, ActivationProfile::identity());
  MatrixXd S = a * a * M * M.transpose() / D + h * MatrixXd::Identity(d, d);
  CHECK((s(x) + S.inverse() * x).norm() < 1e-12);
  CHECK_THROWS(ExactScoreLinear(M, t, ActivationProfile::tanh()));
}

TEST_CASE("empirical exact-score error matches the closed form") {
  SimConfig c = small_config();
  c.d = 200;
  c.D = 100;
  c.n_mc_score = 4096;
  auto id = ActivationProfile::identity();
  ManifoldData data = generate(c, id);
  Estimate e = empirical_exact_test_error(data.M, c, id);
  const double a = std::exp(-c.t), h = -std::expm1(-2 * c.t);
  MatrixXd S = a * a * data.M * data.M.transpose() / c.D + h * MatrixXd::Identity(c.d, c.d);
  double ref = 1 - h * S.inverse().trace() / c.d;
  CHECK(std::abs(e.mean - ref) < 4 * e.se);
}

TEST_CASE("empirical optimal score") {
  std::mt19937_64 gen(2);
  const int d = 6, n = 5;
  const double t = 0.5, a = std::exp(-t), h = -std::expm1(-2 * t);
  MatrixXd X = randn(d, n, gen);
  VectorXd x = randn(d, 1, gen);
  // single datum: score of one Gaussian bump
  VectorXd s1 = empirical_optimal_score(x, X.leftCols(1), t);
  CHECK((s1 + (x - a * X.col(0)) / h).norm() < 1e-12);
  // naive softmax mixture
  VectorXd w(n);
  for (int i = 0; i < n; ++i) w[i] = std::exp(-(x - a * X.col(i)).squaredNorm() / (2 * h));
  w /= w.sum();
  VectorXd ref = VectorXd::Zero(d);
  for (int i = 0; i < n; ++i) ref -= w[i] * (x - a * X.col(i)) / h;
  CHECK((empirical_optimal_score(x, X, t) - ref).norm() < 1e-10);
  // far-away point: no overflow
  VectorXd far = VectorXd::Constant(d, 1e3);
  CHECK(empirical_optimal_score(far, X, t).allFinite());
  CHECK_THROWS(empirical_optimal_score(x, MatrixXd(d, 0), t));
}

TEST_CASE("simulate_seed is deterministic and nests feature counts") {
  SimConfig c = small_config();
  auto rho = ActivationProfile::relu(), sig = ActivationProfile::identity();
  SeedRun a = simulate_seed(c, {10, 40}, rho, sig, true);
  SeedRun b = simulate_seed(c, {10, 40}, rho, sig, true);
  SeedRun single = simulate_seed(c, {10}, rho, sig, true);
  REQUIRE(a.points.size() == 2);
  for (size_t k = 0; k < 2; ++k) {
    CHECK(a.points[k].test.mean == b.points[k].test.mean);
    CHECK(a.points[k].train.mean == b.points[k].train.mean);
    CHECK(a.points[k].score->mean == b.points[k].score->mean);
  }
  // same model, factorized at a different size
  CHECK(single.points[0].test.mean == doctest::Approx(a.points[0].test.mean).epsilon(1e-10));
  CHECK(single.points[0].train.mean == doctest::Approx(a.points[0].train.mean).epsilon(1e-10));
  CHECK_THROWS(simulate_seed(c, {40, 10}, rho, sig, false));
  CHECK_THROWS(simulate_seed(c, {}, rho, sig, false));
  CHECK_THROWS(simulate_seed(c, {10}, rho, ActivationProfile::tanh(), true));
}

TEST_CASE("score decomposition holds per seed") {
  SimConfig c = small_config();
  auto rho = ActivationProfile::relu(), sig = ActivationProfile::identity();
  SeedRun r = simulate_seed(c, {40}, rho, sig, true);
  const double h = -std::expm1(-2 * c.t);
  const auto& pt = r.points[0];
  REQUIRE(pt.score.has_value());
  REQUIRE(pt.star.has_value());
  double resid = pt.test.mean - h * pt.score->mean - pt.star->mean;
  double se = std::sqrt(pt.test.se * pt.test.se + h * h * pt.score->se * pt.score->se + pt.star->se * pt.star->se);
  CHECK(std::abs(resid) < 5 * se);
}

TEST_CASE("small simulation tracks the asymptotic curve") {
  SimConfig c;
  c.d = 300;
  c.D = 150;
  c.n = 3000;
  c.t = 0.1;
  c.lambda = 1e-4;
  c.n_test = 2048;
  c.seed = 2;
  auto rho = ActivationProfile::relu(), sig = ActivationProfile::tanh();
  SeedRun r = simulate_seed(c, {150, 600}, rho, sig, false);
  for (auto& pt : r.points) {
    auto mp = make_point(c.t, c.lambda, 0.5, 10, pt.p / 300.0, rho, sig);
    CAPTURE(pt.p);
    CHECK(std::abs(pt.test.mean - test_error(mp)) < 0.05);
    CHECK(std::abs(pt.train.mean - train_error(mp)) < 0.05);
  }
}

TEST_CASE("aggregate combines seed means") {
  SimConfig c = small_config();
  SeedRun a, b;
  a.points.push_back({10, {0.5, 0.01}, {0.4, 0.01}, std::nullopt, std::nullopt});
  b.points.push_back({10, {0.7, 0.01}, {0.6, 0.01}, std::nullopt, std::nullopt});
  SimResult r = aggregate(c, {10}, {a, b});
  CHECK(r.test[0].mean == doctest::Approx(0.6));
  CHECK(r.test[0].se == doctest::Approx(0.1));
  CHECK(!r.score[0].has_value());
  SimResult one = aggregate(c, {10}, {a});
  CHECK(one.test[0].se == 0.01);
  SeedRun bad;
  CHECK_THROWS(aggregate(c, {10}, {a, bad}));
}

TEST_CASE("configuration validation and memory guard") {
  SimConfig c = small_config();
  CHECK_NOTHROW(validate(c));
  SimConfig bad = c;
  bad.d = 0;
  CHECK_THROWS(validate(bad));
  bad = c;
  bad.t = -1;
  CHECK_THROWS(validate(bad));
  SimConfig big = c;
  big.mem_budget_gib = 1e-6;
  CHECK_THROWS_AS(check_memory(big, 10000), MemoryBudgetExceeded);
  CHECK(estimated_bytes(c, 2 * c.p) > estimated_bytes(c, c.p));
  CHECK(estimated_bytes(c, c.p) > 8.0 * c.p * c.p);
}

TEST_CASE("closed-form Gaussian-equivalence gap agrees with Monte Carlo") {
  auto f = ActivationProfile::parse("hermite:[0.6,0.8]");
  auto sig = ActivationProfile::parse("hermite:[0.8,0.6]");
  GapResult ex = gaussian_equivalence_gap_exact(f, 12, 6, sig, 3);
  GapResult mc = gaussian_equivalence_gap(f, 12, 6, sig, 400000, 3);
  CHECK(ex.se == 0.0);
  CHECK(std::abs(ex.non_gaussian - mc.non_gaussian) < 5 * mc.se + 1e-3);
  CHECK(ex.gaussian == doctest::Approx(mc.gaussian).epsilon(0.05).scale(0.05));
  CHECK_THROWS(gaussian_equivalence_gap_exact(ActivationProfile::relu(), 12, 6, sig, 3));
  // linear folding and linear f: nothing to gain from non-Gaussianity
  auto id = ActivationProfile::identity();
  CHECK(gaussian_equivalence_gap_exact(id, 12, 6, id, 3).gap < 1e-12);
}
