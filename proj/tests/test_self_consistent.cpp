#include <cmath>
#include <random>

#include "doctest.h"
#include "dsmrf/learning_curves.hpp"
#include "dsmrf/self_consistent.hpp"
#include "oracles.hpp"

using namespace dsmrf;
using Eigen::MatrixXd;

namespace {

// finite-size resolvent traces, built from sampled W, M, Xi at dimension d
struct FiniteSize {
  double K = 0, E1 = 0, E2 = 0, E3 = 0, mu1 = 0;
};

FiniteSize finite_traces(double t, double lambda, double psi_D, double psi_n, double psi_p, double q, int d, unsigned seed) {
  const int D = int(std::lround(psi_D * d)), n = int(std::lround(psi_n * d)), p = int(std::lround(psi_p * d));
  const double a = std::exp(-t), h = -std::expm1(-2 * t);
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> N;
  auto randn = [&](int r, int c) {
    MatrixXd A(r, c);
    for (int j = 0; j < c; ++j)
      for (int i = 0; i < r; ++i) A(i, j) = N(gen);
    return A;
  };
  MatrixXd M = randn(d, D), Xi = randn(D, n), W = randn(p, d);
  MatrixXd X = M * Xi / std::sqrt(double(D));
  // smoothed ReLU with closed-form Gaussian average, standardized
  auto rho0 = [&](double g) { return (oracle::relu_mean(a * g, std::sqrt(h)) - oracle::relu_shift) / oracle::relu_scale; };
  const double mu1 = 0.5 / oracle::relu_scale;
  const double c_a2 = oracle::gauss([&](double g) { return rho0(g) * rho0(g); });
  const double s2 = 1 - c_a2 - h * mu1 * mu1;
  MatrixXd F = (W * X / std::sqrt(double(d))).unaryExpr(rho0);
  MatrixXd WWd = W * W.transpose() / double(d);
  MatrixXd Sigma = a * a * M * M.transpose() / double(D) + h * MatrixXd::Identity(d, d);
  MatrixXd WSW = W * Sigma * W.transpose() / double(d);
  MatrixXd Uq = F * F.transpose() / double(n) + h * mu1 * mu1 * WWd + s2 * MatrixXd::Identity(p, p);
  MatrixXd U0 = Uq;
  Uq += q * WSW;
  FiniteSize r;
  r.mu1 = mu1;
  {
    MatrixXd R = (Uq + lambda * MatrixXd::Identity(p, p)).inverse();
    r.K = (W.transpose() * R * W).trace() / (double(d) * d);
  }
  MatrixXd R = (U0 + lambda * MatrixXd::Identity(p, p)).inverse();
  MatrixXd B = W.transpose() * R * W / double(d);
  r.E1 = B.trace() / d;
  r.E2 = (B * Sigma * B).trace() / d;
  r.E3 = (W.transpose() * R * R * W).trace() / (double(d) * d);
  return r;
}

}  // namespace

TEST_CASE("make_point derives the schedule and rejects bad inputs") {
  auto p = make_point(0.1, 1e-4, 0.5, 10, 2, ActivationProfile::relu(), ActivationProfile::identity());
  CHECK(p.a == doctest::Approx(std::exp(-0.1)));
  CHECK(p.h == doctest::Approx(1 - std::exp(-0.2)));
  CHECK(p.s2 > 0);
  CHECK_THROWS(make_point(-0.1, 1e-4, 0.5, 10, 2, ActivationProfile::relu(), ActivationProfile::identity()));
  CHECK_THROWS(make_point(0.1, 0.0, 0.5, 10, 2, ActivationProfile::relu(), ActivationProfile::identity()));
  CHECK_THROWS(make_point(0.1, 1e-4, 0.0, 10, 2, ActivationProfile::relu(), ActivationProfile::identity()));
}

TEST_CASE("solver returns a root of the coupled equations") {
  auto p = make_point(0.1, 1e-3, 0.5, 3, 1.5, ActivationProfile::relu(), ActivationProfile::identity());
  for (double q : {0.0, 0.5}) {
    Zetas z = solve_zetas(p, q, -p.lambda);
    CHECK(residuals(z, p, q, -p.lambda).norm() < 1e-10);
    // restart from a far initial point lands on the same root
    SolveOptions o;
    o.init = Eigen::Vector4d(5.0, 0.01, 3.0, 0.2);
    Zetas z2 = solve_zetas(p, q, -p.lambda, o);
    CHECK((z.vec() - z2.vec()).norm() < 1e-8 * (1 + z.vec().norm()));
  }
}

TEST_CASE("K(q, z) matches the finite-size resolvent trace") {
  const double t = 0.1, lambda = 1e-2, psi_D = 0.5, psi_n = 2, psi_p = 1;
  auto p = make_point(t, lambda, psi_D, psi_n, psi_p, ActivationProfile::relu(), ActivationProfile::identity());
  for (double q : {0.0, 0.4}) {
    CAPTURE(q);
    double fin = 0;
    for (unsigned s = 0; s < 3; ++s) fin += finite_traces(t, lambda, psi_D, psi_n, psi_p, q, 400, 11 + s).K / 3;
    CHECK(k_value(p, q, -lambda) == doctest::Approx(fin).epsilon(0.02));
  }
}

TEST_CASE("test error matches the finite-size trace formula") {
  const double t = 0.1, lambda = 1e-2, psi_D = 0.5, psi_n = 2, psi_p = 1;
  auto p = make_point(t, lambda, psi_D, psi_n, psi_p, ActivationProfile::relu(), ActivationProfile::identity());
  double e = 0;
  for (unsigned s = 0; s < 3; ++s) {
    auto f = finite_traces(t, lambda, psi_D, psi_n, psi_p, 0.0, 400, 101 + s);
    const double m2 = f.mu1 * f.mu1, h = p.h;
    e += (1 - 2 * h * m2 * f.E1 + h * m2 * m2 * f.E2 + h * m2 * (1 - m2) * f.E3) / 3;
  }
  CHECK(test_error(p) == doctest::Approx(e).epsilon(0.02));
}

TEST_CASE("K derivatives agree with central differences of k_value") {
  auto p = make_point(0.5, 1e-2, 0.3, 4, 2, ActivationProfile::tanh(), ActivationProfile::identity());
  KDerivatives kd = k_derivatives(p);
  const double z = -p.lambda, dq = 1e-4, dz = 1e-4;
  CHECK(kd.K == doctest::Approx(k_value(p, 0, z)).epsilon(1e-10));
  // one-sided in q: q >= 0
  double fq = (-3 * k_value(p, 0, z) + 4 * k_value(p, dq, z) - k_value(p, 2 * dq, z)) / (2 * dq);
  double fz = (k_value(p, 0, z + dz) - k_value(p, 0, z - dz)) / (2 * dz);
  CHECK(kd.dKdq == doctest::Approx(fq).epsilon(1e-5));
  CHECK(kd.dKdz == doctest::Approx(fz).epsilon(1e-5));
  CHECK(kd.residual < 1e-10);
}

TEST_CASE("errors are positive and train does not exceed test") {
  for (double psi_p : {0.1, 1.0, 10.0, 100.0}) {
    CAPTURE(psi_p);
    auto p = make_point(0.1, 1e-4, 0.5, 10, psi_p, ActivationProfile::relu(), ActivationProfile::tanh());
    double te = test_error(p), tr = train_error(p);
    CHECK(te > 0);
    CHECK(tr >= 0);
    CHECK(tr <= te + 1e-9);
  }
}

TEST_CASE("vanishing width and huge ridge both give unit error") {
  auto p = make_point(0.1, 1e8, 0.5, 10, 2, ActivationProfile::relu(), ActivationProfile::identity());
  CHECK(test_error(p) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(train_error(p) == doctest::Approx(1.0).epsilon(1e-6));
}
