#include <Eigen/Eigenvalues>
#include <cmath>
#include <random>

#include "doctest.h"
#include "dsmrf/learning_curves.hpp"

using namespace dsmrf;
using Eigen::MatrixXd;

namespace {

// eigenvalues of M M^T / D for a d x D Gaussian M
Eigen::VectorXd wishart_eigs(int d, int D, unsigned seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> N;
  MatrixXd M(d, D);
  for (int j = 0; j < D; ++j)
    for (int i = 0; i < d; ++i) M(i, j) = N(gen);
  MatrixXd C = M * M.transpose() / double(D);
  return Eigen::SelfAdjointEigenSolver<MatrixXd>(C, Eigen::EigenvaluesOnly).eigenvalues();
}

}  // namespace

TEST_CASE("Marchenko-Pastur Stieltjes transform against sampled eigenvalues") {
  const int d = 800;
  for (double psi_D : {0.25, 0.5, 2.0}) {
    Eigen::VectorXd ev = wishart_eigs(d, int(psi_D * d), 7);
    for (double z : {-0.05, -0.5, -3.0}) {
      CAPTURE(psi_D);
      CAPTURE(z);
      double ref = (1.0 / (ev.array() - z)).mean();
      CHECK(mp_stieltjes(z, 1 / psi_D) == doctest::Approx(ref).epsilon(1e-2));
    }
  }
}

TEST_CASE("linear exact-score error against the Gaussian trace formula") {
  const int d = 800;
  for (double psi_D : {0.1, 0.5}) {
    Eigen::VectorXd ev = wishart_eigs(d, int(psi_D * d), 3);
    for (double t : {0.01, 0.1, 1.0}) {
      CAPTURE(psi_D);
      CAPTURE(t);
      const double a = std::exp(-t), h = -std::expm1(-2 * t);
      // Gaussian data: E||sqrt h s* + z||^2 / d = 1 - h tr(Sigma_t^{-1}) / d
      double ref = 1 - h * (1.0 / (a * a * ev.array() + h)).mean();
      auto p = make_point(t, 1e-4, psi_D, 10, 1, ActivationProfile::relu(), ActivationProfile::identity());
      CHECK(exact_test_error_linear(p) == doctest::Approx(ref).epsilon(5e-3));
    }
  }
}

TEST_CASE("exact-score error tends to the manifold fraction as t -> 0") {
  for (double psi_D : {0.1, 0.3, 0.5}) {
    auto p = make_point(1e-7, 1e-4, psi_D, 10, 1, ActivationProfile::relu(), ActivationProfile::identity());
    CHECK(exact_test_error_linear(p) == doctest::Approx(psi_D).epsilon(1e-4));
  }
}

TEST_CASE("replica route reduces to the closed form for linear folding") {
  for (double t : {0.05, 0.3, 1.0})
    for (double psi_D : {0.2, 0.5}) {
      CAPTURE(t);
      CAPTURE(psi_D);
      auto p = make_point(t, 1e-4, psi_D, 10, 1, ActivationProfile::relu(), ActivationProfile::identity());
      CHECK(exact_test_error_glm(p) == doctest::Approx(exact_test_error_linear(p)).epsilon(1e-6));
    }
}

TEST_CASE("baseline method selection") {
  BaselineMethod m;
  auto p = make_point(0.1, 1e-4, 0.5, 10, 1, ActivationProfile::relu(), ActivationProfile::identity());
  exact_test_error(p, &m);
  CHECK(m == BaselineMethod::mp_closed_form);
  p = make_point(0.1, 1e-4, 0.5, 10, 1, ActivationProfile::relu(), ActivationProfile::parse("hermite:[0.975,0.223]"));
  double e = exact_test_error(p, &m);
  CHECK(m == BaselineMethod::glm_replica);
  CHECK(e > 0);
  CHECK(e < 1);
  CHECK(std::string(to_string(m)) == "glm-replica");
}

TEST_CASE("nonlinear exact-score error decreases with diffusion time") {
  auto sig = ActivationProfile::parse("hermite:[0.975,0.223]");
  double prev = 1.0;
  for (double t : {0.01, 0.05, 0.2, 1.0, 3.0}) {
    auto p = make_point(t, 1e-4, 0.5, 10, 1, ActivationProfile::relu(), sig);
    double e = exact_test_error(p);
    CAPTURE(t);
    CHECK(e < prev);
    prev = e;
  }
}

TEST_CASE("score error is the rescaled excess test error") {
  auto s = score_error_from(0.8, 0.5, 0.2, BaselineMethod::mp_closed_form);
  CHECK(s.value == doctest::Approx(1.5));
  CHECK(!s.clamped);
  auto c = score_error_from(0.5, 0.5 + 1e-8, 0.1, BaselineMethod::mp_closed_form);
  CHECK(c.value == 0.0);
  CHECK(c.clamped);
  // a clearly negative excess is reported, not hidden
  CHECK(score_error_from(0.4, 0.5, 0.1, BaselineMethod::mp_closed_form).value < 0);
}

TEST_CASE("evaluate is consistent with the separate entry points") {
  auto p = make_point(0.1, 1e-4, 0.5, 10, 2, ActivationProfile::relu(), ActivationProfile::identity());
  CurvePoint c = evaluate(p);
  CHECK(c.e_test == doctest::Approx(test_error(p)).epsilon(1e-12));
  CHECK(c.e_train == doctest::Approx(train_error(p)).epsilon(1e-12));
  CHECK(c.e_test_star == doctest::Approx(exact_test_error_linear(p)).epsilon(1e-12));
  CHECK(c.e_score == doctest::Approx((c.e_test - c.e_test_star) / p.h).epsilon(1e-12));
  CHECK(c.residual < 1e-10);
  CurvePoint c2 = evaluate(p, 0.3);
  CHECK(c2.e_test_star == 0.3);
}

TEST_CASE("sample complexity scan") {
  auto base = make_point(0.1, 1e-4, 0.3, 1, 1000, ActivationProfile::relu(), ActivationProfile::identity());
  std::vector<double> grid{1, 3, 10, 30, 100, 300, 1000};
  std::vector<double> tg{0.1};
  auto sc = sample_complexity(base, 0.2, tg, grid);
  REQUIRE(sc.worst.size() == grid.size());
  // worst entry is h^2 times the score error at that psi_n
  auto p = base;
  p.psi_n = 30;
  refresh(p);
  CHECK(sc.worst[3] == doctest::Approx(p.h * p.h * score_error(p).value).epsilon(1e-10));
  REQUIRE(sc.psi_n_star.has_value());
  CHECK(*sc.psi_n_star == grid[size_t(sc.index)]);
  CHECK(sc.worst[size_t(sc.index)] < 0.2);
  if (sc.index > 0) CHECK(sc.worst[size_t(sc.index) - 1] >= 0.2);
  // unreachable threshold
  CHECK(!sample_complexity(base, 1e-9, tg, grid).psi_n_star.has_value());
  CHECK_THROWS(sample_complexity(base, 0.2, tg, {}));
  CHECK_THROWS(sample_complexity(base, 0.2, tg, {10, 3}));
  CHECK_THROWS(sample_complexity(base, -1, tg, grid));
}
