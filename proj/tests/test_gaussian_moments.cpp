#include <cmath>

#include "doctest.h"
#include "dsmrf/gaussian_moments.hpp"
#include "oracles.hpp"

using namespace dsmrf;

TEST_CASE("gauss-hermite rule reproduces normal moments") {
  const auto& gh = gauss_hermite(40);
  CHECK(gh.weights.sum() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(gauss_expect([](double x) { return x * x; }, 40) == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(gauss_expect([](double x) { return std::pow(x, 4); }, 40) == doctest::Approx(3.0).epsilon(1e-13));
  CHECK(gauss_expect([](double x) { return std::pow(x, 8); }, 40) == doctest::Approx(105.0).epsilon(1e-12));
  CHECK(std::abs(gauss_expect([](double x) { return std::pow(x, 5); }, 40)) < 1e-12);
}

TEST_CASE("hermite polynomials follow the three-term recurrence") {
  double He[6];
  hermite_values(1.7, 5, He);
  const double x = 1.7;
  CHECK(He[0] == 1.0);
  CHECK(He[1] == doctest::Approx(x));
  CHECK(He[2] == doctest::Approx(x * x - 1));
  CHECK(He[3] == doctest::Approx(x * x * x - 3 * x));
  CHECK(He[5] == doctest::Approx(std::pow(x, 5) - 10 * std::pow(x, 3) + 15 * x));
}

TEST_CASE("activations are standardized") {
  for (const char* spec : {"relu", "tanh", "identity", "hermite:[0.975,0.223]", "hermite:[0.5,0,0.5]"}) {
    CAPTURE(spec);
    auto f = ActivationProfile::parse(spec);
    CHECK(std::abs(oracle::gauss([&](double x) { return f(x); })) < 1e-9);
    CHECK(oracle::gauss([&](double x) { return f(x) * f(x); }) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("relu standardization constants and first moment") {
  auto f = ActivationProfile::relu();
  CHECK(f.shift() == doctest::Approx(oracle::relu_shift).epsilon(1e-12));
  CHECK(f.scale() == doctest::Approx(oracle::relu_scale).epsilon(1e-12));
  CHECK(f.mu1() == doctest::Approx(0.5 / oracle::relu_scale).epsilon(1e-10));
  CHECK(!f.is_linear());
}

TEST_CASE("tanh first moment against direct integration") {
  auto f = ActivationProfile::tanh();
  double mu = oracle::gauss([&](double x) { return x * f(x); });
  CHECK(f.mu1() == doctest::Approx(mu).epsilon(1e-9));
}

TEST_CASE("relu kernel c(gamma) against a kink-split oracle") {
  auto f = ActivationProfile::relu();
  for (double g : {-0.9, -0.3, 0.0, 0.2, 0.5, 0.81, 0.99, 1.0}) {
    CAPTURE(g);
    CHECK(f.c_gamma(g) == doctest::Approx(oracle::relu_c(g)).epsilon(1e-8).scale(1.0));
  }
}

TEST_CASE("smooth kernel c(gamma) against nested Simpson") {
  auto f = ActivationProfile::tanh();
  for (double g : {-0.6, 0.1, 0.5, 0.9}) {
    CAPTURE(g);
    const double s = std::sqrt(1 - g * g);
    double ref = oracle::gauss([&](double u) {
      return f(u) * oracle::gauss([&](double w) { return f(g * u + s * w); }, 0.0, 10.0, 400);
    }, 0.0, 10.0, 400);
    CHECK(f.c_gamma(g) == doctest::Approx(ref).epsilon(1e-7).scale(1.0));
    CHECK(c_gamma_bivariate(f, g) == doctest::Approx(ref).epsilon(1e-7).scale(1.0));
  }
}

TEST_CASE("hermite mixture kernel is the power series of squared coefficients") {
  auto f = ActivationProfile::hermite_mixture({0.6, 0.0, 0.8});
  for (double g : {-0.7, 0.0, 0.3, 1.0}) CHECK(f.c_gamma(g) == doctest::Approx(0.36 * g + 0.64 * g * g * g).epsilon(1e-12));
  CHECK(f.tail_mass(3) < 1e-14);
  CHECK(f.mu1() == doctest::Approx(0.6));
}

TEST_CASE("endpoint values of c") {
  for (const char* spec : {"relu", "tanh", "identity", "hermite:[0.975,0.223]"}) {
    auto f = ActivationProfile::parse(spec);
    CHECK(std::abs(f.c_gamma(0.0)) < 1e-12);
    CHECK(f.c_gamma(1.0) == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("hermite coefficients and tail mass") {
  auto f = ActivationProfile::relu();
  Eigen::VectorXd al = f.hermite(6);
  double He[7];
  for (int k = 0; k <= 6; ++k) {
    CAPTURE(k);
    double ref = oracle::gauss([&](double x) {
      hermite_values(x, 6, He);
      return f(x) * He[k];
    });
    CHECK(al[k] == doctest::Approx(ref).epsilon(1e-9).scale(1.0));
  }
  // odd coefficients above 1 vanish for ReLU
  CHECK(std::abs(al[3]) < 1e-10);
  CHECK(std::abs(al[5]) < 1e-10);
  // slowly decaying series: the tail is visible at K = 16
  CHECK(f.tail_mass(16) > 1e-3);
  CHECK(f.tail_mass(16) < f.tail_mass(4));
  CHECK(ActivationProfile::identity().tail_mass(1) < 1e-14);
}

TEST_CASE("smoothed moments against quadrature") {
  auto f = ActivationProfile::relu();
  const double m = 0.4, s = 0.7;
  double A[5], second = 0, He[5];
  f.smoothed(m, s, 4, A, &second);
  for (int k = 0; k <= 4; ++k) {
    CAPTURE(k);
    double ref = oracle::gauss([&](double u) {
      hermite_values(u, 4, He);
      return f(m + s * u) * He[k];
    }, -m / s);
    CHECK(A[k] == doctest::Approx(ref).epsilon(1e-9).scale(1.0));
  }
  CHECK(second == doctest::Approx(oracle::gauss([&](double u) { return f(m + s * u) * f(m + s * u); }, -m / s)).epsilon(1e-9));
}

TEST_CASE("tabulated and custom activations") {
  std::vector<double> g, v;
  for (int i = -80; i <= 80; ++i) {
    g.push_back(i * 0.1);
    v.push_back(std::abs(i * 0.1));
  }
  auto f = ActivationProfile::tabulated(g, v);
  CHECK(std::abs(oracle::gauss([&](double x) { return f(x); }, 0.0, 8.0)) < 1e-6);
  auto c = ActivationProfile::standardize([](double x) { return x + 0.3 * x * x; });
  CHECK(oracle::gauss([&](double x) { return c(x) * c(x); }) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("activation parse errors") {
  CHECK_THROWS(ActivationProfile::parse("softplus"));
  CHECK_THROWS(ActivationProfile::parse("hermite:[0.5,"));
  CHECK_THROWS(ActivationProfile::parse("hermite:[]"));
  CHECK_THROWS(ActivationProfile::parse("hermite:[0,0]"));
  CHECK(ActivationProfile::parse("hermite:[2]").is_linear());
}
