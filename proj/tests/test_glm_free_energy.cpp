#include <cmath>

#include "doctest.h"
#include "dsmrf/glm_free_energy.hpp"
#include "oracles.hpp"

using namespace dsmrf;

TEST_CASE("phi(r) closed form and integral agree") {
  for (double r : {0.0, 0.1, 1.0, 4.0, 50.0}) {
    CAPTURE(r);
    CHECK(phi_r(r) == doctest::Approx(r / 2 - std::log1p(r) / 2).epsilon(1e-14));
    CHECK(phi_r_integral(r) == doctest::Approx(phi_r(r)).epsilon(1e-8).scale(1.0));
  }
}

TEST_CASE("Psi(q) for identity folding matches the linear closed form") {
  auto id = ActivationProfile::identity();
  for (double t : {0.02, 0.3, 2.0})
    for (double q : {0.0, 0.25, 0.6, 0.95}) {
      const double a = std::exp(-t), h = -std::expm1(-2 * t);
      CAPTURE(t);
      CAPTURE(q);
      CHECK(psi_q_ah(q, a, h, id) == doctest::Approx(psi_q_linear(q, a, h)).epsilon(1e-7).scale(1.0));
      CHECK(psi_q(q, t, id) == doctest::Approx(psi_q_ah(q, a, h, id)).epsilon(1e-12).scale(1.0));
    }
}

TEST_CASE("profile free energy is f_rs at the optimal r") {
  auto sig = ActivationProfile::parse("hermite:[0.975,0.223]");
  const double q = 0.4, eta = eta_of_t(0.1), psi_D = 0.5;
  double prof = f_rs_profile(q, eta, psi_D, sig);
  // scan r: the profile is an extremum over r
  double best_lo = 1e300, best_hi = -1e300;
  for (double r = 0.01; r < 20; r *= 1.05) {
    double v = f_rs(q, r, eta, psi_D, sig);
    best_lo = std::min(best_lo, v);
    best_hi = std::max(best_hi, v);
  }
  bool at_extremum = std::abs(prof - best_lo) < 1e-4 || std::abs(prof - best_hi) < 1e-4;
  CHECK(at_extremum);
}

TEST_CASE("saddle point is an interior maximizer") {
  auto sig = ActivationProfile::parse("hermite:[0.975,0.223]");
  SaddlePoint sp = saddle(0.1, 0.5, sig);
  CHECK(sp.q_star > 0);
  CHECK(sp.q_star < 1);
  const double eta = eta_of_t(0.1);
  CHECK(sp.eta == doctest::Approx(eta));
  double f0 = f_rs_profile(sp.q_star, eta, 0.5, sig);
  CHECK(f0 == doctest::Approx(sp.f_star).epsilon(1e-10));
  for (double dq : {-1e-3, 1e-3}) CHECK(f_rs_profile(sp.q_star + dq, eta, 0.5, sig) <= f0 + 1e-12);
}

TEST_CASE("mmse envelope derivative agrees with finite differences") {
  auto sig = ActivationProfile::parse("hermite:[0.975,0.223]");
  MmseResult m = mmse_per_d(0.1, 0.5, sig);
  CHECK(m.value > 0);
  CHECK(m.value < 1);
  CHECK(m.g_prime == doctest::Approx(m.g_prime_envelope).epsilon(1e-4));
}

TEST_CASE("mmse reaches the prior variance at large diffusion time") {
  for (const char* s : {"identity", "hermite:[0.975,0.223]"}) {
    CAPTURE(s);
    CHECK(mmse_per_d(10.0, 0.5, ActivationProfile::parse(s)).value == doctest::Approx(1.0).epsilon(1e-4));
  }
}
