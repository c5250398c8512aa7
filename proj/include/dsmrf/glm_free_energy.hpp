#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dsmrf/gaussian_moments.hpp"

namespace dsmrf {

struct QuadratureFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SaddleFailure : std::runtime_error {
  double fd = 0, envelope = 0;
  SaddleFailure(const std::string& w, double a, double b) : std::runtime_error(w), fd(a), envelope(b) {}
};

// r/2 - log(1+r)/2
double phi_r(double r);
// same quantity from its integral definition by Gaussian quadrature
double phi_r_integral(double r);

// Psi(q) at schedule (a, h); see psi_q for the t form
double psi_q_ah(double q, double a, double h, const ActivationProfile& sigma);
double psi_q(double q, double t, const ActivationProfile& sigma);
// closed form for identity sigma
double psi_q_linear(double q, double a, double h);

// f_RS(q, r) with r optimized out: q/2 + log(1-q)/2 + Psi(q)/psi_D
double f_rs_profile(double q, double eta, double psi_D, const ActivationProfile& sigma);
double f_rs(double q, double r, double eta, double psi_D, const ActivationProfile& sigma);

struct SaddlePoint {
  double q_star = 0, r_star = 0, f_star = 0, eta = 0;
  bool boundary = false;
  std::vector<double> local_maxima;  // q of every local maximum seen in the pre-scan
  double logit = 0;                  // log(q/(1-q)) of the maximizer
};

SaddlePoint saddle_eta(double eta, double psi_D, const ActivationProfile& sigma, const double* hint = nullptr);
SaddlePoint saddle(double t, double psi_D, const ActivationProfile& sigma);

struct MmseResult {
  double value = 0;
  double g_prime = 0;           // finite-difference derivative of psi_D f*
  double g_prime_envelope = 0;  // frozen-saddle partial derivative
  double rel_halving = 0;
  SaddlePoint sp;
};

MmseResult mmse_per_d(double t, double psi_D, const ActivationProfile& sigma);

inline double eta_of_t(double t) { return std::exp(-t) / std::sqrt(-std::expm1(-2.0 * t)); }

}  // namespace dsmrf
