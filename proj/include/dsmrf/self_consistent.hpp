#pragma once

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>
#include <string>

#include "dsmrf/gaussian_moments.hpp"

namespace dsmrf {

struct SolverFailure : std::runtime_error {
  double last_residual = 0.0;
  SolverFailure(const std::string& what, double r) : std::runtime_error(what), last_residual(r) {}
};

struct PoleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModelPoint {
  double t = 0.1;
  double a = 0.0, h = 0.0;
  double lambda = 1e-4;
  double psi_D = 0.5, psi_n = 10.0, psi_p = 1.0;
  ActivationProfile rho = ActivationProfile::relu();
  ActivationProfile sigma = ActivationProfile::identity();
  double mu1 = 0.0, nu1 = 0.0;
  double c_a2 = 0.0;
  double s2 = 0.0, v2 = 0.0;
};

// validates and fills the derived fields
ModelPoint make_point(double t, double lambda, double psi_D, double psi_n, double psi_p,
                      const ActivationProfile& rho, const ActivationProfile& sigma);
// re-derive after editing ratios/lambda in place
void refresh(ModelPoint& p);

struct Zetas {
  double zeta1 = 0, zeta2 = 0, zeta3 = 0, zeta4 = 0;
  double chi = 1;
  double residual_norm = 0;
  int iterations = 0;
  Eigen::Vector4d vec() const { return {zeta1, zeta2, zeta3, zeta4}; }
  static Zetas from(const Eigen::Vector4d& v) {
    Zetas z;
    z.zeta1 = v[0];
    z.zeta2 = v[1];
    z.zeta3 = v[2];
    z.zeta4 = v[3];
    return z;
  }
};

struct KappaSet {
  double chi, kappa1, kappa2, kappa3, kappa4, kappa5;
};

KappaSet kappas(const Zetas& zt, const ModelPoint& p, double q, double z);
Eigen::Vector4d residuals(const Zetas& zt, const ModelPoint& p, double q, double z);

struct SolveOptions {
  int max_iterations = 100000;
  int max_newton = 200;
  double tol = 0.0;  // Newton runs until the residual stops decreasing
  std::optional<Eigen::Vector4d> init;
};

Zetas solve_zetas(const ModelPoint& p, double q, double z, const SolveOptions& opt = {});

double k_value(const ModelPoint& p, double q, double z);

struct KDerivatives {
  double K = 0, dKdq = 0, dKdz = 0;
  double delta = 0;
  double rel_halving = 0;  // step-halving disagreement
  double residual = 0;     // worst solver residual among the evaluations
};

KDerivatives k_derivatives(const ModelPoint& p);

}  // namespace dsmrf
