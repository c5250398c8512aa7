#include "dsmrf/self_consistent.hpp"

#include <boost/math/tools/toms748_solve.hpp>
#include <cmath>
#include <limits>
#include <sstream>

namespace dsmrf {

namespace {

double maxabs(const Eigen::Vector4d& r) { return r.cwiseAbs().maxCoeff(); }

bool physical(const Eigen::Vector4d& v, const ModelPoint& p, double q, double z) {
  if (!v.allFinite() || v[1] <= 0.0 || v[3] <= 0.0 || 1.0 + v[2] <= 0.0) return false;
  KappaSet k = kappas(Zetas::from(v), p, q, z);
  return k.chi > 0.0 && k.kappa1 > 0.0 && k.kappa3 > 0.0 && k.kappa5 > 0.0;
}

double safe_norm(const Eigen::Vector4d& v, const ModelPoint& p, double q, double z) {
  try {
    Eigen::Vector4d r = residuals(Zetas::from(v), p, q, z);
    return r.allFinite() ? maxabs(r) : std::numeric_limits<double>::infinity();
  } catch (const PoleError&) {
    return std::numeric_limits<double>::infinity();
  }
}

// each equation solved for its own zeta
Eigen::Vector4d fixed_point_map(const Eigen::Vector4d& v, const ModelPoint& p, double q, double z) {
  KappaSet k = kappas(Zetas::from(v), p, q, z);
  double nu2 = p.nu1 * p.nu1;
  double z3 = v[2], z4 = v[3];
  double g = (1.0 + z3) / p.psi_p;
  Eigen::Vector4d n;
  n[3] = 1.0 / (p.psi_D * (1.0 / (1.0 + z4) + k.kappa5));
  n[2] = g - g * g * p.psi_D * k.kappa3 * k.kappa4 * z4;
  n[0] = (k.kappa1 - p.psi_D * k.kappa2 * z4 / nu2 - p.psi_D * k.kappa3 * z4 * g / nu2) /
         (p.psi_n * k.kappa1 * k.kappa1);
  n[1] = (p.psi_p - k.kappa1 * p.psi_n * v[0] - k.kappa2 * k.kappa4 * p.psi_D * z4) / (k.kappa3 * p.psi_n);
  return n;
}

Eigen::Matrix4d jacobian(const Eigen::Vector4d& v, const ModelPoint& p, double q, double z) {
  Eigen::Matrix4d J;
  for (int j = 0; j < 4; ++j) {
    double hj = 1e-7 * std::max(1e-3, std::abs(v[j]));
    Eigen::Vector4d a = v, b = v;
    a[j] += hj;
    b[j] -= hj;
    J.col(j) = (residuals(Zetas::from(a), p, q, z) - residuals(Zetas::from(b), p, q, z)) / (2.0 * hj);
  }
  return J;
}

// returns the polished point; r is updated
Eigen::Vector4d newton(Eigen::Vector4d v, double& r, const ModelPoint& p, double q, double z, int max_steps,
                       double tol) {
  for (int it = 0; it < max_steps && r > tol; ++it) {
    Eigen::Vector4d res = residuals(Zetas::from(v), p, q, z);
    Eigen::Vector4d dx = jacobian(v, p, q, z).fullPivLu().solve(-res);
    if (!dx.allFinite()) break;
    double step = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 40; ++ls, step *= 0.5) {
      Eigen::Vector4d c = v + step * dx;
      if (!physical(c, p, q, z)) continue;
      double rc = safe_norm(c, p, q, z);
      if (rc < r) {
        moved = rc > 0.5 * r && rc < 1e-12 ? false : true;  // stop once quadratic convergence is spent
        v = c;
        r = rc;
        break;
      }
    }
    if (!moved) break;
  }
  return v;
}

// For fixed chi the system decouples: zeta3 from a monotone scalar equation
// (zeta4 being the positive root of a quadratic), then zeta1, zeta2 linearly.
struct Reduced {
  Eigen::Vector4d v;
  double phi;
};

template <typename F>
double bracket_root(F&& f, double lo, double hi) {
  boost::math::tools::eps_tolerance<double> tol(52);
  boost::uintmax_t it = 200;
  auto r = boost::math::tools::toms748_solve(f, lo, hi, tol, it);
  return 0.5 * (r.first + r.second);
}

Reduced reduce_at(double chi, const ModelPoint& p, double q, double z) {
  double mu2 = p.mu1 * p.mu1, nu2 = p.nu1 * p.nu1, a2 = p.a * p.a;
  double k1 = a2 * (mu2 / chi + q), k2 = p.h * (mu2 + q), k3 = p.s2 - z + p.v2 / chi;
  double k4 = 1.0 / (k1 * nu2);
  auto zeta4_of = [&](double z3) {
    double k5 = (k1 * (1.0 - nu2) + k2 + k3 * (1.0 + z3) / p.psi_p) / (k1 * nu2);
    double A = p.psi_D * k5, B = p.psi_D * (1.0 + k5) - 1.0;
    double disc = std::sqrt(B * B + 4.0 * A);
    return B > 0.0 ? 2.0 / (B + disc) : (disc - B) / (2.0 * A);
  };
  auto r2 = [&](double z3) {
    double g = (1.0 + z3) / p.psi_p;
    return g - k3 * g * g * p.psi_D * zeta4_of(z3) * k4 - z3;
  };
  double lo = 0.0, hi = 1.0;
  if (r2(lo) < 0.0) {
    hi = lo;
    lo = -0.5;
    while (r2(lo) < 0.0 && lo > -1.0 + 1e-15) lo = -1.0 + 0.5 * (1.0 + lo);
  } else {
    while (r2(hi) > 0.0 && hi < 1e300) hi *= 4.0;
  }
  double z3 = bracket_root(r2, lo, hi);
  double z4 = zeta4_of(z3);
  double g = (1.0 + z3) / p.psi_p;
  double z1 = (k1 - p.psi_D * k2 * z4 / nu2 - p.psi_D * k3 * z4 * g / nu2) / (p.psi_n * k1 * k1);
  double z2 = (p.psi_p - k1 * p.psi_n * z1 - k2 * k4 * p.psi_D * z4) / (k3 * p.psi_n);
  return {Eigen::Vector4d(z1, z2, z3, z4), 1.0 + a2 * mu2 * z1 + p.v2 * z2 - chi};
}

Eigen::Vector4d reduced_solve(const ModelPoint& p, double q, double z) {
  auto phi = [&](double chi) { return reduce_at(chi, p, q, z).phi; };
  double lo = 1.0, hi = 2.0;
  double mu2 = p.mu1 * p.mu1;
  double chi_min = q < 0.0 ? 0.5 * std::max(1e-300, mu2 / -q) : 1e-12;
  if (phi(lo) < 0.0) {
    hi = lo;
    while (phi(lo) < 0.0 && lo > chi_min) lo *= 0.5;
  } else {
    while (phi(hi) > 0.0 && hi < 1e300) hi *= 4.0;
  }
  double chi = bracket_root(phi, lo, hi);
  return reduce_at(chi, p, q, z).v;
}

}  // namespace

void refresh(ModelPoint& p) {
  if (!(p.t > 0.0)) throw std::invalid_argument("t must be positive");
  if (!(p.lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
  if (!(p.psi_D > 0.0 && p.psi_n > 0.0 && p.psi_p > 0.0)) throw std::invalid_argument("ratios must be positive");
  p.a = std::exp(-p.t);
  p.h = -std::expm1(-2.0 * p.t);
  p.mu1 = p.rho.mu1();
  p.nu1 = p.sigma.mu1();
  p.c_a2 = p.rho.c_gamma(p.a * p.a);
  p.s2 = 1.0 - p.c_a2 - p.h * p.mu1 * p.mu1;
  p.v2 = p.c_a2 - p.a * p.a * p.mu1 * p.mu1;
}

ModelPoint make_point(double t, double lambda, double psi_D, double psi_n, double psi_p,
                      const ActivationProfile& rho, const ActivationProfile& sigma) {
  ModelPoint p;
  p.t = t;
  p.lambda = lambda;
  p.psi_D = psi_D;
  p.psi_n = psi_n;
  p.psi_p = psi_p;
  p.rho = rho;
  p.sigma = sigma;
  refresh(p);
  return p;
}

KappaSet kappas(const Zetas& zt, const ModelPoint& p, double q, double z) {
  KappaSet k;
  double mu2 = p.mu1 * p.mu1, nu2 = p.nu1 * p.nu1, a2 = p.a * p.a;
  k.chi = 1.0 + a2 * mu2 * zt.zeta1 + p.v2 * zt.zeta2;
  if (std::abs(k.chi) < 1e-14) throw PoleError("chi vanishes");
  k.kappa1 = a2 * (mu2 / k.chi + q);
  if (std::abs(k.kappa1) < 1e-300) throw PoleError("kappa1 vanishes");
  k.kappa2 = p.h * (mu2 + q);
  k.kappa3 = p.s2 - z + p.v2 / k.chi;
  k.kappa4 = 1.0 / (k.kappa1 * nu2);
  k.kappa5 = (k.kappa1 * (1.0 - nu2) + k.kappa2 + k.kappa3 * (1.0 + zt.zeta3) / p.psi_p) / (k.kappa1 * nu2);
  return k;
}

Eigen::Vector4d residuals(const Zetas& zt, const ModelPoint& p, double q, double z) {
  if (std::abs(1.0 + zt.zeta4) < 1e-14) throw PoleError("1 + zeta4 vanishes");
  KappaSet k = kappas(zt, p, q, z);
  double nu2 = p.nu1 * p.nu1;
  double g = (1.0 + zt.zeta3) / p.psi_p;
  Eigen::Vector4d r;
  r[0] = p.psi_n * k.kappa1 * k.kappa1 * zt.zeta1 + p.psi_D * k.kappa2 * zt.zeta4 / nu2 +
         p.psi_D * k.kappa3 * zt.zeta4 * g / nu2 - k.kappa1;
  r[1] = g - k.kappa3 * g * g * p.psi_D * zt.zeta4 * k.kappa4 - zt.zeta3;
  r[2] = k.kappa1 * p.psi_n * zt.zeta1 + k.kappa2 * k.kappa4 * p.psi_D * zt.zeta4 + k.kappa3 * p.psi_n * zt.zeta2 -
         p.psi_p;
  r[3] = p.psi_D * zt.zeta4 / (1.0 + zt.zeta4) + p.psi_D * zt.zeta4 * k.kappa5 - 1.0;
  return r;
}

Zetas solve_zetas(const ModelPoint& p, double q, double z, const SolveOptions& opt) {
  if (std::abs(p.mu1) < 1e-12) throw DegenerateActivation("rho has mu1 = 0: kappa4 undefined");
  if (std::abs(p.nu1) < 1e-12) throw DegenerateActivation("sigma has nu1 = 0: kappa4 undefined");
  if (!(z < 0.0)) throw std::invalid_argument("spectral argument z must be negative");
  if (p.mu1 * p.mu1 + q <= 0.0) throw std::invalid_argument("q out of range");

  const Eigen::Vector4d start(p.psi_p / p.psi_n, p.psi_p / p.psi_n, 1.0, 1.0 / p.psi_D);
  Eigen::Vector4d init = opt.init ? *opt.init : start;
  if (!physical(init, p, q, z)) init = start;

  double r = std::numeric_limits<double>::infinity();
  Eigen::Vector4d v = init;
  int iters = 0;
  const int budget = std::min(opt.max_iterations, 1000);
  double omega0 = 0.5;
  for (int restart = 0; restart < 3 && !(r < 1e-10); ++restart, omega0 *= 0.25) {
    v = init;
    r = safe_norm(v, p, q, z);
    double omega = omega0;
    bool violated = false;
    for (int k = 0; k < budget && r > 1e-4; ++k) {
      ++iters;
      Eigen::Vector4d g = fixed_point_map(v, p, q, z);
      Eigen::Vector4d c = v + omega * (g - v);
      if (!physical(c, p, q, z)) {
        // branch violation: shrink, then give up on this damping level
        if ((omega *= 0.5) < 1e-8) {
          violated = true;
          break;
        }
        continue;
      }
      double rc = safe_norm(c, p, q, z);
      if (rc <= r || omega < 1e-6) {
        v = c;
        r = rc;
        omega = std::min(omega0, omega * 1.5);
      } else {
        omega *= 0.5;
      }
    }
    if (violated || r > 1e-4) continue;
    v = newton(v, r, p, q, z, opt.max_newton, opt.tol);
  }
  if (!(r < 1e-10)) {
    // fall back to the chi reduction, then polish
    try {
      Eigen::Vector4d w = reduced_solve(p, q, z);
      double rw = safe_norm(w, p, q, z);
      if (physical(w, p, q, z)) {
        w = newton(w, rw, p, q, z, opt.max_newton, opt.tol);
        if (rw < r) {
          v = w;
          r = rw;
        }
      }
    } catch (const std::exception&) {
    }
  }
  if (!(r < 1e-10) || !physical(v, p, q, z)) {
    std::ostringstream os;
    os << "self-consistent solver did not converge (residual " << r << ", q=" << q << ", z=" << z << ")";
    throw SolverFailure(os.str(), r);
  }
  Zetas out = Zetas::from(v);
  out.chi = kappas(out, p, q, z).chi;
  out.residual_norm = r;
  out.iterations = iters;
  return out;
}

double k_value(const ModelPoint& p, double q, double z) {
  Zetas zt = solve_zetas(p, q, z);
  KappaSet k = kappas(zt, p, q, z);
  return k.kappa4 * p.psi_D * zt.zeta4;
}

KDerivatives k_derivatives(const ModelPoint& p) {
  const double z0 = -p.lambda;
  Zetas base = solve_zetas(p, 0.0, z0);
  SolveOptions warm;
  warm.init = base.vec();
  KDerivatives out;
  out.residual = base.residual_norm;
  auto K = [&](double q, double z) {
    Zetas zt = solve_zetas(p, q, z, warm);
    out.residual = std::max(out.residual, zt.residual_norm);
    return kappas(zt, p, q, z).kappa4 * p.psi_D * zt.zeta4;
  };
  out.K = kappas(base, p, 0.0, z0).kappa4 * p.psi_D * base.zeta4;

  // q-step relative to mu1^2/chi so that kappa1 stays positive at q = -delta
  double delta = 1e-5 * std::min(1.0, p.mu1 * p.mu1 / base.chi);
  double last_q = 0, last_z = 0, last_rel = 0;
  for (int attempt = 0; attempt < 4; ++attempt, delta /= 10.0) {
    double dz = std::min(delta * std::max(1.0, p.lambda), 0.25 * p.lambda);
    auto dq_at = [&](double d) { return (K(d, z0) - K(-d, z0)) / (2.0 * d); };
    auto dz_at = [&](double d) { return (K(0.0, z0 + d) - K(0.0, z0 - d)) / (2.0 * d); };
    double q1 = dq_at(delta), q2 = dq_at(delta / 2);
    double w1 = dz_at(dz), w2 = dz_at(dz / 2);
    // disagreement below the rounding floor of the difference quotient counts as agreement
    double fq = 1e-10 * std::abs(out.K) / delta, fz = 1e-10 * std::abs(out.K) / dz;
    double rel = std::max(std::abs(q1 - q2) / std::max(std::abs(q2), fq),
                          std::abs(w1 - w2) / std::max(std::abs(w2), fz));
    last_q = q2;
    last_z = w2;
    last_rel = rel;
    if (rel <= 1e-4) {
      out.dKdq = (4.0 * q2 - q1) / 3.0;
      out.dKdz = (4.0 * w2 - w1) / 3.0;
      out.delta = delta;
      out.rel_halving = rel;
      return out;
    }
  }
  std::ostringstream os;
  os << "unstable K derivatives: dK/dq ~ " << last_q << ", dK/dz ~ " << last_z << " (halving disagreement "
     << last_rel << ")";
  throw SolverFailure(os.str(), last_rel);
}

}  // namespace dsmrf
