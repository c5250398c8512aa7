#include "dsmrf/glm_free_energy.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/tools/minima.hpp>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace dsmrf {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

// sum p log p dy over a uniform y grid, columns of P are densities
double entropy_column(const Eigen::Ref<const Eigen::VectorXd>& p, double dy, double* mass) {
  double s = 0.0, m = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    double v = p[k];
    m += v;
    if (v > 0.0) s += v * std::log(v);
  }
  *mass = m * dy;
  return s * dy;
}

double max_slope(const ActivationProfile& sigma, double lo, double hi) {
  if (sigma.kind() == ActivationKind::identity) return 1.0;
  const double step = 0.005;
  double best = 0.0, prev = sigma(lo);
  for (double u = lo + step; u <= hi + step; u += step) {
    double cur = sigma(u);
    best = std::max(best, std::abs(cur - prev) / step);
    prev = cur;
  }
  return std::max(best, 1e-3);
}

void fail_mass(double mass, double V, double ylo, double yhi) {
  std::ostringstream os;
  os << "inner quadrature lost mass (" << mass << ") at v=" << V << ", y0 in [" << ylo << ", " << yhi << "]";
  throw QuadratureFailure(os.str());
}

}  // namespace

double phi_r(double r) {
  if (r < 0.0) throw std::invalid_argument("phi_r: r must be nonnegative");
  return 0.5 * r - 0.5 * std::log1p(r);
}

double phi_r_integral(double r) {
  // E_{X0,Z0} log int Dw exp(r w X0 + sqrt(r) w Z0 - r w^2/2); inner integral by
  // Gauss-Hermite centred at the Laplace point of the integrand
  if (r < 0.0) throw std::invalid_argument("phi_r: r must be nonnegative");
  const auto& outer = gauss_hermite(80);
  const auto& inner = gauss_hermite(40);
  const double sr = std::sqrt(r), width = 1.0 / std::sqrt(1.0 + r);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < outer.nodes.size(); ++i) {
    for (Eigen::Index j = 0; j < outer.nodes.size(); ++j) {
      double b = r * outer.nodes[i] + sr * outer.nodes[j];
      double w0 = b / (1.0 + r);
      // log of exponent at w0 + width*u, minus the standard normal density that Dw already provides
      double peak = b * w0 - 0.5 * (1.0 + r) * w0 * w0;
      double s = 0.0;
      for (Eigen::Index k = 0; k < inner.nodes.size(); ++k) {
        double w = w0 + width * inner.nodes[k];
        double ex = b * w - 0.5 * (1.0 + r) * w * w - peak + 0.5 * inner.nodes[k] * inner.nodes[k];
        s += inner.weights[k] * std::exp(ex);
      }
      acc += outer.weights[i] * outer.weights[j] * (peak + std::log(width * s));
    }
  }
  return acc;
}

double psi_q_linear(double q, double a, double h) {
  double v = h + a * a * (1.0 - q);
  return -0.5 * (kLog2Pi + std::log(v)) - 0.5;
}

double psi_q_ah(double q, double a, double h, const ActivationProfile& sigma) {
  if (q < 0.0 || q > 1.0) throw std::invalid_argument("psi_q: q outside [0, 1]");
  if (!(h > 0.0)) throw std::invalid_argument("psi_q: h must be positive");
  const auto& gv = gauss_hermite(80);
  std::vector<double> Vs, Ws;
  for (Eigen::Index i = 0; i < gv.nodes.size(); ++i)
    if (gv.weights[i] > 1e-15) {
      Vs.push_back(gv.nodes[i]);
      Ws.push_back(gv.weights[i]);
    }
  const double sq = std::sqrt(q), beta = std::sqrt(1.0 - q), sh = std::sqrt(h);
  const double vmax = std::abs(Vs.front());
  const double U = sq * vmax + 10.0 * beta;
  const double L = std::abs(a) * max_slope(sigma, -U, U);
  const double norm = 1.0 / std::sqrt(2.0 * std::numbers::pi * h);
  const double dy = sh / 2.5;

  double psi = 0.0;
  if (beta * L > sh) {
    // shared u grid for every V node
    const double du = std::min(beta, sh / L) / 2.5;
    const int nu = int(std::ceil(2.0 * U / du)) + 1;
    Eigen::VectorXd u = Eigen::VectorXd::LinSpaced(nu, -U, U);
    const double du_eff = nu > 1 ? u[1] - u[0] : 1.0;
    Eigen::VectorXd g(nu);
    for (int j = 0; j < nu; ++j) g[j] = a * sigma(u[j]);
    const double ylo = g.minCoeff() - 10.0 * sh, yhi = g.maxCoeff() + 10.0 * sh;
    const int ny = int(std::ceil((yhi - ylo) / dy)) + 1;
    const double dy_eff = (yhi - ylo) / (ny - 1);
    if (double(ny) * nu > 4e8) throw QuadratureFailure("psi_q grid too large for this (q, t)");
    Eigen::MatrixXd G(ny, nu);
    for (int j = 0; j < nu; ++j)
      for (int k = 0; k < ny; ++k) {
        double e = ylo + k * dy_eff - g[j];
        G(k, j) = norm * std::exp(-0.5 * e * e / h);
      }
    const int nv = int(Vs.size());
    Eigen::MatrixXd Om = Eigen::MatrixXd::Zero(nu, nv);
    for (int i = 0; i < nv; ++i) {
      double c0 = sq * Vs[i];
      for (int j = 0; j < nu; ++j) {
        double w = (u[j] - c0) / beta;
        if (std::abs(w) <= 12.0) Om(j, i) = du_eff * std::exp(-0.5 * w * w) / (std::sqrt(2.0 * std::numbers::pi) * beta);
      }
    }
    Eigen::MatrixXd P = G * Om;
    for (int i = 0; i < nv; ++i) {
      double mass;
      double e = entropy_column(P.col(i), dy_eff, &mass);
      if (std::abs(mass - 1.0) > 1e-6) fail_mass(mass, Vs[i], ylo, yhi);
      psi += Ws[i] * e;
    }
    return psi;
  }

  // signal nearly resolved: local w grid per V node
  const double dw = std::min(1.0, beta * L > 0.0 ? sh / (beta * L) : 1.0) / 2.5;
  const int nw = int(std::ceil(20.0 / dw)) + 1;
  Eigen::VectorXd w = Eigen::VectorXd::LinSpaced(nw, -10.0, 10.0);
  const double dw_eff = w[1] - w[0];
  Eigen::VectorXd om(nw);
  for (int j = 0; j < nw; ++j) om[j] = dw_eff * std::exp(-0.5 * w[j] * w[j]) / std::sqrt(2.0 * std::numbers::pi);
  Eigen::VectorXd g(nw), p;
  for (size_t i = 0; i < Vs.size(); ++i) {
    double c0 = sq * Vs[i];
    for (int j = 0; j < nw; ++j) g[j] = a * sigma(c0 + beta * w[j]);
    const double ylo = g.minCoeff() - 10.0 * sh, yhi = g.maxCoeff() + 10.0 * sh;
    const int ny = int(std::ceil((yhi - ylo) / dy)) + 1;
    const double dy_eff = (yhi - ylo) / (ny - 1);
    p.setZero(ny);
    for (int k = 0; k < ny; ++k) {
      double y = ylo + k * dy_eff, s = 0.0;
      for (int j = 0; j < nw; ++j) {
        double e = y - g[j];
        s += om[j] * std::exp(-0.5 * e * e / h);
      }
      p[k] = norm * s;
    }
    double mass;
    double e = entropy_column(p, dy_eff, &mass);
    if (std::abs(mass - 1.0) > 1e-6) fail_mass(mass, Vs[i], ylo, yhi);
    psi += Ws[i] * e;
  }
  return psi;
}

double psi_q(double q, double t, const ActivationProfile& sigma) {
  if (!(t > 0.0)) throw std::invalid_argument("psi_q: t must be positive");
  return psi_q_ah(q, std::exp(-t), -std::expm1(-2.0 * t), sigma);
}

namespace {

struct EtaSchedule {
  double a, h;
};
EtaSchedule schedule(double eta) { return {eta / std::sqrt(1.0 + eta * eta), 1.0 / (1.0 + eta * eta)}; }

// F as a function of s = log(q/(1-q)); s = -inf means q = 0
double profile_logit(double s, double eta, double psi_D, const ActivationProfile& sigma) {
  auto [a, h] = schedule(eta);
  double q, log1mq;
  if (s == -std::numeric_limits<double>::infinity()) {
    q = 0.0;
    log1mq = 0.0;
  } else {
    q = 1.0 / (1.0 + std::exp(-s));
    log1mq = -std::log1p(std::exp(s));
    if (s > 30) log1mq = -s - std::log1p(std::exp(-s));
  }
  return 0.5 * q + 0.5 * log1mq + psi_q_ah(std::min(q, 1.0), a, h, sigma) / psi_D;
}

double refine(double lo, double hi, double eta, double psi_D, const ActivationProfile& sigma, double* fbest) {
  auto neg = [&](double s) { return -profile_logit(s, eta, psi_D, sigma); };
  boost::uintmax_t it = 200;
  auto r = boost::math::tools::brent_find_minima(neg, lo, hi, 40, it);
  *fbest = -r.second;
  return r.first;
}

}  // namespace

double f_rs_profile(double q, double eta, double psi_D, const ActivationProfile& sigma) {
  if (q <= 0.0) return profile_logit(-std::numeric_limits<double>::infinity(), eta, psi_D, sigma);
  if (q >= 1.0) return -std::numeric_limits<double>::infinity();
  return profile_logit(std::log(q) - std::log1p(-q), eta, psi_D, sigma);
}

double f_rs(double q, double r, double eta, double psi_D, const ActivationProfile& sigma) {
  auto [a, h] = schedule(eta);
  return phi_r(r) + psi_q_ah(q, a, h, sigma) / psi_D - 0.5 * r * q;
}

SaddlePoint saddle_eta(double eta, double psi_D, const ActivationProfile& sigma, const double* hint) {
  if (!(psi_D > 0.0)) throw std::invalid_argument("saddle: psi_D must be positive");
  SaddlePoint sp;
  sp.eta = eta;
  const double smin = -20.0, smax = 20.0;
  double s_best, f_best;
  if (hint) {
    s_best = refine(*hint - 0.5, *hint + 0.5, eta, psi_D, sigma, &f_best);
    if (std::abs(s_best - *hint) > 0.45) hint = nullptr;  // drifted to the bracket edge: rescan
  }
  if (!hint) {
    const int n = 64;
    std::vector<double> s(n), f(n);
    for (int i = 0; i < n; ++i) {
      s[i] = smin + (smax - smin) * i / (n - 1);
      f[i] = profile_logit(s[i], eta, psi_D, sigma);
    }
    f_best = -std::numeric_limits<double>::infinity();
    s_best = smin;
    for (int i = 0; i < n; ++i) {
      bool left = i == 0 || f[i] >= f[i - 1];
      bool right = i == n - 1 || f[i] >= f[i + 1];
      if (!(left && right)) continue;
      double fl;
      double sl = (i == 0 || i == n - 1) ? s[i] : refine(s[i - 1], s[i + 1], eta, psi_D, sigma, &fl);
      if (i == 0 || i == n - 1) fl = f[i];
      sp.local_maxima.push_back(1.0 / (1.0 + std::exp(-sl)));
      if (fl > f_best) {
        f_best = fl;
        s_best = sl;
      }
    }
  }
  double f0 = profile_logit(-std::numeric_limits<double>::infinity(), eta, psi_D, sigma);
  if (f0 >= f_best) {
    sp.q_star = 0.0;
    sp.r_star = 0.0;
    sp.f_star = f0;
    sp.boundary = true;
    sp.logit = smin;
    return sp;
  }
  sp.logit = s_best;
  sp.q_star = 1.0 / (1.0 + std::exp(-s_best));
  sp.r_star = std::exp(s_best);
  sp.f_star = f_best;
  sp.boundary = s_best >= smax - 1e-9;
  return sp;
}

SaddlePoint saddle(double t, double psi_D, const ActivationProfile& sigma) {
  if (!(t > 0.0)) throw std::invalid_argument("saddle: t must be positive");
  return saddle_eta(eta_of_t(t), psi_D, sigma);
}

MmseResult mmse_per_d(double t, double psi_D, const ActivationProfile& sigma) {
  if (!(t > 0.0)) throw std::invalid_argument("mmse: t must be positive");
  const double eta = eta_of_t(t);
  MmseResult out;
  out.sp = saddle_eta(eta, psi_D, sigma);
  const double hint = out.sp.logit;
  auto g = [&](double e) { return psi_D * saddle_eta(e, psi_D, sigma, &hint).f_star; };
  auto [a, h] = schedule(eta);

  // disagreements are judged in mmse units: g' enters scaled by sqrt(h)/a
  const double to_mmse = std::sqrt(h) / std::abs(a);
  double delta = 1e-4 * std::max(1.0, eta);
  double d1 = 0, d2 = 0, rel = 0;
  for (int attempt = 0; attempt < 3; ++attempt, delta /= 10.0) {
    d1 = (g(eta + delta) - g(eta - delta)) / (2.0 * delta);
    d2 = (g(eta + delta / 2) - g(eta - delta / 2)) / delta;
    double floor = std::max(1e-10 / delta, 1e-6 / to_mmse);
    rel = std::abs(d1 - d2) / std::max(std::abs(d2), floor);
    if (rel <= 1e-4) break;
  }
  out.g_prime = (4.0 * d2 - d1) / 3.0;
  out.rel_halving = rel;

  // envelope: partial derivative in eta at the frozen overlap
  auto psi_eta = [&](double e) {
    auto s = schedule(e);
    return psi_q_ah(out.sp.q_star, s.a, s.h, sigma);
  };
  double de = 1e-4 * std::max(1.0, eta);
  out.g_prime_envelope = (psi_eta(eta + de) - psi_eta(eta - de)) / (2.0 * de);

  double scale = std::max({std::abs(out.g_prime), std::abs(out.g_prime_envelope), 1e-3 / to_mmse});
  if (rel > 1e-4 || std::abs(out.g_prime - out.g_prime_envelope) > 1e-3 * scale) {
    std::ostringstream os;
    os << "mmse derivative check failed: fd " << out.g_prime << ", envelope " << out.g_prime_envelope
       << ", halving " << rel;
    throw SaddleFailure(os.str(), out.g_prime, out.g_prime_envelope);
  }
  out.value = h - (std::sqrt(h) / a) * out.g_prime;
  return out;
}

}  // namespace dsmrf
