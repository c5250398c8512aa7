#include "dsmrf/gaussian_moments.hpp"

#include <algorithm>
#include <boost/math/quadrature/gauss.hpp>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>

namespace dsmrf {

namespace {

constexpr int kSeriesOrder = 120;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

// Gaussian-weighted rule from 10-point Gauss-Legendre panels between breakpoints;
// kinks of piecewise functions sit on panel edges
GaussHermite panel_rule(const std::vector<double>& breaks) {
  using GL = boost::math::quadrature::gauss<double, 10>;
  const auto& xs = GL::abscissa();
  const auto& ws = GL::weights();
  std::vector<double> nodes, weights;
  for (size_t j = 1; j < breaks.size(); ++j) {
    const double c = 0.5 * (breaks[j] + breaks[j - 1]), r = 0.5 * (breaks[j] - breaks[j - 1]);
    for (size_t i = 0; i < xs.size(); ++i)
      for (double sgn : {-1.0, 1.0}) {
        if (xs[i] == 0.0 && sgn > 0) continue;
        const double x = c + sgn * r * xs[i];
        nodes.push_back(x);
        weights.push_back(r * ws[i] * kInvSqrt2Pi * std::exp(-0.5 * x * x));
      }
  }
  GaussHermite g;
  g.nodes = Eigen::Map<Eigen::VectorXd>(nodes.data(), Eigen::Index(nodes.size()));
  g.weights = Eigen::Map<Eigen::VectorXd>(weights.data(), Eigen::Index(weights.size()));
  return g;
}

double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }
double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

GaussHermite build_rule(int n) {
  // Golub-Welsch for the nodes, then Newton polish + Christoffel weights
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(double(k));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J, Eigen::EigenvaluesOnly);
  GaussHermite gh;
  gh.nodes = es.eigenvalues();
  gh.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    double x = gh.nodes[i];
    double sumsq = 0.0;
    for (int it = 0; it < 4; ++it) {
      // orthonormal recurrence p_k, derivative p_n' = sqrt(n) p_{n-1}
      double p0 = 1.0, p1 = x;
      sumsq = 1.0 + x * x;
      for (int k = 1; k < n; ++k) {
        double p2 = (x * p1 - std::sqrt(double(k)) * p0) / std::sqrt(double(k + 1));
        p0 = p1;
        p1 = p2;
        if (k + 1 < n) sumsq += p1 * p1;
      }
      double dp = std::sqrt(double(n)) * p0;
      double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16 * std::max(1.0, std::abs(x))) break;
    }
    double p0 = 1.0, p1 = x;
    sumsq = 1.0 + (n > 1 ? x * x : 0.0);
    for (int k = 1; k + 1 < n; ++k) {
      double p2 = (x * p1 - std::sqrt(double(k)) * p0) / std::sqrt(double(k + 1));
      p0 = p1;
      p1 = p2;
      sumsq += p1 * p1;
    }
    gh.nodes[i] = x;
    gh.weights[i] = 1.0 / sumsq;
  }
  gh.weights /= gh.weights.sum();
  return gh;
}

}  // namespace

const GaussHermite& gauss_hermite(int n) {
  static std::mutex mu;
  static std::map<int, std::unique_ptr<GaussHermite>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<GaussHermite>(build_rule(n));
  return *slot;
}

void hermite_values(double x, int K, double* out) {
  out[0] = 1.0;
  if (K >= 1) out[1] = x;
  for (int k = 1; k < K; ++k) out[k + 1] = x * out[k] - k * out[k - 1];
}

ActivationProfile ActivationProfile::identity() {
  ActivationProfile p;
  p.kind_ = ActivationKind::identity;
  p.name_ = "identity";
  p.finish();
  return p;
}

ActivationProfile ActivationProfile::relu() {
  ActivationProfile p;
  p.kind_ = ActivationKind::relu;
  p.name_ = "relu";
  p.finish();
  return p;
}

ActivationProfile ActivationProfile::tanh() {
  ActivationProfile p;
  p.kind_ = ActivationKind::tanh;
  p.name_ = "tanh";
  p.finish();
  return p;
}

ActivationProfile ActivationProfile::hermite_mixture(std::vector<double> coeffs) {
  if (coeffs.empty()) throw DegenerateActivation("hermite mixture needs at least one coefficient");
  ActivationProfile p;
  p.kind_ = ActivationKind::hermite_mixture;
  std::ostringstream os;
  os.precision(17);
  os << "hermite:[";
  for (size_t i = 0; i < coeffs.size(); ++i) os << (i ? "," : "") << coeffs[i];
  os << "]";
  p.name_ = os.str();
  p.coeffs_ = std::move(coeffs);
  p.finish();
  return p;
}

ActivationProfile ActivationProfile::tabulated(std::vector<double> grid, std::vector<double> values) {
  if (grid.size() != values.size() || grid.size() < 2)
    throw std::invalid_argument("tabulated activation: grid/value size mismatch");
  if (!std::is_sorted(grid.begin(), grid.end()) || grid.front() > -8.0 || grid.back() < 8.0)
    throw std::invalid_argument("tabulated activation: grid must be sorted and cover [-8, 8]");
  ActivationProfile p;
  p.kind_ = ActivationKind::tabulated;
  p.name_ = "tabulated";
  p.grid_ = std::move(grid);
  p.vals_ = std::move(values);
  p.finish();
  return p;
}

ActivationProfile ActivationProfile::standardize(std::function<double(double)> raw, std::string name) {
  ActivationProfile p;
  p.kind_ = ActivationKind::tabulated;  // generic quadrature path
  p.name_ = std::move(name);
  p.fn_ = std::move(raw);
  p.finish();
  return p;
}

ActivationProfile ActivationProfile::parse(std::string_view spec) {
  auto trim = [](std::string_view s) {
    while (!s.empty() && std::isspace((unsigned char)s.front())) s.remove_prefix(1);
    while (!s.empty() && std::isspace((unsigned char)s.back())) s.remove_suffix(1);
    return s;
  };
  spec = trim(spec);
  if (spec.size() >= 2 && spec.front() == '"' && spec.back() == '"') spec = trim(spec.substr(1, spec.size() - 2));
  if (spec == "relu") return relu();
  if (spec == "tanh") return tanh();
  if (spec == "identity" || spec == "linear") return identity();
  if (spec.rfind("hermite:", 0) == 0) {
    auto body = trim(spec.substr(8));
    if (body.size() < 2 || body.front() != '[' || body.back() != ']')
      throw std::invalid_argument("bad hermite mixture spec: " + std::string(spec));
    body = body.substr(1, body.size() - 2);
    std::vector<double> c;
    std::string item;
    std::istringstream is{std::string(body)};
    while (std::getline(is, item, ',')) {
      auto t = trim(item);
      if (t.empty()) continue;
      size_t used = 0;
      double v = std::stod(std::string(t), &used);
      if (used != t.size()) throw std::invalid_argument("bad hermite coefficient: " + std::string(t));
      c.push_back(v);
    }
    return hermite_mixture(std::move(c));
  }
  throw std::invalid_argument("unknown activation: " + std::string(spec));
}

double ActivationProfile::raw(double x) const {
  switch (kind_) {
    case ActivationKind::identity:
      return x;
    case ActivationKind::relu:
      return x > 0.0 ? x : 0.0;
    case ActivationKind::tanh:
      return std::tanh(x);
    case ActivationKind::hermite_mixture: {
      // normalized recurrence h_k = He_k/sqrt(k!)
      double h0 = 1.0, h1 = x, s = coeffs_[0] * x;
      for (size_t k = 1; k < coeffs_.size(); ++k) {
        double h2 = (x * h1 - std::sqrt(double(k)) * h0) / std::sqrt(double(k + 1));
        h0 = h1;
        h1 = h2;
        s += coeffs_[k] * h1;
      }
      return s;
    }
    case ActivationKind::tabulated: {
      if (fn_) return fn_(x);
      auto it = std::upper_bound(grid_.begin(), grid_.end(), x);
      size_t j = std::clamp<size_t>(size_t(it - grid_.begin()), 1, grid_.size() - 1);
      double w = (x - grid_[j - 1]) / (grid_[j] - grid_[j - 1]);
      return vals_[j - 1] + w * (vals_[j] - vals_[j - 1]);
    }
  }
  return 0.0;
}

void ActivationProfile::finish() {
  beta_ = Eigen::VectorXd::Zero(kSeriesOrder + 1);
  switch (kind_) {
    case ActivationKind::identity:
      shift_ = 0.0;
      scale_ = 1.0;
      beta_[1] = 1.0;
      break;
    case ActivationKind::relu: {
      shift_ = kInvSqrt2Pi;
      scale_ = std::sqrt(0.5 - 0.5 / std::numbers::pi);
      std::vector<double> he(kSeriesOrder + 1);
      hermite_values(0.0, kSeriesOrder, he.data());
      beta_[1] = 0.5 / scale_;
      for (int k = 2; k <= kSeriesOrder; ++k)
        beta_[k] = kInvSqrt2Pi * he[k - 2] * std::exp(-0.5 * std::lgamma(k + 1.0)) / scale_;
      break;
    }
    case ActivationKind::hermite_mixture: {
      double ss = 0.0;
      for (double c : coeffs_) ss += c * c;
      if (ss < 1e-12) throw DegenerateActivation("activation has Gaussian variance below 1e-12");
      shift_ = 0.0;
      scale_ = std::sqrt(ss);
      for (size_t k = 0; k < coeffs_.size() && k < size_t(kSeriesOrder); ++k) beta_[k + 1] = coeffs_[k] / scale_;
      break;
    }
    case ActivationKind::tanh:
    case ActivationKind::tabulated: {
      GaussHermite panels;
      if (kind_ == ActivationKind::tabulated) {
        std::vector<double> br{-12.0};
        if (fn_) {
          for (int i = -599; i < 600; ++i) br.push_back(i * 0.02);
        } else {
          for (double g : grid_)
            if (g > -12.0 && g < 12.0) br.push_back(g);
        }
        br.push_back(12.0);
        panels = panel_rule(br);
      }
      const auto& gh = kind_ == ActivationKind::tanh ? gauss_hermite(200) : panels;
      Eigen::VectorXd f(gh.nodes.size());
      for (Eigen::Index i = 0; i < f.size(); ++i) f[i] = raw(gh.nodes[i]);
      double m = gh.weights.dot(f);
      double var = gh.weights.dot((f.array() - m).square().matrix());
      if (!(var >= 1e-12)) throw DegenerateActivation("activation has Gaussian variance below 1e-12");
      shift_ = m;
      scale_ = std::sqrt(var);
      if (kind_ == ActivationKind::tanh) shift_ = 0.0;  // odd
      f = (f.array() - shift_) / scale_;
      for (Eigen::Index i = 0; i < f.size(); ++i) {
        double x = gh.nodes[i], h0 = 1.0, h1 = x;
        double wf = gh.weights[i] * f[i];
        beta_[0] += wf;
        beta_[1] += wf * x;
        for (int k = 1; k < kSeriesOrder; ++k) {
          double h2 = (x * h1 - std::sqrt(double(k)) * h0) / std::sqrt(double(k + 1));
          h0 = h1;
          h1 = h2;
          beta_[k + 1] += wf * h1;
        }
      }
      beta_[0] = 0.0;
      break;
    }
  }
  mu1_ = beta_[1];
  linear_ = (1.0 - mu1_ * mu1_) < 1e-14 && std::abs(mu1_) > 0.0;
  if (kind_ == ActivationKind::hermite_mixture)
    linear_ = std::all_of(coeffs_.begin() + 1, coeffs_.end(), [](double c) { return c == 0.0; });
}

Eigen::VectorXd ActivationProfile::hermite(int K) const {
  if (K < 0 || K > kSeriesOrder) throw std::invalid_argument("hermite order out of range");
  Eigen::VectorXd a(K + 1);
  for (int k = 0; k <= K; ++k) a[k] = beta_[k] * std::exp(0.5 * std::lgamma(k + 1.0));
  return a;
}

double ActivationProfile::tail_mass(int K) const {
  K = std::min(K, kSeriesOrder);
  if (kind_ == ActivationKind::identity) return 0.0;
  double s = beta_.head(K + 1).squaredNorm();
  return std::max(0.0, 1.0 - s);
}

double ActivationProfile::c_gamma(double g) const {
  g = std::clamp(g, -1.0, 1.0);
  switch (kind_) {
    case ActivationKind::identity:
      return g;
    case ActivationKind::relu: {
      double e = (std::sqrt(std::max(0.0, 1.0 - g * g)) + g * (std::numbers::pi - std::acos(g))) /
                 (2.0 * std::numbers::pi);
      return (e - shift_ * shift_) / (scale_ * scale_);
    }
    case ActivationKind::hermite_mixture: {
      double s = 0.0, gk = 1.0;
      for (size_t k = 0; k < coeffs_.size(); ++k) {
        gk *= g;
        s += beta_[k + 1] * beta_[k + 1] * gk;
      }
      return s;
    }
    default: {
      // long series, remaining mass assigned to the next power (exact at g = 0 and g = 1)
      double s = 0.0, gk = 1.0;
      for (int k = 1; k <= kSeriesOrder; ++k) {
        gk *= g;
        s += beta_[k] * beta_[k] * gk;
      }
      return s + tail_mass(kSeriesOrder) * gk * g;
    }
  }
}

void ActivationProfile::smoothed(double m, double s, int K, double* A, double* second) const {
  for (int k = 0; k <= K; ++k) A[k] = 0.0;
  if (kind_ == ActivationKind::identity) {
    A[0] = m;
    if (K >= 1) A[1] = s;
    *second = m * m + s * s;
    return;
  }
  if (kind_ == ActivationKind::relu) {
    if (s <= 0.0) {
      double r = (m > 0 ? m : 0.0) - shift_;
      A[0] = r / scale_;
      *second = r * r / (scale_ * scale_);
      return;
    }
    double c = m / s, Phi = norm_cdf(c), phi = norm_pdf(c);
    double er = m * Phi + s * phi;
    double er2 = (m * m + s * s) * Phi + m * s * phi;
    A[0] = (er - shift_) / scale_;
    if (K >= 1) A[1] = s * Phi / scale_;
    if (K >= 2) {
      double he[64];
      hermite_values(-c, K - 2, he);
      for (int k = 2; k <= K; ++k) A[k] = s * he[k - 2] * phi / scale_;
    }
    *second = (er2 - 2.0 * shift_ * er + shift_ * shift_) / (scale_ * scale_);
    return;
  }
  int n = 64;
  if (kind_ == ActivationKind::tanh) n = 48;
  if (kind_ == ActivationKind::tabulated) n = 200;
  const auto& gh = gauss_hermite(n);
  double he[128];
  double sec = 0.0;
  for (int i = 0; i < n; ++i) {
    double u = gh.nodes[i];
    double f = (*this)(m + s * u);
    double wf = gh.weights[i] * f;
    hermite_values(u, K, he);
    for (int k = 0; k <= K; ++k) A[k] += wf * he[k];
    sec += wf * f;
  }
  *second = sec;
}

Eigen::VectorXd hermite_coeffs(const ActivationProfile& p, int K) {
  if (K < 2) throw std::invalid_argument("hermite_coeffs: K must be >= 2");
  return p.hermite(K);
}

double c_gamma(const ActivationProfile& p, double gamma) { return p.c_gamma(gamma); }

double c_gamma_bivariate(const ActivationProfile& p, double gamma, int n) {
  const auto& gh = gauss_hermite(n);
  double r = std::sqrt(std::max(0.0, 1.0 - gamma * gamma));
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    double u = gh.nodes[i], fu = p(u), inner = 0.0;
    for (int j = 0; j < n; ++j) inner += gh.weights[j] * p(gamma * u + r * gh.nodes[j]);
    s += gh.weights[i] * fu * inner;
  }
  return s;
}

}  // namespace dsmrf
