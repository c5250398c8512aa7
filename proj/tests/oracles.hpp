// independent numerical references for the unit tests: plain composite
// Simpson on a truncated line, no Gauss-Hermite and no library code
#pragma once

#include <cmath>
#include <numbers>

namespace oracle {

inline double phi(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }
inline double Phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// integral of f over [lo, hi], n even
template <typename F>
double simpson(F&& f, double lo, double hi, int n = 4000) {
  const double dx = (hi - lo) / n;
  double s = f(lo) + f(hi);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(lo + i * dx);
  return s * dx / 3.0;
}

// E f(g), g ~ N(0,1); split at `kink` so piecewise-smooth integrands converge fast
template <typename F>
double gauss(F&& f, double kink = 0.0, double L = 12.0, int n = 4000) {
  auto w = [&](double x) { return f(x) * phi(x); };
  return simpson(w, -L, kink, n) + simpson(w, kink, L, n);
}

// E (m + s w)_+ for w ~ N(0,1)
inline double relu_mean(double m, double s) { return m * Phi(m / s) + s * phi(m / s); }

// raw ReLU standardization constants
inline const double relu_shift = 1.0 / std::sqrt(2.0 * std::numbers::pi);
inline const double relu_scale = std::sqrt(0.5 - 1.0 / (2.0 * std::numbers::pi));

// E[f(u) f(v)] for standardized ReLU, corr(u, v) = g: inner expectation in closed form, outer split at the kink
inline double relu_c(double g) {
  const double s = std::sqrt(std::max(0.0, 1.0 - g * g));
  auto f = [](double x) { return (std::max(x, 0.0) - relu_shift) / relu_scale; };
  auto inner = [&](double u) {
    double m = s > 0 ? relu_mean(g * u, s) : std::max(g * u, 0.0);
    return (m - relu_shift) / relu_scale;
  };
  return gauss([&](double u) { return f(u) * inner(u); });
}

}  // namespace oracle
