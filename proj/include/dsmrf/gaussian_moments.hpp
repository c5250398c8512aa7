#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dsmrf {

struct DegenerateActivation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// probabilists' Gauss-Hermite rule, weights normalized to sum 1
struct GaussHermite {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};
const GaussHermite& gauss_hermite(int n);

// E f(g), g ~ N(0,1)
template <typename F>
double gauss_expect(F&& f, int n = 200) {
  const auto& gh = gauss_hermite(n);
  double s = 0.0;
  for (Eigen::Index i = 0; i < gh.nodes.size(); ++i) s += gh.weights[i] * f(gh.nodes[i]);
  return s;
}

enum class ActivationKind { identity, relu, tanh, hermite_mixture, tabulated };

// standardized nonlinearity (mean zero, unit variance under N(0,1))
class ActivationProfile {
 public:
  static ActivationProfile identity();
  static ActivationProfile relu();
  static ActivationProfile tanh();
  // coefficients c_k of He_k/sqrt(k!), k = 1, 2, ...
  static ActivationProfile hermite_mixture(std::vector<double> coeffs);
  // piecewise linear on grid (must cover [-8, 8])
  static ActivationProfile tabulated(std::vector<double> grid, std::vector<double> values);
  // general raw function, standardized by quadrature
  static ActivationProfile standardize(std::function<double(double)> raw, std::string name = "custom");
  // "relu" | "tanh" | "identity" | "hermite:[c1,c2,...]"
  static ActivationProfile parse(std::string_view spec);

  ActivationKind kind() const { return kind_; }
  const std::string& name() const { return name_; }
  double shift() const { return shift_; }
  double scale() const { return scale_; }
  double mu1() const { return mu1_; }
  bool is_linear() const { return linear_; }

  double raw(double x) const;
  double operator()(double x) const { return (raw(x) - shift_) / scale_; }
  template <typename Derived>
  Eigen::ArrayXXd apply(const Eigen::ArrayBase<Derived>& x) const {
    return x.unaryExpr([this](double v) { return (*this)(v); });
  }

  // alpha_k = E[f He_k], k = 0..K
  Eigen::VectorXd hermite(int K = 16) const;
  // 1 - sum_{k<=K} alpha_k^2/k!
  double tail_mass(int K = 16) const;
  // E[f(u) f(v)], corr(u, v) = gamma
  double c_gamma(double gamma) const;

  // A_k = E_u[f(m + s u) He_k(u)], k = 0..K, and E_u[f(m + s u)^2]
  void smoothed(double m, double s, int K, double* A, double* second) const;

 private:
  ActivationKind kind_ = ActivationKind::identity;
  std::string name_;
  double shift_ = 0.0, scale_ = 1.0, mu1_ = 1.0;
  bool linear_ = true;
  std::vector<double> coeffs_;        // hermite mixture
  std::vector<double> grid_, vals_;   // tabulated
  std::function<double(double)> fn_;  // custom
  Eigen::VectorXd beta_;              // normalized coefficients E[f He_k]/sqrt(k!), long series

  void finish();
};

Eigen::VectorXd hermite_coeffs(const ActivationProfile& p, int K);
double c_gamma(const ActivationProfile& p, double gamma);
// direct bivariate quadrature of E[f(u)f(v)], n x n tensor grid
double c_gamma_bivariate(const ActivationProfile& p, double gamma, int n = 100);

// He_0..He_K at x
void hermite_values(double x, int K, double* out);

}  // namespace dsmrf
