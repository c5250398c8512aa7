#include "dsmrf/learning_curves.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "dsmrf/glm_free_energy.hpp"

namespace dsmrf {

const char* to_string(BaselineMethod m) {
  return m == BaselineMethod::mp_closed_form ? "mp-closed-form" : "glm-replica";
}

double test_error(const ModelPoint& p, const KDerivatives& kd) {
  double mu2 = p.mu1 * p.mu1;
  return 1.0 - 2.0 * p.h * mu2 * kd.K - p.h * mu2 * mu2 * kd.dKdq + p.h * mu2 * (1.0 - mu2) * kd.dKdz;
}

double train_error(const ModelPoint& p, const KDerivatives& kd) {
  double mu2 = p.mu1 * p.mu1;
  return 1.0 - p.h * mu2 * kd.K - p.h * p.lambda * mu2 * kd.dKdz;
}

double test_error(const ModelPoint& p) { return test_error(p, k_derivatives(p)); }
double train_error(const ModelPoint& p) { return train_error(p, k_derivatives(p)); }

double mp_stieltjes(double z, double inv_psi_D) {
  if (!(z < 0.0)) throw std::invalid_argument("mp_stieltjes: z must be negative");
  if (!(inv_psi_D > 0.0)) throw std::invalid_argument("mp_stieltjes: ratio must be positive");
  // root of gamma z s^2 + (z + gamma - 1) s + 1 = 0 with s -> -1/z as z -> -inf
  double g = inv_psi_D;
  double b = 1.0 - z - g;
  return 2.0 / (b + std::sqrt(b * b - 4.0 * z * g));
}

double exact_test_error_linear(const ModelPoint& p) {
  if (!p.sigma.is_linear()) throw std::invalid_argument("exact_test_error_linear requires identity sigma");
  double e = p.h / (p.a * p.a);
  return 1.0 - e * mp_stieltjes(-e, 1.0 / p.psi_D);
}

double exact_test_error_glm(const ModelPoint& p) {
  MmseResult m = mmse_per_d(p.t, p.psi_D, p.sigma);
  return (p.a * p.a / p.h) * m.value;
}

double exact_test_error(const ModelPoint& p, BaselineMethod* used) {
  if (p.sigma.is_linear()) {
    if (used) *used = BaselineMethod::mp_closed_form;
    return exact_test_error_linear(p);
  }
  if (used) *used = BaselineMethod::glm_replica;
  return exact_test_error_glm(p);
}

ScoreError score_error_from(double e_test, double e_test_star, double h, BaselineMethod m) {
  ScoreError s;
  s.method = m;
  s.value = (e_test - e_test_star) / h;
  if (s.value < 0.0 && s.value >= -1e-6) {
    s.value = 0.0;
    s.clamped = true;
  }
  return s;
}

ScoreError score_error(const ModelPoint& p) {
  BaselineMethod m;
  double es = exact_test_error(p, &m);
  return score_error_from(test_error(p), es, p.h, m);
}

CurvePoint evaluate(const ModelPoint& p, std::optional<double> e_star) {
  CurvePoint c;
  c.point = p;
  KDerivatives kd = k_derivatives(p);
  c.K = kd.K;
  c.dKdq = kd.dKdq;
  c.dKdz = kd.dKdz;
  c.residual = kd.residual;
  c.e_test = test_error(p, kd);
  c.e_train = train_error(p, kd);
  c.baseline_method = p.sigma.is_linear() ? BaselineMethod::mp_closed_form : BaselineMethod::glm_replica;
  c.e_test_star = e_star ? *e_star : exact_test_error(p);
  ScoreError s = score_error_from(c.e_test, c.e_test_star, p.h, c.baseline_method);
  c.e_score = s.value;
  if (s.clamped) c.warnings.push_back("score error clamped from a small negative value");
  if (c.e_score < 0.0) c.warnings.push_back("negative score error");
  if (c.e_test < c.e_train - 1e-8) c.warnings.push_back("test error below train error");
  return c;
}

SampleComplexity sample_complexity(const ModelPoint& base, double epsilon, const std::vector<double>& t_grid,
                                   const std::vector<double>& psi_n_grid) {
  if (t_grid.empty() || psi_n_grid.empty()) throw std::invalid_argument("sample_complexity: empty grid");
  if (!(epsilon > 0.0)) throw std::invalid_argument("sample_complexity: epsilon must be positive");
  for (size_t i = 1; i < psi_n_grid.size(); ++i)
    if (!(psi_n_grid[i] > psi_n_grid[i - 1])) throw std::invalid_argument("sample_complexity: grid must ascend");

  // the baseline does not depend on psi_n
  std::vector<ModelPoint> pts;
  std::vector<double> star;
  for (double t : t_grid) {
    ModelPoint p = base;
    p.t = t;
    refresh(p);
    pts.push_back(p);
    star.push_back(exact_test_error(p));
  }
  SampleComplexity out;
  out.worst.resize(psi_n_grid.size());
  for (size_t i = 0; i < psi_n_grid.size(); ++i) {
    double worst = 0.0;
    for (size_t k = 0; k < pts.size(); ++k) {
      ModelPoint p = pts[k];
      p.psi_n = psi_n_grid[i];
      double et;
      try {
        et = test_error(p);
      } catch (const std::exception& e) {
        std::ostringstream os;
        os << "sample complexity: failure at t=" << p.t << ", psi_n=" << p.psi_n << ": " << e.what();
        throw std::runtime_error(os.str());
      }
      double s = score_error_from(et, star[k], p.h, BaselineMethod::mp_closed_form).value;
      worst = std::max(worst, p.h * p.h * s);
    }
    out.worst[i] = worst;
  }
  for (size_t i = 0; i < psi_n_grid.size(); ++i) {
    if (out.worst[i] < epsilon) {
      out.index = int(i);
      out.psi_n_star = psi_n_grid[i];
      out.stable = true;
      for (size_t j = i; j < psi_n_grid.size(); ++j)
        if (!(out.worst[j] < epsilon)) out.stable = false;
      break;
    }
  }
  return out;
}

}  // namespace dsmrf
