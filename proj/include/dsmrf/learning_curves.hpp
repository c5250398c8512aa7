#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dsmrf/self_consistent.hpp"

namespace dsmrf {

enum class BaselineMethod { mp_closed_form, glm_replica };
const char* to_string(BaselineMethod m);

struct CurvePoint {
  ModelPoint point;
  double e_test = 0, e_train = 0, e_test_star = 0, e_score = 0;
  BaselineMethod baseline_method = BaselineMethod::mp_closed_form;
  double K = 0, dKdq = 0, dKdz = 0;
  double residual = 0;
  std::vector<std::string> warnings;
};

// errors from precomputed K derivatives
double test_error(const ModelPoint& p, const KDerivatives& kd);
double train_error(const ModelPoint& p, const KDerivatives& kd);
double test_error(const ModelPoint& p);
double train_error(const ModelPoint& p);

// lim (1/d) tr (M M^T / D - z)^{-1}, D/d = 1/inv_psi_D
double mp_stieltjes(double z, double inv_psi_D);

double exact_test_error_linear(const ModelPoint& p);
double exact_test_error_glm(const ModelPoint& p);
// linear closed form when sigma is linear, replica route otherwise
double exact_test_error(const ModelPoint& p, BaselineMethod* used = nullptr);

struct ScoreError {
  double value = 0;
  bool clamped = false;
  BaselineMethod method = BaselineMethod::mp_closed_form;
};
ScoreError score_error(const ModelPoint& p);
ScoreError score_error_from(double e_test, double e_test_star, double h, BaselineMethod m);

// everything at one point; e_star may be supplied when already known for (t, psi_D, sigma)
CurvePoint evaluate(const ModelPoint& p, std::optional<double> e_star = std::nullopt);

struct SampleComplexity {
  std::optional<double> psi_n_star;  // empty: not achieved on the grid
  int index = -1;
  bool stable = false;  // criterion also holds at every larger grid value
  std::vector<double> worst;  // max_t h^2 e_score per grid value
};

SampleComplexity sample_complexity(const ModelPoint& base, double epsilon, const std::vector<double>& t_grid,
                                   const std::vector<double>& psi_n_grid);

}  // namespace dsmrf
