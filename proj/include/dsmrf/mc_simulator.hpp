#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dsmrf/gaussian_moments.hpp"

namespace dsmrf {

struct MemoryBudgetExceeded : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FactorizationFailure : std::runtime_error {
  FactorizationFailure(const std::string& what, double min_eig) : std::runtime_error(what), min_eigenvalue(min_eig) {}
  double min_eigenvalue;
};

struct SimConfig {
  int d = 1000, D = 500, n = 10000, p = 2000;
  double t = 0.1;
  double lambda = 1e-4;
  // z-draws per datum for the E_z averages in U, V; 0 = exact E_z (Mehler expansion)
  int n_z = 0;
  int mehler_order = 3;
  int n_test = 4096;
  int n_mc_score = 4096;
  uint64_t seed = 1;
  double mem_budget_gib = 8.0;
};

void validate(const SimConfig& c);
// peak bytes of one simulate_seed call with p features
double estimated_bytes(const SimConfig& c, int p);
void check_memory(const SimConfig& c, int p);

struct ManifoldData {
  Eigen::MatrixXd M;   // d x D
  Eigen::MatrixXd Xi;  // D x n
  Eigen::MatrixXd X;   // d x n
  Eigen::MatrixXd W;   // p x d, row-major stream indexing so leading rows nest in p
};
ManifoldData generate(const SimConfig& c, const ActivationProfile& sigma);
// x = sigma(M xi / sqrt D) columnwise
Eigen::MatrixXd manifold_points(const Eigen::MatrixXd& M, const Eigen::MatrixXd& Xi, const ActivationProfile& sigma);

struct FeatureMoments {
  Eigen::MatrixXd U;  // p x p
  Eigen::MatrixXd V;  // p x d
};
FeatureMoments feature_moments(const Eigen::MatrixXd& W, const Eigen::MatrixXd& X, double t, const ActivationProfile& rho,
                               int n_z, uint64_t seed, int mehler_order = 3);

// A_hat (d x p) with A_hat/sqrt(p) = -(1/sqrt h) V^T (U + lambda I)^{-1}
Eigen::MatrixXd fit(const Eigen::MatrixXd& U, const Eigen::MatrixXd& V, double lambda, double h);

struct Estimate {
  double mean = 0, se = 0;
};
Estimate mean_se(const Eigen::Ref<const Eigen::VectorXd>& samples);

struct ErrorEstimates {
  Estimate test, train;
};
// test on n_test fresh pairs, train on the data with max(1, n_z) fresh z per datum
ErrorEstimates empirical_errors(const Eigen::MatrixXd& A_hat, const Eigen::MatrixXd& W, const Eigen::MatrixXd& M,
                                const Eigen::MatrixXd& X, const SimConfig& c, const ActivationProfile& rho,
                                const ActivationProfile& sigma);

// grad log P_t for linear sigma: -(a^2 M M^T/D + h I)^{-1} x
class ExactScoreLinear {
 public:
  ExactScoreLinear(const Eigen::MatrixXd& M, double t, const ActivationProfile& sigma);
  Eigen::MatrixXd operator()(const Eigen::MatrixXd& x) const;

 private:
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

Estimate empirical_score_error(const Eigen::MatrixXd& A_hat, const Eigen::MatrixXd& W, const Eigen::MatrixXd& M,
                               const SimConfig& c, const ActivationProfile& rho, const ActivationProfile& sigma);
// (1/d) E ||sqrt h s*(x_t) + z||^2 by Monte Carlo, linear sigma
Estimate empirical_exact_test_error(const Eigen::MatrixXd& M, const SimConfig& c, const ActivationProfile& sigma);

// softmax-weighted -(x_t - a x_i)/h over the training set
Eigen::VectorXd empirical_optimal_score(const Eigen::Ref<const Eigen::VectorXd>& x_t, const Eigen::MatrixXd& X, double t);

// one seed, nested feature counts p_list (ascending, p_list.back() features generated)
struct SimPoint {
  int p = 0;
  Estimate test, train;
  std::optional<Estimate> score, star;
};
struct SeedRun {
  uint64_t seed = 0;
  std::vector<SimPoint> points;
  double wall_seconds = 0;
};
SeedRun simulate_seed(const SimConfig& c, const std::vector<int>& p_list, const ActivationProfile& rho,
                      const ActivationProfile& sigma, bool with_score);

struct SimResult {
  SimConfig config;
  std::vector<int> p_list;
  std::vector<SeedRun> runs;
  // across seeds, per p: mean and standard error of the seed means
  std::vector<Estimate> test, train;
  std::vector<std::optional<Estimate>> score, star;
  double wall_seconds = 0;
};
SimResult aggregate(const SimConfig& c, const std::vector<int>& p_list, std::vector<SeedRun> runs);

struct GapResult {
  double gap = 0, se = 0;
  double non_gaussian = 0, gaussian = 0;
  bool inconclusive = false;
};
// |E f(phi_1) f(phi_2) - E f(phi'_1) f(phi'_2)| for one draw of (w_1, w_2, M), n_mc samples per side
GapResult gaussian_equivalence_gap(const ActivationProfile& f, int d, int D, const ActivationProfile& sigma, long n_mc,
                                   uint64_t seed);
// same draw, both sides in closed form; f and sigma must be polynomials of degree <= 2
GapResult gaussian_equivalence_gap_exact(const ActivationProfile& f, int d, int D, const ActivationProfile& sigma,
                                         uint64_t seed);

}  // namespace dsmrf
