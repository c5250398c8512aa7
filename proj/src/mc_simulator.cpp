#include "dsmrf/mc_simulator.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "dsmrf/rng.hpp"

namespace dsmrf {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::MatrixXf;
using Eigen::VectorXd;

namespace {

constexpr Index kChunk = 512;

struct Schedule {
  double a, h;
};
Schedule schedule(double t) { return {std::exp(-t), -std::expm1(-2.0 * t)}; }

MatrixXd features(const MatrixXd& W, const MatrixXd& x, const ActivationProfile& rho) {
  MatrixXd g = W * x / std::sqrt(double(W.cols()));
  return rho.apply(g.array()).matrix();
}

MatrixXd normals(Index rows, Index cols, uint64_t seed, uint32_t stream, Index col0) {
  MatrixXd z(rows, cols);
  fill_normal(z, seed, stream, uint64_t(col0) * uint64_t(rows));
  return z;
}

void mirror_lower(MatrixXd& U) {
  for (Index j = 0; j < U.cols(); ++j)
    for (Index i = j + 1; i < U.rows(); ++i) U(j, i) = U(i, j);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

void validate(const SimConfig& c) {
  std::ostringstream os;
  if (c.d < 1 || c.D < 1 || c.n < 1 || c.p < 1) os << "d, D, n, p must be >= 1; ";
  if (!(c.t > 0.0)) os << "t must be positive; ";
  if (!(c.lambda > 0.0)) os << "lambda must be positive; ";
  if (c.n_z < 0) os << "n_z must be >= 0; ";
  if (c.mehler_order < 1 || c.mehler_order > 8) os << "mehler_order must be in [1, 8]; ";
  if (c.n_test < 2 || c.n_mc_score < 2) os << "n_test and n_mc_score must be >= 2; ";
  if (!(c.mem_budget_gib > 0.0)) os << "mem_budget_gib must be positive; ";
  if (!os.str().empty()) throw std::invalid_argument("SimConfig: " + os.str());
}

double estimated_bytes(const SimConfig& c, int p) {
  double P = p, d = c.d;
  // U (double) + Mehler kernel and accumulator (float) + V, W, Y's + data + chunk buffers
  double b = 8.0 * P * P + 8.0 * P * d * 3.0 + 8.0 * (2.0 * d + c.D) * c.n + 8.0 * P * 2048.0 * 2.0;
  if (c.n_z == 0) b += 4.0 * P * P * 2.0 + 4.0 * P * 2048.0 * c.mehler_order;
  return b;
}

void check_memory(const SimConfig& c, int p) {
  double need = estimated_bytes(c, p), have = c.mem_budget_gib * double(1ull << 30);
  if (need > have) {
    std::ostringstream os;
    os << "memory guard: p=" << p << ", d=" << c.d << ", n=" << c.n << " needs about " << need / double(1ull << 30)
       << " GiB, budget " << c.mem_budget_gib << " GiB";
    throw MemoryBudgetExceeded(os.str());
  }
}

MatrixXd manifold_points(const MatrixXd& M, const MatrixXd& Xi, const ActivationProfile& sigma) {
  MatrixXd u = M * Xi / std::sqrt(double(M.cols()));
  if (sigma.is_linear() && sigma.kind() == ActivationKind::identity) return u;
  return sigma.apply(u.array()).matrix();
}

ManifoldData generate(const SimConfig& c, const ActivationProfile& sigma) {
  validate(c);
  check_memory(c, c.p);
  ManifoldData out;
  out.M.resize(c.d, c.D);
  fill_normal(out.M, c.seed, kStreamM);
  out.Xi.resize(c.D, c.n);
  fill_normal(out.Xi, c.seed, kStreamXi);
  out.X = manifold_points(out.M, out.Xi, sigma);
  out.W.resize(c.p, c.d);
  fill_normal_rowwise(out.W, c.seed, kStreamW);
  return out;
}

namespace {

// U_ij = sum_k rho_ij^k/k! <A_k(i) A_k(j)>, diagonal from the exact second moment
FeatureMoments moments_exact(const MatrixXd& W, const MatrixXd& X, double t, const ActivationProfile& rho, int K) {
  const Index p = W.rows(), d = W.cols(), n = X.cols();
  auto [a, h] = schedule(t);
  const double sd = std::sqrt(double(d));
  VectorXd wn = W.rowwise().norm();
  VectorXd s = std::sqrt(h) * wn / sd;

  MatrixXf Wh = (wn.cwiseInverse().asDiagonal() * W).cast<float>();
  MatrixXf R(p, p);
  R.setZero();
  R.selfadjointView<Eigen::Lower>().rankUpdate(Wh);
  Wh.resize(0, 0);

  const Index nb = std::min<Index>(n, 2048);
  MatrixXd G(p, nb), A0(p, nb);
  std::vector<MatrixXf> Ak(K, MatrixXf(p, nb));
  VectorXd second = VectorXd::Zero(p), b = VectorXd::Zero(p);
  MatrixXd U = MatrixXd::Zero(p, p);
  MatrixXf T(p, p);
  std::vector<double> buf(K + 1);
  double fact[9] = {1, 1, 2, 6, 24, 120, 720, 5040, 40320};

  for (Index l0 = 0; l0 < n; l0 += nb) {
    const Index m = std::min(nb, n - l0);
    G.leftCols(m).noalias() = (a / sd) * W * X.middleCols(l0, m);
    for (Index j = 0; j < m; ++j)
      for (Index i = 0; i < p; ++i) {
        double sec;
        rho.smoothed(G(i, j), s[i], K, buf.data(), &sec);
        A0(i, j) = buf[0];
        for (int k = 1; k <= K; ++k) Ak[k - 1](i, j) = float(buf[k]);
        second[i] += sec;
        b[i] += buf[1];
      }
    U.selfadjointView<Eigen::Lower>().rankUpdate(A0.leftCols(m), 1.0 / double(n));
    for (int k = 1; k <= K; ++k) {
      T.setZero();
      T.selfadjointView<Eigen::Lower>().rankUpdate(Ak[k - 1].leftCols(m));
      const double coef = 1.0 / (fact[k] * double(n));
      for (Index j = 0; j < p; ++j)
        for (Index i = j + 1; i < p; ++i) {
          double r = R(i, j), rk = r;
          for (int e = 1; e < k; ++e) rk *= r;
          U(i, j) += coef * rk * double(T(i, j));
        }
    }
  }
  U.diagonal() = second / double(n);
  mirror_lower(U);

  // Stein: E_z[rho(m + sqrt(h) w.z/sqrt d) z] = sqrt(h)/sqrt(d) w E[rho'] and E[rho'] = A_1/s
  VectorXd coef = (std::sqrt(h) / sd) * b.cwiseQuotient(s) / double(n);
  FeatureMoments fm;
  fm.U = std::move(U);
  fm.V = coef.asDiagonal() * W;
  return fm;
}

FeatureMoments moments_sampled(const MatrixXd& W, const MatrixXd& X, double t, const ActivationProfile& rho, int n_z,
                               uint64_t seed) {
  const Index p = W.rows(), d = W.cols(), n = X.cols();
  auto [a, h] = schedule(t);
  const double sh = std::sqrt(h);
  const Index total = n * Index(n_z);
  const double w = 1.0 / double(total);
  FeatureMoments fm;
  fm.U = MatrixXd::Zero(p, p);
  fm.V = MatrixXd::Zero(p, d);
  const Index nb = 2048;
  MatrixXd xt(d, nb);
  for (Index c0 = 0; c0 < total; c0 += nb) {
    const Index m = std::min(nb, total - c0);
    // column c0 + j pairs datum (c0 + j)/n_z with draw (c0 + j) % n_z
    MatrixXd z = normals(d, m, seed, kStreamMomentZ, c0);
    for (Index j = 0; j < m; ++j) xt.col(j) = a * X.col((c0 + j) / n_z) + sh * z.col(j);
    MatrixXd F = features(W, xt.leftCols(m), rho);
    fm.U.selfadjointView<Eigen::Lower>().rankUpdate(F, w);
    fm.V.noalias() += w * F * z.transpose();
  }
  mirror_lower(fm.U);
  return fm;
}

}  // namespace

FeatureMoments feature_moments(const MatrixXd& W, const MatrixXd& X, double t, const ActivationProfile& rho, int n_z,
                               uint64_t seed, int mehler_order) {
  if (W.cols() != X.rows()) throw std::invalid_argument("feature_moments: W and X shapes disagree");
  if (!(t > 0.0)) throw std::invalid_argument("feature_moments: t must be positive");
  if (n_z < 0) throw std::invalid_argument("feature_moments: n_z must be >= 0");
  if (n_z == 0) return moments_exact(W, X, t, rho, mehler_order);
  return moments_sampled(W, X, t, rho, n_z, seed);
}

MatrixXd fit(const MatrixXd& U, const MatrixXd& V, double lambda, double h) {
  if (!(lambda > 0.0)) throw std::invalid_argument("fit: lambda must be positive");
  if (U.rows() != U.cols() || U.rows() != V.rows()) throw std::invalid_argument("fit: shapes disagree");
  MatrixXd S = U;
  S.diagonal().array() += lambda;
  Eigen::LLT<MatrixXd> llt(S);
  if (llt.info() != Eigen::Success) {
    S = U;
    S.diagonal().array() += lambda;
    double mn = Eigen::SelfAdjointEigenSolver<MatrixXd>(S, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
    throw FactorizationFailure("fit: U + lambda I not positive definite", mn);
  }
  MatrixXd Y = llt.solve(V);
  return -std::sqrt(double(U.rows()) / h) * Y.transpose();
}

Estimate mean_se(const Eigen::Ref<const VectorXd>& x) {
  Estimate e;
  const Index n = x.size();
  if (n == 0) return e;
  e.mean = x.mean();
  if (n > 1) e.se = std::sqrt((x.array() - e.mean).square().sum() / double(n - 1) / double(n));
  return e;
}

ErrorEstimates empirical_errors(const MatrixXd& A_hat, const MatrixXd& W, const MatrixXd& M, const MatrixXd& X,
                                const SimConfig& c, const ActivationProfile& rho, const ActivationProfile& sigma) {
  auto [a, h] = schedule(c.t);
  const double sh = std::sqrt(h);
  const Index d = W.cols(), D = M.cols();
  // sqrt(h) s(x) = sqrt(h) A_hat/sqrt(p) rho(W x/sqrt d)
  MatrixXd B = (sh / std::sqrt(double(W.rows()))) * A_hat;
  ErrorEstimates out;

  VectorXd te(c.n_test);
  for (Index c0 = 0; c0 < c.n_test; c0 += kChunk) {
    const Index m = std::min<Index>(kChunk, c.n_test - c0);
    MatrixXd x = manifold_points(M, normals(D, m, c.seed, kStreamTestXi, c0), sigma);
    MatrixXd z = normals(d, m, c.seed, kStreamTestZ, c0);
    MatrixXd r = B * features(W, a * x + sh * z, rho) + z;
    te.segment(c0, m) = r.colwise().squaredNorm().transpose() / double(d);
  }
  out.test = mean_se(te);

  const Index nz = std::max(1, c.n_z), total = X.cols() * nz;
  VectorXd tr(total);
  for (Index c0 = 0; c0 < total; c0 += kChunk) {
    const Index m = std::min<Index>(kChunk, total - c0);
    MatrixXd z = normals(d, m, c.seed, kStreamTrainZ, c0);
    MatrixXd xt(d, m);
    for (Index j = 0; j < m; ++j) xt.col(j) = a * X.col((c0 + j) / nz) + sh * z.col(j);
    MatrixXd r = B * features(W, xt, rho) + z;
    tr.segment(c0, m) = r.colwise().squaredNorm().transpose() / double(d);
  }
  out.train = mean_se(tr);
  return out;
}

ExactScoreLinear::ExactScoreLinear(const MatrixXd& M, double t, const ActivationProfile& sigma) {
  if (!sigma.is_linear()) throw std::invalid_argument("exact score is only available for linear sigma");
  auto [a, h] = schedule(t);
  MatrixXd S = (a * a / double(M.cols())) * M * M.transpose();
  S.diagonal().array() += h;
  llt_.compute(S);
}

MatrixXd ExactScoreLinear::operator()(const MatrixXd& x) const { return -llt_.solve(x); }

Estimate empirical_score_error(const MatrixXd& A_hat, const MatrixXd& W, const MatrixXd& M, const SimConfig& c,
                               const ActivationProfile& rho, const ActivationProfile& sigma) {
  ExactScoreLinear exact(M, c.t, sigma);
  auto [a, h] = schedule(c.t);
  const Index d = W.cols(), D = M.cols();
  MatrixXd B = A_hat / std::sqrt(double(W.rows()));
  VectorXd e(c.n_mc_score);
  for (Index c0 = 0; c0 < c.n_mc_score; c0 += kChunk) {
    const Index m = std::min<Index>(kChunk, c.n_mc_score - c0);
    MatrixXd x = a * manifold_points(M, normals(D, m, c.seed, kStreamScoreXi, c0), sigma) +
                 std::sqrt(h) * normals(d, m, c.seed, kStreamScoreZ, c0);
    MatrixXd r = B * features(W, x, rho) - exact(x);
    e.segment(c0, m) = r.colwise().squaredNorm().transpose() / double(d);
  }
  return mean_se(e);
}

Estimate empirical_exact_test_error(const MatrixXd& M, const SimConfig& c, const ActivationProfile& sigma) {
  ExactScoreLinear exact(M, c.t, sigma);
  auto [a, h] = schedule(c.t);
  const double sh = std::sqrt(h);
  const Index d = M.rows(), D = M.cols();
  VectorXd e(c.n_mc_score);
  for (Index c0 = 0; c0 < c.n_mc_score; c0 += kChunk) {
    const Index m = std::min<Index>(kChunk, c.n_mc_score - c0);
    MatrixXd z = normals(d, m, c.seed, kStreamStarZ, c0);
    MatrixXd xt = a * manifold_points(M, normals(D, m, c.seed, kStreamStarXi, c0), sigma) + sh * z;
    MatrixXd r = sh * exact(xt) + z;
    e.segment(c0, m) = r.colwise().squaredNorm().transpose() / double(d);
  }
  return mean_se(e);
}

VectorXd empirical_optimal_score(const Eigen::Ref<const VectorXd>& x_t, const MatrixXd& X, double t) {
  if (X.cols() == 0) throw std::invalid_argument("empirical_optimal_score: empty dataset");
  if (X.rows() != x_t.size()) throw std::invalid_argument("empirical_optimal_score: dimension mismatch");
  auto [a, h] = schedule(t);
  VectorXd logit = -((a * X).colwise() - x_t).colwise().squaredNorm().transpose() / (2.0 * h);
  VectorXd w = (logit.array() - logit.maxCoeff()).exp();
  w /= w.sum();
  // sum_i w_i (a x_i - x_t)/h
  return (a * (X * w) - x_t) / h;
}

SeedRun simulate_seed(const SimConfig& c, const std::vector<int>& p_list, const ActivationProfile& rho,
                      const ActivationProfile& sigma, bool with_score) {
  auto t0 = std::chrono::steady_clock::now();
  if (p_list.empty()) throw std::invalid_argument("simulate_seed: empty feature list");
  for (size_t i = 0; i < p_list.size(); ++i)
    if (p_list[i] < 1 || (i > 0 && p_list[i] <= p_list[i - 1]))
      throw std::invalid_argument("simulate_seed: feature counts must be positive and ascending");
  if (with_score && !sigma.is_linear()) throw std::invalid_argument("score error needs linear sigma");
  SimConfig cc = c;
  cc.p = p_list.back();
  ManifoldData data = generate(cc, sigma);
  data.Xi.resize(0, 0);
  auto [a, h] = schedule(c.t);
  const double sh = std::sqrt(h);
  const Index d = c.d, D = c.D;

  FeatureMoments fm = feature_moments(data.W, data.X, c.t, rho, c.n_z, c.seed, c.mehler_order);
  fm.U.diagonal().array() += c.lambda;
  Eigen::LLT<Eigen::Ref<MatrixXd>> llt(fm.U);
  if (llt.info() != Eigen::Success) throw FactorizationFailure("simulate: U + lambda I not positive definite", 0.0);
  const MatrixXd& L = llt.matrixLLT();

  SeedRun run;
  run.seed = c.seed;
  std::vector<MatrixXd> Y;
  for (int p : p_list) {
    MatrixXd y = fm.V.topRows(p);
    const auto Lp = L.topLeftCorner(p, p).triangularView<Eigen::Lower>();
    Lp.solveInPlace(y);
    Lp.transpose().solveInPlace(y);
    SimPoint sp;
    sp.p = p;
    if (c.n_z == 0) {
      // exact in z: 1 - (tr(Y^T V) + lambda ||Y||^2)/d
      double v = 1.0 - (y.cwiseProduct(fm.V.topRows(p)).sum() + c.lambda * y.squaredNorm()) / double(d);
      sp.train = {v, 0.0};
    }
    run.points.push_back(sp);
    Y.push_back(std::move(y));
  }
  fm.U.resize(0, 0);

  auto accumulate = [&](Index total, auto&& make_batch, auto&& sample_err, std::vector<VectorXd>& errs) {
    errs.assign(p_list.size(), VectorXd(total));
    for (Index c0 = 0; c0 < total; c0 += kChunk) {
      const Index m = std::min<Index>(kChunk, total - c0);
      auto [x, aux] = make_batch(c0, m);
      MatrixXd F = features(data.W, x, rho);
      for (size_t k = 0; k < p_list.size(); ++k) {
        MatrixXd pred = Y[k].transpose() * F.topRows(p_list[k]);
        errs[k].segment(c0, m) = sample_err(pred, x, aux);
      }
    }
  };

  // test pairs: r = z - Y^T F
  std::vector<VectorXd> errs;
  accumulate(
      c.n_test,
      [&](Index c0, Index m) {
        MatrixXd z = normals(d, m, c.seed, kStreamTestZ, c0);
        MatrixXd x = a * manifold_points(data.M, normals(D, m, c.seed, kStreamTestXi, c0), sigma) + sh * z;
        return std::pair{std::move(x), std::move(z)};
      },
      [&](const MatrixXd& pred, const MatrixXd&, const MatrixXd& z) -> VectorXd {
        return (z - pred).colwise().squaredNorm().transpose() / double(d);
      },
      errs);
  for (size_t k = 0; k < p_list.size(); ++k) run.points[k].test = mean_se(errs[k]);

  if (c.n_z > 0) {
    const Index nz = c.n_z, total = data.X.cols() * nz;
    accumulate(
        total,
        [&](Index c0, Index m) {
          MatrixXd z = normals(d, m, c.seed, kStreamTrainZ, c0);
          MatrixXd x(d, m);
          for (Index j = 0; j < m; ++j) x.col(j) = a * data.X.col((c0 + j) / nz) + sh * z.col(j);
          return std::pair{std::move(x), std::move(z)};
        },
        [&](const MatrixXd& pred, const MatrixXd&, const MatrixXd& z) -> VectorXd {
          return (z - pred).colwise().squaredNorm().transpose() / double(d);
        },
        errs);
    for (size_t k = 0; k < p_list.size(); ++k) run.points[k].train = mean_se(errs[k]);
  }

  if (with_score) {
    ExactScoreLinear exact(data.M, c.t, sigma);
    accumulate(
        c.n_mc_score,
        [&](Index c0, Index m) {
          MatrixXd x = a * manifold_points(data.M, normals(D, m, c.seed, kStreamScoreXi, c0), sigma) +
                       sh * normals(d, m, c.seed, kStreamScoreZ, c0);
          MatrixXd s = exact(x);
          return std::pair{std::move(x), std::move(s)};
        },
        [&](const MatrixXd& pred, const MatrixXd&, const MatrixXd& s) -> VectorXd {
          // s_hat = -Y^T F/sqrt(h)
          return (pred / sh + s).colwise().squaredNorm().transpose() / double(d);
        },
        errs);
    SimConfig sc = c;
    Estimate star = empirical_exact_test_error(data.M, sc, sigma);
    for (size_t k = 0; k < p_list.size(); ++k) {
      run.points[k].score = mean_se(errs[k]);
      run.points[k].star = star;
    }
  }
  run.wall_seconds = seconds_since(t0);
  return run;
}

SimResult aggregate(const SimConfig& c, const std::vector<int>& p_list, std::vector<SeedRun> runs) {
  SimResult r;
  r.config = c;
  r.p_list = p_list;
  r.runs = std::move(runs);
  const size_t S = r.runs.size();
  for (const auto& run : r.runs) r.wall_seconds += run.wall_seconds;
  auto combine = [&](auto&& get) -> Estimate {
    if (S == 1) return get(r.runs[0]);
    VectorXd v(S);
    for (size_t s = 0; s < S; ++s) v[s] = get(r.runs[s]).mean;
    return mean_se(v);
  };
  for (size_t k = 0; k < p_list.size(); ++k) {
    for (const auto& run : r.runs)
      if (run.points.size() != p_list.size()) throw std::invalid_argument("aggregate: runs disagree on feature list");
    r.test.push_back(combine([&](const SeedRun& x) { return x.points[k].test; }));
    r.train.push_back(combine([&](const SeedRun& x) { return x.points[k].train; }));
    bool has = S > 0 && r.runs[0].points[k].score.has_value();
    r.score.push_back(has ? std::optional(combine([&](const SeedRun& x) { return *x.points[k].score; })) : std::nullopt);
    r.star.push_back(has ? std::optional(combine([&](const SeedRun& x) { return *x.points[k].star; })) : std::nullopt);
  }
  return r;
}

namespace {

struct GapDraw {
  MatrixXd M;
  VectorXd w1, w2;
};

GapDraw gap_draw(int d, int D, uint64_t seed) {
  GapDraw g;
  g.M.resize(d, D);
  fill_normal(g.M, seed, kStreamGap);
  g.w1.resize(d);
  g.w2.resize(d);
  uint64_t off = uint64_t(d) * uint64_t(D);
  fill_normal(g.w1, seed, kStreamGap, off);
  fill_normal(g.w2, seed, kStreamGap, off + uint64_t(d));
  return g;
}

// covariance of the Gaussian surrogate (phi'_1, phi'_2)
Eigen::Matrix2d surrogate_cov(const GapDraw& g, double mu) {
  const double d = double(g.M.rows());
  MatrixXd w(g.M.rows(), 2);
  w << g.w1, g.w2;
  MatrixXd mw = g.M.transpose() * w / std::sqrt(double(g.M.cols()));
  Eigen::Matrix2d C = (mu * mu * mw.transpose() * mw + (1.0 - mu * mu) * w.transpose() * w) / d;
  return C;
}

void check_gap_args(int d, int D) {
  if (d < 1 || D < 1) throw std::invalid_argument("gaussian_equivalence_gap: d, D must be >= 1");
}

}  // namespace

GapResult gaussian_equivalence_gap(const ActivationProfile& f, int d, int D, const ActivationProfile& sigma, long n_mc,
                                   uint64_t seed) {
  check_gap_args(d, D);
  if (n_mc < 2) throw std::invalid_argument("gaussian_equivalence_gap: n_mc must be >= 2");
  GapDraw g = gap_draw(d, D, seed);
  const uint64_t base = uint64_t(d) * uint64_t(D) + 2 * uint64_t(d);
  MatrixXd w(d, 2);
  w << g.w1, g.w2;
  MatrixXd wt = w.transpose() / std::sqrt(double(d));

  VectorXd ng(n_mc);
  const Index nb = 1024;
  for (Index c0 = 0; c0 < n_mc; c0 += nb) {
    const Index m = std::min<Index>(nb, n_mc - c0);
    MatrixXd xi(D, m);
    fill_normal(xi, seed, kStreamGap, base + uint64_t(c0) * uint64_t(D));
    MatrixXd phi = wt * manifold_points(g.M, xi, sigma);
    for (Index j = 0; j < m; ++j) ng[c0 + j] = f(phi(0, j)) * f(phi(1, j));
  }

  // the surrogate is an exact bivariate Gaussian; sample it through its Cholesky factor
  Eigen::Matrix2d C = surrogate_cov(g, sigma.mu1());
  Eigen::Matrix2d Lc = C.llt().matrixL();
  const uint64_t base2 = base + uint64_t(n_mc) * uint64_t(D);
  VectorXd ga(n_mc);
  for (Index i = 0; i < n_mc; ++i) {
    Eigen::Vector2d u(normal_at(seed, kStreamGap, base2 + 2 * uint64_t(i)),
                      normal_at(seed, kStreamGap, base2 + 2 * uint64_t(i) + 1));
    Eigen::Vector2d phi = Lc * u;
    ga[i] = f(phi[0]) * f(phi[1]);
  }
  Estimate e1 = mean_se(ng), e2 = mean_se(ga);
  GapResult r;
  r.non_gaussian = e1.mean;
  r.gaussian = e2.mean;
  r.gap = std::abs(e1.mean - e2.mean);
  r.se = std::hypot(e1.se, e2.se);
  r.inconclusive = r.se > 0.5 * r.gap;
  return r;
}

namespace {

using Poly = Eigen::Matrix3d;  // coefficient of s1^i s2^j, i, j <= 2

Poly mul(const Poly& x, const Poly& y) {
  Poly r = Poly::Zero();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; i + k < 3; ++k)
        for (int l = 0; j + l < 3; ++l) r(i + k, j + l) += x(i, j) * y(k, l);
  return r;
}

// coefficients of f as a quadratic: f(x) = e0 + e1 x + e2 x^2
Eigen::Vector3d quadratic_coeffs(const ActivationProfile& f, const char* what) {
  if (f.tail_mass(2) > 1e-12)
    throw std::invalid_argument(std::string("gaussian_equivalence_gap_exact: ") + what + " is not a quadratic polynomial");
  VectorXd al = f.hermite(2);
  return {al[0] - al[2] / 2.0, al[1], al[2] / 2.0};
}

}  // namespace

GapResult gaussian_equivalence_gap_exact(const ActivationProfile& f, int d, int D, const ActivationProfile& sigma,
                                         uint64_t seed) {
  check_gap_args(d, D);
  Eigen::Vector3d e = quadratic_coeffs(f, "f"), sg = quadratic_coeffs(sigma, "sigma");
  GapDraw g = gap_draw(d, D, seed);
  const double sd = std::sqrt(double(d)), sD = std::sqrt(double(D));

  // phi_i = c_i + b_i.xi + xi^T Q_i xi with u = M xi/sqrt D and sigma(u) = sg0 + sg1 u + sg2 u^2
  const VectorXd* w[2] = {&g.w1, &g.w2};
  double cc[2];
  VectorXd b[2];
  MatrixXd Q[2];
  for (int i = 0; i < 2; ++i) {
    cc[i] = sg[0] * w[i]->sum() / sd;
    b[i] = sg[1] * g.M.transpose() * (*w[i]) / (sd * sD);
    Q[i] = sg[2] * g.M.transpose() * w[i]->asDiagonal() * g.M / (double(D) * sd);
  }

  // cumulant generating function: s.c + 1/2 b^T (I - 2Q)^{-1} b - 1/2 log det(I - 2Q), Q = s1 Q_1 + s2 Q_2,
  // expanded over words in {Q_1, Q_2} with at most two letters of each kind
  Poly Kc = Poly::Zero();
  Kc(1, 0) = cc[0];
  Kc(0, 1) = cc[1];
  struct Word {
    MatrixXd P;
    int n[2];
    int len;
  };
  std::vector<Word> layer{{MatrixXd::Identity(D, D), {0, 0}, 0}};
  while (!layer.empty()) {
    std::vector<Word> next;
    for (const Word& wd : layer) {
      if (wd.len > 0) Kc(wd.n[0], wd.n[1]) += std::ldexp(1.0, wd.len - 1) / wd.len * wd.P.trace();
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k) {
          int n0 = wd.n[0] + (j == 0) + (k == 0), n1 = wd.n[1] + (j == 1) + (k == 1);
          if (n0 <= 2 && n1 <= 2) Kc(n0, n1) += 0.5 * std::ldexp(1.0, wd.len) * b[j].dot(wd.P * b[k]);
        }
      for (int q = 0; q < 2; ++q) {
        if (wd.n[q] == 2) continue;
        Word nw{wd.P * Q[q], {wd.n[0], wd.n[1]}, wd.len + 1};
        nw.n[q] += 1;
        next.push_back(std::move(nw));
      }
    }
    layer = std::move(next);
  }
  // moment generating function exp(K), truncated
  Poly Mg = Poly::Zero(), term = Poly::Zero();
  Mg(0, 0) = 1.0;
  term(0, 0) = 1.0;
  for (int j = 1; j <= 4; ++j) {
    term = mul(term, Kc) / double(j);
    Mg += term;
  }
  const double fact[3] = {1, 1, 2};
  auto moment_ng = [&](int i, int j) { return fact[i] * fact[j] * Mg(i, j); };

  Eigen::Matrix2d C = surrogate_cov(g, sigma.mu1());
  auto moment_g = [&](int i, int j) -> double {
    if ((i + j) % 2) return 0.0;
    if (i == 0 && j == 0) return 1.0;
    if (i == 2 && j == 0) return C(0, 0);
    if (i == 0 && j == 2) return C(1, 1);
    if (i == 1 && j == 1) return C(0, 1);
    return C(0, 0) * C(1, 1) + 2.0 * C(0, 1) * C(0, 1);
  };
  double ng = 0.0, ga = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      ng += e[i] * e[j] * moment_ng(i, j);
      ga += e[i] * e[j] * moment_g(i, j);
    }
  GapResult r;
  r.non_gaussian = ng;
  r.gaussian = ga;
  r.gap = std::abs(ng - ga);
  return r;
}

}  // namespace dsmrf
