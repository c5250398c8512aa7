#include "dsmrf/checks.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "dsmrf/glm_free_energy.hpp"
#include "dsmrf/learning_curves.hpp"
#include "dsmrf/mc_simulator.hpp"
#include "dsmrf/parallel.hpp"
#include "dsmrf/rng.hpp"
#include "dsmrf/sweep.hpp"

namespace dsmrf {

namespace {

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

const std::vector<double> kPsiP = {0.5, 1, 2, 5, 10};

int sim_jobs(const SimConfig& c, int p, const CheckOptions& o) {
  double fit = std::floor(o.mem_budget_gib * double(1ull << 30) / estimated_bytes(c, p));
  return int(std::clamp(fit, 1.0, double(std::max(1, o.jobs))));
}

CheckResult theory_vs_simulation(const CheckOptions& o) {
  CheckResult r{1, "theory-vs-simulation", false, "", 0};
  const int d = o.quick ? 500 : 1000, S = o.quick ? 2 : 5;
  auto rho = ActivationProfile::relu(), sigma = ActivationProfile::tanh();
  std::vector<int> pl;
  for (double x : kPsiP) pl.push_back(int(std::lround(x * d)));
  const double ts[2] = {0.1, 0.5};
  SimConfig base;
  base.d = d;
  base.D = d / 2;
  base.n = 10 * d;
  base.mem_budget_gib = o.mem_budget_gib;
  std::vector<SeedRun> runs(2 * S);
  parallel_for(runs.size(), sim_jobs(base, pl.back(), o), [&](size_t i) {
    SimConfig c = base;
    c.t = ts[i / S];
    c.seed = 1 + i % S;
    runs[i] = simulate_seed(c, pl, rho, sigma, false);
  });
  double wt = 0, wr = 0;
  std::string worst;
  for (int k = 0; k < 2; ++k) {
    SimResult agg = aggregate(base, pl, {runs.begin() + k * S, runs.begin() + (k + 1) * S});
    for (size_t j = 0; j < pl.size(); ++j) {
      ModelPoint p = make_point(ts[k], 1e-4, 0.5, 10, kPsiP[j], rho, sigma);
      KDerivatives kd = k_derivatives(p);
      double dt = std::abs(test_error(p, kd) - agg.test[j].mean), dr = std::abs(train_error(p, kd) - agg.train[j].mean);
      if (std::max(dt, dr) > std::max(wt, wr)) worst = fmt("t=%g psi_p=%g", ts[k], kPsiP[j]);
      wt = std::max(wt, dt);
      wr = std::max(wr, dr);
    }
  }
  r.passed = wt <= 0.03 && wr <= 0.03;
  r.detail = fmt("max |theory - MC| test %.4f, train %.4f (worst at %s; d=%d, %d seeds, exact E_z); limit 0.03", wt, wr,
                 worst.c_str(), d, S);
  return r;
}

CheckResult glm_vs_mp(const CheckOptions& o) {
  CheckResult r{2, "exact-score-cross-oracle", false, "", 0};
  std::vector<std::pair<double, double>> pts;
  for (double t : {0.01, 0.1, 0.5})
    for (double D : {0.25, 0.5, 1.0}) pts.emplace_back(t, D);
  std::vector<double> diff(pts.size());
  auto id = ActivationProfile::identity();
  parallel_for(pts.size(), o.jobs, [&](size_t i) {
    ModelPoint p = make_point(pts[i].first, 1e-4, pts[i].second, 10, 2, ActivationProfile::relu(), id);
    diff[i] = std::abs(exact_test_error_glm(p) - exact_test_error_linear(p));
  });
  double w = *std::max_element(diff.begin(), diff.end());
  r.passed = w <= 1e-3;
  r.detail = fmt("max |glm - mp| = %.2e over 9 points; limit 1e-3", w);
  return r;
}

CheckResult score_decomposition(const CheckOptions& o) {
  CheckResult r{3, "score-decomposition", false, "", 0};
  const int d = o.quick ? 500 : 2000, S = 3;
  SimConfig c;
  c.d = d;
  c.D = d / 2;
  c.n = 10 * d;
  c.t = 0.1;
  c.mem_budget_gib = o.mem_budget_gib;
  const int p = 2 * d;
  auto rho = ActivationProfile::relu(), id = ActivationProfile::identity();
  std::vector<SeedRun> runs(S);
  parallel_for(S, sim_jobs(c, p, o), [&](size_t i) {
    SimConfig cc = c;
    cc.seed = 1 + i;
    runs[i] = simulate_seed(cc, {p}, rho, id, true);
  });
  const double h = -std::expm1(-2.0 * c.t);
  double delta = 0, var = 0, et = 0, es = 0, estar = 0;
  for (const auto& run : runs) {
    const SimPoint& sp = run.points[0];
    delta += (sp.test.mean - h * sp.score->mean - sp.star->mean) / S;
    var += (sp.test.se * sp.test.se + h * h * sp.score->se * sp.score->se + sp.star->se * sp.star->se) / (S * S);
    et += sp.test.mean / S;
    es += sp.score->mean / S;
    estar += sp.star->mean / S;
  }
  double se = std::sqrt(var);
  r.passed = std::abs(delta) <= 2.0 * se;
  r.detail = fmt("e_test %.5f, h e_score %.5f, e* %.5f: residual %.2e vs 2 SE = %.2e (d=%d, 3 seeds)", et, h * es, estar,
                 delta, 2 * se, d);
  return r;
}

CheckResult solver_integrity(const CheckOptions&) {
  CheckResult r{4, "solver-integrity", false, "", 0};
  auto relu = ActivationProfile::relu();
  std::vector<ModelPoint> pts;
  for (double t : {0.1, 0.5})
    for (double pp : kPsiP) pts.push_back(make_point(t, 1e-4, 0.5, 10, pp, relu, ActivationProfile::tanh()));
  pts.push_back(make_point(0.1, 1e-4, 0.5, 10, 2, relu, ActivationProfile::identity()));
  double res = 0, halv = 0;
  for (const auto& p : pts) {
    KDerivatives kd = k_derivatives(p);
    res = std::max(res, kd.residual);
    halv = std::max(halv, kd.rel_halving);
  }
  // random restarts at the reference point
  const ModelPoint& ref = pts.back();
  Zetas z0 = solve_zetas(ref, 0.0, -ref.lambda);
  std::mt19937_64 gen(20240601);
  std::uniform_real_distribution<double> u(std::log(1e-2), std::log(1e2));
  double spread = 0;
  for (int k = 0; k < 10; ++k) {
    SolveOptions so;
    so.init = Eigen::Vector4d(std::exp(u(gen)), std::exp(u(gen)), std::exp(u(gen)), std::exp(u(gen)));
    Zetas z = solve_zetas(ref, 0.0, -ref.lambda, so);
    spread = std::max(spread, ((z.vec() - z0.vec()).cwiseAbs().array() / z0.vec().cwiseAbs().array().max(1.0)).maxCoeff());
  }
  r.passed = res < 1e-10 && halv <= 1e-4 && spread <= 1e-8;
  r.detail = fmt("max residual %.1e (<1e-10), step-halving %.1e (<=1e-4), restart spread %.1e (<=1e-8) over %zu points",
                 res, halv, spread, pts.size());
  return r;
}

CheckResult mp_oracle(const CheckOptions& o) {
  CheckResult r{5, "mp-stieltjes-oracle", false, "", 0};
  const int d = o.quick ? 500 : 2000;
  const double ratios[3] = {0.25, 0.5, 1.0};
  std::vector<double> worst(3);
  parallel_for(3, o.jobs, [&](size_t i) {
    int D = int(std::lround(ratios[i] * d));
    Eigen::MatrixXd M(d, D);
    fill_normal(M, 77 + i, kStreamM);
    Eigen::MatrixXd G = M * M.transpose() / double(D);
    Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(G, Eigen::EigenvaluesOnly).eigenvalues();
    for (double z : {-0.1, -0.5, -2.0}) {
      double emp = (ev.array() - z).inverse().mean();
      worst[i] = std::max(worst[i], std::abs(emp - mp_stieltjes(z, 1.0 / ratios[i])));
    }
  });
  double w = *std::max_element(worst.begin(), worst.end());
  r.passed = w <= 1e-2;
  r.detail = fmt("max |s_MP - eigenvalue average| = %.2e at d=%d over 9 points; limit 1e-2", w, d);
  return r;
}

CheckResult glm_quadrature(const CheckOptions&) {
  CheckResult r{6, "glm-quadrature-oracles", false, "", 0};
  double wp = 0, wq = 0;
  for (double x : {0.5, 1.0, 2.0, 5.0}) wp = std::max(wp, std::abs(phi_r(x) - phi_r_integral(x)));
  auto id = ActivationProfile::identity();
  for (double t : {0.05, 0.5}) {
    double a = std::exp(-t), h = -std::expm1(-2.0 * t);
    for (double q : {0.0, 0.3, 0.7, 0.99}) wq = std::max(wq, std::abs(psi_q_ah(q, a, h, id) - psi_q_linear(q, a, h)));
  }
  r.passed = wp <= 1e-8 && wq <= 1e-7;
  r.detail = fmt("phi_r max diff %.1e (<=1e-8), psi_q max diff %.1e (<=1e-7)", wp, wq);
  return r;
}

CheckResult gap_scaling(const CheckOptions& o) {
  CheckResult r{7, "gaussian-equivalence-scaling", false, "", 0};
  const int draws = o.quick ? 5 : 20;
  const long n_mc = o.quick ? 20000 : 200000;
  const int d0 = o.quick ? 100 : 500;
  const int ds[3] = {d0, 2 * d0, 4 * d0};
  auto f = ActivationProfile::hermite_mixture({0.0, 1.0});
  auto sigma = ActivationProfile::hermite_mixture({0.975, 0.223});
  std::vector<GapResult> mc(3 * draws), ex(3 * draws);
  parallel_for(mc.size(), o.jobs, [&](size_t i) {
    int d = ds[i % 3];
    uint64_t seed = 1 + i / 3;
    mc[i] = gaussian_equivalence_gap(f, d, d / 2, sigma, n_mc, seed);
    ex[i] = gaussian_equivalence_gap_exact(f, d, d / 2, sigma, seed);
  });
  std::vector<double> r1, r2, e1, e2;
  int inconclusive = 0;
  for (int k = 0; k < draws; ++k) {
    const GapResult* g = &mc[3 * k];
    const GapResult* e = &ex[3 * k];
    r1.push_back(g[1].gap / g[0].gap);
    r2.push_back(g[2].gap / g[1].gap);
    e1.push_back(e[1].gap / e[0].gap);
    e2.push_back(e[2].gap / e[1].gap);
    for (int j = 0; j < 3; ++j) inconclusive += g[j].inconclusive;
  }
  double m1 = median(r1), m2 = median(r2);
  r.passed = m1 >= 0.3 && m1 <= 0.8 && m2 >= 0.3 && m2 <= 0.8;
  r.detail = fmt("MC median ratios %.3f, %.3f (need [0.3, 0.8]; d=%d->%d->%d, n_mc=%ld, %d draws; %d of %d gaps "
                 "inconclusive, typical SE %.1e); closed-form ratios for the same draws %.3f, %.3f",
                 m1, m2, ds[0], ds[1], ds[2], n_mc, draws, inconclusive, 3 * draws, mc[0].se, median(e1), median(e2));
  return r;
}

CheckResult limits(const CheckOptions&) {
  CheckResult r{8, "degenerate-limits", false, "", 0};
  auto relu = ActivationProfile::relu(), id = ActivationProfile::identity();
  ModelPoint p0 = make_point(1e-6, 1e-4, 0.5, 10, 2, relu, id);
  KDerivatives k0 = k_derivatives(p0);
  double h0 = std::max(std::abs(test_error(p0, k0) - 1), std::abs(train_error(p0, k0) - 1));
  ModelPoint p1 = make_point(0.1, 1e8, 0.5, 10, 2, relu, id);
  KDerivatives k1 = k_derivatives(p1);
  double l1 = std::max(std::abs(test_error(p1, k1) - 1), std::abs(train_error(p1, k1) - 1));
  auto s5 = ActivationProfile::hermite_mixture({0.975, 0.223});
  double m = std::max(std::abs(mmse_per_d(10.0, 0.5, id).value - 1), std::abs(mmse_per_d(10.0, 0.5, s5).value - 1));
  double cg = 0;
  for (const auto& a : {relu, id, ActivationProfile::tanh(), s5})
    cg = std::max({cg, std::abs(a.c_gamma(0.0)), std::abs(a.c_gamma(1.0) - 1.0)});
  r.passed = h0 <= 1e-4 && l1 <= 1e-4 && m <= 1e-4 && cg <= 1e-6;
  r.detail = fmt("t=1e-6: %.1e, lambda=1e8: %.1e, mmse at t=10: %.1e (each <=1e-4); c(0), c(1): %.1e (<=1e-6)", h0, l1, m,
                 cg);
  return r;
}

CheckResult sample_complexity_linearity(const CheckOptions& o) {
  CheckResult r{9, "sample-complexity-linearity", false, "", 0};
  const std::vector<double> Ds = {0.1, 0.2, 0.3, 0.4, 0.5};
  std::vector<double> grid = make_grid(1.0, 1000.0, o.quick ? 151 : 601, true);
  std::vector<SampleComplexity> sc(Ds.size());
  parallel_for(Ds.size(), o.jobs, [&](size_t i) {
    ModelPoint b = make_point(0.1, 1e-4, Ds[i], 10, 1000, ActivationProfile::relu(), ActivationProfile::identity());
    sc[i] = sample_complexity(b, 0.2, {0.1}, grid);
  });
  std::string vals;
  Eigen::VectorXd y(Ds.size());
  bool all = true;
  for (size_t i = 0; i < Ds.size(); ++i) {
    if (!sc[i].psi_n_star) {
      all = false;
      vals += " -";
      continue;
    }
    y[i] = *sc[i].psi_n_star;
    vals += fmt(" %.1f", y[i]);
  }
  if (!all) {
    r.detail = "psi_n* not achieved for some psi_D:" + vals;
    return r;
  }
  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(Ds.data(), Ds.size());
  double xm = x.mean(), ym = y.mean();
  double sxy = ((x.array() - xm) * (y.array() - ym)).sum(), sxx = (x.array() - xm).square().sum();
  double slope = sxy / sxx, icpt = ym - slope * xm;
  double ssr = (y.array() - icpt - slope * x.array()).square().sum(), sst = (y.array() - ym).square().sum();
  double r2 = 1.0 - ssr / sst;
  r.passed = r2 >= 0.9;
  r.detail = fmt("psi_n* =%s, R^2 = %.4f (>=0.9), slope %.1f", vals.c_str(), r2, slope);
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

CheckResult determinism(const CheckOptions& o) {
  CheckResult r{10, "determinism", false, "", 0};
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / fmt("dsmrf_det_%ld", long(std::chrono::steady_clock::now().time_since_epoch().count()));
  fs::create_directories(dir);
  const char* cfgs[2] = {
      "mode = simulate\nrho = relu\nsigma = tanh\nt = 0.1, 0.5\npsi_D = 0.5\npsi_n = 4\nsweep = psi_p\n"
      "psi_p = 0.5, 1, 2\nd = 60\nseeds = 1, 2, 3\nn_test = 256\n",
      "mode = simulate\nrho = relu\nsigma = identity\nt = 0.1\npsi_D = 0.5\npsi_n = 3\nsweep = psi_p\n"
      "psi_p = 0.5, 1\nd = 40\nseeds = 4, 5\nn_z = 2\nn_test = 128\nn_mc_score = 128\nscore = true\n"};
  bool same = true;
  std::string note;
  int files = 0;
  for (int k = 0; k < 2; ++k) {
    std::istringstream in(cfgs[k]);
    SweepConfig c = parse_config(in, "determinism-" + std::to_string(k));
    std::string body[3], seeds[3];
    int jobs[3] = {1, std::max(2, o.jobs), 1};
    for (int run = 0; run < 3; ++run) {
      RunOptions ro;
      ro.jobs = jobs[run];
      ro.out = (dir / fmt("c%d_r%d.csv", k, run)).string();
      RunSummary s = run_sweep(c, ro);
      if (s.errors) {
        same = false;
        note += " run errors: " + s.error_lines.front();
      }
      body[run] = slurp(s.csv_path);
      seeds[run] = slurp(s.seeds_path);
      files += 2;
    }
    for (int run = 1; run < 3; ++run)
      if (body[run] != body[0] || seeds[run] != seeds[0]) {
        same = false;
        note += fmt(" config %d run %d differs", k, run);
      }
  }
  fs::remove_all(dir);
  r.passed = same;
  r.detail = fmt("%d CSV files from 2 simulate configs, workers 1 vs %d vs 1: %s", files, std::max(2, o.jobs),
                 same ? "byte-identical" : "DIFFER") + note;
  return r;
}

}  // namespace

std::string format_check_line(const CheckResult& r) {
  return fmt("[%s] criterion %2d %-30s %s (%.1f s)", r.passed ? "PASS" : "FAIL", r.id, r.name.c_str(), r.detail.c_str(),
             r.seconds);
}

std::vector<CheckResult> run_checks(const CheckOptions& o) {
  using Fn = CheckResult (*)(const CheckOptions&);
  const std::vector<std::pair<int, Fn>> all = {
      {1, theory_vs_simulation}, {2, glm_vs_mp}, {3, score_decomposition},   {4, solver_integrity},           {5, mp_oracle},
      {6, glm_quadrature},       {7, gap_scaling}, {8, limits}, {9, sample_complexity_linearity}, {10, determinism}};
  std::vector<CheckResult> out;
  for (const auto& [id, fn] : all) {
    if (!o.only.empty() && std::find(o.only.begin(), o.only.end(), id) == o.only.end()) continue;
    auto t0 = std::chrono::steady_clock::now();
    CheckResult r;
    try {
      r = fn(o);
    } catch (const std::exception& e) {
      r.id = id;
      r.name = "criterion-" + std::to_string(id);
      r.detail = std::string("error: ") + e.what();
      r.passed = false;
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (o.on_result) o.on_result(r);
    out.push_back(r);
  }
  return out;
}

}  // namespace dsmrf
