#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gpdit/diffusion.hpp"
#include "gpdit/gp.hpp"
#include "gpdit/rng.hpp"
#include "gpdit/score_gd.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

using namespace gpdit;

namespace {

GpSpec make_spec(int d, int N, double nu = 1.0, double ell = 1.0) {
  GpSpec s;
  s.d = d;
  s.N = N;
  s.nu = nu;
  s.ell = ell;
  return s;
}

Eigen::MatrixXd random_spd(int d, std::uint64_t seed, double boost = 0.5) {
  SplitMix64 g(seed);
  Eigen::MatrixXd m(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = g.next_gaussian();
  return m * m.transpose() + boost * Eigen::MatrixXd::Identity(d, d);
}

Eigen::VectorXd random_vec(int n, std::uint64_t seed) {
  SplitMix64 g(seed);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = g.next_gaussian();
  return v;
}

// Log density of N(alpha mu, alpha^2 Gamma (x) Sigma + sigma^2 I) up to the
// normalizing constant, for finite-difference probing.
double log_density(const GpSpec& spec, const TemporalKernel& kernel, double t,
                   const Eigen::VectorXd& x) {
  const double a = alpha_of(t);
  Eigen::MatrixXd cov =
      a * a * kron_cov(kernel, spec.sigma_or_identity()) +
      sigma2_of(t) * Eigen::MatrixXd::Identity(spec.dim(), spec.dim());
  Eigen::VectorXd res = x - a * spec.mu_or_zero();
  return -0.5 * res.dot(cov.llt().solve(res));
}

}  // namespace

TEST_CASE("oracle score matches central finite differences of log density") {
  GpSpec s = make_spec(2, 4);
  s.sigma = random_spd(2, 5);
  s.mu = random_vec(8, 6);
  TemporalKernel k = build_kernel(s);

  const double h = 1e-4;
  for (double t : {0.1, 1.0, 3.0}) {
    Eigen::VectorXd x = 2.0 * random_vec(8, 70 + int(t * 10));
    Eigen::VectorXd sc = oracle_score(s, k, t, x);
    for (int i = 0; i < 8; ++i) {
      Eigen::VectorXd xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      const double fd =
          (log_density(s, k, t, xp) - log_density(s, k, t, xm)) / (2.0 * h);
      CHECK(sc[i] == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("oracle score dense and Kronecker paths agree") {
  GpSpec s = make_spec(3, 5, 2.0, 0.8);
  s.sigma = random_spd(3, 9);
  s.mu = random_vec(15, 10);
  TemporalKernel k = build_kernel(s);
  Eigen::VectorXd x = random_vec(15, 11);
  for (double t : {0.05, 0.7, 2.5}) {
    Eigen::VectorXd dense = oracle_score(s, k, t, x, 4096);
    Eigen::VectorXd kron = oracle_score(s, k, t, x, 1);
    CHECK((dense - kron).norm() <= 1e-11 * (1.0 + dense.norm()));
  }
}

TEST_CASE("truncation zeroes the tail and reports the exact Frobenius gap") {
  GpSpec s = make_spec(1, 7);
  TemporalKernel k = build_kernel(s);
  TruncationResult tr = truncate_kernel(k, 3);
  CHECK(tr.J == 3);
  for (int m = 0; m < 7; ++m) {
    if (m < 3) {
      CHECK(tr.kernel.gamma(m) == k.gamma(m));
    } else {
      CHECK(tr.kernel.gamma(m) == 0.0);
    }
  }
  const double dense_gap = (k.toeplitz() - tr.kernel.toeplitz()).norm();
  CHECK(tr.delta_frob == doctest::Approx(dense_gap).epsilon(1e-13));

  TruncationResult full = truncate_kernel(k, 7);
  CHECK(full.delta_frob == 0.0);
}

TEST_CASE("choose_J certifies its own truncation bound") {
  GpSpec s = make_spec(2, 24, 1.0, 0.6);
  TemporalKernel k = build_kernel(s);
  for (double eps : {1e-2, 1e-4, 1e-6}) {
    const int j = choose_J(s, k, eps);
    CHECK(j >= 1);
    CHECK(j <= s.N);
    TruncationResult tr = truncate_kernel(k, j);
    CHECK(tr.delta_frob <= eps);
    // The banded kernel must stay PSD.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(tr.kernel.toeplitz());
    CHECK(es.eigenvalues().minCoeff() >= -1e-10);
  }
  // Tighter budgets keep more band.
  CHECK(choose_J(s, k, 1e-6) >= choose_J(s, k, 1e-2));
  // A time argument softens the target by sigma_t^2 <= 1, never widening J
  // beyond the t-free choice at the same eps.
  CHECK(choose_J(s, k, 1e-4, 0.5) >= choose_J(s, k, 1e-4));
}

TEST_CASE("gd plan spectrum extremes match a dense eigensolve") {
  GpSpec s = make_spec(2, 6, 2.0, 0.9);
  s.sigma = random_spd(2, 13);
  TemporalKernel k = build_kernel(s);
  const int j = choose_J(s, k, 1e-6);
  TruncationResult tr = truncate_kernel(k, j);
  const double t = 0.3;
  GdPlan plan = plan_gd(s, tr.kernel, j, t, 1e-6);

  const double a2 = alpha_of(t) * alpha_of(t);
  Eigen::MatrixXd a_mat =
      a2 * kron_cov(tr.kernel, s.sigma) +
      sigma2_of(t) * Eigen::MatrixXd::Identity(12, 12);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a_mat);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();

  // Kronecker extremes bound the dense ones and are tight when the banded
  // kernel spectrum is exact; clamping lambda_min(Gamma_J) at zero may only
  // lower lam_lo.
  CHECK(plan.lam_hi == doctest::Approx(hi).epsilon(1e-10));
  CHECK(plan.lam_lo <= lo + 1e-10);
  CHECK(plan.lam_lo > 0.0);
  CHECK(plan.eta == doctest::Approx(2.0 / (plan.lam_lo + plan.lam_hi))
                        .epsilon(1e-15));
  CHECK(plan.kappa == doctest::Approx(plan.lam_hi / plan.lam_lo)
                          .epsilon(1e-12));
  CHECK(plan.K == int(std::ceil((plan.kappa + 1.0) / 2.0 *
                                std::log(1.0 / plan.eps))));
}

TEST_CASE("symmetric_spectrum_extremes matches Eigen on a dense matrix") {
  Eigen::MatrixXd m = random_spd(20, 17);
  auto [lo, hi] = symmetric_spectrum_extremes(m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  CHECK(lo == doctest::Approx(es.eigenvalues().minCoeff()).epsilon(1e-10));
  CHECK(hi == doctest::Approx(es.eigenvalues().maxCoeff()).epsilon(1e-10));
}

TEST_CASE("eta and kappa track the diffusion time through the kron extremes") {
  const double kron_lo = 0.2, kron_hi = 1.7;
  for (double t : {0.05, 0.4, 2.0, 30.0}) {
    const double a2 = alpha_of(t) * alpha_of(t);
    const double s2 = sigma2_of(t);
    const double lo = a2 * kron_lo + s2;
    const double hi = a2 * kron_hi + s2;
    CHECK(eta_at(kron_lo, kron_hi, t) ==
          doctest::Approx(2.0 / (lo + hi)).epsilon(1e-15));
    CHECK(kappa_at(kron_lo, kron_hi, t) ==
          doctest::Approx(hi / lo).epsilon(1e-15));
  }
  // Late times are perfectly conditioned.
  CHECK(kappa_at(kron_lo, kron_hi, 30.0) < 1.01);
}

TEST_CASE("condition number approaches one at late diffusion times") {
  GpSpec s = make_spec(2, 8);
  TemporalKernel k = build_kernel(s);
  CHECK(condition_number(s, k, 30.0) < 1.01);
  CHECK(condition_number(s, k, 0.01) > condition_number(s, k, 1.0));
}

TEST_CASE("gd iterates in exact and per-patch modes coincide") {
  GpSpec s = make_spec(3, 6, 2.0, 0.5);
  s.sigma = random_spd(3, 23);
  s.mu = random_vec(18, 24);
  TemporalKernel k = build_kernel(s);
  const int j = choose_J(s, k, 1e-5);
  TruncationResult tr = truncate_kernel(k, j);
  GdPlan plan = plan_gd(s, tr.kernel, j, 0.4, 1e-5);
  Eigen::VectorXd x = 1.5 * random_vec(18, 25);

  auto exact = gd_score(plan, s, k, 0.4, x, GdMode::exact);
  auto patch = gd_score(plan, s, k, 0.4, x, GdMode::per_patch);
  REQUIRE(exact.size() == patch.size());
  REQUIRE(int(exact.size()) == plan.K + 1);
  CHECK(exact[0].norm() == 0.0);
  for (std::size_t i = 0; i < exact.size(); ++i) {
    CHECK((exact[i] - patch[i]).norm() <= 1e-12 * (1.0 + exact[i].norm()));
  }
}

TEST_CASE("gd objective decreases monotonically along the iterates") {
  GpSpec s = make_spec(2, 8);
  s.sigma = random_spd(2, 33);
  TemporalKernel k = build_kernel(s);
  const int j = choose_J(s, k, 1e-4);
  TruncationResult tr = truncate_kernel(k, j);
  GdPlan plan = plan_gd(s, tr.kernel, j, 0.25, 1e-4);
  Eigen::VectorXd x = random_vec(16, 34);

  auto iters = gd_score(plan, s, k, 0.25, x);
  double prev = gd_objective(s, tr.kernel, 0.25, x, iters[0]);
  for (std::size_t i = 1; i < iters.size(); ++i) {
    const double cur = gd_objective(s, tr.kernel, 0.25, x, iters[i]);
    CHECK(cur <= prev + 1e-12);
    prev = cur;
  }
  // The final iterate is close to the direct minimizer.
  Eigen::VectorXd star = solve_truncated_score(s, tr.kernel, 0.25, x);
  CHECK((iters.back() - star).norm() <= 2e-4 * (1.0 + star.norm()));
}

TEST_CASE("gd error bound holds on a random instance family") {
  // Random desk-scale instances; the family keeps ell below c^nu so the
  // temporal kernel decays fast enough for the truncation certificate.
  SplitMix64 g(101);
  for (int trial = 0; trial < 12; ++trial) {
    const int d = 1 + int(g.next_u64() % 3);
    const int N = 4 + int(g.next_u64() % 9);
    const double nu = (trial % 2 == 0) ? 1.0 : 2.0;
    GpSpec s = make_spec(d, N, nu);
    TimeEmbeddings emb = build_embeddings(s);
    s.ell = std::pow(emb.c, nu) * (0.3 + 0.6 * g.next_unit());
    s.sigma = random_spd(d, 200 + trial);
    s.sigma /= s.sigma.norm();
    s.mu = random_vec(s.dim(), 300 + trial);
    TemporalKernel k = build_kernel(s);

    const double t = 0.05 + 2.0 * g.next_unit();
    const double eps = 1e-6;
    const int j = choose_J(s, k, eps, t);
    TruncationResult tr = truncate_kernel(k, j);
    GdPlan plan = plan_gd(s, tr.kernel, j, t, eps);
    Eigen::VectorXd x = 2.0 * random_vec(s.dim(), 400 + trial);

    ScoreEvalReport rep = gd_error_report(plan, s, k, t, x);
    CHECK(rep.err_l2 <= rep.bound_e1 + rep.bound_e2 + 1e-9);
    CHECK(rep.contraction_measured <= rep.contraction_bound + 1e-10);
    CHECK(rep.residual_norm ==
          doctest::Approx((x - alpha_of(t) * s.mu).norm()).epsilon(1e-12));
    CHECK(rep.bound_e1 ==
          doctest::Approx(rep.residual_norm * eps / sigma2_of(t))
              .epsilon(1e-12));
  }
}

TEST_CASE("gd_score_fn matches the oracle within its certified budget") {
  GpSpec s = make_spec(2, 10);
  TimeEmbeddings emb = build_embeddings(s);
  s.ell = 0.5 * emb.c;
  s.sigma = random_spd(2, 55);
  s.sigma /= s.sigma.norm();
  TemporalKernel k = build_kernel(s);

  const double eps = 1e-6;
  ScoreFn gd = gd_score_fn(s, k, eps);
  ScoreFn oracle = oracle_score_fn(s, k);
  CHECK(gd.dim == 20);

  Eigen::MatrixXd x(20, 3);
  for (int c = 0; c < 3; ++c) x.col(c) = 2.0 * random_vec(20, 500 + c);
  for (double t : {0.1, 0.9}) {
    Eigen::MatrixXd a = gd.eval(x, t);
    Eigen::MatrixXd b = oracle.eval(x, t);
    for (int c = 0; c < 3; ++c) {
      const double budget =
          2.0 * (x.col(c)).norm() * eps / sigma2_of(t) + 1e-9;
      CHECK((a.col(c) - b.col(c)).norm() <= budget);
    }
  }
}

TEST_CASE("plan eta is bit-identical to the shared eta_at helper") {
  GpSpec s = make_spec(2, 9, 2.0, 0.7);
  s.sigma = random_spd(2, 61);
  TemporalKernel k = build_kernel(s);
  const int j = choose_J(s, k, 1e-6);
  TruncationResult tr = truncate_kernel(k, j);
  GdPlan plan = plan_gd(s, tr.kernel, j, 0.6, 1e-5);
  CHECK(plan.eta == eta_at(plan.kron_lo, plan.kron_hi, 0.6));
  CHECK(plan.kappa == kappa_at(plan.kron_lo, plan.kron_hi, 0.6));
}
