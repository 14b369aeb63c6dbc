#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gpdit/diffusion.hpp"
#include "gpdit/gp.hpp"
#include "gpdit/rng.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

using namespace gpdit;

namespace {

GpSpec make_spec(int d, int N) {
  GpSpec s;
  s.d = d;
  s.N = N;
  s.nu = 1.0;
  s.ell = 1.0;
  return s;
}

}  // namespace

TEST_CASE("noising coefficients follow the OU closed forms") {
  CHECK(alpha_of(0.0) == 1.0);
  CHECK(sigma2_of(0.0) == 0.0);
  const double t = 2.0 * std::log(2.0);
  CHECK(alpha_of(t) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(sigma2_of(t) == doctest::Approx(0.75).epsilon(1e-15));
  for (double u : {0.01, 0.3, 1.7, 9.0}) {
    CHECK(alpha_of(u) * alpha_of(u) + sigma2_of(u) ==
          doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("geometric schedule is log-uniform with exact endpoints") {
  DiffusionSchedule s = DiffusionSchedule::geometric(6.0, 1e-3, 40);
  REQUIRE(s.grid.size() == 41);
  CHECK(s.grid(0) == 6.0);
  CHECK(s.grid(40) == 1e-3);
  double ratio = s.grid(1) / s.grid(0);
  for (int i = 0; i + 1 < s.grid.size(); ++i) {
    CHECK(s.grid(i + 1) < s.grid(i));
    CHECK(s.grid(i + 1) / s.grid(i) == doctest::Approx(ratio).epsilon(1e-12));
  }

  DiffusionSchedule one = DiffusionSchedule::geometric(2.0, 0.5, 1);
  REQUIRE(one.grid.size() == 2);
  CHECK(one.grid(0) == 2.0);
  CHECK(one.grid(1) == 0.5);

  CHECK_THROWS_AS(DiffusionSchedule::geometric(1.0, 2.0, 10),
                  std::invalid_argument);
  CHECK_THROWS_AS(DiffusionSchedule::geometric(1.0, 1e-3, 0),
                  std::invalid_argument);
}

TEST_CASE("integrator names round-trip") {
  CHECK(integrator_from_name(integrator_name(Integrator::em)) ==
        Integrator::em);
  CHECK(integrator_from_name(integrator_name(Integrator::ddpm_exp)) ==
        Integrator::ddpm_exp);
  CHECK_THROWS(integrator_from_name("heun"));
}

TEST_CASE("forward marginal at t=0 reproduces clean GP draws") {
  GpSpec s = make_spec(2, 3);
  s.mu = Eigen::VectorXd::LinSpaced(6, 0.0, 1.0);
  TemporalKernel k = build_kernel(s);
  Eigen::MatrixXd clean = sample_gp(s, k, 8, 99);
  Eigen::MatrixXd fwd = forward_marginal_sample(s, k, 0.0, 8, 99);
  CHECK((clean - fwd).norm() == 0.0);
}

TEST_CASE("forward marginal matches the noised covariance and mean") {
  GpSpec s = make_spec(2, 4);
  s.mu = Eigen::VectorXd::Constant(8, 1.5);
  TemporalKernel k = build_kernel(s);
  const double t = 1.0;
  const int n = 20000;
  Eigen::MatrixXd x = forward_marginal_sample(s, k, t, n, 4);

  const double a = alpha_of(t);
  Eigen::MatrixXd target =
      a * a * kron_cov(k, s.sigma_or_identity()) +
      sigma2_of(t) * Eigen::MatrixXd::Identity(8, 8);
  Eigen::VectorXd mean = x.rowwise().mean();
  Eigen::MatrixXd centered = x.colwise() - mean;
  Eigen::MatrixXd hat = centered * centered.transpose() / double(n);

  const double scale = std::sqrt(
      (target.trace() * target.trace() + target.squaredNorm()) / n);
  CHECK((hat - target).norm() <= 5.0 * scale);
  CHECK((mean - a * s.mu).norm() <= 5.0 * std::sqrt(target.trace() / n));
}

TEST_CASE("backward sampling recovers the stationary OU variance") {
  // d = N = 1 with identity covariances: the marginal at every t is N(0,1),
  // so the sampler must land on unit variance at t0.
  GpSpec s = make_spec(1, 1);
  TemporalKernel k = build_kernel(s);
  ScoreFn score = oracle_score_fn(s, k);
  DiffusionSchedule sched = DiffusionSchedule::geometric(10.0, 1e-3, 1000);

  for (Integrator kind : {Integrator::ddpm_exp, Integrator::em}) {
    Eigen::MatrixXd x = backward_sample(sched, score, 10000, 5, kind);
    const double var = x.row(0).array().square().mean();
    CHECK(var > 0.9);
    CHECK(var < 1.1);
  }
}

TEST_CASE("backward sampling recovers a shifted mean") {
  GpSpec s = make_spec(1, 2);
  s.mu = Eigen::VectorXd(2);
  s.mu << 3.0, -1.0;
  TemporalKernel k = build_kernel(s);
  ScoreFn score = oracle_score_fn(s, k);
  DiffusionSchedule sched = DiffusionSchedule::geometric(8.0, 1e-3, 400);

  Eigen::MatrixXd x = backward_sample(sched, score, 4000, 11,
                                      Integrator::ddpm_exp);
  Eigen::VectorXd mean = x.rowwise().mean();
  CHECK((mean - alpha_of(1e-3) * s.mu).norm() < 0.1);
}

TEST_CASE("backward sampling is deterministic and thread-count independent") {
  GpSpec s = make_spec(2, 3);
  TemporalKernel k = build_kernel(s);
  ScoreFn score = oracle_score_fn(s, k);
  DiffusionSchedule sched = DiffusionSchedule::geometric(4.0, 1e-2, 50);

  Eigen::MatrixXd a = backward_sample(sched, score, 32, 7, Integrator::em, 1);
  Eigen::MatrixXd b = backward_sample(sched, score, 32, 7, Integrator::em, 4);
  CHECK((a - b).norm() == 0.0);

  Eigen::MatrixXd c = backward_sample(sched, score, 32, 7, Integrator::em, 1);
  CHECK((a - c).norm() == 0.0);

  Eigen::MatrixXd d = backward_sample(sched, score, 32, 8, Integrator::em, 1);
  CHECK((a - d).norm() > 1e-8);

  // Trajectory k depends only on (seed, k), not the batch size.
  Eigen::MatrixXd wide =
      backward_sample(sched, score, 48, 7, Integrator::em, 1);
  CHECK((wide.leftCols(32) - a).norm() == 0.0);
}

TEST_CASE("non-finite scores abort the integration with context") {
  GpSpec s = make_spec(1, 1);
  ScoreFn bad;
  bad.tag = "nan";
  bad.dim = 1;
  bad.eval = [](const Eigen::MatrixXd& x, double) {
    return Eigen::MatrixXd::Constant(x.rows(), x.cols(),
                                     std::nan(""));
  };
  DiffusionSchedule sched = DiffusionSchedule::geometric(1.0, 1e-2, 5);
  CHECK_THROWS_AS(backward_sample(sched, bad, 3, 1, Integrator::em),
                  std::runtime_error);
}

TEST_CASE("denoising loss of the oracle matches the Gaussian closed form") {
  // For the exact score, E||s(x_t) + z/sigma_t||^2 = dim/sigma_t^2 -
  // tr(A_t^{-1}) with A_t the noised covariance; integrating that integrand
  // with the same trapezoid weights gives the Monte-Carlo target.
  GpSpec s = make_spec(1, 3);
  s.nu = 2.0;
  TemporalKernel k = build_kernel(s);
  ScoreFn score = oracle_score_fn(s, k);
  DiffusionSchedule sched = DiffusionSchedule::geometric(4.0, 0.05, 60);

  Eigen::MatrixXd data = sample_gp(s, k, 400, 21);
  const double mc = denoising_loss(score, data, sched, 8, 17);

  Eigen::MatrixXd cov = kron_cov(k, s.sigma_or_identity());
  Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(3, 3);
  auto integrand = [&](double t) {
    Eigen::MatrixXd at =
        alpha_of(t) * alpha_of(t) * cov + sigma2_of(t) * eye;
    return 3.0 / sigma2_of(t) - at.inverse().trace();
  };
  double ref = 0.0;
  for (int i = 0; i + 1 < sched.grid.size(); ++i) {
    const double hi = sched.grid(i), lo = sched.grid(i + 1);
    ref += 0.5 * (integrand(hi) + integrand(lo)) * (hi - lo);
  }
  CHECK(mc == doctest::Approx(ref).epsilon(0.05));
}

TEST_CASE("denoising loss validates its inputs") {
  GpSpec s = make_spec(1, 2);
  TemporalKernel k = build_kernel(s);
  ScoreFn score = oracle_score_fn(s, k);
  DiffusionSchedule sched = DiffusionSchedule::geometric(1.0, 0.1, 4);
  Eigen::MatrixXd empty(2, 0);
  CHECK_THROWS_AS(denoising_loss(score, empty, sched, 4, 1),
                  std::invalid_argument);
  Eigen::MatrixXd wrong(3, 5);
  wrong.setZero();
  CHECK_THROWS_AS(denoising_loss(score, wrong, sched, 4, 1),
                  std::invalid_argument);
}

TEST_CASE("oracle score at t=0 reduces to the clean Gaussian score") {
  // With Gamma = Sigma = I the marginal at t = 0 is N(mu, I), whose score
  // is mu - x.
  GpSpec s = make_spec(2, 2);
  s.mu = Eigen::VectorXd::LinSpaced(4, -1.0, 0.5);
  TemporalKernel k;
  k.gamma = Eigen::VectorXd::Zero(2);
  k.gamma(0) = 1.0;
  ScoreFn score = oracle_score_fn(s, k);
  Eigen::MatrixXd x(4, 2);
  x << 0.3, 1.0, -0.2, 0.0, 0.7, -1.5, 0.1, 2.0;
  Eigen::MatrixXd got = score.eval(x, 0.0);
  Eigen::MatrixXd want = (-(x.colwise() - s.mu));
  CHECK((got - want).norm() <= 1e-12);
}
