#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gpdit/gp.hpp"
#include "gpdit/rng.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

using namespace gpdit;

namespace {

GpSpec basic_spec(int d, int N) {
  GpSpec s;
  s.d = d;
  s.N = N;
  s.nu = 1.0;
  s.ell = 1.0;
  s.mode = KernelMode::embedding;
  return s;
}

Eigen::MatrixXd random_spd(int d, std::uint64_t seed, double boost = 0.5) {
  SplitMix64 g(seed);
  Eigen::MatrixXd m(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = g.next_gaussian();
  return m * m.transpose() + boost * Eigen::MatrixXd::Identity(d, d);
}

}  // namespace

TEST_CASE("embedding coordinates and chord lengths match closed forms") {
  GpSpec s = basic_spec(1, 4);
  s.r = 1.0;
  s.period = 16;
  TimeEmbeddings emb = build_embeddings(s);

  CHECK(emb.N == 4);
  CHECK(emb.period == 16);
  CHECK(emb.c == doctest::Approx(0.25).epsilon(1e-15));

  const double pi = std::acos(-1.0);
  for (int i = 0; i < 4; ++i) {
    CHECK(emb.e(0, i) == doctest::Approx(std::sin(2.0 * i * pi / 16)).epsilon(1e-15));
    CHECK(emb.e(1, i) == doctest::Approx(std::cos(2.0 * i * pi / 16)).epsilon(1e-15));
  }

  // f(1) = 2 sin(pi/16).
  CHECK(emb.f(1) == doctest::Approx(0.39018064403225655).epsilon(1e-15));
  CHECK(emb.f(0) == 0.0);
  CHECK(emb.f2(1) == doctest::Approx(emb.f(1) * emb.f(1)).epsilon(1e-15));
  CHECK(emb.delta == doctest::Approx(emb.f2(1)).epsilon(1e-15));
}

TEST_CASE("embedding dot products satisfy the chord identity") {
  GpSpec s = basic_spec(1, 8);
  s.r = 1.5;
  TimeEmbeddings emb = build_embeddings(s);
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 8; ++j) {
      const double direct = emb.e.col(i).dot(emb.e.col(j));
      const double claimed = emb.dot(i, j);
      CHECK(direct == doctest::Approx(claimed).epsilon(1e-14));
      const double via_f2 = s.r * s.r - emb.f2(std::abs(i - j)) / 2.0;
      CHECK(claimed == doctest::Approx(via_f2).epsilon(1e-14));
    }
  }
}

TEST_CASE("periods shorter than 2(N-1) are rejected") {
  GpSpec ok = basic_spec(1, 8);
  ok.period = 14;
  CHECK_NOTHROW(ok.validate());

  GpSpec bad = basic_spec(1, 8);
  bad.period = 13;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("index-mode kernel matches the exponential closed form") {
  GpSpec s = basic_spec(1, 6);
  s.mode = KernelMode::index;
  s.nu = 1.0;
  s.ell = 1.0;
  TemporalKernel k = build_kernel(s);
  CHECK(k.size() == 6);
  CHECK(k.gamma(0) == 1.0);
  CHECK(k.gamma(2) == doctest::Approx(0.1353352832366127).epsilon(1e-15));
  CHECK(k.c_eff == 1.0);

  s.nu = 2.0;
  s.ell = 4.0;
  TemporalKernel k2 = build_kernel(s);
  CHECK(k2.gamma(3) == doctest::Approx(std::exp(-9.0 / 4.0)).epsilon(1e-15));
}

TEST_CASE("embedding-mode kernel uses chord distances") {
  GpSpec s = basic_spec(1, 5);
  s.nu = 2.0;
  s.ell = 0.7;
  TimeEmbeddings emb = build_embeddings(s);
  TemporalKernel k = build_kernel(s, emb);
  for (int m = 0; m < 5; ++m) {
    CHECK(k.gamma(m) ==
          doctest::Approx(std::exp(-std::pow(emb.f(m), 2.0) / 0.7)).epsilon(1e-14));
  }
  CHECK(k.c_eff == doctest::Approx(emb.c).epsilon(1e-15));
}

TEST_CASE("diagonal dominance report matches geometric sums at N=128") {
  GpSpec s = basic_spec(1, 128);
  s.mode = KernelMode::index;
  s.nu = 1.0;

  s.ell = 1.0;
  DiagDominanceReport r1 = check_diag_dominance(build_kernel(s));
  // 2 sum_{k>=1} e^{-k} = 2/(e-1) up to an e^{-128} tail.
  CHECK(r1.offdiag_sum == doctest::Approx(1.1639534137386528).epsilon(1e-12));
  CHECK_FALSE(r1.dominant);
  CHECK(r1.margin < 0.0);

  s.ell = 0.5;
  DiagDominanceReport r2 = check_diag_dominance(build_kernel(s));
  CHECK(r2.offdiag_sum == doctest::Approx(0.31303528549933135).epsilon(1e-12));
  CHECK(r2.dominant);
  CHECK(r2.margin == doctest::Approx(1.0 - r2.offdiag_sum).epsilon(1e-12));
}

TEST_CASE("kron_cov lays out gamma against sigma blockwise") {
  const int d = 2, N = 3;
  GpSpec s = basic_spec(d, N);
  TemporalKernel k = build_kernel(s);
  Eigen::MatrixXd sigma = random_spd(d, 11);
  Eigen::MatrixXd big = kron_cov(k, sigma);
  REQUIRE(big.rows() == d * N);
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) {
      Eigen::MatrixXd blk = big.block(i * d, j * d, d, d);
      CHECK((blk - k.gamma(std::abs(i - j)) * sigma).norm() <= 1e-15);
    }
  }
}

TEST_CASE("kron_cov with identity kernel is block diagonal") {
  TemporalKernel k;
  k.gamma = Eigen::VectorXd::Zero(3);
  k.gamma(0) = 1.0;
  Eigen::MatrixXd sigma = random_spd(2, 3);
  Eigen::MatrixXd big = kron_cov(k, sigma);
  Eigen::MatrixXd expect = Eigen::MatrixXd::Zero(6, 6);
  for (int i = 0; i < 3; ++i) expect.block(2 * i, 2 * i, 2, 2) = sigma;
  CHECK((big - expect).norm() <= 1e-15);
}

TEST_CASE("kron_cov refuses dimensions above the cap") {
  GpSpec s = basic_spec(2, 3);
  TemporalKernel k = build_kernel(s);
  CHECK_THROWS(kron_cov(k, s.sigma_or_identity(), 4));
}

TEST_CASE("kron_matvec agrees with the dense product") {
  const int d = 3, N = 5;
  GpSpec s = basic_spec(d, N);
  s.nu = 2.0;
  TemporalKernel k = build_kernel(s);
  Eigen::MatrixXd sigma = random_spd(d, 21);
  Eigen::MatrixXd dense = kron_cov(k, sigma);

  SplitMix64 g(77);
  Eigen::MatrixXd x(d * N, 4);
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j) x(i, j) = g.next_gaussian();

  Eigen::MatrixXd fast = kron_matvec(k, sigma, x);
  CHECK((fast - dense * x).norm() <= 1e-12 * dense.norm() * x.norm());
}

TEST_CASE("psd_sqrt factors SPD and PSD matrices and rejects indefinite ones") {
  Eigen::MatrixXd a = random_spd(4, 31);
  Eigen::MatrixXd la = psd_sqrt(a);
  CHECK((la * la.transpose() - a).norm() <= 1e-12 * a.norm());

  // Rank-one PSD matrix forces the eigen fallback.
  Eigen::VectorXd v(3);
  v << 1.0, -2.0, 0.5;
  Eigen::MatrixXd p = v * v.transpose();
  Eigen::MatrixXd lp = psd_sqrt(p);
  CHECK((lp * lp.transpose() - p).norm() <= 1e-10 * p.norm());

  CHECK_THROWS(psd_sqrt(-Eigen::MatrixXd::Identity(2, 2)));
}

TEST_CASE("sample_gp is deterministic and stable under batch growth") {
  GpSpec s = basic_spec(2, 4);
  s.sigma = random_spd(2, 41);
  TemporalKernel k = build_kernel(s);

  Eigen::MatrixXd a = sample_gp(s, k, 5, 123);
  Eigen::MatrixXd b = sample_gp(s, k, 5, 123);
  CHECK((a - b).norm() == 0.0);

  // Column k depends only on (seed, k), not on the batch size.
  Eigen::MatrixXd c = sample_gp(s, k, 9, 123);
  CHECK((c.leftCols(5) - a).norm() == 0.0);

  Eigen::MatrixXd other = sample_gp(s, k, 5, 124);
  CHECK((other - a).norm() > 1e-6);
}

TEST_CASE("sample_gp draws concentrate on the target covariance and mean") {
  const int d = 2, N = 2;
  GpSpec s = basic_spec(d, N);
  s.sigma = random_spd(d, 51);
  s.mu = Eigen::VectorXd::LinSpaced(d * N, -1.0, 2.0);
  TemporalKernel k = build_kernel(s);
  Eigen::MatrixXd cov = kron_cov(k, s.sigma);

  const int n = 20000;
  Eigen::MatrixXd x = sample_gp(s, k, n, 7);
  Eigen::VectorXd mean = x.rowwise().mean();
  Eigen::MatrixXd centered = x.colwise() - mean;
  Eigen::MatrixXd hat = centered * centered.transpose() / double(n);

  // Gaussian sample covariance: E||hat - cov||_F^2 <= (tr^2 + ||cov||^2)/n.
  const double scale =
      std::sqrt((cov.trace() * cov.trace() + cov.squaredNorm()) / n);
  CHECK((hat - cov).norm() <= 5.0 * scale);
  CHECK((mean - s.mu).norm() <=
        5.0 * std::sqrt(cov.trace() / n));
}

TEST_CASE("spec validation rejects malformed inputs") {
  CHECK_NOTHROW(basic_spec(2, 4).validate());

  GpSpec s = basic_spec(0, 4);
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = basic_spec(2, 0);
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = basic_spec(2, 4);
  s.nu = 0.5;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = basic_spec(2, 4);
  s.nu = 2.5;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = basic_spec(2, 4);
  s.ell = 0.0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = basic_spec(2, 4);
  s.r = 0.0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = basic_spec(2, 4);
  s.mu = Eigen::VectorXd::Zero(7);
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = basic_spec(2, 4);
  s.sigma = Eigen::MatrixXd::Zero(3, 3);
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("empty mean and covariance default to zero and identity") {
  GpSpec s = basic_spec(3, 2);
  CHECK(s.mu_or_zero().size() == 6);
  CHECK(s.mu_or_zero().norm() == 0.0);
  CHECK((s.sigma_or_identity() - Eigen::MatrixXd::Identity(3, 3)).norm() == 0.0);
}

TEST_CASE("kernel mode names round-trip") {
  CHECK(kernel_mode_from_name(kernel_mode_name(KernelMode::embedding)) ==
        KernelMode::embedding);
  CHECK(kernel_mode_from_name(kernel_mode_name(KernelMode::index)) ==
        KernelMode::index);
  CHECK_THROWS(kernel_mode_from_name("fourier"));
}
