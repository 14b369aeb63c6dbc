#include "gpdit/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "gpdit/rng.hpp"

namespace gpdit {

Eigen::MatrixXd CovEstimate::block(int i, int j) const {
  return sigma_hat.block(static_cast<Eigen::Index>(i) * d,
                         static_cast<Eigen::Index>(j) * d, d, d);
}

CovEstimate estimate_cov(const Eigen::MatrixXd& batch, int d, int N) {
  const Eigen::Index dim = static_cast<Eigen::Index>(d) * N;
  if (batch.rows() != dim) {
    throw std::invalid_argument("estimate_cov: batch rows do not match d * N");
  }
  const Eigen::Index n = batch.cols();
  if (n < 2) {
    throw std::invalid_argument("estimate_cov: need at least two samples");
  }
  CovEstimate est;
  est.d = d;
  est.N = N;
  est.n_used = static_cast<long>(n);
  est.mu_hat = batch.rowwise().mean();
  Eigen::MatrixXd centered = batch.colwise() - est.mu_hat;
  est.sigma_hat.noalias() = centered * centered.transpose();
  est.sigma_hat /= static_cast<double>(n);
  est.sigma_pooled = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < N; ++i) {
    est.sigma_pooled += est.sigma_hat.block(static_cast<Eigen::Index>(i) * d,
                                            static_cast<Eigen::Index>(i) * d,
                                            d, d);
  }
  est.sigma_pooled /= static_cast<double>(N);
  return est;
}

Eigen::MatrixXd estimate_kernel(const CovEstimate& cov,
                                const Eigen::MatrixXd& sigma_true) {
  double denom = sigma_true.squaredNorm();
  if (denom <= 0.0) {
    throw std::invalid_argument("estimate_kernel: zero patch covariance");
  }
  Eigen::MatrixXd gamma(cov.N, cov.N);
  for (int i = 0; i < cov.N; ++i) {
    for (int j = 0; j < cov.N; ++j) {
      gamma(i, j) = cov.block(i, j).cwiseProduct(sigma_true).sum() / denom;
    }
  }
  return 0.5 * (gamma + gamma.transpose().eval());
}

double kron_diff_frob2(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                       const Eigen::MatrixXd& c, const Eigen::MatrixXd& d) {
  double v = a.squaredNorm() * b.squaredNorm() -
             2.0 * a.cwiseProduct(c).sum() * b.cwiseProduct(d).sum() +
             c.squaredNorm() * d.squaredNorm();
  return std::max(v, 0.0);
}

namespace {

RelativeErrorReport relative_error_core(const Eigen::MatrixXd& gen,
                                        const Eigen::MatrixXd& truth, int d,
                                        int N,
                                        const Eigen::MatrixXd& gamma_true,
                                        const Eigen::MatrixXd& sigma_true) {
  if (gen.cols() != truth.cols()) {
    throw std::invalid_argument(
        "relative_error: generated and truth batches must have equal size");
  }
  CovEstimate eg = estimate_cov(gen, d, N);
  CovEstimate et = estimate_cov(truth, d, N);
  Eigen::MatrixXd gg = estimate_kernel(eg, sigma_true);
  Eigen::MatrixXd gt = estimate_kernel(et, sigma_true);
  RelativeErrorReport rep;
  double num = kron_diff_frob2(gg, eg.sigma_pooled, gamma_true, sigma_true);
  double den = kron_diff_frob2(gt, et.sigma_pooled, gamma_true, sigma_true);
  rep.raw_frob = std::sqrt(num);
  rep.truth_frob = std::sqrt(den);
  if (den <= 0.0) {
    throw std::runtime_error(
        "relative_error: degenerate truth batch (zero baseline error)");
  }
  rep.epsilon = num / den;
  return rep;
}

}  // namespace

RelativeErrorReport relative_error_report(const Eigen::MatrixXd& gen,
                                          const Eigen::MatrixXd& truth,
                                          const GpSpec& spec,
                                          const TemporalKernel& kernel) {
  return relative_error_core(gen, truth, spec.d, spec.N, kernel.toeplitz(),
                             spec.sigma_or_identity());
}

double relative_error(const Eigen::MatrixXd& gen, const Eigen::MatrixXd& truth,
                      const GpSpec& spec, const TemporalKernel& kernel) {
  return relative_error_report(gen, truth, spec, kernel).epsilon;
}

double relative_error_general(const Eigen::MatrixXd& gen,
                              const Eigen::MatrixXd& truth, int d, int N,
                              const Eigen::MatrixXd& gamma_true,
                              const Eigen::MatrixXd& sigma_true) {
  return relative_error_core(gen, truth, d, N, gamma_true, sigma_true).epsilon;
}

std::vector<SweepRow> error_vs_n_sweep(const ScoreFn& score, const GpSpec& spec,
                                       const TemporalKernel& kernel,
                                       const DiffusionSchedule& schedule,
                                       const std::vector<long>& n_list,
                                       std::uint64_t seed, Integrator kind,
                                       int threads) {
  if (n_list.empty() || n_list.front() <= 0) {
    throw std::invalid_argument(
        "error_vs_n_sweep: n_list must hold positive sample counts");
  }
  for (std::size_t k = 1; k < n_list.size(); ++k) {
    if (n_list[k] <= n_list[k - 1]) {
      throw std::invalid_argument("error_vs_n_sweep: n_list must increase");
    }
  }
  std::vector<SweepRow> rows;
  rows.reserve(n_list.size());
  for (std::size_t k = 0; k < n_list.size(); ++k) {
    int n = static_cast<int>(n_list[k]);
    Eigen::MatrixXd gen = backward_sample(
        schedule, score, n, seed_split(seed, 2 * k), kind, threads);
    Eigen::MatrixXd truth =
        sample_gp(spec, kernel, n, seed_split(seed, 2 * k + 1));
    RelativeErrorReport rep = relative_error_report(gen, truth, spec, kernel);
    rows.push_back({n_list[k], rep.epsilon, rep.raw_frob});
  }
  return rows;
}

}  // namespace gpdit
