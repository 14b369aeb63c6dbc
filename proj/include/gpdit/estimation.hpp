#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "gpdit/diffusion.hpp"
#include "gpdit/gp.hpp"

namespace gpdit {

// Empirical first and second moments of a batch (columns are samples,
// patch-major rows). sigma_hat holds the full dN x dN sample covariance with
// 1/n normalization; block (i, j) is the d x d cross-covariance of patches
// i and j.
struct CovEstimate {
  int d = 0;
  int N = 0;
  long n_used = 0;
  Eigen::VectorXd mu_hat;
  Eigen::MatrixXd sigma_hat;
  Eigen::MatrixXd sigma_pooled;  // average of the diagonal blocks

  Eigen::MatrixXd block(int i, int j) const;
};

CovEstimate estimate_cov(const Eigen::MatrixXd& batch, int d, int N);

// Per-pair least squares fit of the temporal kernel: the minimizer of
// || Sigma_hat_{i,j} - g Sigma ||_F is g = <Sigma_hat_{i,j}, Sigma> / ||Sigma||_F^2.
// The result is symmetrized; diagonal entries are estimated, not forced to 1.
Eigen::MatrixXd estimate_kernel(const CovEstimate& cov,
                                const Eigen::MatrixXd& sigma_true);

// || A (x) B - C (x) D ||_F^2 without materializing Kronecker products.
double kron_diff_frob2(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                       const Eigen::MatrixXd& c, const Eigen::MatrixXd& d);

struct RelativeErrorReport {
  double epsilon = 0.0;
  double raw_frob = 0.0;    // || Gamma_hat (x) Sigma_hat - Gamma (x) Sigma ||_F
  double truth_frob = 0.0;  // same metric for the ground-truth batch
};

// Relative error of a generated batch against an equal-size ground-truth
// batch: epsilon = raw_frob^2 / truth_frob^2. Sigma_hat is the pooled
// diagonal-block estimate.
RelativeErrorReport relative_error_report(const Eigen::MatrixXd& gen,
                                          const Eigen::MatrixXd& truth,
                                          const GpSpec& spec,
                                          const TemporalKernel& kernel);

double relative_error(const Eigen::MatrixXd& gen, const Eigen::MatrixXd& truth,
                      const GpSpec& spec, const TemporalKernel& kernel);

// Same metric against an arbitrary (not necessarily Toeplitz) ground truth,
// used to check invariance under simultaneous relabeling of patches.
double relative_error_general(const Eigen::MatrixXd& gen,
                              const Eigen::MatrixXd& truth, int d, int N,
                              const Eigen::MatrixXd& gamma_true,
                              const Eigen::MatrixXd& sigma_true);

struct SweepRow {
  long n = 0;
  double epsilon = 0.0;
  double raw_frob = 0.0;
};

// For each n: backward-sample n sequences with the given score, draw an
// independent ground-truth batch of the same size, and record the error
// metrics. Seeds for the two batches at step k derive from
// seed_split(seed, 2k) and seed_split(seed, 2k + 1).
std::vector<SweepRow> error_vs_n_sweep(const ScoreFn& score, const GpSpec& spec,
                                       const TemporalKernel& kernel,
                                       const DiffusionSchedule& schedule,
                                       const std::vector<long>& n_list,
                                       std::uint64_t seed,
                                       Integrator kind = Integrator::ddpm_exp,
                                       int threads = 1);

}  // namespace gpdit
