#pragma once

#include <Eigen/Dense>
#include <vector>

#include "gpdit/diffusion.hpp"
#include "gpdit/gp.hpp"

namespace gpdit {

// Exact score of P_t at one point:
//   s = -(alpha_t^2 Gamma (x) Sigma + sigma_t^2 I)^{-1} (x - alpha_t mu).
// Dense Cholesky solve under the materialization cap, Kronecker
// eigendecomposition above it.
Eigen::VectorXd oracle_score(const GpSpec& spec, const TemporalKernel& kernel,
                             double t, const Eigen::VectorXd& x,
                             int cap = 4096);

struct TruncationResult {
  TemporalKernel kernel;  // gamma entries zeroed at gaps >= J
  int J = 0;
  double delta_frob = 0.0;  // exact || Gamma - Gamma_J ||_F
};

// Keeps the band |i-j| < J. delta_frob is computed from the closed form
// sum_{k=J}^{N-1} 2 (N-k) gamma_k^2.
TruncationResult truncate_kernel(const TemporalKernel& kernel, int J);

// Smallest J whose certified tail bound
//   c^{-nu} N ell exp(-2 c^nu (J-1)^nu / ell) <= target^2
// holds, clamped to [1, N]; target = eps when t < 0, else sigma_t^2 * eps so
// the truncation budget matches the end-to-end score bound at time t. If
// the banded kernel at the certified J is not PSD (within -1e-10), J grows
// until it is; J = N always succeeds because the full kernel is PSD.
int choose_J(const GpSpec& spec, const TemporalKernel& kernel, double eps,
             double t = -1.0);

// Gradient descent plan for the truncated quadratic objective
//   L(s) = (1/2) s' A s + (x - alpha mu)' s,
//   A = alpha_t^2 (Gamma_J (x) Sigma) + sigma_t^2 I.
// Eigenvalue extremes of A come from the Kronecker spectrum identity with
// lambda_min(Gamma_J) clamped at zero (PSD tolerance eats tiny negatives).
struct GdPlan {
  int J = 0;
  TemporalKernel gamma_bar;
  double t = 0.0;
  double eps = 0.0;
  double eta = 0.0;    // 2 / (lam_lo + lam_hi)
  double kappa = 1.0;  // lam_hi / lam_lo
  int K = 0;           // ceil((kappa + 1)/2 * log(1/eps))
  double lam_lo = 0.0;
  double lam_hi = 0.0;
  // Kronecker factors of the extremes, reused by the unrolled net to
  // recompute eta at other diffusion times.
  double kron_lo = 0.0;  // max(lambda_min(Gamma_J), 0) * lambda_min(Sigma)
  double kron_hi = 0.0;  // lambda_max(Gamma_J) * lambda_max(Sigma)
};

// Extremal eigenvalues of a symmetric matrix: dense solve for N <= 512,
// otherwise power iteration to 1e-8 residual.
std::pair<double, double> symmetric_spectrum_extremes(const Eigen::MatrixXd& m);

double eta_at(double kron_lo, double kron_hi, double t);
double kappa_at(double kron_lo, double kron_hi, double t);

GdPlan plan_gd(const GpSpec& spec, const TemporalKernel& gamma_bar, int J,
               double t, double eps, int K_override = -1);

double condition_number(const GpSpec& spec, const TemporalKernel& gamma_bar,
                        double t);

enum class GdMode { exact, per_patch };

// Iterate trajectory s^(0) = 0, ..., s^(K) of
//   s <- s - eta [A s + (x - alpha mu)].
// exact mode applies A through dense Kronecker matvecs; per_patch applies
// the banded per-patch sum over |i-j| < J. The two agree to 1e-12.
std::vector<Eigen::VectorXd> gd_score(const GdPlan& plan, const GpSpec& spec,
                                      const TemporalKernel& kernel, double t,
                                      const Eigen::VectorXd& x,
                                      GdMode mode = GdMode::exact);

// Minimizer of the truncated objective, solved directly.
Eigen::VectorXd solve_truncated_score(const GpSpec& spec,
                                      const TemporalKernel& gamma_bar,
                                      double t, const Eigen::VectorXd& x);

// Quadratic objective value at s.
double gd_objective(const GpSpec& spec, const TemporalKernel& gamma_bar,
                    double t, const Eigen::VectorXd& x,
                    const Eigen::VectorXd& s);

struct ScoreEvalReport {
  double t = 0.0;
  int J = 0;
  int K = 0;
  double kappa = 0.0;
  double err_l2 = 0.0;    // || s^(K) - oracle score ||_2
  double bound_e1 = 0.0;  // GD representation error sigma^{-2} ||x-a mu|| eps
  double bound_e2 = 0.0;  // truncation error via ||Sigma||_F ||dGamma||_F
  double contraction_measured = 0.0;
  double contraction_bound = 0.0;  // (kappa - 1)/(kappa + 1)
  double residual_norm = 0.0;      // || x - alpha mu ||_2
};

// Runs the GD iterates against the exact oracle and fills both error
// bounds. The report's defining inequality err_l2 <= e1 + e2 + 1e-9 is the
// caller's to assert; everything here is measurement.
ScoreEvalReport gd_error_report(const GdPlan& plan, const GpSpec& spec,
                              const TemporalKernel& kernel, double t,
                              const Eigen::VectorXd& x);

// Score function wrapper around the GD representation (fresh plan per t).
ScoreFn gd_score_fn(const GpSpec& spec, const TemporalKernel& kernel,
                    double eps, int J_override = -1, int K_override = -1);

}  // namespace gpdit
