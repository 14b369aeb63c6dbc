#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>

#include "gpdit/gp.hpp"

namespace gpdit {

// Ornstein-Uhlenbeck forward noising: dX = -X/2 dt + dW, so
// alpha_t = e^{-t/2}, sigma_t^2 = 1 - e^{-t}, and alpha^2 + sigma^2 = 1.
double alpha_of(double t);
double sigma2_of(double t);

// Backward-time grid from T down to t0, geometric in t (uniform in log t):
// score stiffness grows like sigma_t^{-2} near t0, so steps concentrate
// there.
struct DiffusionSchedule {
  double T = 1.0;
  double t0 = 1e-3;
  int steps = 500;
  Eigen::VectorXd grid;  // size steps+1, grid[0] = T, grid[steps] = t0

  static DiffusionSchedule geometric(double T, double t0, int steps);
};

enum class Integrator { em, ddpm_exp };
std::string integrator_name(Integrator kind);
Integrator integrator_from_name(const std::string& name);

// A score function evaluated on a batch: X is dN x batch, result same shape.
struct ScoreFn {
  std::string tag;  // oracle | gd | unrolled_relu | unrolled_softmax
  int dim = 0;
  std::function<Eigen::MatrixXd(const Eigen::MatrixXd& x, double t)> eval;
};

// Exact score of the Gaussian marginal P_t = N(alpha_t mu,
// alpha_t^2 Gamma (x) Sigma + sigma_t^2 I), via the Kronecker
// eigendecomposition so one factorization serves every t.
ScoreFn oracle_score_fn(const GpSpec& spec, const TemporalKernel& kernel);

// Exact draws from P_t: clean sample then Gaussian corruption
// x_t = alpha_t x_0 + sigma_t z. Per-sample streams; each stream serves the
// clean draw first, the corruption second.
Eigen::MatrixXd forward_marginal_sample(const GpSpec& spec,
                                        const TemporalKernel& kernel,
                                        double t, int n, std::uint64_t seed);

// Integrates the time-reversed SDE dX = [X/2 + s(X, t)] dt + dW from
// X ~ N(0, I) at time T down to t0, returning the n terminal states
// (dim x n). em takes Euler-Maruyama steps; ddpm_exp freezes the score over
// each step and solves the remaining linear SDE exactly:
//   x <- e^{h/2} x + 2(e^{h/2} - 1) s + sqrt(e^h - 1) z.
// Trajectory k draws all its noise from seed_split(seed, k) in step order,
// so results are independent of batch layout and thread count.
Eigen::MatrixXd backward_sample(const DiffusionSchedule& schedule,
                                const ScoreFn& score, int n,
                                std::uint64_t seed, Integrator kind,
                                int threads = 1);

// Monte-Carlo denoising objective over clean data (dim x n): per sample and
// grid time, mc_nodes Gaussian corruptions are scored against the
// regression target (alpha_t x0 - x_t)/sigma_t^2 = -z/sigma_t, then the
// squared errors are integrated over t by the trapezoid rule on the grid.
double denoising_loss(const ScoreFn& score, const Eigen::MatrixXd& data,
                      const DiffusionSchedule& schedule, int mc_nodes,
                      std::uint64_t seed);

}  // namespace gpdit
