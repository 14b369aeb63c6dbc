#include "gpdit/diffusion.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>
#include <thread>
#include <vector>

#include "gpdit/rng.hpp"

namespace gpdit {

double alpha_of(double t) { return std::exp(-0.5 * t); }

double sigma2_of(double t) { return -std::expm1(-t); }

DiffusionSchedule DiffusionSchedule::geometric(double T, double t0,
                                               int steps) {
  if (!(T > 0.0) || !(t0 > 0.0) || !(t0 < T))
    throw std::invalid_argument("schedule requires 0 < t0 < T");
  if (steps < 1) throw std::invalid_argument("steps must be >= 1");
  DiffusionSchedule s;
  s.T = T;
  s.t0 = t0;
  s.steps = steps;
  s.grid.resize(steps + 1);
  const double log_T = std::log(T);
  const double log_t0 = std::log(t0);
  for (int k = 0; k <= steps; ++k) {
    s.grid[k] = std::exp(log_T + (log_t0 - log_T) * k / steps);
  }
  s.grid[0] = T;
  s.grid[steps] = t0;
  return s;
}

std::string integrator_name(Integrator kind) {
  return kind == Integrator::em ? "em" : "ddpm_exp";
}

Integrator integrator_from_name(const std::string& name) {
  if (name == "em") return Integrator::em;
  if (name == "ddpm_exp") return Integrator::ddpm_exp;
  throw std::invalid_argument("unknown integrator: " + name);
}

ScoreFn oracle_score_fn(const GpSpec& spec, const TemporalKernel& kernel) {
  spec.validate();
  const int d = spec.d;
  const int N = spec.N;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_sigma(
      spec.sigma_or_identity());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_gamma(kernel.toeplitz());
  if (es_sigma.info() != Eigen::Success || es_gamma.info() != Eigen::Success)
    throw std::runtime_error("oracle_score_fn: eigensolver failed");
  const Eigen::MatrixXd u_s = es_sigma.eigenvectors();
  const Eigen::MatrixXd u_g = es_gamma.eigenvectors();
  const Eigen::VectorXd lam_s = es_sigma.eigenvalues();
  const Eigen::VectorXd lam_g = es_gamma.eigenvalues();
  const Eigen::VectorXd mu = spec.mu_or_zero();

  ScoreFn fn;
  fn.tag = "oracle";
  fn.dim = spec.dim();
  fn.eval = [d, N, u_s, u_g, lam_s, lam_g, mu](const Eigen::MatrixXd& x,
                                               double t) -> Eigen::MatrixXd {
    const double a2 = alpha_of(t) * alpha_of(t);
    const double s2 = sigma2_of(t);
    if (s2 <= 0.0 && lam_g.minCoeff() * lam_s.minCoeff() <= 0.0)
      throw std::invalid_argument("oracle score undefined at t = 0 for a "
                                  "singular covariance");
    Eigen::MatrixXd out(x.rows(), x.cols());
    for (int col = 0; col < x.cols(); ++col) {
      Eigen::VectorXd res = x.col(col) - alpha_of(t) * mu;
      Eigen::Map<const Eigen::MatrixXd> v(res.data(), d, N);
      Eigen::MatrixXd w = u_s.transpose() * v * u_g;
      for (int j = 0; j < N; ++j) {
        for (int i = 0; i < d; ++i) {
          w(i, j) /= a2 * lam_s[i] * lam_g[j] + s2;
        }
      }
      Eigen::MatrixXd sm = -(u_s * w * u_g.transpose());
      out.col(col) = Eigen::Map<Eigen::VectorXd>(sm.data(), x.rows());
    }
    return out;
  };
  return fn;
}

Eigen::MatrixXd forward_marginal_sample(const GpSpec& spec,
                                        const TemporalKernel& kernel,
                                        double t, int n, std::uint64_t seed) {
  spec.validate();
  if (t < 0.0) throw std::invalid_argument("t must be >= 0");
  const int d = spec.d;
  const int N = spec.N;
  const double alpha = alpha_of(t);
  const double sigma = std::sqrt(sigma2_of(t));
  const Eigen::MatrixXd l_sigma = psd_sqrt(spec.sigma_or_identity());
  const Eigen::MatrixXd l_gamma = psd_sqrt(kernel.toeplitz());
  const Eigen::VectorXd mu = spec.mu_or_zero();
  Eigen::MatrixXd out(spec.dim(), n);
  for (int k = 0; k < n; ++k) {
    SplitMix64 rng(seed_split(seed, static_cast<std::uint64_t>(k)));
    Eigen::MatrixXd z(d, N);
    for (int i = 0; i < N; ++i) {
      for (int a = 0; a < d; ++a) z(a, i) = rng.next_gaussian();
    }
    Eigen::MatrixXd clean = l_sigma * z * l_gamma.transpose();
    Eigen::VectorXd x0 =
        mu + Eigen::Map<Eigen::VectorXd>(clean.data(), spec.dim());
    Eigen::VectorXd noise(spec.dim());
    for (int i = 0; i < spec.dim(); ++i) noise[i] = rng.next_gaussian();
    out.col(k) = alpha * x0 + sigma * noise;
  }
  return out;
}

Eigen::MatrixXd backward_sample(const DiffusionSchedule& schedule,
                                const ScoreFn& score, int n,
                                std::uint64_t seed, Integrator kind,
                                int threads) {
  if (score.dim < 1) throw std::invalid_argument("score.dim must be set");
  if (n < 0) throw std::invalid_argument("n must be >= 0");
  const int dim = score.dim;
  Eigen::MatrixXd state(dim, n);
  std::atomic<long> first_bad_step{-1};

  auto run_range = [&](int j0, int j1) {
    if (j0 >= j1) return;
    const int cnt = j1 - j0;
    std::vector<SplitMix64> rng;
    rng.reserve(cnt);
    for (int j = j0; j < j1; ++j)
      rng.emplace_back(seed_split(seed, static_cast<std::uint64_t>(j)));
    Eigen::MatrixXd x(dim, cnt);
    for (int j = 0; j < cnt; ++j) {
      for (int i = 0; i < dim; ++i) x(i, j) = rng[j].next_gaussian();
    }
    Eigen::MatrixXd z(dim, cnt);
    for (int k = 0; k < schedule.steps; ++k) {
      const double t_hi = schedule.grid[k];
      const double t_lo = schedule.grid[k + 1];
      const double h = t_hi - t_lo;
      Eigen::MatrixXd s = score.eval(x, t_hi);
      for (int j = 0; j < cnt; ++j) {
        for (int i = 0; i < dim; ++i) z(i, j) = rng[j].next_gaussian();
      }
      if (kind == Integrator::em) {
        x += h * (0.5 * x + s) + std::sqrt(h) * z;
      } else {
        const double growth = std::exp(0.5 * h);
        const double noise = std::sqrt(std::expm1(h));
        x = growth * x + 2.0 * (growth - 1.0) * s + noise * z;
      }
      if (!x.allFinite()) {
        long expected = -1;
        first_bad_step.compare_exchange_strong(expected, k);
        return;
      }
    }
    state.middleCols(j0, cnt) = x;
  };

  const int nthreads = std::max(1, std::min(threads, n == 0 ? 1 : n));
  if (nthreads == 1) {
    run_range(0, n);
  } else {
    std::vector<std::thread> pool;
    const int chunk = (n + nthreads - 1) / nthreads;
    for (int w = 0; w < nthreads; ++w) {
      const int j0 = w * chunk;
      const int j1 = std::min(n, j0 + chunk);
      pool.emplace_back(run_range, j0, j1);
    }
    for (auto& th : pool) th.join();
  }
  if (first_bad_step.load() >= 0)
    throw std::runtime_error("backward_sample: non-finite state at step " +
                             std::to_string(first_bad_step.load()));
  return state;
}

double denoising_loss(const ScoreFn& score, const Eigen::MatrixXd& data,
                      const DiffusionSchedule& schedule, int mc_nodes,
                      std::uint64_t seed) {
  const int n = static_cast<int>(data.cols());
  const int dim = static_cast<int>(data.rows());
  if (n < 1) throw std::invalid_argument("denoising_loss: data is empty");
  if (dim != score.dim)
    throw std::invalid_argument("denoising_loss: dimension mismatch");
  if (mc_nodes < 1) throw std::invalid_argument("mc_nodes must be >= 1");

  std::vector<SplitMix64> rng;
  rng.reserve(n);
  for (int i = 0; i < n; ++i)
    rng.emplace_back(seed_split(seed, static_cast<std::uint64_t>(i)));

  const int cols = n * mc_nodes;
  Eigen::MatrixXd z(dim, cols);
  Eigen::MatrixXd xt(dim, cols);
  Eigen::VectorXd integrand(schedule.steps + 1);
  for (int g = 0; g <= schedule.steps; ++g) {
    const double t = schedule.grid[g];
    const double alpha = alpha_of(t);
    const double sigma = std::sqrt(sigma2_of(t));
    for (int i = 0; i < n; ++i) {
      for (int m = 0; m < mc_nodes; ++m) {
        const int col = i * mc_nodes + m;
        for (int row = 0; row < dim; ++row) z(row, col) = rng[i].next_gaussian();
        xt.col(col) = alpha * data.col(i) + sigma * z.col(col);
      }
    }
    const Eigen::MatrixXd s = score.eval(xt, t);
    // Regression target (alpha x0 - x_t)/sigma^2 reduces to -z/sigma.
    integrand[g] = (s + z / sigma).colwise().squaredNorm().mean();
  }
  double loss = 0.0;
  for (int k = 0; k < schedule.steps; ++k) {
    const double width = schedule.grid[k] - schedule.grid[k + 1];
    loss += 0.5 * width * (integrand[k] + integrand[k + 1]);
  }
  return loss;
}

}  // namespace gpdit
