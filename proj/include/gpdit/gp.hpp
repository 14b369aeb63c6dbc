#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>

namespace gpdit {

enum class KernelMode { embedding, index };

std::string kernel_mode_name(KernelMode mode);
KernelMode kernel_mode_from_name(const std::string& name);

// A stationary Gaussian process over N time indices, each observation a
// d-dimensional patch. The dN-dimensional joint covariance is Gamma (x) Sigma
// with Gamma an N x N Toeplitz correlation matrix and Sigma a d x d SPD
// within-patch covariance. Sequences stack patches: x = [x_1; ...; x_N].
struct GpSpec {
  int d = 1;
  int N = 1;
  double nu = 2.0;   // decay exponent, in [1, 2]
  double ell = 1.0;  // decay length, > 0
  KernelMode mode = KernelMode::embedding;
  double r = 1.0;  // embedding radius
  int period = 0;  // sinusoidal period C; 0 selects the default 4N
  Eigen::VectorXd mu;     // size dN; empty means zero mean
  Eigen::MatrixXd sigma;  // d x d SPD; empty means identity

  int dim() const { return d * N; }
  int period_or_default() const { return period > 0 ? period : 4 * N; }
  Eigen::VectorXd mu_or_zero() const;
  Eigen::MatrixXd sigma_or_identity() const;
  // Throws std::invalid_argument on any violated constraint.
  void validate() const;
};

// Sinusoidal index embeddings e_i on a circle of radius r: consecutive
// indices are spaced by the angle 2*pi/C, so the chord length between
// indices i and j is f(|i-j|) = 2 r sin(|i-j| pi / C), strictly increasing
// in the gap as long as C >= 2(N-1), and bounded below by c*|i-j| with
// c = 4r/C for gaps up to C/2.
struct TimeEmbeddings {
  int N = 0;
  int period = 0;
  double r = 1.0;
  double c = 0.0;      // 4r/C
  double delta = 0.0;  // min over k of f2(k+1) - f2(k); equals f2(1) here
  Eigen::MatrixXd e;   // 2 x N, column i = [r sin(2 i pi / C), r cos(...)]

  double f(int gap) const;   // chord length at the given index gap
  double f2(int gap) const;  // f(gap)^2 via the exact closed form
  // Exact inner product e_i . e_j = r^2 - f2(|i-j|)/2.
  double dot(int i, int j) const;
};

// Toeplitz temporal kernel: gamma[m] is the correlation at index gap m.
struct TemporalKernel {
  Eigen::VectorXd gamma;  // size N, gamma[0] = 1
  double c_eff = 1.0;     // distance constant: 4r/C in embedding mode, 1 in
                          // index mode (used by truncation certificates)
  int size() const { return static_cast<int>(gamma.size()); }
  Eigen::MatrixXd toeplitz() const;  // dense N x N view
};

struct DiagDominanceReport {
  bool dominant = false;
  double margin = 0.0;        // 1 - 2 * sum_{k>=1} gamma_k
  double offdiag_sum = 0.0;   // 2 * sum_{k>=1} gamma_k
};

TimeEmbeddings build_embeddings(const GpSpec& spec);

// gamma_m = exp(-f(m)^nu / ell) in embedding mode, exp(-m^nu / ell) in
// index mode.
TemporalKernel build_kernel(const GpSpec& spec, const TimeEmbeddings& emb);
TemporalKernel build_kernel(const GpSpec& spec);

DiagDominanceReport check_diag_dominance(const TemporalKernel& kernel);

// Dense Gamma (x) Sigma. Refuses to materialize above the cap: desk-scale
// analysis only; larger systems go through kron_matvec.
Eigen::MatrixXd kron_cov(const TemporalKernel& kernel,
                         const Eigen::MatrixXd& sigma, int cap = 4096);

// (Gamma (x) Sigma) x without materialization; x is dN (or dN x batch),
// patch-major. Equals Sigma * X * Gamma on the d x N reshape of each column.
Eigen::MatrixXd kron_matvec(const TemporalKernel& kernel,
                            const Eigen::MatrixXd& sigma,
                            const Eigen::MatrixXd& x);

// Square root factor L of a symmetric PSD matrix: Cholesky when positive
// definite, eigen square root with eigenvalues clamped at zero when the
// smallest eigenvalue is within -1e-10; anything lower throws.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m);

// n i.i.d. sequences, one per column of the dN x n result: mu + L z with
// L the Cholesky factor of Gamma (x) Sigma applied in Kronecker form and z
// standard normal. Sample k draws from the stream seed_split(seed, k), its
// z filled patch-major, so output is independent of evaluation order.
Eigen::MatrixXd sample_gp(const GpSpec& spec, const TemporalKernel& kernel,
                          int n, std::uint64_t seed);

}  // namespace gpdit
