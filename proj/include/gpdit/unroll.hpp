#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <string>
#include <utility>
#include <vector>

#include "gpdit/diffusion.hpp"
#include "gpdit/gp.hpp"

namespace gpdit {

// Column i of a TokenMatrix is the token of patch i. Slots, in row order:
//   x (d)        raw input patch
//   e (2)        index embedding
//   phi (4)      diffusion-time scalars [eta_t, alpha_t, sigma_t^2, alpha_t^2]
//   s (d)        current score iterate
//   buf_a (d)    alpha_t^2-scaled iterate (attention input)
//   buf_b (d)    sigma_t^2-scaled iterate
//   buf_c (d)    attention accumulator
//   mu (d)       mean patch (alpha_t-scaled after the first block)
//   one (1)      constant 1, carries scalar offsets into attention scores
//   ws (3d)      multiplication workspace; the softmax variant reserves the
//                first cell for the attention normalizer and the last for
//                the integer patch index until that normalizer is built
struct TokenLayout {
  int d = 0;
  bool softmax_variant = false;
  static constexpr int d_e = 2;
  static constexpr int d_t = 4;

  int D() const { return 9 * d + d_e + d_t + 1; }
  int off_x() const { return 0; }
  int off_e() const { return d; }
  int off_phi() const { return d + d_e; }
  int off_s() const { return d + d_e + d_t; }
  int off_a() const { return off_s() + d; }
  int off_b() const { return off_s() + 2 * d; }
  int off_c() const { return off_s() + 3 * d; }
  int off_mu() const { return off_s() + 4 * d; }
  int off_one() const { return off_s() + 5 * d; }
  int off_ws() const { return off_one() + 1; }
  int phi_eta() const { return off_phi(); }
  int phi_alpha() const { return off_phi() + 1; }
  int phi_sigma2() const { return off_phi() + 2; }
  int phi_alpha2() const { return off_phi() + 3; }
  int dhat_cell() const { return off_ws(); }
  int idx_cell() const { return off_ws() + 3 * d - 1; }
};

struct Trip {
  int row = 0;
  int col = 0;
  double val = 0.0;
};

enum class Activation { relu, softmax };

// One attention head. Q'K is diagonal on the embedding block (coefficient
// qk_e) plus a scalar at (one, one) (qk_one), so the pre-activation score
// between tokens j and i is qk_e * (e_j . e_i) + qk_one. V reads d rows at
// v_src and writes v * (that patch) into d rows at v_dst.
struct AttentionHead {
  double qk_e = 0.0;
  double qk_one = 0.0;
  int v_src = 0;
  int v_dst = 0;
  Eigen::MatrixXd v;

  Eigen::MatrixXd qk_dense(const TokenLayout& layout) const;
  Eigen::MatrixXd v_dense(const TokenLayout& layout) const;
};

// Residual feed-forward sublayer: y += w2 * relu(w1 y + b2) + b1 per token.
struct FfnWeights {
  int hidden = 0;
  std::vector<Trip> w1, w2;
  std::vector<Trip> b1v, b2v;  // biases as (row, 0, val) triplets

  // Compiled forms used by the evaluator; rebuilt by finalize().
  Eigen::SparseMatrix<double> w1_mat, w2_mat;
  Eigen::VectorXd b1_vec, b2_vec;

  void finalize(int D);
  Eigen::MatrixXd w1_dense(int D) const;
  Eigen::MatrixXd w2_dense(int D) const;
};

// Metadata of a multiplication module: dst <- w * src per coordinate, with
// |w|, |src| <= bound_B required at runtime and |error| <= eps per entry.
struct MultMeta {
  int w_cell = 0;
  int src_off = 0;
  int dst_off = 0;
  int count = 0;
  double bound_B = 0.0;
  double eps = 0.0;
  int levels = 0;
  bool oracle = false;
};

// One transformer block: attention sublayer (possibly empty = identity),
// then feed-forward sublayer (possibly empty). Multiplication-module layers
// are FFN-only blocks tagged with their MultMeta; in oracle mode the block
// computes the exact product instead of running layers.
struct Block {
  std::string label;
  std::vector<AttentionHead> heads;
  Activation act = Activation::relu;
  FfnWeights ffn;
  bool is_mult = false;
  bool mult_check = false;  // range check runs on this layer
  MultMeta mult;
};

enum class NetVariant { relu, softmax };
enum class MultMode { constructed, oracle };

std::string variant_name(NetVariant v);
std::string mult_mode_name(MultMode m);

struct UnrolledNet {
  TokenLayout layout;
  GpSpec spec;
  TimeEmbeddings emb;
  TemporalKernel gamma_bar;  // banded kernel realized by the heads
  NetVariant variant = NetVariant::relu;
  MultMode mult_mode = MultMode::constructed;
  int J = 0;
  int K = 0;
  int dhat_m = 0;     // normalizer ramp terms (softmax variant)
  double eps_gd = 0.0;
  double eps_step = 0.0;
  double eps_mult = 0.0;
  double bound_B = 0.0;
  double kron_lo = 0.0;  // Kronecker spectrum extremes of gamma_bar x Sigma
  double kron_hi = 0.0;
  double t_ref = 0.0;  // worst-case build time (kappa, K chosen here)
  double t0 = 0.0;     // schedule floor, enters the clip radius
  double clip_c0 = 4.0;
  double clip_logterm = 0.0;  // log(N d / (eps_gd * sigma_{t0}))
  std::vector<Block> blocks;
  // Half-open block ranges, one per GD iteration; span k produces s^(k+1).
  // Blocks before iter_spans[0].first are the prologue (mean scaling and,
  // in the softmax variant, the normalizer ramp).
  std::vector<std::pair<int, int>> iter_spans;

  double eta_of(double t) const;
  double clip_radius(double t) const;
};

struct EvalReport {
  long mult_range_violations = 0;
  double mult_range_max_excess = 0.0;
  int first_violation_block = -1;

  void merge(const EvalReport& other);
};

// Token builder. phi takes [eta, alpha_t, sigma_t^2, alpha_t^2]; the caller
// supplies eta because it depends on the banded spectrum, not on spec
// alone. mu-slot stays zero here; inject_mu fills it.
Eigen::MatrixXd encode(const GpSpec& spec, const TimeEmbeddings& emb, double t,
                       const Eigen::VectorXd& x, double eta = 0.0,
                       bool softmax_variant = false);

// The mean lookup: writes raw mu patches into the mu-slot.
void inject_mu(const GpSpec& spec, const TokenLayout& layout,
               Eigen::MatrixXd& y);

// Runs blocks [first, last) in place.
void run_blocks(const UnrolledNet& net, Eigen::MatrixXd& y, int first,
                int last, EvalReport* report = nullptr);

// Extracts the s-slot (patch-major) and applies the norm clip unless
// disabled. Inputs on the clip boundary pass unchanged.
Eigen::VectorXd decode(const UnrolledNet& net, const Eigen::MatrixXd& y,
                       double t, bool clip = true);

Eigen::VectorXd evaluate(const UnrolledNet& net, const GpSpec& spec, double t,
                         const Eigen::VectorXd& x,
                         EvalReport* report = nullptr);

Eigen::MatrixXd evaluate_batch(const UnrolledNet& net, double t,
                               const Eigen::MatrixXd& x, int threads = 1,
                               EvalReport* report = nullptr);

ScoreFn unrolled_score_fn(const UnrolledNet& net, int threads = 1);

// Four ReLU heads whose summed activations form a trapezoid in the
// attention score, equal to 1 exactly when |i-j| = m and 0 on every other
// integer gap: plateau half-width delta/8, support half-width delta/4,
// while distinct gaps are separated by at least delta in squared chord
// length (delta/2 in score). Their V matrices carry
// scale * gamma_m * Sigma from buf_a into buf_c.
std::vector<AttentionHead> build_trapezoid_heads(int m,
                                                 const TimeEmbeddings& emb,
                                                 double gamma_m,
                                                 const Eigen::MatrixXd& sigma,
                                                 double scale,
                                                 const TokenLayout& layout);

// FFN-only multiplication module: dst <- w * src per coordinate (count
// coordinates; dst may equal src). Constructed mode runs the ReLU
// square-trick with `levels` hat compositions, each quartering the error;
// oracle mode is a single exact block. ws_cells supplies the scratch cells
// (two per concurrently processed coordinate; fewer cells means more
// sequential passes).
std::vector<Block> build_mult_module(const TokenLayout& layout, int w_cell,
                                     int src_off, int dst_off, int count,
                                     const std::vector<int>& ws_cells,
                                     double bound_B, double eps_mult,
                                     MultMode mode, const std::string& label);

struct GdIterOpts {
  bool first = false;
  MultMode mode = MultMode::constructed;
  double bound_B = 64.0;
  double gamma_scale = 1.0;  // extra factor folded into the head V matrices
};

// Blocks for one GD iteration:
//   buf_a <- alpha^2 s;  buf_b <- sigma^2 s;
//   buf_c <- sum over the band of gamma Sigma buf_a   (trapezoid attention);
//   s <- -(buf_c + buf_b + x - mu), buf_a <- old s, buf_b/c <- 0;
//   s <- eta * s;  s <- s + buf_a, buf_a <- 0.
// The first iteration runs from s = 0, so it reduces to
//   s <- -(x - mu);  s <- eta * s,
// preceded by the one-time mean scaling mu <- alpha * mu.
std::vector<Block> build_gd_block_relu(const GpSpec& spec,
                                       const TimeEmbeddings& emb,
                                       const TemporalKernel& gamma_bar, int J,
                                       double eps_mult,
                                       const GdIterOpts& opts = {});

// Per-entry multiplication tolerance that keeps one GD step's extra error
// within eps_step/sqrt(N) per patch.
double default_eps_mult(double eps_step, double eta, double sigma_frob, int N,
                        int d);

struct NetBuildOpts {
  NetVariant variant = NetVariant::relu;
  MultMode mult_mode = MultMode::constructed;
  double eps_gd = 1e-4;    // GD tolerance; sets K through the plan
  double eps_step = -1.0;  // per-step budget; defaults to eps_gd
  double t_ref = 0.1;      // worst-case time: kappa, K, bounds frozen here
  double t0 = 1e-3;        // schedule floor for the clip radius
  int J_override = -1;
  int K_override = -1;
  int dhat_m = -1;  // softmax normalizer terms; default N-1 (exact)
  double bound_B = -1.0;
  double clip_c0 = 4.0;
};

UnrolledNet build_unrolled_net(const GpSpec& spec, const TemporalKernel& kernel,
                               const NetBuildOpts& opts);

// Softmax variant: requires nu = 2 in embedding mode. One head per GD
// iteration reproduces the untruncated banded sum; the softmax normalizer
// is undone by a multiplication with the ramp-network value D_hat.
UnrolledNet build_softmax_net(const GpSpec& spec, const TimeEmbeddings& emb,
                              const TemporalKernel& kernel, double eps);

struct NetSizeReport {
  int D = 0;
  long L = 0;       // transformer blocks (mult layers counted singly)
  int M = 0;        // max attention heads in one block
  double B_norm = 0.0;  // max Frobenius norm over all weight matrices
  double R_t0 = 0.0;    // clip radius at the schedule floor
  long n_weights = 0;   // stored nonzeros across all blocks
  int J = 0;
  int K = 0;
  int mult_levels = 0;
  // Formula-side values reported next to the measured ones.
  double theory_L = 0.0;  // kappa_{t0} log^2(Nd/(eps sigma_{t0}))
  int theory_M = 0;       // 4J (relu) or 1 (softmax)
  int theory_D = 0;       // 9d + d_e + d_t + 1
};

NetSizeReport net_size_report(const UnrolledNet& net);

void save_net(const UnrolledNet& net, const std::string& path);
UnrolledNet load_net(const std::string& path);

}  // namespace gpdit
