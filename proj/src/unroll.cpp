#include "gpdit/unroll.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <initializer_list>
#include <stdexcept>
#include <thread>
#include <vector>

#include <json.hpp>

#include "gpdit/score_gd.hpp"

namespace gpdit {

namespace {

using json = nlohmann::json;

struct FfnBuilder {
  FfnWeights f;

  int unit(std::initializer_list<std::pair<int, double>> ins,
           double bias = 0.0) {
    int u = f.hidden++;
    for (const auto& [col, val] : ins) {
      if (val != 0.0) f.w1.push_back({u, col, val});
    }
    if (bias != 0.0) f.b2v.push_back({u, 0, bias});
    return u;
  }

  void out(int row, int u, double coeff) {
    if (coeff != 0.0) f.w2.push_back({row, u, coeff});
  }

  void bias1(int row, double v) {
    if (v != 0.0) f.b1v.push_back({row, 0, v});
  }

  FfnWeights take(int D) {
    f.finalize(D);
    return std::move(f);
  }
};

std::vector<int> all_ws_cells(const TokenLayout& layout) {
  std::vector<int> cells(3 * layout.d);
  for (int k = 0; k < 3 * layout.d; ++k) cells[k] = layout.off_ws() + k;
  return cells;
}

void append_blocks(std::vector<Block>& dst, std::vector<Block>&& src) {
  for (auto& b : src) dst.push_back(std::move(b));
}

// s <- -(x - mu), run with s = 0 and the mu-slot already alpha-scaled.
Block make_init_residual(const TokenLayout& layout) {
  FfnBuilder b;
  for (int a = 0; a < layout.d; ++a) {
    int xs = layout.off_x() + a, ms = layout.off_mu() + a,
        ss = layout.off_s() + a;
    int p = b.unit({{xs, 1.0}, {ms, -1.0}});
    int m = b.unit({{xs, -1.0}, {ms, 1.0}});
    b.out(ss, p, -1.0);
    b.out(ss, m, 1.0);
  }
  Block blk;
  blk.label = "init_residual";
  blk.ffn = b.take(layout.D());
  return blk;
}

// s <- -(buf_c + buf_b + x - mu), buf_a <- s, buf_b <- 0, buf_c <- 0.
Block make_assemble_grad(const TokenLayout& layout) {
  FfnBuilder b;
  for (int a = 0; a < layout.d; ++a) {
    int xs = layout.off_x() + a, ss = layout.off_s() + a,
        as = layout.off_a() + a, bs = layout.off_b() + a,
        cs = layout.off_c() + a, ms = layout.off_mu() + a;
    int p1 = b.unit({{cs, 1.0}, {bs, 1.0}, {xs, 1.0}, {ms, -1.0}, {ss, 1.0}});
    int m1 = b.unit({{cs, -1.0}, {bs, -1.0}, {xs, -1.0}, {ms, 1.0}, {ss, -1.0}});
    int p2 = b.unit({{ss, 1.0}, {as, -1.0}});
    int m2 = b.unit({{ss, -1.0}, {as, 1.0}});
    int p3 = b.unit({{bs, 1.0}});
    int m3 = b.unit({{bs, -1.0}});
    int p4 = b.unit({{cs, 1.0}});
    int m4 = b.unit({{cs, -1.0}});
    b.out(ss, p1, -1.0);
    b.out(ss, m1, 1.0);
    b.out(as, p2, 1.0);
    b.out(as, m2, -1.0);
    b.out(bs, p3, -1.0);
    b.out(bs, m3, 1.0);
    b.out(cs, p4, -1.0);
    b.out(cs, m4, 1.0);
  }
  Block blk;
  blk.label = "assemble_grad";
  blk.ffn = b.take(layout.D());
  return blk;
}

// s <- s + buf_a, buf_a <- 0; completes s_new = s_old - eta * grad.
Block make_apply_step(const TokenLayout& layout) {
  FfnBuilder b;
  for (int a = 0; a < layout.d; ++a) {
    int as = layout.off_a() + a, ss = layout.off_s() + a;
    int p = b.unit({{as, 1.0}});
    int m = b.unit({{as, -1.0}});
    b.out(ss, p, 1.0);
    b.out(ss, m, -1.0);
    b.out(as, p, -1.0);
    b.out(as, m, 1.0);
  }
  Block blk;
  blk.label = "apply_step";
  blk.ffn = b.take(layout.D());
  return blk;
}

// Writes the banded row sum D_hat into its cell from the integer index
// carried by the idx cell, then clears the idx cell so later blocks can use
// it as workspace. At integer indices the ramp telescopes exactly:
//   D_hat_i = 1 + sum_{k=1..m} gamma_k (1{i >= k+1} + 1{i <= N-k}).
Block make_dhat_ramp(const TokenLayout& layout, const TemporalKernel& kernel,
                     int m) {
  int N = kernel.size();
  int idx = layout.idx_cell(), dh = layout.dhat_cell();
  FfnBuilder b;
  if (m >= 1) {
    std::vector<double> w(m + 2, 0.0);
    w[1] = kernel.gamma(1);
    for (int k = 2; k <= m; ++k) w[k] = kernel.gamma(k) - kernel.gamma(k - 1);
    w[m + 1] = -kernel.gamma(m);
    for (int k = 1; k <= m + 1; ++k) {
      int u = b.unit({{idx, 1.0}}, -static_cast<double>(k));
      b.out(dh, u, w[k]);
    }
    for (int k = 1; k <= m + 1; ++k) {
      int u = b.unit({{idx, -1.0}}, static_cast<double>(N + 1 - k));
      b.out(dh, u, w[k]);
    }
  }
  b.bias1(dh, 1.0);
  int u = b.unit({{idx, 1.0}});
  b.out(idx, u, -1.0);
  Block blk;
  blk.label = "normalizer_ramp";
  blk.ffn = b.take(layout.D());
  return blk;
}

// One softmax GD iteration: the single head leaves sum_j gamma_ij / D_i
// Sigma buf_a_j in buf_c, the D_hat multiplication removes the softmax
// denominator, and the shared tail blocks apply the step.
std::vector<Block> build_gd_block_softmax(const GpSpec& spec,
                                          const TokenLayout& layout,
                                          double eps_mult,
                                          const GdIterOpts& opts,
                                          const std::vector<int>& ws) {
  std::vector<Block> seq;
  append_blocks(seq, build_mult_module(layout, layout.phi_alpha2(),
                                       layout.off_s(), layout.off_a(), spec.d,
                                       ws, opts.bound_B, eps_mult, opts.mode,
                                       "load_buf_a"));
  append_blocks(seq, build_mult_module(layout, layout.phi_sigma2(),
                                       layout.off_s(), layout.off_b(), spec.d,
                                       ws, opts.bound_B, eps_mult, opts.mode,
                                       "load_buf_b"));
  Block attn;
  attn.label = "softmax_attend";
  attn.act = Activation::softmax;
  AttentionHead head;
  head.qk_e = 2.0 / spec.ell;
  head.qk_one = -2.0 * spec.r * spec.r / spec.ell;
  head.v_src = layout.off_a();
  head.v_dst = layout.off_c();
  head.v = spec.sigma_or_identity();
  attn.heads.push_back(std::move(head));
  seq.push_back(std::move(attn));
  append_blocks(seq, build_mult_module(layout, layout.dhat_cell(),
                                       layout.off_c(), layout.off_c(), spec.d,
                                       ws, opts.bound_B, eps_mult, opts.mode,
                                       "undo_norm"));
  seq.push_back(make_assemble_grad(layout));
  append_blocks(seq, build_mult_module(layout, layout.phi_eta(),
                                       layout.off_s(), layout.off_s(), spec.d,
                                       ws, opts.bound_B, eps_mult, opts.mode,
                                       "scale_eta"));
  seq.push_back(make_apply_step(layout));
  return seq;
}

void column_softmax(Eigen::MatrixXd& s) {
  for (int i = 0; i < s.cols(); ++i) {
    auto col = s.col(i);
    double m = col.maxCoeff();
    col = (col.array() - m).exp().matrix();
    col /= col.sum();
  }
}

double frob_of_triplets(const std::vector<Trip>& t) {
  double acc = 0.0;
  for (const auto& e : t) acc += e.val * e.val;
  return acc;
}

}  // namespace

std::string variant_name(NetVariant v) {
  return v == NetVariant::relu ? "relu" : "softmax";
}

std::string mult_mode_name(MultMode m) {
  return m == MultMode::constructed ? "constructed" : "oracle";
}

Eigen::MatrixXd AttentionHead::qk_dense(const TokenLayout& layout) const {
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(layout.D(), layout.D());
  q(layout.off_e(), layout.off_e()) = qk_e;
  q(layout.off_e() + 1, layout.off_e() + 1) = qk_e;
  q(layout.off_one(), layout.off_one()) = qk_one;
  return q;
}

Eigen::MatrixXd AttentionHead::v_dense(const TokenLayout& layout) const {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(layout.D(), layout.D());
  m.block(v_dst, v_src, v.rows(), v.cols()) = v;
  return m;
}

void FfnWeights::finalize(int D) {
  std::vector<Eigen::Triplet<double>> t1, t2;
  t1.reserve(w1.size());
  t2.reserve(w2.size());
  for (const auto& e : w1) t1.emplace_back(e.row, e.col, e.val);
  for (const auto& e : w2) t2.emplace_back(e.row, e.col, e.val);
  w1_mat.resize(hidden, D);
  w2_mat.resize(D, hidden);
  w1_mat.setFromTriplets(t1.begin(), t1.end());
  w2_mat.setFromTriplets(t2.begin(), t2.end());
  b1_vec = Eigen::VectorXd::Zero(D);
  b2_vec = Eigen::VectorXd::Zero(hidden);
  for (const auto& e : b1v) b1_vec(e.row) += e.val;
  for (const auto& e : b2v) b2_vec(e.row) += e.val;
}

Eigen::MatrixXd FfnWeights::w1_dense(int D) const {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(hidden, D);
  for (const auto& e : w1) m(e.row, e.col) += e.val;
  return m;
}

Eigen::MatrixXd FfnWeights::w2_dense(int D) const {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(D, hidden);
  for (const auto& e : w2) m(e.row, e.col) += e.val;
  return m;
}

double UnrolledNet::eta_of(double t) const {
  return eta_at(kron_lo, kron_hi, t);
}

double UnrolledNet::clip_radius(double t) const {
  double nd = static_cast<double>(spec.N) * spec.d;
  return clip_c0 * clip_logterm * std::sqrt(nd) / std::sqrt(sigma2_of(t));
}

void EvalReport::merge(const EvalReport& other) {
  mult_range_violations += other.mult_range_violations;
  mult_range_max_excess =
      std::max(mult_range_max_excess, other.mult_range_max_excess);
  if (other.first_violation_block >= 0 &&
      (first_violation_block < 0 ||
       other.first_violation_block < first_violation_block)) {
    first_violation_block = other.first_violation_block;
  }
}

Eigen::MatrixXd encode(const GpSpec& spec, const TimeEmbeddings& emb, double t,
                       const Eigen::VectorXd& x, double eta,
                       bool softmax_variant) {
  if (x.size() != spec.dim()) {
    throw std::invalid_argument("encode: input length does not match spec");
  }
  TokenLayout layout{spec.d, softmax_variant};
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(layout.D(), spec.N);
  double a = alpha_of(t), s2 = sigma2_of(t);
  for (int i = 0; i < spec.N; ++i) {
    y.block(layout.off_x(), i, spec.d, 1) = x.segment(i * spec.d, spec.d);
    y.block(layout.off_e(), i, 2, 1) = emb.e.col(i);
    y(layout.phi_eta(), i) = eta;
    y(layout.phi_alpha(), i) = a;
    y(layout.phi_sigma2(), i) = s2;
    y(layout.phi_alpha2(), i) = a * a;
    y(layout.off_one(), i) = 1.0;
    if (softmax_variant) y(layout.idx_cell(), i) = static_cast<double>(i + 1);
  }
  return y;
}

void inject_mu(const GpSpec& spec, const TokenLayout& layout,
               Eigen::MatrixXd& y) {
  if (spec.mu.size() == 0) return;
  for (int i = 0; i < spec.N; ++i) {
    y.block(layout.off_mu(), i, spec.d, 1) = spec.mu.segment(i * spec.d, spec.d);
  }
}

void run_blocks(const UnrolledNet& net, Eigen::MatrixXd& y, int first,
                int last, EvalReport* report) {
  const TokenLayout& layout = net.layout;
  const int N = static_cast<int>(y.cols());
  const int d = layout.d;
  Eigen::MatrixXd gram;
  bool have_gram = false;
  for (int bi = first; bi < last; ++bi) {
    const Block& blk = net.blocks[bi];
    if (blk.mult_check) {
      const MultMeta& m = blk.mult;
      double worst = 0.0;
      long bad_cols = 0;
      for (int col = 0; col < N; ++col) {
        double excess = std::abs(y(m.w_cell, col)) - m.bound_B;
        for (int a = 0; a < m.count; ++a) {
          excess = std::max(excess,
                            std::abs(y(m.src_off + a, col)) - m.bound_B);
        }
        if (excess > 0.0) {
          ++bad_cols;
          worst = std::max(worst, excess);
        }
      }
      if (bad_cols > 0 && report != nullptr) {
        report->mult_range_violations += bad_cols;
        report->mult_range_max_excess =
            std::max(report->mult_range_max_excess, worst);
        if (report->first_violation_block < 0) {
          report->first_violation_block = bi;
        }
      }
    }
    if (!blk.heads.empty()) {
      if (!have_gram) {
        auto e = y.middleRows(layout.off_e(), 2);
        gram = e.transpose() * e;
        have_gram = true;
      }
      Eigen::MatrixXd delta = Eigen::MatrixXd::Zero(y.rows(), N);
      for (const AttentionHead& head : blk.heads) {
        Eigen::MatrixXd scores =
            ((head.qk_e * gram).array() + head.qk_one).matrix();
        if (blk.act == Activation::relu) {
          scores = scores.cwiseMax(0.0);
        } else {
          column_softmax(scores);
        }
        Eigen::MatrixXd pooled = y.middleRows(head.v_src, d) * scores;
        delta.middleRows(head.v_dst, d).noalias() += head.v * pooled;
      }
      y += delta;
    }
    if (blk.is_mult && blk.mult.oracle) {
      const MultMeta& m = blk.mult;
      for (int col = 0; col < N; ++col) {
        double w = y(m.w_cell, col);
        for (int a = 0; a < m.count; ++a) {
          y(m.dst_off + a, col) = w * y(m.src_off + a, col);
        }
      }
    } else if (blk.ffn.hidden > 0 || !blk.ffn.b1v.empty()) {
      Eigen::MatrixXd h = blk.ffn.w1_mat * y;
      h.colwise() += blk.ffn.b2_vec;
      h = h.cwiseMax(0.0);
      y.noalias() += blk.ffn.w2_mat * h;
      if (!blk.ffn.b1v.empty()) y.colwise() += blk.ffn.b1_vec;
    }
    if (!y.allFinite()) {
      throw std::runtime_error("non-finite activations after block " +
                               std::to_string(bi) + " (" + blk.label + ")");
    }
  }
}

Eigen::VectorXd decode(const UnrolledNet& net, const Eigen::MatrixXd& y,
                       double t, bool clip) {
  const TokenLayout& layout = net.layout;
  const int d = layout.d, N = static_cast<int>(y.cols());
  Eigen::VectorXd s(static_cast<Eigen::Index>(d) * N);
  for (int i = 0; i < N; ++i) {
    s.segment(i * d, d) = y.block(layout.off_s(), i, d, 1);
  }
  if (clip) {
    double radius = net.clip_radius(t);
    double norm = s.norm();
    if (norm > radius) s *= radius / norm;
  }
  return s;
}

Eigen::VectorXd evaluate(const UnrolledNet& net, const GpSpec& spec, double t,
                         const Eigen::VectorXd& x, EvalReport* report) {
  double eta = net.eta_of(t);
  Eigen::MatrixXd y =
      encode(spec, net.emb, t, x, eta, net.layout.softmax_variant);
  inject_mu(spec, net.layout, y);
  run_blocks(net, y, 0, static_cast<int>(net.blocks.size()), report);
  return decode(net, y, t, true);
}

Eigen::MatrixXd evaluate_batch(const UnrolledNet& net, double t,
                               const Eigen::MatrixXd& x, int threads,
                               EvalReport* report) {
  const int n = static_cast<int>(x.cols());
  Eigen::MatrixXd out(x.rows(), n);
  int workers = std::max(1, std::min(threads, n));
  std::vector<EvalReport> reports(workers);
  std::vector<std::exception_ptr> errors(workers);
  auto run_range = [&](int w, int lo, int hi) {
    try {
      for (int k = lo; k < hi; ++k) {
        out.col(k) = evaluate(net, net.spec, t, x.col(k), &reports[w]);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    run_range(0, 0, n);
  } else {
    std::vector<std::thread> pool;
    int base = n / workers, extra = n % workers, lo = 0;
    for (int w = 0; w < workers; ++w) {
      int hi = lo + base + (w < extra ? 1 : 0);
      pool.emplace_back(run_range, w, lo, hi);
      lo = hi;
    }
    for (auto& th : pool) th.join();
  }
  for (int w = 0; w < workers; ++w) {
    if (errors[w]) std::rethrow_exception(errors[w]);
  }
  if (report != nullptr) {
    for (const auto& r : reports) report->merge(r);
  }
  return out;
}

ScoreFn unrolled_score_fn(const UnrolledNet& net, int threads) {
  ScoreFn fn;
  fn.tag = "unrolled_" + variant_name(net.variant);
  fn.dim = net.spec.dim();
  fn.eval = [net, threads](const Eigen::MatrixXd& x, double t) {
    return evaluate_batch(net, t, x, threads, nullptr);
  };
  return fn;
}

std::vector<AttentionHead> build_trapezoid_heads(int m,
                                                 const TimeEmbeddings& emb,
                                                 double gamma_m,
                                                 const Eigen::MatrixXd& sigma,
                                                 double scale,
                                                 const TokenLayout& layout) {
  // Summed head activations in the score u = (f2(m) - f2(gap)) / 2:
  //   (8/delta) [relu(u + delta/4) - relu(u + delta/8)
  //              - relu(u - delta/8) + relu(u - delta/4)]
  // equal 1 on |u| <= delta/8 and 0 on |u| >= delta/4; integer gaps land on
  // u = 0 or |u| >= delta/2.
  double delta = emb.delta;
  double base = -emb.r * emb.r + emb.f2(m) / 2.0;
  const double offs[4] = {delta / 4.0, delta / 8.0, -delta / 8.0,
                          -delta / 4.0};
  const double sign[4] = {1.0, -1.0, -1.0, 1.0};
  std::vector<AttentionHead> heads(4);
  for (int h = 0; h < 4; ++h) {
    heads[h].qk_e = 1.0;
    heads[h].qk_one = base + offs[h];
    heads[h].v_src = layout.off_a();
    heads[h].v_dst = layout.off_c();
    heads[h].v = (8.0 / delta) * sign[h] * scale * gamma_m * sigma;
  }
  return heads;
}

std::vector<Block> build_mult_module(const TokenLayout& layout, int w_cell,
                                     int src_off, int dst_off, int count,
                                     const std::vector<int>& ws_cells,
                                     double bound_B, double eps_mult,
                                     MultMode mode, const std::string& label) {
  if (bound_B <= 0.0 || eps_mult <= 0.0) {
    throw std::invalid_argument("build_mult_module: bound and eps must be positive");
  }
  MultMeta meta;
  meta.w_cell = w_cell;
  meta.src_off = src_off;
  meta.dst_off = dst_off;
  meta.count = count;
  meta.bound_B = bound_B;
  meta.eps = eps_mult;
  std::vector<Block> seq;
  if (mode == MultMode::oracle) {
    meta.oracle = true;
    Block blk;
    blk.label = "mult:" + label;
    blk.is_mult = true;
    blk.mult_check = true;
    blk.mult = meta;
    blk.ffn.finalize(layout.D());
    seq.push_back(std::move(blk));
    return seq;
  }
  if (ws_cells.size() < 2) {
    throw std::invalid_argument("build_mult_module: need at least two workspace cells");
  }
  // levels hat compositions quarter the interpolation error per level:
  // |error| <= B^2 4^{-levels} / 2 for the difference of two squares.
  double need = bound_B * bound_B / (2.0 * eps_mult);
  int levels = 1;
  if (need > 1.0) {
    levels = std::max(1, static_cast<int>(std::ceil(std::log2(need) / 2.0)));
  }
  meta.levels = levels;
  const int cap = static_cast<int>(ws_cells.size()) / 2;
  const double inv2b = 1.0 / (2.0 * bound_B);
  const int D = layout.D();
  for (int start = 0; start < count; start += cap) {
    int chunk = std::min(cap, count - start);
    FfnBuilder init;
    for (int k = 0; k < chunk; ++k) {
      int src = src_off + start + k, dst = dst_off + start + k;
      int p = ws_cells[2 * k], q = ws_cells[2 * k + 1];
      int u1 = init.unit({{src, 1.0}, {w_cell, 1.0}});
      int u2 = init.unit({{src, -1.0}, {w_cell, -1.0}});
      int u3 = init.unit({{src, 1.0}, {w_cell, -1.0}});
      int u4 = init.unit({{src, -1.0}, {w_cell, 1.0}});
      init.out(p, u1, inv2b);
      init.out(p, u2, inv2b);
      init.out(q, u3, inv2b);
      init.out(q, u4, inv2b);
      int u5 = init.unit({{dst, 1.0}});
      int u6 = init.unit({{dst, -1.0}});
      init.out(dst, u5, -1.0);
      init.out(dst, u6, 1.0);
    }
    Block head;
    head.label = "mult:" + label + "/init";
    head.ffn = init.take(D);
    head.is_mult = true;
    head.mult_check = true;
    head.mult = meta;
    seq.push_back(std::move(head));
    for (int lvl = 1; lvl <= levels; ++lvl) {
      FfnBuilder lay;
      double hat = bound_B * bound_B / std::pow(4.0, lvl);
      double lin = (lvl == 1) ? bound_B * bound_B : 0.0;
      for (int k = 0; k < chunk; ++k) {
        int dst = dst_off + start + k;
        int p = ws_cells[2 * k], q = ws_cells[2 * k + 1];
        int a1 = lay.unit({{p, 1.0}});
        int a2 = lay.unit({{p, 1.0}}, -0.5);
        int a3 = lay.unit({{p, 1.0}}, -1.0);
        int c1 = lay.unit({{q, 1.0}});
        int c2 = lay.unit({{q, 1.0}}, -0.5);
        int c3 = lay.unit({{q, 1.0}}, -1.0);
        lay.out(dst, a1, lin - 2.0 * hat);
        lay.out(dst, a2, 4.0 * hat);
        lay.out(dst, a3, -2.0 * hat);
        lay.out(dst, c1, -lin + 2.0 * hat);
        lay.out(dst, c2, -4.0 * hat);
        lay.out(dst, c3, 2.0 * hat);
        if (lvl < levels) {
          // p <- g(p) with the hat g(u) = 2u on [0,1/2], 2(1-u) on [1/2,1];
          // on p >= 0 the residual form is relu(p) - 4 relu(p-1/2)
          // + 2 relu(p-1) - p + p, folded over the skip connection.
          lay.out(p, a1, 1.0);
          lay.out(p, a2, -4.0);
          lay.out(p, a3, 2.0);
          lay.out(q, c1, 1.0);
          lay.out(q, c2, -4.0);
          lay.out(q, c3, 2.0);
        } else {
          lay.out(p, a1, -1.0);
          lay.out(q, c1, -1.0);
        }
      }
      Block blk;
      blk.label = "mult:" + label + "/l" + std::to_string(lvl);
      blk.ffn = lay.take(D);
      blk.is_mult = true;
      blk.mult = meta;
      seq.push_back(std::move(blk));
    }
  }
  return seq;
}

std::vector<Block> build_gd_block_relu(const GpSpec& spec,
                                       const TimeEmbeddings& emb,
                                       const TemporalKernel& gamma_bar, int J,
                                       double eps_mult,
                                       const GdIterOpts& opts) {
  TokenLayout layout{spec.d, false};
  Eigen::MatrixXd sigma = spec.sigma_or_identity();
  std::vector<int> ws = all_ws_cells(layout);
  std::vector<Block> seq;
  if (opts.first) {
    append_blocks(seq, build_mult_module(layout, layout.phi_alpha(),
                                         layout.off_mu(), layout.off_mu(),
                                         spec.d, ws, opts.bound_B, eps_mult,
                                         opts.mode, "scale_mu"));
    seq.push_back(make_init_residual(layout));
    append_blocks(seq, build_mult_module(layout, layout.phi_eta(),
                                         layout.off_s(), layout.off_s(),
                                         spec.d, ws, opts.bound_B, eps_mult,
                                         opts.mode, "scale_eta"));
    return seq;
  }
  append_blocks(seq, build_mult_module(layout, layout.phi_alpha2(),
                                       layout.off_s(), layout.off_a(), spec.d,
                                       ws, opts.bound_B, eps_mult, opts.mode,
                                       "load_buf_a"));
  append_blocks(seq, build_mult_module(layout, layout.phi_sigma2(),
                                       layout.off_s(), layout.off_b(), spec.d,
                                       ws, opts.bound_B, eps_mult, opts.mode,
                                       "load_buf_b"));
  Block attn;
  attn.label = "band_attend";
  attn.act = Activation::relu;
  for (int m = 0; m < J; ++m) {
    auto heads = build_trapezoid_heads(m, emb, gamma_bar.gamma(m), sigma,
                                       opts.gamma_scale, layout);
    for (auto& h : heads) attn.heads.push_back(std::move(h));
  }
  seq.push_back(std::move(attn));
  seq.push_back(make_assemble_grad(layout));
  append_blocks(seq, build_mult_module(layout, layout.phi_eta(),
                                       layout.off_s(), layout.off_s(), spec.d,
                                       ws, opts.bound_B, eps_mult, opts.mode,
                                       "scale_eta"));
  seq.push_back(make_apply_step(layout));
  return seq;
}

double default_eps_mult(double eps_step, double eta, double sigma_frob, int N,
                        int d) {
  double nd = static_cast<double>(N) * d;
  double denom = 6.0 * std::max(eta, 1e-300) * std::max(sigma_frob, 1e-300) *
                 std::pow(static_cast<double>(N), 1.5) * std::sqrt(static_cast<double>(d));
  double per_entry = eps_step / denom;
  double cap = eps_step / (6.0 * std::sqrt(nd));
  return std::min(per_entry, cap);
}

UnrolledNet build_unrolled_net(const GpSpec& spec, const TemporalKernel& kernel,
                               const NetBuildOpts& opts) {
  spec.validate();
  if (opts.eps_gd <= 0.0 || opts.eps_gd >= 1.0) {
    throw std::invalid_argument("build_unrolled_net: eps_gd must lie in (0, 1)");
  }
  bool sm = opts.variant == NetVariant::softmax;
  if (sm && (spec.mode != KernelMode::embedding || spec.nu != 2.0)) {
    throw std::invalid_argument(
        "softmax variant requires the embedding kernel with nu = 2");
  }
  UnrolledNet net;
  net.spec = spec;
  net.emb = build_embeddings(spec);
  net.variant = opts.variant;
  net.mult_mode = opts.mult_mode;
  net.t_ref = opts.t_ref;
  net.t0 = opts.t0;
  net.clip_c0 = opts.clip_c0;
  net.eps_gd = opts.eps_gd;
  net.eps_step = opts.eps_step > 0.0 ? opts.eps_step : opts.eps_gd;
  net.layout = TokenLayout{spec.d, sm};

  int J = spec.N;
  if (!sm) {
    J = opts.J_override > 0 ? std::min(opts.J_override, spec.N)
                            : choose_J(spec, kernel, opts.eps_gd, opts.t_ref);
  }
  net.J = J;
  net.gamma_bar = truncate_kernel(kernel, J).kernel;
  GdPlan plan = plan_gd(spec, net.gamma_bar, J, opts.t_ref, opts.eps_gd,
                        opts.K_override);
  net.K = plan.K;
  net.kron_lo = plan.kron_lo;
  net.kron_hi = plan.kron_hi;
  net.dhat_m = 0;
  if (sm) {
    net.dhat_m = opts.dhat_m >= 0 ? std::min(opts.dhat_m, spec.N - 1)
                                  : spec.N - 1;
  }

  Eigen::MatrixXd sigma = spec.sigma_or_identity();
  net.eps_mult =
      default_eps_mult(net.eps_step, plan.eta, sigma.norm(), spec.N, spec.d);

  if (opts.bound_B > 0.0) {
    net.bound_B = opts.bound_B;
  } else {
    // Activation budget: residual norm fits a 4-sigma Gaussian ball, score
    // iterates stay within twice the stationary norm, gradient entries are
    // bounded by the operator norm of the step matrix times that.
    double s2r = sigma2_of(opts.t_ref);
    double nd = static_cast<double>(spec.N) * spec.d;
    double mu_l2 = spec.mu.size() > 0 ? spec.mu.norm() : 0.0;
    double mu_inf = spec.mu.size() > 0 ? spec.mu.cwiseAbs().maxCoeff() : 0.0;
    double res = 4.0 * std::sqrt(nd * (plan.kron_hi + 1.0)) + mu_l2;
    double s_l2 = 2.0 * res / s2r;
    double g_entry = (plan.kron_hi + 1.0) * s_l2 + res;
    double eta_hi = std::max(eta_at(plan.kron_lo, plan.kron_hi, opts.t0),
                             eta_at(plan.kron_lo, plan.kron_hi,
                                    std::max(opts.t_ref, 50.0)));
    net.bound_B =
        2.0 * std::max({2.0, static_cast<double>(spec.N), eta_hi,
                        mu_inf + res, s_l2, g_entry});
  }

  double sigma_t0 = std::sqrt(sigma2_of(opts.t0));
  net.clip_logterm =
      std::log(static_cast<double>(spec.N) * spec.d / (opts.eps_gd * sigma_t0));

  std::vector<int> ws = all_ws_cells(net.layout);
  if (sm) {
    // The normalizer cell stays live for the whole forward pass; the index
    // cell is reclaimed once the ramp has consumed it.
    ws.erase(std::remove(ws.begin(), ws.end(), net.layout.dhat_cell()),
             ws.end());
    net.blocks.push_back(make_dhat_ramp(net.layout, kernel, net.dhat_m));
  }
  GdIterOpts io;
  io.mode = opts.mult_mode;
  io.bound_B = net.bound_B;

  io.first = true;
  {
    int a = static_cast<int>(net.blocks.size());
    std::vector<Block> first;
    if (sm) {
      TokenLayout layout = net.layout;
      append_blocks(first, build_mult_module(layout, layout.phi_alpha(),
                                             layout.off_mu(), layout.off_mu(),
                                             spec.d, ws, io.bound_B,
                                             net.eps_mult, io.mode,
                                             "scale_mu"));
      first.push_back(make_init_residual(layout));
      append_blocks(first, build_mult_module(layout, layout.phi_eta(),
                                             layout.off_s(), layout.off_s(),
                                             spec.d, ws, io.bound_B,
                                             net.eps_mult, io.mode,
                                             "scale_eta"));
    } else {
      first = build_gd_block_relu(spec, net.emb, net.gamma_bar, J,
                                  net.eps_mult, io);
    }
    append_blocks(net.blocks, std::move(first));
    net.iter_spans.emplace_back(a, static_cast<int>(net.blocks.size()));
  }
  io.first = false;
  for (int k = 2; k <= net.K; ++k) {
    int a = static_cast<int>(net.blocks.size());
    if (sm) {
      append_blocks(net.blocks, build_gd_block_softmax(spec, net.layout,
                                                       net.eps_mult, io, ws));
    } else {
      append_blocks(net.blocks, build_gd_block_relu(spec, net.emb,
                                                    net.gamma_bar, J,
                                                    net.eps_mult, io));
    }
    net.iter_spans.emplace_back(a, static_cast<int>(net.blocks.size()));
  }
  return net;
}

UnrolledNet build_softmax_net(const GpSpec& spec, const TimeEmbeddings& emb,
                              const TemporalKernel& kernel, double eps) {
  (void)emb;  // rebuilt from spec inside; identical by construction
  NetBuildOpts opts;
  opts.variant = NetVariant::softmax;
  opts.eps_gd = eps;
  return build_unrolled_net(spec, kernel, opts);
}

NetSizeReport net_size_report(const UnrolledNet& net) {
  NetSizeReport rep;
  rep.D = net.layout.D();
  rep.L = static_cast<long>(net.blocks.size());
  rep.J = net.J;
  rep.K = net.K;
  rep.R_t0 = net.clip_radius(net.t0);
  double bmax = 0.0;
  long weights = 0;
  int mmax = 0, lmax = 0;
  for (const Block& blk : net.blocks) {
    mmax = std::max(mmax, static_cast<int>(blk.heads.size()));
    if (blk.is_mult) lmax = std::max(lmax, blk.mult.levels);
    for (const AttentionHead& h : blk.heads) {
      double qk = std::sqrt(2.0 * h.qk_e * h.qk_e + h.qk_one * h.qk_one);
      bmax = std::max({bmax, qk, h.v.norm()});
      weights += 3 + static_cast<long>(h.v.size());
    }
    double f1 = frob_of_triplets(blk.ffn.w1), f2 = frob_of_triplets(blk.ffn.w2);
    double g1 = frob_of_triplets(blk.ffn.b1v), g2 = frob_of_triplets(blk.ffn.b2v);
    bmax = std::max({bmax, std::sqrt(f1), std::sqrt(f2), std::sqrt(g1),
                     std::sqrt(g2)});
    weights += static_cast<long>(blk.ffn.w1.size() + blk.ffn.w2.size() +
                                 blk.ffn.b1v.size() + blk.ffn.b2v.size());
  }
  rep.B_norm = bmax;
  rep.n_weights = weights;
  rep.M = mmax;
  rep.mult_levels = lmax;
  double sigma_t0 = std::sqrt(sigma2_of(net.t0));
  double logterm = std::log(static_cast<double>(net.spec.N) * net.spec.d /
                            (net.eps_gd * sigma_t0));
  rep.theory_L = kappa_at(net.kron_lo, net.kron_hi, net.t0) * logterm * logterm;
  rep.theory_M = net.variant == NetVariant::softmax ? 1 : 4 * net.J;
  rep.theory_D = 9 * net.layout.d + TokenLayout::d_e + TokenLayout::d_t + 1;
  return rep;
}

namespace {

json trips_to_json(const std::vector<Trip>& t) {
  json arr = json::array();
  for (const auto& e : t) arr.push_back({e.row, e.col, e.val});
  return arr;
}

std::vector<Trip> trips_from_json(const json& arr) {
  std::vector<Trip> out;
  out.reserve(arr.size());
  for (const auto& e : arr) {
    out.push_back({e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<double>()});
  }
  return out;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& rows) {
  if (rows.empty()) return Eigen::MatrixXd();
  Eigen::MatrixXd m(rows.size(), rows.at(0).size());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      m(i, j) = rows.at(i).at(j).get<double>();
    }
  }
  return m;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

Eigen::VectorXd vector_from_json(const json& arr) {
  Eigen::VectorXd v(arr.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = arr.at(i).get<double>();
  return v;
}

}  // namespace

void save_net(const UnrolledNet& net, const std::string& path) {
  json j;
  j["format"] = "gp-unrolled-net-v1";
  j["variant"] = variant_name(net.variant);
  j["mult_mode"] = mult_mode_name(net.mult_mode);
  json spec;
  spec["d"] = net.spec.d;
  spec["N"] = net.spec.N;
  spec["nu"] = net.spec.nu;
  spec["ell"] = net.spec.ell;
  spec["kernel_mode"] = kernel_mode_name(net.spec.mode);
  spec["r"] = net.spec.r;
  spec["period"] = net.spec.period;
  spec["mu"] = vector_to_json(net.spec.mu);
  spec["sigma"] = matrix_to_json(net.spec.sigma);
  j["spec"] = std::move(spec);
  j["gamma_bar"] = vector_to_json(net.gamma_bar.gamma);
  j["gamma_bar_c_eff"] = net.gamma_bar.c_eff;
  j["J"] = net.J;
  j["K"] = net.K;
  j["dhat_m"] = net.dhat_m;
  j["eps_gd"] = net.eps_gd;
  j["eps_step"] = net.eps_step;
  j["eps_mult"] = net.eps_mult;
  j["bound_B"] = net.bound_B;
  j["kron_lo"] = net.kron_lo;
  j["kron_hi"] = net.kron_hi;
  j["t_ref"] = net.t_ref;
  j["t0"] = net.t0;
  j["clip_c0"] = net.clip_c0;
  j["clip_logterm"] = net.clip_logterm;
  json spans = json::array();
  for (const auto& [a, b] : net.iter_spans) spans.push_back({a, b});
  j["iter_spans"] = std::move(spans);
  json blocks = json::array();
  for (const Block& blk : net.blocks) {
    json b;
    b["label"] = blk.label;
    b["act"] = blk.act == Activation::relu ? "relu" : "softmax";
    json heads = json::array();
    for (const AttentionHead& h : blk.heads) {
      json hj;
      hj["qk_e"] = h.qk_e;
      hj["qk_one"] = h.qk_one;
      hj["src"] = h.v_src;
      hj["dst"] = h.v_dst;
      hj["v"] = matrix_to_json(h.v);
      heads.push_back(std::move(hj));
    }
    b["heads"] = std::move(heads);
    json f;
    f["hidden"] = blk.ffn.hidden;
    f["w1"] = trips_to_json(blk.ffn.w1);
    f["w2"] = trips_to_json(blk.ffn.w2);
    f["b1"] = trips_to_json(blk.ffn.b1v);
    f["b2"] = trips_to_json(blk.ffn.b2v);
    b["ffn"] = std::move(f);
    if (blk.is_mult) {
      json m;
      m["w_cell"] = blk.mult.w_cell;
      m["src"] = blk.mult.src_off;
      m["dst"] = blk.mult.dst_off;
      m["count"] = blk.mult.count;
      m["bound_B"] = blk.mult.bound_B;
      m["eps"] = blk.mult.eps;
      m["levels"] = blk.mult.levels;
      m["oracle"] = blk.mult.oracle;
      b["mult"] = std::move(m);
      b["mult_check"] = blk.mult_check;
    }
    blocks.push_back(std::move(b));
  }
  j["blocks"] = std::move(blocks);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_net: cannot open " + path);
  out << j.dump(1) << "\n";
}

UnrolledNet load_net(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_net: cannot open " + path);
  json j;
  in >> j;
  if (j.value("format", "") != "gp-unrolled-net-v1") {
    throw std::runtime_error("load_net: unrecognized format tag");
  }
  UnrolledNet net;
  const json& spec = j.at("spec");
  net.spec.d = spec.at("d").get<int>();
  net.spec.N = spec.at("N").get<int>();
  net.spec.nu = spec.at("nu").get<double>();
  net.spec.ell = spec.at("ell").get<double>();
  net.spec.mode = kernel_mode_from_name(spec.at("kernel_mode").get<std::string>());
  net.spec.r = spec.at("r").get<double>();
  net.spec.period = spec.at("period").get<int>();
  net.spec.mu = vector_from_json(spec.at("mu"));
  net.spec.sigma = matrix_from_json(spec.at("sigma"));
  net.variant = j.at("variant").get<std::string>() == "softmax"
                    ? NetVariant::softmax
                    : NetVariant::relu;
  net.mult_mode = j.at("mult_mode").get<std::string>() == "oracle"
                      ? MultMode::oracle
                      : MultMode::constructed;
  net.gamma_bar.gamma = vector_from_json(j.at("gamma_bar"));
  net.gamma_bar.c_eff = j.at("gamma_bar_c_eff").get<double>();
  net.J = j.at("J").get<int>();
  net.K = j.at("K").get<int>();
  net.dhat_m = j.at("dhat_m").get<int>();
  net.eps_gd = j.at("eps_gd").get<double>();
  net.eps_step = j.at("eps_step").get<double>();
  net.eps_mult = j.at("eps_mult").get<double>();
  net.bound_B = j.at("bound_B").get<double>();
  net.kron_lo = j.at("kron_lo").get<double>();
  net.kron_hi = j.at("kron_hi").get<double>();
  net.t_ref = j.at("t_ref").get<double>();
  net.t0 = j.at("t0").get<double>();
  net.clip_c0 = j.at("clip_c0").get<double>();
  net.clip_logterm = j.at("clip_logterm").get<double>();
  net.layout = TokenLayout{net.spec.d, net.variant == NetVariant::softmax};
  net.emb = build_embeddings(net.spec);
  for (const auto& span : j.at("iter_spans")) {
    net.iter_spans.emplace_back(span.at(0).get<int>(), span.at(1).get<int>());
  }
  for (const auto& b : j.at("blocks")) {
    Block blk;
    blk.label = b.at("label").get<std::string>();
    blk.act = b.at("act").get<std::string>() == "softmax" ? Activation::softmax
                                                          : Activation::relu;
    for (const auto& hj : b.at("heads")) {
      AttentionHead h;
      h.qk_e = hj.at("qk_e").get<double>();
      h.qk_one = hj.at("qk_one").get<double>();
      h.v_src = hj.at("src").get<int>();
      h.v_dst = hj.at("dst").get<int>();
      h.v = matrix_from_json(hj.at("v"));
      blk.heads.push_back(std::move(h));
    }
    const json& f = b.at("ffn");
    blk.ffn.hidden = f.at("hidden").get<int>();
    blk.ffn.w1 = trips_from_json(f.at("w1"));
    blk.ffn.w2 = trips_from_json(f.at("w2"));
    blk.ffn.b1v = trips_from_json(f.at("b1"));
    blk.ffn.b2v = trips_from_json(f.at("b2"));
    blk.ffn.finalize(net.layout.D());
    if (b.contains("mult")) {
      const json& m = b.at("mult");
      blk.is_mult = true;
      blk.mult_check = b.value("mult_check", false);
      blk.mult.w_cell = m.at("w_cell").get<int>();
      blk.mult.src_off = m.at("src").get<int>();
      blk.mult.dst_off = m.at("dst").get<int>();
      blk.mult.count = m.at("count").get<int>();
      blk.mult.bound_B = m.at("bound_B").get<double>();
      blk.mult.eps = m.at("eps").get<double>();
      blk.mult.levels = m.at("levels").get<int>();
      blk.mult.oracle = m.at("oracle").get<bool>();
    }
    net.blocks.push_back(std::move(blk));
  }
  return net;
}

}  // namespace gpdit
