#include "gpdit/harness.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gpdit/diffusion.hpp"
#include "gpdit/estimation.hpp"
#include "gpdit/rng.hpp"
#include "gpdit/score_gd.hpp"
#include "gpdit/unroll.hpp"

namespace gpdit {

namespace {

using json = nlohmann::json;

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string dirname_of(const std::string& path) {
  std::size_t slash = path.find_last_of('/');
  return slash == std::string::npos ? std::string(".") : path.substr(0, slash);
}

std::string join_path(const std::string& dir, const std::string& rel) {
  if (!rel.empty() && rel.front() == '/') return rel;
  return dir + "/" + rel;
}

std::string iso_utc_now() {
  std::time_t now = std::time(nullptr);
  std::tm parts{};
  gmtime_r(&now, &parts);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &parts);
  return buf;
}

double parse_double(const std::string& s, const std::string& what) {
  const char* begin = s.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end == begin || trim(end) != "") {
    throw std::invalid_argument("cannot parse number for " + what + ": '" + s + "'");
  }
  return v;
}

}  // namespace

bool Config::has(const std::string& key) const { return kv.count(key) > 0; }

std::string Config::get_str(const std::string& key,
                            const std::string& fallback) const {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

double Config::get_num(const std::string& key, double fallback) const {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  return parse_double(it->second, key);
}

long Config::get_int(const std::string& key, long fallback) const {
  double v = get_num(key, static_cast<double>(fallback));
  long r = static_cast<long>(v);
  if (static_cast<double>(r) != v) {
    throw std::invalid_argument("expected integer for " + key);
  }
  return r;
}

Config parse_config_text(const std::string& text) {
  Config cfg;
  cfg.source_dir = ".";
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos || trim(t.substr(0, eq)).empty()) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  " is not key=value: '" + t + "'");
    }
    cfg.kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return cfg;
}

Config load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  Config cfg = parse_config_text(buf.str());
  cfg.source_dir = dirname_of(path);
  return cfg;
}

GpSpec spec_from_config(const Config& cfg) {
  if (!cfg.has("d") || !cfg.has("N")) {
    throw std::invalid_argument("config must define d and N");
  }
  GpSpec spec;
  spec.d = static_cast<int>(cfg.get_int("d", 0));
  spec.N = static_cast<int>(cfg.get_int("N", 0));
  spec.nu = cfg.get_num("nu", 1.0);
  spec.ell = cfg.get_num("ell", 1.0);
  spec.mode = kernel_mode_from_name(cfg.get_str("kernel_mode", "embedding"));
  spec.r = cfg.get_num("r", 1.0);
  spec.period = static_cast<int>(cfg.get_int("period", 0));
  std::string mu_file = cfg.get_str("mu_file", "");
  if (!mu_file.empty()) {
    Eigen::MatrixXd m = read_csv(join_path(cfg.source_dir, mu_file));
    Eigen::MatrixXd flat = m.transpose();  // row-major flattening
    spec.mu = Eigen::Map<Eigen::VectorXd>(flat.data(), flat.size());
  }
  std::string sigma_file = cfg.get_str("sigma_file", "");
  if (!sigma_file.empty()) {
    spec.sigma = read_csv(join_path(cfg.source_dir, sigma_file));
  }
  spec.validate();
  return spec;
}

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_csv(const std::string& path, const Eigen::MatrixXd& rows,
               const std::string& header) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  if (!header.empty()) out << header << "\n";
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    for (Eigen::Index j = 0; j < rows.cols(); ++j) {
      if (j > 0) out << ",";
      out << format_g17(rows(i, j));
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

Eigen::MatrixXd read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open csv: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::string t = trim(line);
    if (t.empty()) continue;
    std::vector<double> row;
    std::size_t pos = 0;
    while (pos <= t.size()) {
      std::size_t comma = t.find(',', pos);
      std::string cell = comma == std::string::npos ? t.substr(pos)
                                                    : t.substr(pos, comma - pos);
      row.push_back(parse_double(trim(cell), path));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw std::invalid_argument("ragged csv: " + path);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) return Eigen::MatrixXd();
  Eigen::MatrixXd m(rows.size(), rows.front().size());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      m(i, j) = rows[i][j];
    }
  }
  return m;
}

std::uint64_t fnv1a64(const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for digest: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string bytes = buf.str();
  return fnv1a64(bytes.data(), bytes.size());
}

std::string digest_string(std::uint64_t digest) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "fnv1a64:%016" PRIx64, digest);
  return buf;
}

std::string manifest_path_for(const std::string& out_path) {
  std::size_t slash = out_path.find_last_of('/');
  std::size_t dot = out_path.find_last_of('.');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) {
    return out_path + ".manifest.json";
  }
  return out_path.substr(0, dot) + ".manifest.json";
}

void write_run_manifest(const std::string& manifest_path,
                        const std::string& subcommand,
                        std::uint64_t config_digest, std::uint64_t seed,
                        const std::map<std::string, std::string>& params,
                        const std::vector<std::string>& output_files) {
  json j;
  j["tool"] = "gpdit";
  j["version"] = kVersion;
  json modules;
  for (const char* m : {"gp_core", "diffusion", "score_gd",
                        "transformer_unroll", "estimation", "harness"}) {
    modules[m] = kVersion;
  }
  j["modules"] = std::move(modules);
  j["subcommand"] = subcommand;
  j["config_digest"] = digest_string(config_digest);
  j["seed"] = seed;
  j["created"] = iso_utc_now();
  json p;
  for (const auto& [k, v] : params) p[k] = v;
  j["params"] = std::move(p);
  json outs;
  for (const auto& f : output_files) outs[f] = digest_string(fnv1a64_file(f));
  j["outputs"] = std::move(outs);
  std::ofstream out(manifest_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest: " + manifest_path);
  out << j.dump(1) << "\n";
}

namespace {

ScoreFn make_score(const std::string& kind, const GpSpec& spec,
                   const TemporalKernel& kernel, double eps,
                   const std::string& mult_mode, int threads) {
  if (kind == "oracle") return oracle_score_fn(spec, kernel);
  if (kind == "gd") return gd_score_fn(spec, kernel, eps);
  if (kind == "relu" || kind == "softmax") {
    NetBuildOpts opts;
    opts.variant = kind == "relu" ? NetVariant::relu : NetVariant::softmax;
    opts.eps_gd = eps;
    opts.mult_mode = mult_mode == "constructed" ? MultMode::constructed
                                                : MultMode::oracle;
    UnrolledNet net = build_unrolled_net(spec, kernel, opts);
    return unrolled_score_fn(net, threads);
  }
  throw std::invalid_argument("unknown score kind: " + kind +
                              " (expected oracle|gd|relu|softmax)");
}

std::vector<long> parse_n_list(const std::string& text) {
  std::vector<long> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::string t = trim(item);
    if (t.empty()) continue;
    out.push_back(static_cast<long>(parse_double(t, "n-list")));
  }
  if (out.empty()) throw std::invalid_argument("empty n-list");
  return out;
}

struct GenArgs {
  std::string config, out = "data.csv";
  long n = 1000;
  std::uint64_t seed = 1;
};

int run_gen(const GenArgs& a) {
  Config cfg = load_config(a.config);
  GpSpec spec = spec_from_config(cfg);
  TemporalKernel kernel = build_kernel(spec);
  if (a.n < 1) throw std::invalid_argument("n must be positive");
  Eigen::MatrixXd batch = sample_gp(spec, kernel, static_cast<int>(a.n), a.seed);
  write_csv(a.out, batch.transpose().eval());
  std::map<std::string, std::string> params{
      {"config", a.config},
      {"n", std::to_string(a.n)},
      {"d", std::to_string(spec.d)},
      {"N", std::to_string(spec.N)},
  };
  write_run_manifest(manifest_path_for(a.out), "gen", fnv1a64_file(a.config),
                     a.seed, params, {a.out});
  std::cout << "wrote " << a.out << " (" << a.n << " x " << spec.dim() << ")\n";
  return 0;
}

struct ScoreEvalArgs {
  std::string config, out = "score_eval.csv", mode = "per_patch";
  double t = 0.5, eps = 1e-4;
  std::uint64_t seed = 1;
  int J = 0;
};

int run_score_eval(const ScoreEvalArgs& a) {
  Config cfg = load_config(a.config);
  GpSpec spec = spec_from_config(cfg);
  TemporalKernel kernel = build_kernel(spec);
  Eigen::VectorXd x =
      forward_marginal_sample(spec, kernel, a.t, 1, a.seed).col(0);
  int J = a.J > 0 ? std::min(a.J, spec.N) : choose_J(spec, kernel, a.eps, a.t);
  TemporalKernel gbar = truncate_kernel(kernel, J).kernel;
  GdPlan plan = plan_gd(spec, gbar, J, a.t, a.eps);
  ScoreEvalReport rep = gd_error_report(plan, spec, kernel, a.t, x);
  Eigen::MatrixXd row(1, 11);
  row << rep.t, static_cast<double>(rep.J), static_cast<double>(rep.K),
      rep.kappa, plan.eta, rep.err_l2, rep.bound_e1, rep.bound_e2,
      rep.contraction_measured, rep.contraction_bound, rep.residual_norm;
  write_csv(a.out, row,
            "t,J,K,kappa,eta,err_l2,bound_e1,bound_e2,"
            "contraction_measured,contraction_bound,residual_norm");
  std::map<std::string, std::string> params{
      {"config", a.config},    {"t", format_g17(a.t)},
      {"eps", format_g17(a.eps)}, {"mode", a.mode},
      {"J", std::to_string(J)},
  };
  write_run_manifest(manifest_path_for(a.out), "score-eval",
                     fnv1a64_file(a.config), a.seed, params, {a.out});
  std::cout << "err_l2=" << format_g17(rep.err_l2)
            << " bound=" << format_g17(rep.bound_e1 + rep.bound_e2) << "\n";
  return 0;
}

struct UnrollArgs {
  std::string config, out = "unroll_report.json", save_net;
  std::string variant = "relu", mult_mode = "constructed";
  double eps = 1e-4, t = -1.0, t_ref = 0.1, t0 = 1e-3, clip_c0 = 4.0, B = -1.0;
  std::uint64_t seed = 1;
  int J = 0, K = 0, threads = 1;
};

int run_unroll(const UnrollArgs& a) {
  Config cfg = load_config(a.config);
  GpSpec spec = spec_from_config(cfg);
  TemporalKernel kernel = build_kernel(spec);
  NetBuildOpts opts;
  opts.variant = a.variant == "softmax" ? NetVariant::softmax : NetVariant::relu;
  if (a.variant != "relu" && a.variant != "softmax") {
    throw std::invalid_argument("variant must be relu or softmax");
  }
  opts.mult_mode = a.mult_mode == "oracle" ? MultMode::oracle
                                           : MultMode::constructed;
  opts.eps_gd = a.eps;
  opts.t_ref = a.t_ref;
  opts.t0 = a.t0;
  opts.clip_c0 = a.clip_c0;
  if (a.J > 0) opts.J_override = a.J;
  if (a.K > 0) opts.K_override = a.K;
  if (a.B > 0) opts.bound_B = a.B;
  UnrolledNet net = build_unrolled_net(spec, kernel, opts);
  NetSizeReport rep = net_size_report(net);
  double teval = a.t > 0 ? a.t : a.t_ref;
  Eigen::VectorXd x =
      forward_marginal_sample(spec, kernel, teval, 1, a.seed).col(0);
  EvalReport er;
  Eigen::VectorXd s_net = evaluate(net, spec, teval, x, &er);
  GdPlan plan = plan_gd(spec, net.gamma_bar, net.J, teval, a.eps, net.K);
  Eigen::VectorXd s_gd =
      gd_score(plan, spec, kernel, teval, x, GdMode::exact).back();
  Eigen::VectorXd s_oracle = oracle_score(spec, kernel, teval, x);
  json j;
  j["variant"] = variant_name(net.variant);
  j["mult_mode"] = mult_mode_name(net.mult_mode);
  j["D"] = rep.D;
  j["L"] = rep.L;
  j["M"] = rep.M;
  j["B_norm"] = rep.B_norm;
  j["R_t0"] = rep.R_t0;
  j["n_weights"] = rep.n_weights;
  j["J"] = rep.J;
  j["K"] = rep.K;
  j["mult_levels"] = rep.mult_levels;
  j["theory_L"] = rep.theory_L;
  j["theory_M"] = rep.theory_M;
  j["theory_D"] = rep.theory_D;
  j["eval_t"] = teval;
  j["err_vs_gd"] = (s_net - s_gd).norm();
  j["err_vs_oracle"] = (s_net - s_oracle).norm();
  j["mult_range_violations"] = er.mult_range_violations;
  j["mult_range_max_excess"] = er.mult_range_max_excess;
  j["first_violation_block"] = er.first_violation_block;
  {
    std::ofstream out(a.out, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write report: " + a.out);
    out << j.dump(1) << "\n";
  }
  std::vector<std::string> outputs{a.out};
  if (!a.save_net.empty()) {
    save_net(net, a.save_net);
    outputs.push_back(a.save_net);
  }
  std::map<std::string, std::string> params{
      {"config", a.config},      {"variant", a.variant},
      {"mult_mode", a.mult_mode}, {"eps", format_g17(a.eps)},
      {"t", format_g17(teval)},
  };
  write_run_manifest(manifest_path_for(a.out), "unroll",
                     fnv1a64_file(a.config), a.seed, params, outputs);
  std::cout << "L=" << rep.L << " D=" << rep.D << " M=" << rep.M
            << " err_vs_gd=" << format_g17((s_net - s_gd).norm()) << "\n";
  return 0;
}

struct SampleArgs {
  std::string config, out = "samples.csv", score = "oracle";
  std::string integrator = "ddpm_exp", mult_mode = "oracle";
  long n = 1000;
  std::uint64_t seed = 1;
  double T = 0.0, t0 = 1e-3, eps = 1e-4;
  int steps = 500, threads = 1;
};

int run_sample(const SampleArgs& a) {
  Config cfg = load_config(a.config);
  GpSpec spec = spec_from_config(cfg);
  TemporalKernel kernel = build_kernel(spec);
  if (a.n < 1) throw std::invalid_argument("n must be positive");
  double T = a.T > 0 ? a.T : std::log(static_cast<double>(std::max<long>(a.n, 2)));
  DiffusionSchedule schedule = DiffusionSchedule::geometric(T, a.t0, a.steps);
  ScoreFn fn = make_score(a.score, spec, kernel, a.eps, a.mult_mode, a.threads);
  Integrator kind = integrator_from_name(a.integrator);
  Eigen::MatrixXd batch = backward_sample(schedule, fn, static_cast<int>(a.n),
                                          a.seed, kind, a.threads);
  write_csv(a.out, batch.transpose().eval());
  std::map<std::string, std::string> params{
      {"config", a.config},
      {"score", fn.tag},
      {"integrator", a.integrator},
      {"T", format_g17(T)},
      {"t0", format_g17(a.t0)},
      {"steps", std::to_string(a.steps)},
      {"n", std::to_string(a.n)},
  };
  write_run_manifest(manifest_path_for(a.out), "sample",
                     fnv1a64_file(a.config), a.seed, params, {a.out});
  std::cout << "wrote " << a.out << " (" << a.n << " x " << spec.dim() << ")\n";
  return 0;
}

struct EstimateArgs {
  std::string config, gen, truth;
  std::string out_gamma = "gamma_hat.csv", out_summary = "estimate_summary.json";
  std::uint64_t truth_seed = 999;
};

int run_estimate(const EstimateArgs& a) {
  Config cfg = load_config(a.config);
  GpSpec spec = spec_from_config(cfg);
  TemporalKernel kernel = build_kernel(spec);
  Eigen::MatrixXd gen_rows = read_csv(a.gen);
  if (gen_rows.cols() != spec.dim()) {
    throw std::invalid_argument("gen batch has wrong column count");
  }
  Eigen::MatrixXd gen = gen_rows.transpose();
  Eigen::MatrixXd truth;
  if (!a.truth.empty()) {
    Eigen::MatrixXd rows = read_csv(a.truth);
    if (rows.cols() != spec.dim()) {
      throw std::invalid_argument("truth batch has wrong column count");
    }
    truth = rows.transpose();
  } else {
    truth = sample_gp(spec, kernel, static_cast<int>(gen.cols()), a.truth_seed);
  }
  CovEstimate est = estimate_cov(gen, spec.d, spec.N);
  Eigen::MatrixXd gamma_hat = estimate_kernel(est, spec.sigma_or_identity());
  write_csv(a.out_gamma, gamma_hat);
  RelativeErrorReport rep = relative_error_report(gen, truth, spec, kernel);
  json j;
  j["epsilon"] = rep.epsilon;
  j["raw_frob"] = rep.raw_frob;
  j["truth_frob"] = rep.truth_frob;
  j["n"] = est.n_used;
  {
    std::ofstream out(a.out_summary, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write summary: " + a.out_summary);
    out << j.dump(1) << "\n";
  }
  std::map<std::string, std::string> params{
      {"config", a.config},
      {"gen", a.gen},
      {"truth", a.truth.empty() ? "drawn(seed=" + std::to_string(a.truth_seed) + ")"
                                : a.truth},
  };
  write_run_manifest(manifest_path_for(a.out_summary), "estimate",
                     fnv1a64_file(a.config), a.truth_seed, params,
                     {a.out_gamma, a.out_summary});
  std::cout << "epsilon=" << format_g17(rep.epsilon)
            << " raw_frob=" << format_g17(rep.raw_frob) << "\n";
  return 0;
}

struct BenchArgs {
  std::string config, out = "sweep.csv", score = "oracle";
  std::string integrator = "ddpm_exp", mult_mode = "oracle", n_list = "500,2000,8000";
  std::uint64_t seed = 1;
  double T = 0.0, t0 = 1e-3, eps = 1e-4;
  int steps = 500, threads = 1;
};

int run_bench(const BenchArgs& a) {
  Config cfg = load_config(a.config);
  GpSpec spec = spec_from_config(cfg);
  TemporalKernel kernel = build_kernel(spec);
  std::vector<long> ns = parse_n_list(a.n_list);
  double T = a.T > 0 ? a.T : std::log(static_cast<double>(ns.back()));
  DiffusionSchedule schedule = DiffusionSchedule::geometric(T, a.t0, a.steps);
  ScoreFn fn = make_score(a.score, spec, kernel, a.eps, a.mult_mode, a.threads);
  Integrator kind = integrator_from_name(a.integrator);
  std::vector<SweepRow> rows =
      error_vs_n_sweep(fn, spec, kernel, schedule, ns, a.seed, kind, a.threads);
  Eigen::MatrixXd table(rows.size(), 3);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    table(static_cast<Eigen::Index>(i), 0) = static_cast<double>(rows[i].n);
    table(static_cast<Eigen::Index>(i), 1) = rows[i].epsilon;
    table(static_cast<Eigen::Index>(i), 2) = rows[i].raw_frob;
  }
  write_csv(a.out, table, "n,epsilon,raw_frob");
  std::map<std::string, std::string> params{
      {"config", a.config},   {"score", fn.tag},
      {"integrator", a.integrator}, {"n_list", a.n_list},
      {"T", format_g17(T)},   {"steps", std::to_string(a.steps)},
  };
  write_run_manifest(manifest_path_for(a.out), "bench", fnv1a64_file(a.config),
                     a.seed, params, {a.out});
  for (const auto& r : rows) {
    std::cout << "n=" << r.n << " epsilon=" << format_g17(r.epsilon)
              << " raw_frob=" << format_g17(r.raw_frob) << "\n";
  }
  return 0;
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv) {
  CLI::App app{"Constructive diffusion pipeline for stationary Gaussian-process sequences"};
  app.name("gpdit");
  app.require_subcommand(1);

  GenArgs ga;
  CLI::App* gen = app.add_subcommand("gen", "Draw ground-truth GP sequences");
  gen->add_option("--config", ga.config, "key=value spec file")->required();
  gen->add_option("--n", ga.n, "sample count");
  gen->add_option("--seed", ga.seed, "RNG seed");
  gen->add_option("--out", ga.out, "output CSV (n rows, N*d columns)");

  ScoreEvalArgs sa;
  CLI::App* se = app.add_subcommand("score-eval",
                                    "GD score representation error report");
  se->add_option("--config", sa.config)->required();
  se->add_option("--t", sa.t, "diffusion time")->required();
  se->add_option("--eps", sa.eps, "GD tolerance");
  se->add_option("--seed", sa.seed);
  se->add_option("--J", sa.J, "band override (0 = auto)");
  se->add_option("--mode", sa.mode)->check(CLI::IsMember({"exact", "per_patch"}));
  se->add_option("--out", sa.out);

  UnrollArgs ua;
  CLI::App* un = app.add_subcommand("unroll",
                                    "Build the unrolled transformer and report sizes");
  un->add_option("--config", ua.config)->required();
  un->add_option("--eps", ua.eps, "GD tolerance");
  un->add_option("--variant", ua.variant)->check(CLI::IsMember({"relu", "softmax"}));
  un->add_option("--mult-mode", ua.mult_mode)
      ->check(CLI::IsMember({"constructed", "oracle"}));
  un->add_option("--t", ua.t, "evaluation time (default: t-ref)");
  un->add_option("--t-ref", ua.t_ref, "worst-case plan time");
  un->add_option("--t0", ua.t0, "schedule floor for the clip radius");
  un->add_option("--clip-c0", ua.clip_c0);
  un->add_option("--seed", ua.seed);
  un->add_option("--J", ua.J, "band override (0 = auto)");
  un->add_option("--K", ua.K, "iteration override (0 = auto)");
  un->add_option("--B", ua.B, "multiplication range bound override");
  un->add_option("--threads", ua.threads);
  un->add_option("--save-net", ua.save_net, "serialize the network as JSON");
  un->add_option("--out", ua.out, "report JSON");

  SampleArgs pa;
  CLI::App* sp = app.add_subcommand("sample", "Backward-diffusion sampling");
  sp->add_option("--config", pa.config)->required();
  sp->add_option("--score", pa.score)
      ->check(CLI::IsMember({"oracle", "gd", "relu", "softmax"}));
  sp->add_option("--n", pa.n);
  sp->add_option("--seed", pa.seed);
  sp->add_option("--T", pa.T, "terminal time (0 = log n)");
  sp->add_option("--t0", pa.t0);
  sp->add_option("--steps", pa.steps);
  sp->add_option("--integrator", pa.integrator)
      ->check(CLI::IsMember({"em", "ddpm_exp"}));
  sp->add_option("--eps", pa.eps, "score tolerance for gd/net scores");
  sp->add_option("--mult-mode", pa.mult_mode)
      ->check(CLI::IsMember({"constructed", "oracle"}));
  sp->add_option("--threads", pa.threads);
  sp->add_option("--out", pa.out);

  EstimateArgs ea;
  CLI::App* es = app.add_subcommand("estimate",
                                    "Kernel recovery and relative error");
  es->add_option("--config", ea.config)->required();
  es->add_option("--gen", ea.gen, "generated batch CSV")->required();
  es->add_option("--truth", ea.truth, "ground-truth batch CSV (default: drawn)");
  es->add_option("--truth-seed", ea.truth_seed);
  es->add_option("--out-gamma", ea.out_gamma);
  es->add_option("--out-summary", ea.out_summary);

  BenchArgs ba;
  CLI::App* be = app.add_subcommand("bench", "Relative error vs sample count");
  be->add_option("--config", ba.config)->required();
  be->add_option("--score", ba.score)
      ->check(CLI::IsMember({"oracle", "gd", "relu", "softmax"}));
  be->add_option("--n-list", ba.n_list, "comma-separated increasing counts");
  be->add_option("--seed", ba.seed);
  be->add_option("--T", ba.T, "terminal time (0 = log max n)");
  be->add_option("--t0", ba.t0);
  be->add_option("--steps", ba.steps);
  be->add_option("--integrator", ba.integrator)
      ->check(CLI::IsMember({"em", "ddpm_exp"}));
  be->add_option("--eps", ba.eps);
  be->add_option("--mult-mode", ba.mult_mode)
      ->check(CLI::IsMember({"constructed", "oracle"}));
  be->add_option("--threads", ba.threads);
  be->add_option("--out", ba.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return run_gen(ga);
    if (se->parsed()) return run_score_eval(sa);
    if (un->parsed()) return run_unroll(ua);
    if (sp->parsed()) return run_sample(pa);
    if (es->parsed()) return run_estimate(ea);
    if (be->parsed()) return run_bench(ba);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace gpdit
