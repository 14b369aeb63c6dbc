// Python bindings for the core pipeline: spec and kernel construction,
// ground-truth sampling, exact and GD scores, the unrolled transformer,
// backward-diffusion sampling, and covariance estimation.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <stdexcept>

#include "gpdit/diffusion.hpp"
#include "gpdit/estimation.hpp"
#include "gpdit/gp.hpp"
#include "gpdit/rng.hpp"
#include "gpdit/score_gd.hpp"
#include "gpdit/unroll.hpp"

namespace py = pybind11;
using namespace gpdit;

namespace {

NetVariant variant_from_name(const std::string& name) {
  if (name == "relu") return NetVariant::relu;
  if (name == "softmax") return NetVariant::softmax;
  throw std::invalid_argument("unknown variant: " + name);
}

MultMode mult_mode_from_name(const std::string& name) {
  if (name == "constructed") return MultMode::constructed;
  if (name == "oracle") return MultMode::oracle;
  throw std::invalid_argument("unknown mult mode: " + name);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() =
      "Constructive diffusion pipeline for stationary Gaussian-process "
      "sequences";

  py::class_<GpSpec>(m, "GpSpec")
      .def(py::init([](int d, int N, double nu, double ell,
                       const std::string& mode, double r, int period,
                       const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma) {
             GpSpec s;
             s.d = d;
             s.N = N;
             s.nu = nu;
             s.ell = ell;
             s.mode = kernel_mode_from_name(mode);
             s.r = r;
             s.period = period;
             s.mu = mu;
             s.sigma = sigma;
             s.validate();
             return s;
           }),
           py::arg("d"), py::arg("N"), py::arg("nu") = 2.0,
           py::arg("ell") = 1.0, py::arg("mode") = "embedding",
           py::arg("r") = 1.0, py::arg("period") = 0,
           py::arg("mu") = Eigen::VectorXd(),
           py::arg("sigma") = Eigen::MatrixXd())
      .def_readonly("d", &GpSpec::d)
      .def_readonly("N", &GpSpec::N)
      .def_readonly("nu", &GpSpec::nu)
      .def_readonly("ell", &GpSpec::ell)
      .def_property_readonly(
          "mode", [](const GpSpec& s) { return kernel_mode_name(s.mode); })
      .def_readonly("r", &GpSpec::r)
      .def_property_readonly("period", &GpSpec::period_or_default)
      .def_property_readonly("dim", &GpSpec::dim)
      .def_property_readonly("mu", &GpSpec::mu_or_zero)
      .def_property_readonly("sigma", &GpSpec::sigma_or_identity)
      .def("__repr__", [](const GpSpec& s) {
        return "GpSpec(d=" + std::to_string(s.d) + ", N=" +
               std::to_string(s.N) + ", nu=" + std::to_string(s.nu) +
               ", ell=" + std::to_string(s.ell) + ", mode='" +
               kernel_mode_name(s.mode) + "')";
      });

  py::class_<TemporalKernel>(m, "TemporalKernel")
      .def_readonly("gamma", &TemporalKernel::gamma)
      .def_readonly("c_eff", &TemporalKernel::c_eff)
      .def("toeplitz", &TemporalKernel::toeplitz);

  m.def("build_kernel",
        py::overload_cast<const GpSpec&>(&build_kernel), py::arg("spec"));

  m.def("sample_gp", &sample_gp, py::arg("spec"), py::arg("kernel"),
        py::arg("n"), py::arg("seed"),
        py::call_guard<py::gil_scoped_release>());

  m.def("alpha_of", &alpha_of, py::arg("t"));
  m.def("sigma2_of", &sigma2_of, py::arg("t"));

  py::class_<DiffusionSchedule>(m, "DiffusionSchedule")
      .def_static("geometric", &DiffusionSchedule::geometric, py::arg("T"),
                  py::arg("t0"), py::arg("steps"))
      .def_readonly("T", &DiffusionSchedule::T)
      .def_readonly("t0", &DiffusionSchedule::t0)
      .def_readonly("steps", &DiffusionSchedule::steps)
      .def_readonly("grid", &DiffusionSchedule::grid);

  py::class_<ScoreFn>(m, "ScoreFn")
      .def_readonly("tag", &ScoreFn::tag)
      .def_readonly("dim", &ScoreFn::dim)
      .def(
          "__call__",
          [](const ScoreFn& f, const Eigen::MatrixXd& x, double t) {
            py::gil_scoped_release release;
            return f.eval(x, t);
          },
          py::arg("x"), py::arg("t"));

  m.def("oracle_score_fn", &oracle_score_fn, py::arg("spec"),
        py::arg("kernel"));
  m.def("gd_score_fn", &gd_score_fn, py::arg("spec"), py::arg("kernel"),
        py::arg("eps"), py::arg("J_override") = -1, py::arg("K_override") = -1);
  m.def("oracle_score", &oracle_score, py::arg("spec"), py::arg("kernel"),
        py::arg("t"), py::arg("x"), py::arg("cap") = 4096);

  m.def("forward_marginal_sample", &forward_marginal_sample, py::arg("spec"),
        py::arg("kernel"), py::arg("t"), py::arg("n"), py::arg("seed"),
        py::call_guard<py::gil_scoped_release>());

  m.def(
      "backward_sample",
      [](const DiffusionSchedule& schedule, const ScoreFn& score, int n,
         std::uint64_t seed, const std::string& integrator, int threads) {
        Integrator kind = integrator_from_name(integrator);
        py::gil_scoped_release release;
        return backward_sample(schedule, score, n, seed, kind, threads);
      },
      py::arg("schedule"), py::arg("score"), py::arg("n"), py::arg("seed"),
      py::arg("integrator") = "ddpm_exp", py::arg("threads") = 1);

  m.def("choose_J", &choose_J, py::arg("spec"), py::arg("kernel"),
        py::arg("eps"), py::arg("t") = -1.0);

  py::class_<TruncationResult>(m, "TruncationResult")
      .def_readonly("kernel", &TruncationResult::kernel)
      .def_readonly("J", &TruncationResult::J)
      .def_readonly("delta_frob", &TruncationResult::delta_frob);

  m.def("truncate_kernel", &truncate_kernel, py::arg("kernel"), py::arg("J"));

  py::class_<GdPlan>(m, "GdPlan")
      .def_readonly("J", &GdPlan::J)
      .def_readonly("t", &GdPlan::t)
      .def_readonly("eps", &GdPlan::eps)
      .def_readonly("eta", &GdPlan::eta)
      .def_readonly("kappa", &GdPlan::kappa)
      .def_readonly("K", &GdPlan::K)
      .def_readonly("lam_lo", &GdPlan::lam_lo)
      .def_readonly("lam_hi", &GdPlan::lam_hi)
      .def_readonly("kron_lo", &GdPlan::kron_lo)
      .def_readonly("kron_hi", &GdPlan::kron_hi);

  m.def("plan_gd", &plan_gd, py::arg("spec"), py::arg("gamma_bar"),
        py::arg("J"), py::arg("t"), py::arg("eps"),
        py::arg("K_override") = -1);

  py::class_<ScoreEvalReport>(m, "ScoreEvalReport")
      .def_readonly("t", &ScoreEvalReport::t)
      .def_readonly("J", &ScoreEvalReport::J)
      .def_readonly("K", &ScoreEvalReport::K)
      .def_readonly("kappa", &ScoreEvalReport::kappa)
      .def_readonly("err_l2", &ScoreEvalReport::err_l2)
      .def_readonly("bound_e1", &ScoreEvalReport::bound_e1)
      .def_readonly("bound_e2", &ScoreEvalReport::bound_e2)
      .def_readonly("contraction_measured",
                    &ScoreEvalReport::contraction_measured)
      .def_readonly("contraction_bound", &ScoreEvalReport::contraction_bound)
      .def_readonly("residual_norm", &ScoreEvalReport::residual_norm);

  m.def("gd_error_report", &gd_error_report, py::arg("plan"), py::arg("spec"),
        py::arg("kernel"), py::arg("t"), py::arg("x"),
        py::call_guard<py::gil_scoped_release>());

  py::class_<NetSizeReport>(m, "NetSizeReport")
      .def_readonly("D", &NetSizeReport::D)
      .def_readonly("L", &NetSizeReport::L)
      .def_readonly("M", &NetSizeReport::M)
      .def_readonly("B_norm", &NetSizeReport::B_norm)
      .def_readonly("R_t0", &NetSizeReport::R_t0)
      .def_readonly("n_weights", &NetSizeReport::n_weights)
      .def_readonly("J", &NetSizeReport::J)
      .def_readonly("K", &NetSizeReport::K)
      .def_readonly("mult_levels", &NetSizeReport::mult_levels)
      .def_readonly("theory_L", &NetSizeReport::theory_L)
      .def_readonly("theory_M", &NetSizeReport::theory_M)
      .def_readonly("theory_D", &NetSizeReport::theory_D);

  py::class_<UnrolledNet>(m, "UnrolledNet")
      .def_property_readonly(
          "variant",
          [](const UnrolledNet& n) { return variant_name(n.variant); })
      .def_property_readonly(
          "mult_mode",
          [](const UnrolledNet& n) { return mult_mode_name(n.mult_mode); })
      .def_readonly("J", &UnrolledNet::J)
      .def_readonly("K", &UnrolledNet::K)
      .def_readonly("eps_gd", &UnrolledNet::eps_gd)
      .def("size_report", &net_size_report)
      .def(
          "evaluate_batch",
          [](const UnrolledNet& net, double t, const Eigen::MatrixXd& x,
             int threads) {
            py::gil_scoped_release release;
            return evaluate_batch(net, t, x, threads);
          },
          py::arg("t"), py::arg("x"), py::arg("threads") = 1)
      .def("score_fn", &unrolled_score_fn, py::arg("threads") = 1);

  m.def(
      "build_unrolled_net",
      [](const GpSpec& spec, const TemporalKernel& kernel,
         const std::string& variant, const std::string& mult_mode,
         double eps_gd, double eps_step, double t_ref, double t0,
         int J_override, int K_override, double bound_B, double clip_c0) {
        NetBuildOpts opts;
        opts.variant = variant_from_name(variant);
        opts.mult_mode = mult_mode_from_name(mult_mode);
        opts.eps_gd = eps_gd;
        opts.eps_step = eps_step;
        opts.t_ref = t_ref;
        opts.t0 = t0;
        opts.J_override = J_override;
        opts.K_override = K_override;
        opts.bound_B = bound_B;
        opts.clip_c0 = clip_c0;
        py::gil_scoped_release release;
        return build_unrolled_net(spec, kernel, opts);
      },
      py::arg("spec"), py::arg("kernel"), py::arg("variant") = "relu",
      py::arg("mult_mode") = "constructed", py::arg("eps_gd") = 1e-4,
      py::arg("eps_step") = -1.0, py::arg("t_ref") = 0.1,
      py::arg("t0") = 1e-3, py::arg("J_override") = -1,
      py::arg("K_override") = -1, py::arg("bound_B") = -1.0,
      py::arg("clip_c0") = 4.0);

  m.def("save_net", &save_net, py::arg("net"), py::arg("path"));
  m.def("load_net", &load_net, py::arg("path"));

  py::class_<CovEstimate>(m, "CovEstimate")
      .def_readonly("d", &CovEstimate::d)
      .def_readonly("N", &CovEstimate::N)
      .def_readonly("n_used", &CovEstimate::n_used)
      .def_readonly("mu_hat", &CovEstimate::mu_hat)
      .def_readonly("sigma_hat", &CovEstimate::sigma_hat)
      .def_readonly("sigma_pooled", &CovEstimate::sigma_pooled)
      .def("block", &CovEstimate::block, py::arg("i"), py::arg("j"));

  m.def("estimate_cov", &estimate_cov, py::arg("batch"), py::arg("d"),
        py::arg("N"), py::call_guard<py::gil_scoped_release>());
  m.def("estimate_kernel", &estimate_kernel, py::arg("cov"),
        py::arg("sigma_true"));

  py::class_<RelativeErrorReport>(m, "RelativeErrorReport")
      .def_readonly("epsilon", &RelativeErrorReport::epsilon)
      .def_readonly("raw_frob", &RelativeErrorReport::raw_frob)
      .def_readonly("truth_frob", &RelativeErrorReport::truth_frob);

  m.def("relative_error_report", &relative_error_report, py::arg("gen"),
        py::arg("truth"), py::arg("spec"), py::arg("kernel"),
        py::call_guard<py::gil_scoped_release>());
  m.def("relative_error", &relative_error, py::arg("gen"), py::arg("truth"),
        py::arg("spec"), py::arg("kernel"),
        py::call_guard<py::gil_scoped_release>());

  py::class_<SweepRow>(m, "SweepRow")
      .def_readonly("n", &SweepRow::n)
      .def_readonly("epsilon", &SweepRow::epsilon)
      .def_readonly("raw_frob", &SweepRow::raw_frob);

  m.def(
      "error_vs_n_sweep",
      [](const ScoreFn& score, const GpSpec& spec, const TemporalKernel& k,
         const DiffusionSchedule& sched, const std::vector<long>& n_list,
         std::uint64_t seed, const std::string& integrator, int threads) {
        Integrator kind = integrator_from_name(integrator);
        py::gil_scoped_release release;
        return error_vs_n_sweep(score, spec, k, sched, n_list, seed, kind,
                                threads);
      },
      py::arg("score"), py::arg("spec"), py::arg("kernel"),
      py::arg("schedule"), py::arg("n_list"), py::arg("seed"),
      py::arg("integrator") = "ddpm_exp", py::arg("threads") = 1);

  m.def("seed_split", &seed_split, py::arg("seed"), py::arg("stream"));
}
