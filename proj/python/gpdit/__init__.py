"""Constructive diffusion pipeline for stationary Gaussian-process sequences.

The heavy lifting lives in the compiled extension ``gpdit._core``; this
package re-exports its public surface.
"""

from ._core import (
    CovEstimate,
    DiffusionSchedule,
    GdPlan,
    GpSpec,
    NetSizeReport,
    RelativeErrorReport,
    ScoreEvalReport,
    ScoreFn,
    SweepRow,
    TemporalKernel,
    TruncationResult,
    UnrolledNet,
    alpha_of,
    backward_sample,
    build_kernel,
    build_unrolled_net,
    choose_J,
    error_vs_n_sweep,
    estimate_cov,
    estimate_kernel,
    forward_marginal_sample,
    gd_score_fn,
    gd_error_report,
    load_net,
    oracle_score,
    oracle_score_fn,
    plan_gd,
    relative_error,
    relative_error_report,
    sample_gp,
    save_net,
    seed_split,
    sigma2_of,
    truncate_kernel,
)

__version__ = "0.1.0"

__all__ = [
    "CovEstimate",
    "DiffusionSchedule",
    "GdPlan",
    "GpSpec",
    "NetSizeReport",
    "RelativeErrorReport",
    "ScoreEvalReport",
    "ScoreFn",
    "SweepRow",
    "TemporalKernel",
    "TruncationResult",
    "UnrolledNet",
    "alpha_of",
    "backward_sample",
    "build_kernel",
    "build_unrolled_net",
    "choose_J",
    "error_vs_n_sweep",
    "estimate_cov",
    "estimate_kernel",
    "forward_marginal_sample",
    "gd_score_fn",
    "gd_error_report",
    "load_net",
    "oracle_score",
    "oracle_score_fn",
    "plan_gd",
    "relative_error",
    "relative_error_report",
    "sample_gp",
    "save_net",
    "seed_split",
    "sigma2_of",
    "truncate_kernel",
]
