"""Nested sampling for hierarchical models with blocked slice kernels.

The per-replacement kernel alternates hyperparameter slice updates with a
sweep of per-group slice updates whose global likelihood constraint is
checked through cached per-group budgets in O(1), next to a joint-space
baseline that pays the full O(J) check per proposal.
"""

from .benchmarks import (
    EvalCounter,
    FunnelConfig,
    FunnelModel,
    HierGaussConfig,
    HierGaussModel,
    SVConfig,
    SVModel,
    count_equivalents,
    funnel_analytic_logz,
    generate_hg_data,
    generate_sv_data,
    hg_analytic_logz,
    make_model,
)
from .diagnostics import MMDResult, fit_power_law, mmd
from .engine import (
    DeadRecord,
    EvidenceAccumulator,
    LiveSet,
    RunConfig,
    RunResult,
    compress_volume,
    finalize,
    info_decomposition_report,
    run_nested_sampling,
    select_batch,
    termination_check,
    update_evidence,
)
from .kernels import (
    KernelConfig,
    KernelCounters,
    compute_budget,
    local_sweep,
    markov_local_sweep,
    nss_replace,
    psi_update,
    swig_replace,
)
from .models import (
    ModelContractError,
    ModelDims,
    ModelSpec,
    ParamState,
    Structure,
    read_observations,
    write_observations,
)
from .slicing import (
    BlockCovariance,
    SliceTarget,
    draw_direction,
    estimate_block_cov,
    slice_axis,
    slice_direction,
)

__all__ = [
    "BlockCovariance",
    "DeadRecord",
    "EvalCounter",
    "EvidenceAccumulator",
    "FunnelConfig",
    "FunnelModel",
    "HierGaussConfig",
    "HierGaussModel",
    "KernelConfig",
    "KernelCounters",
    "LiveSet",
    "MMDResult",
    "ModelContractError",
    "ModelDims",
    "ModelSpec",
    "ParamState",
    "RunConfig",
    "RunResult",
    "SVConfig",
    "SVModel",
    "SliceTarget",
    "Structure",
    "compress_volume",
    "compute_budget",
    "count_equivalents",
    "draw_direction",
    "estimate_block_cov",
    "finalize",
    "fit_power_law",
    "funnel_analytic_logz",
    "generate_hg_data",
    "generate_sv_data",
    "hg_analytic_logz",
    "info_decomposition_report",
    "local_sweep",
    "make_model",
    "markov_local_sweep",
    "mmd",
    "nss_replace",
    "psi_update",
    "read_observations",
    "run_nested_sampling",
    "select_batch",
    "slice_axis",
    "slice_direction",
    "swig_replace",
    "termination_check",
    "update_evidence",
    "write_observations",
]
