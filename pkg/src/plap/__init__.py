"""Implicit finite-difference solver and verification harness for
degenerate p-Laplacian flow with a convective term, p in (1, 2].

The package solves the doubly regularized system (viscosity nu, coefficient
floor mu) on a box with zero Dirichlet data, drives the two limits nu -> 0
and mu -> 0 as parameter sweeps, and audits the quantitative estimates the
construction rests on: discrete energy balances, an L-infinity bound
certified through a linear dual problem, mollifier inequalities, operator
growth/coercivity certificates, and monotonicity of the flux map.
"""

from .mesh import (
    GridSpec,
    VectorField,
    GradientField,
    Trajectory,
    Lp,
    Linf,
    W1pSeminorm,
    Bochner,
    gradient,
    divergence,
    norm,
    inner,
    inner_grad,
    save_field,
    load_field,
    save_trajectory,
    load_trajectory,
)
from .mollify import (
    Kernel,
    SpaceTimeKernel,
    bump_kernel,
    time_bump_kernel,
    mollify_space,
    mollify_spacetime,
    time_kernel_limit_check,
    coefficient_convergence_check,
)
from .operators import (
    MU_FLOOR,
    ProblemParams,
    diffusivity,
    face_diffusivity,
    p_flux,
    convective,
    apply_operator,
    monotonicity_gap,
    gradient_lp_control,
    growth_certificate,
    coercivity_certificate,
    sine_bank,
    smooth_random_bank,
)
from .solver import (
    SolveConfig,
    EnergyLedger,
    RunResult,
    SolverError,
    local_horizon,
    energy_bound,
    step,
    solve_regularized,
    solve_inviscid,
    solve_limit,
    initial_datum,
    save_run,
    load_run,
)
from .dual import (
    DualCoefficients,
    DualRun,
    LinfCertificate,
    build_dual_coefficients,
    solve_dual,
    l1_audit,
    duality_identity,
    linf_certificate,
    save_dual_run,
    load_dual_run,
)
from .cascade import (
    SweepPlan,
    CascadeReport,
    cascade_bank,
    nu_sweep,
    mu_sweep,
    minty_check,
    ibp_identity_check,
    sum_norm_upper,
    save_cascade_report,
)

__version__ = "0.1.0"
