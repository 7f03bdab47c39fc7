"""Parameter-cascade driver: the two vanishing-parameter sweeps, the
convexity-gap diagnostics on the limit run, and the exact discrete
product-rule identity.

The sweeps solve the same initial-value problem along a halving schedule
of the viscosity or of the coefficient floor, then measure what the
existence argument asserts abstractly: trajectories form a Cauchy
sequence (pairwise distances), the stability aggregate stays uniform,
the maximum principle survives every point, flux pairings against a
fixed test bank settle down, the viscous pairing vanishes at the square
root rate, and the floored flux collapses to the degenerate one.  None
of it is proved here; all of it is measured and reported.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import (
    Bochner,
    GridSpec,
    Lp,
    Trajectory,
    VectorField,
    W1pSeminorm,
    gradient,
    inner,
    inner_grad,
    norm,
    save_field,
)
from .operators import ProblemParams, p_flux, sine_bank, smooth_random_bank
from .solver import (
    RunResult,
    SolveConfig,
    SolverError,
    initial_datum,
    solve_inviscid,
    solve_limit,
    solve_regularized,
)

__all__ = [
    "SweepPlan",
    "CascadeReport",
    "nu_sweep",
    "mu_sweep",
    "minty_check",
    "ibp_identity_check",
    "sum_norm_upper",
    "cascade_bank",
    "save_cascade_report",
]


def cascade_bank(grid: GridSpec, seed: int = 0) -> list[VectorField]:
    """Fixed test bank: 8 tensor-product sine fields plus 4 seeded
    mollified-noise fields.  Used for weak probes, convexity gaps, and
    the negative-norm duality proxy."""
    return sine_bank(grid, count=8) + smooth_random_bank(grid, 4, seed, label="cascade-bank")


@dataclass(frozen=True)
class SweepPlan:
    """One sweep: a strictly decreasing halving schedule of the swept
    parameter over a fixed datum, grid, and step policy.

    For the viscosity sweep `mu` is the fixed coefficient floor; the
    floor sweep runs the zero-viscosity route and ignores `mu`.
    """

    grid: GridSpec
    config: SolveConfig
    p: float
    schedule: tuple[float, ...]
    mu: float = 0.01
    preset: str = "bump"
    amplitude: float = 0.5
    seed: int = 0
    bank_seed: int = 0
    eps_conv: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "schedule", tuple(float(v) for v in self.schedule))
        if len(self.schedule) < 2:
            raise ValueError("schedule needs at least two points")
        if any(v <= 0.0 for v in self.schedule):
            raise ValueError("schedule values must be positive")
        if any(b >= a for a, b in zip(self.schedule, self.schedule[1:])):
            raise ValueError("schedule must be strictly decreasing")

    @staticmethod
    def _default_schedule(start: float, halvings: int) -> tuple[float, ...]:
        return tuple(start / 2**k for k in range(halvings))

    @classmethod
    def default_nu(cls, grid: GridSpec | None = None, **overrides) -> "SweepPlan":
        grid = grid or GridSpec.from_extent(n=(64, 64), extent=(1.0, 1.0))
        base = dict(
            grid=grid,
            config=SolveConfig(dt=1e-3, t_end=0.25, convection="implicit"),
            p=1.5,
            schedule=cls._default_schedule(0.1, 5),
            mu=0.01,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def default_mu(cls, grid: GridSpec | None = None, **overrides) -> "SweepPlan":
        grid = grid or GridSpec.from_extent(n=(64, 64), extent=(1.0, 1.0))
        base = dict(
            grid=grid,
            config=SolveConfig(dt=1e-3, t_end=0.25, convection="implicit"),
            p=1.5,
            schedule=cls._default_schedule(0.1, 5),
        )
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class CascadeReport:
    """Everything a sweep measured.  Tuple lengths follow the schedule;
    a partial report (solver failure mid-sweep) keeps what finished and
    records the failing index."""

    swept: str
    schedule: tuple[float, ...]
    aggregates: tuple[float, ...]
    overshoots: tuple[float, ...]
    linf_max: tuple[float, ...]
    ledger_digests: tuple[dict, ...]
    distances: tuple[float, ...]
    distances_l2: tuple[float, ...]
    flux_probes: tuple[tuple[float, ...], ...]
    rate_probes: tuple[tuple[float, ...], ...]
    minty_gaps: tuple[float, ...]
    partial: bool = False
    failed_at: int | None = None
    failure: str | None = None
    cross_check_distance: float | None = None
    limit_overshoot: float | None = None
    final_state: VectorField | None = None

    def __post_init__(self):
        if any(d < -0.0 for d in self.distances):
            raise ValueError("distances cannot be negative")
        done = len(self.aggregates)
        if not (len(self.overshoots) == len(self.linf_max) == len(self.ledger_digests) == done):
            raise ValueError("per-point report lengths disagree")
        if len(self.distances) > max(done - 1, 0):
            raise ValueError("more distances than consecutive pairs")


def _ledger_digest(result: RunResult) -> dict:
    led = result.ledger
    return {
        "max_residual": float(np.max(led.residual)) if len(led) else 0.0,
        "viscous_total": float(np.sum(led.viscous)),
        "pdiss_total": float(np.sum(led.pdiss)),
        "convpower_total": float(np.sum(led.convpower)),
        "kinetic_final": float(led.kinetic[-1]) if len(led) else led.kinetic_start,
        "energy_violation_count": result.audits["energy_violation_count"],
        "energy_worst_excess": result.audits["energy_worst_excess"],
    }


def _trajectory_distance(a: Trajectory, b: Trajectory, q: float) -> float:
    diff = Trajectory(tuple(fa - fb for fa, fb in zip(a.fields, b.fields)), a.dt)
    return norm(diff, Bochner(q, Lp(q)))


def _flux_probe(result: RunResult, mu: float, p: float, bank_grads) -> tuple[float, ...]:
    """Time-integrated pairing of the run's flux against each grad psi."""
    traj = result.trajectory
    dt = traj.dt
    acc = [0.0] * len(bank_grads)
    for n in range(1, len(traj)):
        flux = p_flux(traj[n], mu, p)
        for j, gpsi in enumerate(bank_grads):
            acc[j] += dt * inner_grad(flux, gpsi)
    return tuple(acc)


def _viscous_probe(result: RunResult, nu: float, bank_grads) -> tuple[float, ...]:
    """nu * |time-integrated (grad v, grad psi)| per test function."""
    traj = result.trajectory
    dt = traj.dt
    acc = [0.0] * len(bank_grads)
    for n in range(1, len(traj)):
        gv = gradient(traj[n])
        for j, gpsi in enumerate(bank_grads):
            acc[j] += dt * inner_grad(gv, gpsi)
    return tuple(nu * abs(a) for a in acc)


def _collapse_probe(bank: list[VectorField], mu: float, p: float) -> tuple[float, ...]:
    """Distance between the floored and the degenerate flux of each bank
    field, in the conjugate norm.  Pointwise monotone in the floor."""
    q = p / (p - 1.0)
    out = []
    for psi in bank:
        G = gradient(psi)
        diff = p_flux(G, mu, p) - p_flux(G, 0.0, p)
        out.append(_grad_lq(diff, q))
    return tuple(out)


def _grad_lq(G, q: float) -> float:
    """Entrywise L^q norm of a face-gradient object, h-weighted."""
    hvol = G.grid.cell_volume
    total = 0.0
    for part in G.parts:
        total += float(np.sum(np.abs(part) ** q))
    return (hvol * total) ** (1.0 / q)


def _point_params(plan: SweepPlan, swept: str, value: float) -> tuple[ProblemParams, object, float]:
    if swept == "nu":
        return (
            ProblemParams(p=plan.p, mu=plan.mu, nu=value, eps_conv=plan.eps_conv),
            solve_regularized,
            plan.mu,
        )
    return (
        ProblemParams(p=plan.p, mu=value, nu=0.0, eps_conv=plan.eps_conv),
        solve_inviscid,
        value,
    )


def _run_sweep(plan: SweepPlan, swept: str, mapper=None) -> CascadeReport:
    v0 = initial_datum(plan.grid, preset=plan.preset, amplitude=plan.amplitude, seed=plan.seed)
    bank = cascade_bank(plan.grid, plan.bank_seed)
    bank_grads = [gradient(psi) for psi in bank]

    def solve_point(item):
        k, value = item
        params, solve, _ = _point_params(plan, swept, value)
        try:
            return k, solve(v0, params, plan.config)
        except SolverError as err:
            return k, err

    # points are independent; a mapper (e.g. a thread pool's map) may run
    # them concurrently, and the prefix before the first failure is kept
    # either way, so reports do not depend on the execution order
    results: list[RunResult] = []
    partial = False
    failed_at = None
    failure = None
    for k, outcome in (mapper or map)(solve_point, enumerate(plan.schedule)):
        if isinstance(outcome, SolverError):
            partial = True
            failed_at = k
            failure = str(outcome)
            break
        results.append(outcome)

    aggregates: list[float] = []
    overshoots: list[float] = []
    linf_max: list[float] = []
    digests: list[dict] = []
    distances: list[float] = []
    distances_l2: list[float] = []
    flux_probes: list[tuple[float, ...]] = []
    rate_probes: list[tuple[float, ...]] = []
    prev: Trajectory | None = None
    last_result: RunResult | None = None

    for k, result in enumerate(results):
        value = plan.schedule[k]
        point_mu = plan.mu if swept == "nu" else value
        aggregates.append(result.audits["aggregate_k1"])
        overshoots.append(result.audits["overshoot"])
        linf_max.append(result.audits["max_linf"])
        digests.append(_ledger_digest(result))
        flux_probes.append(_flux_probe(result, point_mu, plan.p, bank_grads))
        if swept == "nu":
            rate_probes.append(_viscous_probe(result, value, bank_grads))
        else:
            rate_probes.append(_collapse_probe(bank, value, plan.p))
        if prev is not None:
            distances.append(_trajectory_distance(prev, result.trajectory, plan.p))
            distances_l2.append(_trajectory_distance(prev, result.trajectory, 2.0))
        prev = result.trajectory
        last_result = result

    minty_gaps: tuple[float, ...] = ()
    cross = None
    limit_overshoot = None
    if last_result is not None and not partial:
        gap_mu = plan.mu if swept == "nu" else 0.0
        minty_gaps = tuple(minty_check(last_result, bank, gap_mu, plan.p))
        if swept == "mu":
            limit_params = ProblemParams(p=plan.p, mu=0.0, nu=0.0, eps_conv=plan.eps_conv)
            try:
                limit_result = solve_limit(v0, limit_params, plan.config)
                cross = _trajectory_distance(
                    last_result.trajectory, limit_result.trajectory, plan.p
                )
                limit_overshoot = limit_result.audits["overshoot"]
            except SolverError as err:
                partial = True
                failed_at = len(plan.schedule)
                failure = f"limit cross-check: {err}"

    return CascadeReport(
        swept=swept,
        schedule=plan.schedule,
        aggregates=tuple(aggregates),
        overshoots=tuple(overshoots),
        linf_max=tuple(linf_max),
        ledger_digests=tuple(digests),
        distances=tuple(distances),
        distances_l2=tuple(distances_l2),
        flux_probes=tuple(flux_probes),
        rate_probes=tuple(rate_probes),
        minty_gaps=minty_gaps,
        partial=partial,
        failed_at=failed_at,
        failure=failure,
        cross_check_distance=cross,
        limit_overshoot=limit_overshoot,
        final_state=last_result.trajectory[-1] if last_result is not None else None,
    )


def nu_sweep(plan: SweepPlan, mapper=None) -> CascadeReport:
    """Vanishing-viscosity sweep at a fixed positive coefficient floor.

    Per point: stability aggregate, overshoot, ledger digest, flux
    probes; between points: trajectory distances; at the end: convexity
    gaps of the smallest-viscosity run.  The rate probe is the viscous
    pairing, expected to shrink at least like the square root of the
    viscosity.  mapper, if given, runs the independent sweep points
    (e.g. a thread pool's map); the report is order-independent."""
    if not (plan.mu > 0.0):
        raise ValueError("viscosity sweep needs a fixed positive mu")
    return _run_sweep(plan, "nu", mapper)


def mu_sweep(plan: SweepPlan, mapper=None) -> CascadeReport:
    """Vanishing-floor sweep along the zero-viscosity route.

    As the viscosity sweep, plus the flux-collapse probe per bank field
    and a cross-check of the last point against the direct floored solve
    of the degenerate problem."""
    return _run_sweep(plan, "mu", mapper)


def minty_check(v_limit, bank: list[VectorField], mu_or_zero: float, p: float) -> list[float]:
    """Convexity gaps of the limit run against a comparison bank.

    For each bank field the time-integrated pairing of (run flux minus
    bank flux) against (run gradient minus bank gradient), both fluxes
    at the same coefficient floor.  Convexity of the potential makes
    every quadrature cell nonnegative, so gaps clear -1e-10 * scale with
    no analytic argument needed.  Accepts a RunResult or a bare
    Trajectory."""
    traj = v_limit.trajectory if isinstance(v_limit, RunResult) else v_limit
    if not isinstance(traj, Trajectory):
        raise TypeError("v_limit must be a RunResult or Trajectory")
    if len(bank) < 8:
        raise ValueError("comparison bank needs at least 8 fields")
    dt = traj.dt
    hvol = traj.grid.cell_volume
    gaps = []
    for psi in bank:
        Gpsi = gradient(psi)
        Fpsi = p_flux(Gpsi, mu_or_zero, p)
        total = 0.0
        for n in range(1, len(traj)):
            Gv = gradient(traj[n])
            Fv = p_flux(Gv, mu_or_zero, p)
            step = 0.0
            for k in range(traj.grid.d):
                step += float(
                    np.sum(
                        (Fv.parts[k] - Fpsi.parts[k]) * (Gv.parts[k] - Gpsi.parts[k])
                    )
                )
            total += dt * hvol * step
        gaps.append(total)
    return gaps


def ibp_identity_check(u: Trajectory, w: Trajectory) -> float:
    """Relative residual of the discrete product rule: the endpoint
    pairing difference against the sum of midpoint-weighted discrete
    derivatives.  Exact by polarization, so the residual is rounding."""
    if u.grid != w.grid:
        raise ValueError("trajectories live on different grids")
    if abs(u.dt - w.dt) > 1e-15 * max(u.dt, w.dt) or len(u) != len(w):
        raise ValueError("trajectories use different time lattices")
    dt = u.dt
    lhs = inner(u[len(u) - 1], w[len(w) - 1]) - inner(u[0], w[0])
    rhs = 0.0
    for n in range(len(u) - 1):
        du = u[n + 1] - u[n]
        dw = w[n + 1] - w[n]
        umid = (u[n] + u[n + 1]) * 0.5
        wmid = (w[n] + w[n + 1]) * 0.5
        rhs += inner(du, wmid) + inner(umid, dw)
    scale = max(abs(lhs), abs(rhs), 1e-300)
    return abs(lhs - rhs) / scale if max(abs(lhs), abs(rhs)) > 0 else 0.0


def sum_norm_upper(
    u: Trajectory,
    f: list[VectorField],
    g: list[VectorField],
    p: float,
    bank: list[VectorField] | None = None,
) -> float:
    """Fixed-decomposition upper bound for the sum-space norm of the
    discrete time derivative of u.

    f and g are per-step fields with f_n + g_n equal to the difference
    quotient on step n; the value is the Bochner p-norm of f plus the
    conjugate-exponent quadrature of the duality proxy of g over the
    smooth bank (pairing divided by the full first-order norm).
    """
    if not (1.0 < p <= 2.0):
        raise ValueError(f"p must lie in (1, 2], got {p}")
    N = len(u) - 1
    if not (len(f) == len(g) == N):
        raise ValueError("decomposition must supply one (f, g) pair per step")
    dt = u.dt
    scale = max(norm(u[n], Lp(2.0)) for n in range(len(u))) / dt
    for n in range(N):
        du = (u[n + 1] - u[n]) * (1.0 / dt)
        mismatch = norm(du - (f[n] + g[n]), Lp(2.0))
        if mismatch > 1e-10 * max(scale, 1.0):
            raise ValueError(f"f + g differs from the difference quotient on step {n}")
    if bank is None:
        bank = cascade_bank(u.grid)
    q = p / (p - 1.0)
    bank_data = []
    for psi in bank:
        full = (norm(psi, Lp(p)) ** p + norm(psi, W1pSeminorm(p)) ** p) ** (1.0 / p)
        if full > 0.0:
            bank_data.append((psi, full))
    f_part = (sum(dt * norm(fn, Lp(p)) ** p for fn in f)) ** (1.0 / p)
    g_part = 0.0
    for gn in g:
        s = max((abs(inner(gn, psi)) / full for psi, full in bank_data), default=0.0)
        g_part += dt * s**q
    return f_part + g_part ** (1.0 / q)


def save_cascade_report(path, report: CascadeReport, fields: dict | None = None) -> None:
    """report.json plus a one-row-per-point CSV; optionally dump named
    fields alongside (e.g. first/last sweep states)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    payload = {
        "schema": "plap-cascade-1",
        "swept": report.swept,
        "schedule": list(report.schedule),
        "aggregates": list(report.aggregates),
        "overshoots": list(report.overshoots),
        "linf_max": list(report.linf_max),
        "ledger_digests": list(report.ledger_digests),
        "distances": list(report.distances),
        "distances_l2": list(report.distances_l2),
        "flux_probes": [list(row) for row in report.flux_probes],
        "rate_probes": [list(row) for row in report.rate_probes],
        "minty_gaps": list(report.minty_gaps),
        "partial": report.partial,
        "failed_at": report.failed_at,
        "failure": report.failure,
        "cross_check_distance": report.cross_check_distance,
        "limit_overshoot": report.limit_overshoot,
    }
    (root / "report.json").write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
    lines = ["# plap-cascade 1", "index,value,aggregate,overshoot,linf_max,max_residual,distance_to_next"]
    for k in range(len(report.aggregates)):
        dist = repr(report.distances[k]) if k < len(report.distances) else ""
        lines.append(
            f"{k},{repr(report.schedule[k])},{repr(report.aggregates[k])},"
            f"{repr(report.overshoots[k])},{repr(report.linf_max[k])},"
            f"{repr(report.ledger_digests[k]['max_residual'])},{dist}"
        )
    (root / "points.csv").write_text("\n".join(lines) + "\n")
    if report.final_state is not None:
        save_field(root / "final.plap", report.final_state)
    if fields:
        for name, fld in fields.items():
            save_field(root / f"{name}.plap", fld)
