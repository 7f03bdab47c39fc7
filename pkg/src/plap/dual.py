"""Backward-in-time companion problem and the audits built on it.

Given a stored forward trajectory, we assemble the linear parabolic
system that runs backward from a terminal probe: its diffusion tensor is
the isotropic coefficient of the space-time-smoothed, time-reversed
gradient, and its transport field is the mollified reversed velocity.
Probing the forward solution against this companion problem turns the
sup-norm bound into a chain of three measurable quantities: an L1
contraction ratio, a pairing identity residual, and the smoothing-gap
integral that separates the smoothed coefficient from the raw one.

Discretization choices that the audits lean on:

- Transport is upwinded in conservation form with face-mean velocities.
  Together with backward Euler this makes every step matrix an M-matrix
  (checked at assembly, reported on the run): off-diagonal entries are
  nonpositive and column sums are >= 1, so each step is an exact L1
  contraction up to linear-algebra rounding.  No time-step restriction
  is needed.
- Coefficients are piecewise constant in time on the shared lattice.
  The diffusion coefficient of step j -> j+1 is taken at reversed index
  j, which is forward index N-j: the same snapshot whose raw coefficient
  enters the forward scheme on that interval.  As the smoothing radius
  shrinks below the lattice scale the two coefficients coincide exactly
  and the gap integral vanishes on the nose.
- The transport field of step j -> j+1 is the mollified reversed field
  at reversed index j+1, which is exactly the lagged velocity the
  forward solver used on the matching interval.
- Step systems are nonsymmetric (upwinding), so they are solved by
  sparse LU rather than conjugate gradients; the per-step relative
  residual is recorded.  Probes share one factorization per step and
  advance as a single multi-column solve.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import csc_matrix
from scipy.sparse.linalg import splu

from .mesh import (
    GridSpec,
    Linf,
    Lp,
    Trajectory,
    VectorField,
    gradient,
    inner,
    load_trajectory,
    norm,
    save_trajectory,
)
from .mollify import bump_kernel, mollify_space, mollify_spacetime
from .operators import MU_FLOOR, diffusivity, face_diffusivity, sine_bank
from .solver import SolveConfig, SolverError

__all__ = [
    "DualCoefficients",
    "DualRun",
    "LinfCertificate",
    "build_dual_coefficients",
    "solve_dual",
    "l1_audit",
    "duality_identity",
    "linf_certificate",
    "save_dual_run",
    "load_dual_run",
]


@dataclass(frozen=True)
class DualCoefficients:
    """Per-step coefficient tables for the backward sweep.

    Entry idx (0-based) belongs to step idx -> idx+1 of the sweep:
    b[idx] holds the per-axis face diffusion coefficients, transport[idx]
    the node velocity field, div_transport[idx] its face-mean divergence.
    """

    grid: GridSpec
    ds: float
    steps: int
    eta: float
    mu: float
    p: float
    conv_radius: float
    b: tuple[tuple[np.ndarray, ...], ...]
    transport: tuple[VectorField, ...]
    div_transport: tuple[np.ndarray, ...]

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("need at least one step")
        if not (len(self.b) == len(self.transport) == len(self.div_transport) == self.steps):
            raise ValueError("coefficient tables must have one entry per step")
        cap = diffusivity(0.0, self.mu, self.p) * (1.0 + 1e-12)
        for entry in self.b:
            for arr in entry:
                lo = float(np.min(arr))
                hi = float(np.max(arr))
                if not (lo > 0.0 and hi <= cap):
                    raise ValueError(
                        f"diffusion coefficient outside (0, mu^((p-2)/2)]: [{lo}, {hi}]"
                    )


@dataclass(frozen=True)
class DualRun:
    """Backward sweep output: probe trajectory (index j is arclength
    s = j*ds), per-snapshot L1/sup histories, per-step solve residuals,
    and the worst-case step-matrix structure report."""

    trajectory: Trajectory
    coefficients: DualCoefficients | None
    eta: float
    nu: float
    l1_history: tuple[float, ...]
    linf_history: tuple[float, ...]
    residual_history: tuple[float, ...]
    mmatrix: dict

    @property
    def ds(self) -> float:
        return self.trajectory.dt


@dataclass(frozen=True)
class LinfCertificate:
    """Two-sided sup-norm certificate from a probe sweep.

    lower is the best mass-normalized pairing over the probe bank
    (tight when the bank contains every unit point mass); upper is the
    contraction route through the initial datum plus the worst
    smoothing-gap and identity-residual magnitudes.  Both ends carry a
    1e-13 rounding shade so the bracket survives floating point."""

    lower: float
    upper: float
    measured: float
    max_l1_ratio: float
    max_identity_gap: float
    probes: int


def _lattice_steps(t: float, dt: float) -> int:
    n = int(round(t / dt))
    if n < 1 or abs(n * dt - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"t={t} does not lie on the time lattice of spacing {dt}")
    return n


def _conv_radius(grid: GridSpec, mu: float, eps_conv: float | None) -> float:
    if eps_conv is not None:
        if not (eps_conv > 0.0):
            raise ValueError("eps_conv must be positive when given")
        return float(eps_conv)
    return math.sqrt(max(mu, MU_FLOOR)) * max(grid.extent)


def build_dual_coefficients(
    traj: Trajectory,
    t: float,
    mu: float,
    p: float,
    eta: float,
    eps_conv: float | None = None,
) -> DualCoefficients:
    """Coefficient tables from the time-reversed trajectory on [0, t].

    The reversed gradients are smoothed in space and time with radius
    eta before the diffusivity law is applied; the reversed field itself
    is smoothed spatially (radius tied to mu unless overridden) for the
    transport term, whose face-mean divergence is recorded.
    """
    if not (mu > 0.0):
        raise ValueError("mu must be positive")
    if not (eta > 0.0):
        raise ValueError("eta must be positive")
    N = _lattice_steps(t, traj.dt)
    if N > traj.steps:
        raise ValueError(f"t={t} exceeds the trajectory horizon {traj.horizon}")
    grid = traj.grid
    radius = _conv_radius(grid, mu, eps_conv)
    kernel = bump_kernel(grid.h, radius) if radius > 0.0 else None

    reversed_fields = [traj[N - j] for j in range(N + 1)]
    reversed_grads = [gradient(f) for f in reversed_fields]
    smoothed = mollify_spacetime(reversed_grads, eta, traj.dt)

    b: list[tuple[np.ndarray, ...]] = []
    transport: list[VectorField] = []
    div_transport: list[np.ndarray] = []
    for idx in range(N):
        b.append(face_diffusivity(smoothed[idx], mu, p))
        w = reversed_fields[idx + 1]
        if kernel is not None:
            w = mollify_space(w, radius, kernel=kernel)
        transport.append(w)
        div_transport.append(_face_mean_divergence(w))
    return DualCoefficients(
        grid=grid,
        ds=traj.dt,
        steps=N,
        eta=float(eta),
        mu=float(mu),
        p=float(p),
        conv_radius=radius,
        b=tuple(b),
        transport=tuple(transport),
        div_transport=tuple(div_transport),
    )


def _axis_slice(d: int, k: int, s) -> tuple:
    out = [slice(None)] * d
    out[k] = s
    return tuple(out)


def _face_mean_velocity(wk: np.ndarray, k: int) -> np.ndarray:
    """Face values of one velocity component: mean of the adjacent nodes,
    zero ghosts outside the boundary."""
    d = wk.ndim
    shape = list(wk.shape)
    shape[k] += 1
    out = np.zeros(shape)
    out[_axis_slice(d, k, slice(1, -1))] = 0.5 * (
        wk[_axis_slice(d, k, slice(1, None))] + wk[_axis_slice(d, k, slice(0, -1))]
    )
    out[_axis_slice(d, k, slice(0, 1))] = 0.5 * wk[_axis_slice(d, k, slice(0, 1))]
    out[_axis_slice(d, k, slice(-1, None))] = 0.5 * wk[_axis_slice(d, k, slice(-1, None))]
    return out


def _face_mean_divergence(w: VectorField) -> np.ndarray:
    """Divergence the upwind stencil sees: backward difference of the
    face-mean velocity, summed over axes."""
    grid = w.grid
    out = np.zeros(grid.n)
    for k, hk in enumerate(grid.h):
        wf = _face_mean_velocity(w.values[k], k)
        d = wf.ndim
        out += (
            wf[_axis_slice(d, k, slice(1, None))] - wf[_axis_slice(d, k, slice(0, -1))]
        ) / hk
    return out


class _SweepIndexing:
    """Flat-index bookkeeping shared by every step matrix of one grid."""

    def __init__(self, grid: GridSpec):
        self.grid = grid
        self.nodes = int(np.prod(grid.n))
        idx = np.arange(self.nodes).reshape(grid.n)
        d = grid.d
        self.ilo = [idx[_axis_slice(d, k, slice(0, -1))].ravel() for k in range(d)]
        self.ihi = [idx[_axis_slice(d, k, slice(1, None))].ravel() for k in range(d)]
        self.first = [idx[_axis_slice(d, k, slice(0, 1))].ravel() for k in range(d)]
        self.last = [idx[_axis_slice(d, k, slice(-1, None))].ravel() for k in range(d)]
        self.diag_idx = np.arange(self.nodes)


def _assemble_step(
    indexing: _SweepIndexing,
    ds: float,
    nu: float,
    b_faces: tuple[np.ndarray, ...],
    velocity: VectorField,
):
    """One implicit step matrix I + ds*(diffusion + upwind transport).

    The transport field enters with a flipped sign (the equation moves
    it to the left-hand side).  Returns the sparse matrix plus the
    structure report (largest off-diagonal entry, smallest column sum).
    """
    grid = indexing.grid
    d = grid.d
    nodes = indexing.nodes
    diag = np.ones(nodes)
    colsum = np.ones(nodes)
    rows_list = []
    cols_list = []
    vals_list = []
    max_offdiag = -math.inf
    for k in range(d):
        hk = grid.h[k]
        c = ds * (nu + b_faces[k]) / (hk * hk)
        wf = ds * _face_mean_velocity(-velocity.values[k], k) / hk
        wpos = np.maximum(wf, 0.0)
        wneg = np.minimum(wf, 0.0)
        fd = c.ndim
        inner_sl = _axis_slice(fd, k, slice(1, -1))
        first_sl = _axis_slice(fd, k, slice(0, 1))
        last_sl = _axis_slice(fd, k, slice(-1, None))

        c_int = c[inner_sl].ravel()
        wp_int = wpos[inner_sl].ravel()
        wn_int = wneg[inner_sl].ravel()
        ilo, ihi = indexing.ilo[k], indexing.ihi[k]
        diag[ilo] += c_int + wp_int
        diag[ihi] += c_int - wn_int
        val_lohi = -c_int + wn_int
        val_hilo = -c_int - wp_int
        rows_list += [ilo, ihi]
        cols_list += [ihi, ilo]
        vals_list += [val_lohi, val_hilo]
        colsum[ihi] += val_lohi
        colsum[ilo] += val_hilo
        colsum[ilo] += c_int + wp_int
        colsum[ihi] += c_int - wn_int
        if val_lohi.size:
            max_offdiag = max(max_offdiag, float(np.max(val_lohi)), float(np.max(val_hilo)))

        c_first = c[first_sl].ravel()
        c_last = c[last_sl].ravel()
        wn_first = wneg[first_sl].ravel()
        wp_last = wpos[last_sl].ravel()
        first, last = indexing.first[k], indexing.last[k]
        diag[first] += c_first - wn_first
        diag[last] += c_last + wp_last
        colsum[first] += c_first - wn_first
        colsum[last] += c_last + wp_last

    rows = np.concatenate(rows_list + [indexing.diag_idx])
    cols = np.concatenate(cols_list + [indexing.diag_idx])
    vals = np.concatenate(vals_list + [diag])
    M = csc_matrix((vals, (rows, cols)), shape=(nodes, nodes))
    report = {
        "max_offdiagonal": max_offdiag if max_offdiag > -math.inf else 0.0,
        "min_column_sum": float(np.min(colsum)),
    }
    return M, report


def _sweep(coeffs: DualCoefficients, nu: float, cols0: np.ndarray, on_step):
    """Advance the multi-column probe state through every step.

    cols0 has shape (nodes, C).  on_step(step_index, state, residual) is
    called after each accepted step with the updated state.  Returns the
    aggregated step-matrix report.
    """
    indexing = _SweepIndexing(coeffs.grid)
    state = np.array(cols0, dtype=np.float64)
    worst = {"max_offdiagonal": -math.inf, "min_column_sum": math.inf}
    for idx in range(coeffs.steps):
        M, report = _assemble_step(indexing, coeffs.ds, nu, coeffs.b[idx], coeffs.transport[idx])
        worst["max_offdiagonal"] = max(worst["max_offdiagonal"], report["max_offdiagonal"])
        worst["min_column_sum"] = min(worst["min_column_sum"], report["min_column_sum"])
        try:
            lu = splu(M)
            new = lu.solve(state)
        except RuntimeError as exc:
            raise SolverError(
                f"backward step {idx + 1} factorization failed: {exc}",
                step_index=idx + 1,
            ) from exc
        if new.ndim == 1:
            new = new[:, None] if state.ndim == 2 else new
        bnorm = math.sqrt(float(np.sum(state * state)))
        if bnorm > 0.0:
            resid = M @ new - state
            rel = math.sqrt(float(np.sum(resid * resid))) / bnorm
        else:
            rel = 0.0
        if not np.isfinite(new).all() or rel > 1e-6:
            raise SolverError(
                f"backward step {idx + 1} solve lost accuracy (residual {rel:.3e})",
                residual=rel,
                step_index=idx + 1,
            )
        state = new
        on_step(idx + 1, state, rel)
    worst["ok"] = bool(
        worst["max_offdiagonal"] <= 1e-15 and worst["min_column_sum"] >= 1.0 - 1e-12
    )
    return worst


def solve_dual(
    phi0: VectorField,
    coeffs: DualCoefficients,
    nu: float,
    config: SolveConfig | None = None,
) -> DualRun:
    """Backward-Euler sweep of the companion problem from the probe phi0.

    Components decouple (the diffusion coefficient is isotropic and the
    transport acts componentwise), so one matrix per step advances all
    of them as a joint multi-column solve.  config is accepted for
    interface symmetry with the forward solver; the steps are solved
    directly, and each relative residual is recorded on the run.
    """
    del config
    if not (nu > 0.0):
        raise ValueError("nu must be positive for the backward sweep")
    if phi0.grid != coeffs.grid:
        raise ValueError("probe lives on a different grid than the coefficients")
    grid = coeffs.grid
    m = phi0.m
    nodes = int(np.prod(grid.n))
    hvol = grid.cell_volume
    cols = phi0.values.reshape(m, nodes).T.copy()

    snapshots = [phi0]
    l1 = [norm(phi0, Lp(1.0))]
    linf = [norm(phi0, Linf())]
    residuals: list[float] = []

    def on_step(idx: int, state: np.ndarray, rel: float):
        field = VectorField(grid, state.T.reshape((m,) + grid.n).copy())
        snapshots.append(field)
        l1.append(hvol * float(np.sum(np.abs(state))))
        linf.append(float(np.max(np.abs(state))) if state.size else 0.0)
        residuals.append(rel)

    worst = _sweep(coeffs, nu, cols, on_step)
    return DualRun(
        trajectory=Trajectory(tuple(snapshots), coeffs.ds),
        coefficients=coeffs,
        eta=coeffs.eta,
        nu=float(nu),
        l1_history=tuple(l1),
        linf_history=tuple(linf),
        residual_history=tuple(residuals),
        mmatrix=worst,
    )


def l1_audit(run: DualRun) -> float:
    """Largest ratio ||phi(s)||_1 / ||phi0||_1 over the whole sweep,
    the initial snapshot included.  A zero probe reports 1 by
    convention."""
    base = run.l1_history[0]
    if base == 0.0:
        return 1.0
    return max(run.l1_history) / base


def duality_identity(
    traj: Trajectory,
    run: DualRun,
    t: float,
    mu: float,
    p: float,
    eta: float,
    phi0: VectorField,
) -> tuple[float, float, float]:
    """Both sides of the pairing identity and the smoothing-gap integral.

    lhs pairs the forward state at time t with the probe datum; rhs
    pairs the initial datum with the swept probe and adds the quadrature
    of (smoothed coefficient - raw coefficient) against the gradient
    products.  The leftover lhs - rhs collects the upwind/centered
    transport mismatch, the nonlinear acceptance residuals, and the
    endpoint quadrature bias; its size is the audit."""
    coeffs = run.coefficients
    if coeffs is None:
        raise ValueError("run carries no coefficients (reloaded runs cannot be audited)")
    if traj.grid != coeffs.grid:
        raise ValueError("trajectory and run live on different grids")
    if abs(traj.dt - coeffs.ds) > 1e-15 * max(traj.dt, coeffs.ds):
        raise ValueError("trajectory and run use different time steps")
    if not (coeffs.mu == mu and coeffs.p == p and coeffs.eta == eta and run.eta == eta):
        raise ValueError("mu/p/eta do not match the run's coefficients")
    N = _lattice_steps(t, traj.dt)
    if N != coeffs.steps:
        raise ValueError(f"run has {coeffs.steps} steps but t={t} needs {N}")
    if N > traj.steps:
        raise ValueError(f"t={t} exceeds the trajectory horizon {traj.horizon}")
    if not np.array_equal(phi0.values, run.trajectory[0].values):
        raise ValueError("phi0 is not the datum this run was swept from")

    hvol = traj.grid.cell_volume
    ds = traj.dt
    lhs = inner(traj[N], phi0)
    gap = 0.0
    for idx in range(N):
        v_next = gradient(traj[N - idx])
        a = face_diffusivity(v_next, mu, p)
        phi_grad = gradient(run.trajectory[idx + 1])
        step_sum = 0.0
        for k in range(traj.grid.d):
            prod = np.sum(v_next.parts[k] * phi_grad.parts[k], axis=0)
            step_sum += float(np.sum((coeffs.b[idx][k] - a[k]) * prod))
        gap += ds * hvol * step_sum
    rhs = inner(traj[0], run.trajectory[N]) + gap
    return lhs, rhs, gap


def _unit_l1_point_probes(grid: GridSpec, picks: np.ndarray) -> list[VectorField]:
    """One-hot probes of unit L1 mass at the given flat (component, node)
    positions."""
    nodes = int(np.prod(grid.n))
    m = grid.d
    out = []
    for flat in picks:
        c, node = divmod(int(flat), nodes)
        values = np.zeros((m,) + grid.n)
        values.reshape(m, nodes)[c, node] = 1.0 / grid.cell_volume
        out.append(VectorField(grid, values))
    return out


def _default_probe_bank(grid: GridSpec, seed: int) -> list[VectorField]:
    nodes = int(np.prod(grid.n))
    m = grid.d
    total = m * nodes
    if max(grid.n) <= 32:
        picks = np.arange(total)
    else:
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(zlib.crc32(b"point-probes"),))
        rng = np.random.default_rng(ss)
        picks = rng.choice(total, size=min(64, total), replace=False)
        picks.sort()
    bank = _unit_l1_point_probes(grid, picks)
    for field in sine_bank(grid, count=4):
        mass = norm(field, Lp(1.0))
        if mass > 0.0:
            bank.append(field * (1.0 / mass))
    return bank


def linf_certificate(
    traj: Trajectory,
    t: float,
    mu: float,
    p: float,
    nu: float,
    eta: float,
    bank: list[VectorField] | None = None,
    seed: int = 0,
    eps_conv: float | None = None,
) -> LinfCertificate:
    """Certified two-sided bracket of the sup norm at time t.

    Every probe is swept backward through one shared factorization per
    step; the lower bound is the best pairing against the forward state,
    the upper bound routes through the initial datum via the measured L1
    ratio plus the worst smoothing-gap and identity-residual magnitudes.
    """
    N = _lattice_steps(t, traj.dt)
    if N > traj.steps:
        raise ValueError(f"t={t} exceeds the trajectory horizon {traj.horizon}")
    grid = traj.grid
    if bank is None:
        bank = _default_probe_bank(grid, seed)
    if not bank:
        raise ValueError("probe bank is empty")
    masses = np.empty(len(bank))
    for q, field in enumerate(bank):
        masses[q] = norm(field, Lp(1.0))
        if abs(masses[q] - 1.0) > 1e-6:
            raise ValueError(f"probe {q} has L1 mass {masses[q]}, expected 1")

    coeffs = build_dual_coefficients(traj, t, mu, p, eta, eps_conv=eps_conv)
    m = grid.d
    nodes = int(np.prod(grid.n))
    hvol = grid.cell_volume
    n_probes = len(bank)

    # columns are (probe, component) scalar slices; the step matrix is
    # shared by all of them
    cols = np.empty((nodes, n_probes * m))
    col_probe = np.empty(n_probes * m, dtype=np.intp)
    col_comp = np.empty(n_probes * m, dtype=np.intp)
    for q, field in enumerate(bank):
        flat = field.values.reshape(m, nodes)
        for c in range(m):
            j = q * m + c
            cols[:, j] = flat[c]
            col_probe[j] = q
            col_comp[j] = c

    l1_max = np.full(n_probes, -math.inf)

    def track_l1(state: np.ndarray):
        per_col = hvol * np.sum(np.abs(state), axis=0)
        per_probe = np.bincount(col_probe, weights=per_col, minlength=n_probes)
        np.maximum(l1_max, per_probe, out=l1_max)

    track_l1(cols)
    l1_base = l1_max.copy()
    gap_cols = np.zeros(n_probes * m)
    v0_flat = traj[0].values.reshape(m, nodes)
    rhs_pair = np.zeros(n_probes)

    def on_step(idx: int, state: np.ndarray, rel: float):
        del rel
        track_l1(state)
        v_next = gradient(traj[N - (idx - 1)])
        a = face_diffusivity(v_next, mu, p)
        shaped = state.reshape(grid.n + (state.shape[1],))
        for k, hk in enumerate(grid.h):
            weight = (coeffs.b[idx - 1][k] - a[k])[None] * v_next.parts[k]
            padded = np.pad(shaped, [(1, 1) if ax == k else (0, 0) for ax in range(grid.d)] + [(0, 0)])
            gcols = np.diff(padded, axis=k) / hk
            for c in range(m):
                sel = np.flatnonzero(col_comp == c)
                if sel.size:
                    gap_cols[sel] += coeffs.ds * hvol * np.sum(
                        gcols[..., sel] * weight[c][..., None],
                        axis=tuple(range(gcols.ndim - 1)),
                    )
        if idx == N:
            for c in range(m):
                sel = np.flatnonzero(col_comp == c)
                contrib = hvol * (v0_flat[c] @ state[:, sel])
                np.add.at(rhs_pair, col_probe[sel], contrib)

    _sweep(coeffs, nu, cols, on_step)

    gap_probe = np.bincount(col_probe, weights=gap_cols, minlength=n_probes)
    lhs_probe = np.array([inner(traj[N], field) for field in bank])
    resid_probe = lhs_probe - (rhs_pair + gap_probe)
    ratios = l1_max / l1_base
    max_ratio = float(np.max(ratios))
    v0_sup = norm(traj[0], Linf())
    # pairings are normalized by each probe's stored mass (the datum
    # holds fl(1/hvol), and a raw pairing inherits that rounding), then
    # both ends are shaded by a relative rounding margin: a bracket that
    # floating point can violate by an ulp is not a bracket
    lower = float(np.max(np.abs(lhs_probe) / masses)) * (1.0 - 1e-13)
    upper = (
        v0_sup * max_ratio + float(np.max(np.abs(gap_probe) + np.abs(resid_probe)))
    ) * (1.0 + 1e-13)
    return LinfCertificate(
        lower=lower,
        upper=upper,
        measured=norm(traj[N], Linf()),
        max_l1_ratio=max_ratio,
        max_identity_gap=float(np.max(np.abs(gap_probe) + np.abs(resid_probe))),
        probes=n_probes,
    )


_AUDIT_HEADER = "# plap-dual-audit 1"


def save_dual_run(path, run: DualRun) -> None:
    """result.json + audit.csv + trajectory/ under path."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    meta = {
        "schema": "plap-dual-1",
        "ds": run.ds,
        "steps": run.trajectory.steps,
        "eta": run.eta,
        "nu": run.nu,
        "mmatrix": run.mmatrix,
        "mu": run.coefficients.mu if run.coefficients is not None else None,
        "p": run.coefficients.p if run.coefficients is not None else None,
        "conv_radius": run.coefficients.conv_radius if run.coefficients is not None else None,
    }
    (root / "result.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    lines = [_AUDIT_HEADER, "s,l1,linf,residual"]
    for j in range(len(run.l1_history)):
        res = run.residual_history[j - 1] if j > 0 else 0.0
        lines.append(
            f"{repr(j * run.ds)},{repr(run.l1_history[j])},"
            f"{repr(run.linf_history[j])},{repr(res)}"
        )
    (root / "audit.csv").write_text("\n".join(lines) + "\n")
    save_trajectory(root / "trajectory", run.trajectory)


def load_dual_run(path) -> DualRun:
    """Rebuild a saved sweep.  Coefficient tables are not serialized, so
    the loaded run supports the L1 audit but not the pairing identity."""
    root = Path(path)
    meta = json.loads((root / "result.json").read_text())
    if meta.get("schema") != "plap-dual-1":
        raise ValueError(f"unrecognized result schema: {meta.get('schema')!r}")
    text = (root / "audit.csv").read_text().splitlines()
    if not text or text[0] != _AUDIT_HEADER:
        raise ValueError("unrecognized audit csv header")
    l1, linf, residuals = [], [], []
    for row in text[2:]:
        _, a, b, r = row.split(",")
        l1.append(float(a))
        linf.append(float(b))
        residuals.append(float(r))
    return DualRun(
        trajectory=load_trajectory(root / "trajectory"),
        coefficients=None,
        eta=float(meta["eta"]),
        nu=float(meta["nu"]),
        l1_history=tuple(l1),
        linf_history=tuple(linf),
        residual_history=tuple(residuals[1:]),
        mmatrix=dict(meta["mmatrix"]),
    )
