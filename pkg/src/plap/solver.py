"""Backward-Euler integration of the regularized flow with a
frozen-coefficient inner iteration, plus the energy bookkeeping that
turns every run into an auditable object.

Each time step freezes the diffusivity at the current inner iterate and
the transport velocity at the previous time level, moves the transport
term to the right-hand side, and solves the remaining symmetric
positive-definite system (mass/dt plus weighted stiffness) with a
Jacobi-preconditioned conjugate-gradient iteration.  At the fixed point
the transported field is implicit; a config flag freezes it at the
previous time level instead (fully lagged transport), which is the
variant whose overshoot actually exercises the maximum-principle audit.

Three regimes share the stepper: viscous-regularized (nu, mu > 0),
inviscid-regularized (nu = 0, mu > 0), and the floored direct solve of
the degenerate limit (nu = mu = 0: coefficient floored at MU_FLOOR,
transport velocity unsmoothed).
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, replace

import numpy as np

from .mesh import (
    Bochner,
    GridSpec,
    Linf,
    Lp,
    Trajectory,
    VectorField,
    W1pSeminorm,
    _raw_centered,
    _raw_divergence,
    _raw_gradient,
    norm,
    save_trajectory,
    load_trajectory,
)
from .mollify import Kernel, bump_kernel, mollify_space
from .operators import MU_FLOOR, ProblemParams

__all__ = [
    "SolveConfig",
    "EnergyLedger",
    "RunResult",
    "SolverError",
    "local_horizon",
    "energy_bound",
    "initial_datum",
    "step",
    "solve_regularized",
    "solve_inviscid",
    "solve_limit",
    "save_run",
    "load_run",
]


class SolverError(RuntimeError):
    """Inner iteration or linear solve failed; carries the step index
    (filled by the driver) and the last residual seen."""

    def __init__(self, message: str, residual: float = math.nan, step_index: int = -1):
        super().__init__(message)
        self.residual = residual
        self.step_index = step_index


@dataclass(frozen=True)
class SolveConfig:
    dt: float
    t_end: float
    picard_tol: float = 1e-10
    picard_max_iter: int = 50
    linear_tol: float = 1e-12
    linear_max_iter: int = 20000
    # transported field: "implicit" (default) | "explicit" (fully lagged)
    # | "none" (transport suppressed; linear sanity cases)
    convection: str = "implicit"
    snapshot_stride: int = 1

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive and finite")
        if not self.t_end >= self.dt:
            raise ValueError(f"dt = {self.dt} must not exceed t_end = {self.t_end}")
        if not (self.picard_tol > 0 and self.linear_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.picard_max_iter < 1 or self.linear_max_iter < 1:
            raise ValueError("iteration limits must be >= 1")
        if self.convection not in ("implicit", "explicit", "none"):
            raise ValueError(f"unknown convection treatment {self.convection!r}")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be >= 1")

    @property
    def steps(self) -> int:
        return max(1, int(round(self.t_end / self.dt)))


@dataclass(frozen=True)
class EnergyLedger:
    """Per-step energy accounting.

    Row n (1-based step index) carries the state at the END of step n:
    kinetic = 0.5 ||v^n||_2^2, viscous = nu dt ||grad v^n||_2^2, pdiss =
    dt * sum a |grad v^n|^2, convpower = dt (transport, v^n), residual =
    L2 norm of the full equation residual at acceptance, linf = max
    |v^n|.  The datum's kinetic/linf live in the *_start fields.
    """

    dt: float
    kinetic_start: float
    linf_start: float
    step: np.ndarray
    t: np.ndarray
    kinetic: np.ndarray
    viscous: np.ndarray
    pdiss: np.ndarray
    convpower: np.ndarray
    residual: np.ndarray
    linf: np.ndarray

    _COLUMNS = ("step", "t", "kinetic", "viscous", "pdiss", "convpower", "residual", "linf")

    def __post_init__(self):
        n = len(self.step)
        for name in self._COLUMNS:
            if len(getattr(self, name)) != n:
                raise ValueError("ledger columns must have equal length")
        if np.any(self.viscous < 0) or np.any(self.pdiss < 0):
            raise ValueError("dissipation entries must be >= 0")

    def __len__(self) -> int:
        return len(self.step)

    def inequality_excess(self) -> np.ndarray:
        """Per step: (kinetic jump + dissipation + transport power) minus
        the allowed slack max(1e-8 * scale, 10 dt residual ||v||_2).
        Nonpositive entries certify the discrete energy inequality."""
        kin_prev = np.concatenate([[self.kinetic_start], self.kinetic[:-1]])
        lhs = (self.kinetic - kin_prev) + self.viscous + self.pdiss + self.convpower
        scale = kin_prev + self.kinetic + self.viscous + self.pdiss + np.abs(self.convpower)
        slack = np.maximum(
            1e-8 * scale,
            10.0 * self.dt * self.residual * np.sqrt(2.0 * self.kinetic),
        )
        return lhs - slack

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as f:
            f.write("# plap-ledger 1\n")
            w = csv.writer(f)
            w.writerow(self._COLUMNS)
            for i in range(len(self)):
                w.writerow(
                    [int(self.step[i])]
                    + [repr(float(getattr(self, c)[i])) for c in self._COLUMNS[1:]]
                )

    @classmethod
    def from_csv(cls, path: str, dt: float, kinetic_start: float, linf_start: float):
        with open(path, newline="") as f:
            head = f.readline()
            if not head.startswith("# plap-ledger 1"):
                raise ValueError(f"{path}: unknown ledger schema")
            rows = list(csv.DictReader(f))
        cols = {c: np.array([float(r[c]) for r in rows]) for c in cls._COLUMNS}
        cols["step"] = cols["step"].astype(int)
        return cls(dt, kinetic_start, linf_start, **cols)


@dataclass
class RunResult:
    trajectory: Trajectory
    ledger: EnergyLedger
    params: ProblemParams
    config: SolveConfig
    iterations: list[int]
    audits: dict

    def __post_init__(self):
        if len(self.ledger) != len(self.trajectory) - 1:
            raise ValueError("ledger length must equal trajectory length - 1")


# ---------------------------------------------------------------------------
# closed-form horizon and bound

def _l2sq(v) -> float:
    if isinstance(v, VectorField):
        return norm(v, Lp(2.0)) ** 2
    x = float(v)
    if x < 0:
        raise ValueError("squared norm must be >= 0")
    return x


def local_horizon(nu: float, mu: float, v0) -> float:
    """nu mu^(3/2) / (2 ||v0||_2^2); infinite for a zero datum.

    ``v0`` may be the datum field or its squared L2 norm."""
    if not (nu > 0 and mu > 0):
        raise ValueError("local horizon needs nu > 0 and mu > 0")
    n2 = _l2sq(v0)
    if n2 == 0.0:
        return math.inf
    return nu * mu ** 1.5 / (2.0 * n2)


def energy_bound(t: float, nu: float, mu: float, v0) -> float:
    """Closed-form bound on ||v(t)||_2^2, valid for t below the bound's
    own blow-up time nu mu^(3/2) / ||v0||_2^2 (twice the local horizon)."""
    if not (nu > 0 and mu > 0):
        raise ValueError("energy bound needs nu > 0 and mu > 0")
    if t < 0:
        raise ValueError("t must be >= 0")
    n2 = _l2sq(v0)
    if n2 == 0.0:
        return 0.0
    B = nu * mu ** 1.5
    if t >= B / n2:
        raise ValueError(f"bound void: t = {t} is at/beyond blow-up {B / n2}")
    return B * n2 / (B - n2 * t)


# ---------------------------------------------------------------------------
# initial data

_DATUM_MODES = ((1, 1, 1), (2, 1, 1), (1, 2, 1))
_BOX_COMPONENT_SCALES = (1.0, 0.5, 0.25)


def initial_datum(grid: GridSpec, preset: str = "bump", amplitude: float = 1.0, seed: int = 0) -> VectorField:
    """Named datum families; the returned field's max-norm equals
    ``amplitude`` by construction (measured on the grid, never assumed)."""
    import zlib

    coords = grid.meshgrid()
    L = grid.extent
    if preset == "bump":
        comps = []
        for i in range(grid.d):
            prof = np.ones(grid.n)
            for k in range(grid.d):
                prof = prof * np.sin(_DATUM_MODES[i][k] * math.pi * coords[k] / L[k])
            comps.append(prof)
        vals = np.stack(comps)
    elif preset == "box":
        inside = np.ones(grid.n, dtype=bool)
        for k in range(grid.d):
            inside &= (coords[k] >= 0.25 * L[k]) & (coords[k] <= 0.75 * L[k])
        base = VectorField(
            grid,
            np.stack([inside.astype(float) * _BOX_COMPONENT_SCALES[i] for i in range(grid.d)]),
        )
        vals = mollify_space(base, 4.0 * max(grid.h)).values.copy()
    elif preset == "random-smooth":
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(zlib.crc32(b"datum"),))
        rng = np.random.default_rng(ss)
        raw = VectorField(grid, rng.standard_normal((grid.d,) + grid.n))
        vals = mollify_space(raw, 4.0 * max(grid.h)).values.copy()
    else:
        raise ValueError(f"unknown datum preset {preset!r}")
    peak = float(np.max(np.abs(vals)))
    if peak > 0:
        vals = vals * (amplitude / peak)
    return VectorField(grid, vals)


# ---------------------------------------------------------------------------
# the stepper

class _Stepper:
    def __init__(self, grid: GridSpec, p: float, mu_eff: float, nu: float,
                 radius: float, config: SolveConfig):
        self.grid = grid
        self.h = grid.h
        self.hvol = grid.cell_volume
        self.p = p
        self.mu = mu_eff
        self.nu = nu
        self.config = config
        self.kernel: Kernel | None = None
        if radius > 0.0:
            self.kernel = bump_kernel(grid.h, radius)
        self.pcg_iterations = 0

    def _velocity(self, v: VectorField) -> np.ndarray:
        if self.kernel is None or self.kernel.degenerate:
            return v.values
        return mollify_space(v, self.kernel.radius, self.kernel).values

    def _convect(self, w: np.ndarray, vals: np.ndarray) -> np.ndarray:
        out = np.zeros_like(vals)
        for k, hk in enumerate(self.h):
            out += w[k] * _raw_centered(vals, k, hk)
        return out

    def _coeffs(self, parts) -> list[np.ndarray]:
        expo = (self.p - 2.0) / 2.0
        return [self.nu + (self.mu + np.sum(q * q, axis=0)) ** expo for q in parts]

    def _pcg(self, c: list[np.ndarray], b: np.ndarray, x0: np.ndarray) -> np.ndarray:
        cfg = self.config
        h = self.h
        d = self.grid.d
        inv_dt = 1.0 / cfg.dt
        diag = np.full(self.grid.n, inv_dt)
        for k, hk in enumerate(h):
            lo = [slice(None)] * d
            hi = [slice(None)] * d
            lo[k] = slice(0, -1)
            hi[k] = slice(1, None)
            diag = diag + (c[k][tuple(lo)] + c[k][tuple(hi)]) / (hk * hk)

        ch = [c[k] / (h[k] * h[k]) for k in range(d)]
        bufs = []
        face_lo, face_hi = [], []
        node_hi, node_lo, node_first, node_last = [], [], [], []
        full_f = [slice(None)] * (d + 1)
        for k in range(d):
            shape = list((d,) + self.grid.n)
            shape[k + 1] += 1
            bufs.append(np.empty(shape))
            s = list(full_f); s[k + 1] = slice(0, -1); face_lo.append(tuple(s))
            s = list(full_f); s[k + 1] = slice(1, None); face_hi.append(tuple(s))
            s = list(full_f); s[k + 1] = slice(1, None); node_hi.append(tuple(s))
            s = list(full_f); s[k + 1] = slice(0, -1); node_lo.append(tuple(s))
            s = list(full_f); s[k + 1] = slice(0, 1); node_first.append(tuple(s))
            s = list(full_f); s[k + 1] = slice(-1, None); node_last.append(tuple(s))
        face_inner = []
        for k in range(d):
            s = list(full_f)
            s[k + 1] = slice(1, -1)
            face_inner.append(tuple(s))

        def apply(x: np.ndarray, out: np.ndarray) -> np.ndarray:
            np.multiply(x, inv_dt, out=out)
            for k in range(d):
                F = bufs[k]
                np.subtract(x[node_hi[k]], x[node_lo[k]], out=F[face_inner[k]])
                F[node_first[k]] = x[node_first[k]]
                np.negative(x[node_last[k]], out=F[node_last[k]])
                F *= ch[k][None]
                out -= F[face_hi[k]]
                out += F[face_lo[k]]
            return out

        bnorm = math.sqrt(float(np.sum(b * b)))
        if bnorm == 0.0:
            return np.zeros_like(b)
        # iterate at unit rhs scale: a saturated-coefficient run decays
        # through hundreds of decades, and unscaled residual dot
        # products would underflow long before the state reaches zero
        b = b / bnorm
        x = x0 / bnorm
        Ap = np.empty_like(b)
        r = b - apply(x, Ap)
        z = r / diag
        rho = float(np.sum(r * z))
        pvec = z.copy()
        for it in range(cfg.linear_max_iter):
            if math.sqrt(float(np.sum(r * r))) <= cfg.linear_tol:
                self.pcg_iterations += it
                return x * bnorm
            apply(pvec, Ap)
            denom = float(np.sum(pvec * Ap))
            if denom <= 0.0:
                # the matrix is SPD, so nonpositive curvature means the
                # direction collapsed at the rounding floor (saturated
                # coefficients push kappa*eps above linear_tol); accept
                # the iterate when the true residual is still far below
                # the nonlinear acceptance, otherwise it is a real failure
                true_rel = math.sqrt(float(np.sum((b - apply(x, Ap)) ** 2)))
                if true_rel <= 1e-8:
                    self.pcg_iterations += it
                    return x * bnorm
                raise SolverError(
                    "linear solver lost positive definiteness", residual=true_rel
                )
            alpha = rho / denom
            x += alpha * pvec
            r -= alpha * Ap
            np.divide(r, diag, out=z)
            rho_new = float(np.sum(r * z))
            pvec *= rho_new / rho
            pvec += z
            rho = rho_new
        true_rel = math.sqrt(float(np.sum((b - apply(x, Ap)) ** 2)))
        if true_rel <= 1e-8:
            self.pcg_iterations += cfg.linear_max_iter
            return x * bnorm
        raise SolverError(
            f"linear solver stagnated after {cfg.linear_max_iter} iterations",
            residual=true_rel,
        )

    def advance(self, v: VectorField) -> tuple[VectorField, dict]:
        cfg = self.config
        vals = v.values
        frozen = cfg.convection != "implicit"
        if cfg.convection == "none":
            w = None
            conv_lagged = np.zeros_like(vals)
        else:
            w = self._velocity(v)
            conv_lagged = self._convect(w, vals)
        base = vals / cfg.dt
        u = vals.copy()
        iterations = 0
        delta = math.inf
        for _ in range(cfg.picard_max_iter):
            iterations += 1
            parts = _raw_gradient(u, self.h)
            c = self._coeffs(parts)
            conv = conv_lagged if frozen else self._convect(w, u)
            u_new = self._pcg(c, base - conv, u)
            diff = u_new - u
            un = math.sqrt(float(np.sum(u_new * u_new)))
            delta = math.sqrt(float(np.sum(diff * diff))) / max(un, 1e-300)
            u = u_new
            if delta <= cfg.picard_tol:
                break
        else:
            raise SolverError(
                f"inner iteration did not reach {cfg.picard_tol} in "
                f"{cfg.picard_max_iter} rounds (last relative update {delta:.3e})",
                residual=delta,
            )
        # ledger entries with the coefficient re-evaluated at the accepted state
        parts = _raw_gradient(u, self.h)
        expo = (self.p - 2.0) / 2.0
        g2 = [np.sum(q * q, axis=0) for q in parts]
        a = [(self.mu + s) ** expo for s in g2]
        conv = conv_lagged if frozen else self._convect(w, u)
        resid = (
            (u - vals) / cfg.dt
            - _raw_divergence([(self.nu + a[k])[None] * parts[k] for k in range(len(self.h))], self.h)
            + conv
        )
        res_l2 = math.sqrt(float(np.sum(resid * resid)) * self.hvol)
        grad2 = sum(float(np.sum(s)) for s in g2)
        info = {
            "iterations": iterations,
            "residual": res_l2,
            "kinetic": 0.5 * float(np.sum(u * u)) * self.hvol,
            "viscous": self.nu * cfg.dt * grad2 * self.hvol,
            "pdiss": cfg.dt * sum(float(np.sum(a[k] * g2[k])) for k in range(len(self.h))) * self.hvol,
            "convpower": cfg.dt * float(np.sum(conv * u)) * self.hvol,
            "linf": float(np.max(np.abs(u))),
        }
        return VectorField(self.grid, u), info


def step(v_n: VectorField, params: ProblemParams, config: SolveConfig):
    """One backward-Euler step from v_n; returns (v_next, info).

    info carries the inner-iteration count, the accepted equation
    residual, and the ledger row entries for the step.  mu = 0 is
    floored at MU_FLOOR for the coefficient (the flux law is singular
    there) and leaves the transport velocity unsmoothed.
    """
    mu_eff = params.mu if params.mu > 0.0 else MU_FLOOR
    stepper = _Stepper(
        v_n.grid, params.p, mu_eff, params.nu, params.conv_radius(v_n.grid), config
    )
    return stepper.advance(v_n)


# ---------------------------------------------------------------------------
# run drivers

def _drive(v0: VectorField, params: ProblemParams, config: SolveConfig,
           scheme: str, mu_eff: float, radius: float) -> RunResult:
    stepper = _Stepper(v0.grid, params.p, mu_eff, params.nu, radius, config)
    n_steps = config.steps
    snaps = [v0]
    rows = {c: [] for c in ("kinetic", "viscous", "pdiss", "convpower", "residual", "linf")}
    iterations = []
    cur = v0
    for n in range(1, n_steps + 1):
        try:
            cur, info = stepper.advance(cur)
        except SolverError as err:
            err.step_index = n
            raise
        snaps.append(cur)
        iterations.append(info["iterations"])
        for c in rows:
            rows[c].append(info[c])
    ledger = EnergyLedger(
        dt=config.dt,
        kinetic_start=0.5 * norm(v0, Lp(2.0)) ** 2,
        linf_start=norm(v0, Linf()),
        step=np.arange(1, n_steps + 1),
        t=config.dt * np.arange(1, n_steps + 1),
        **{c: np.array(rows[c]) for c in rows},
    )
    traj = Trajectory(tuple(snaps), config.dt)
    audits = _run_audits(traj, ledger, params, scheme, mu_eff, radius, stepper)
    return RunResult(traj, ledger, params, config, iterations, audits)


def _run_audits(traj: Trajectory, ledger: EnergyLedger, params: ProblemParams,
                scheme: str, mu_eff: float, radius: float, stepper: _Stepper) -> dict:
    linf0 = ledger.linf_start
    post_peak = float(np.max(ledger.linf)) if len(ledger) else 0.0
    peak = max(linf0, post_peak)
    excess = ledger.inequality_excess()
    audits = {
        "scheme": scheme,
        # signed: max over accepted steps (datum excluded), so a decaying
        # run reports a negative value converging to 0 under refinement
        # and any true sup-norm violation shows up as overshoot > 0
        "overshoot": post_peak / linf0 - 1.0 if linf0 > 0 else 0.0,
        "max_linf": peak,
        "energy_violation_count": int(np.sum(excess > 0)),
        "energy_worst_excess": float(np.max(excess)) if len(excess) else 0.0,
        "aggregate_k1": (
            norm(traj, Bochner(math.inf, Lp(2.0))) ** 2
            + params.nu * norm(traj, Bochner(2.0, W1pSeminorm(2.0))) ** 2
            + norm(traj, Bochner(params.p, W1pSeminorm(params.p))) ** params.p
        ),
        "conv_radius": radius,
        "conv_kernel_degenerate": bool(stepper.kernel is None or stepper.kernel.degenerate),
        "pcg_iterations": stepper.pcg_iterations,
    }
    if mu_eff != params.mu:
        audits["mu_floor"] = mu_eff
    if params.nu > 0 and params.mu > 0 and linf0 > 0:
        v0sq = 2.0 * ledger.kinetic_start
        t_star = local_horizon(params.nu, params.mu, v0sq)
        ratios = []
        for i in range(len(ledger)):
            t = float(ledger.t[i])
            if t <= 0.5 * t_star:
                bound = energy_bound(t, params.nu, params.mu, v0sq)
                ratios.append(2.0 * float(ledger.kinetic[i]) / bound)
        audits["t_star"] = t_star
        audits["energy_bound_max_ratio"] = max(ratios) if ratios else 0.0
        audits["energy_bound_violations"] = int(sum(r > 1.0 + 1e-2 for r in ratios))
    return audits


def solve_regularized(v0: VectorField, params: ProblemParams, config: SolveConfig) -> RunResult:
    """Viscous regularized flow: requires mu > 0 and nu > 0."""
    if not (params.mu > 0 and params.nu > 0):
        raise ValueError("regularized solve requires mu > 0 and nu > 0")
    return _drive(v0, params, config, "regularized", params.mu, params.conv_radius(v0.grid))


def solve_inviscid(v0: VectorField, params: ProblemParams, config: SolveConfig) -> RunResult:
    """Inviscid regularized flow (nu = 0, mu > 0); the dt^-1 mass term
    and the positive coefficient keep the linear systems definite."""
    if params.nu != 0.0:
        raise ValueError("inviscid solve requires nu = 0")
    if not params.mu > 0:
        raise ValueError("inviscid solve requires mu > 0")
    return _drive(v0, params, config, "inviscid", params.mu, params.conv_radius(v0.grid))


def solve_limit(v0: VectorField, params: ProblemParams, config: SolveConfig) -> RunResult:
    """Floored direct solve of the degenerate limit (nu = mu = 0).

    The coefficient uses the MU_FLOOR substitute and the transport
    velocity is the unsmoothed previous state.  The inner iteration is
    given at least 200 rounds (the degenerate coefficient converges
    slowly).  The reference object remains the parameter cascade; this
    run is its cross-check.
    """
    if params.nu != 0.0 or params.mu != 0.0:
        raise ValueError("limit solve requires nu = mu = 0")
    cfg = replace(config, picard_max_iter=max(200, config.picard_max_iter))
    return _drive(v0, params, cfg, "floored-limit", MU_FLOOR, 0.0)


# ---------------------------------------------------------------------------
# serialization

def save_run(dirpath: str, result: RunResult, stride: int | None = None) -> None:
    os.makedirs(dirpath, exist_ok=True)
    meta = {
        "schema": "plap-run-1",
        "params": asdict(result.params),
        "config": asdict(result.config),
        "iterations": result.iterations,
        "audits": result.audits,
        "kinetic_start": result.ledger.kinetic_start,
        "linf_start": result.ledger.linf_start,
        "horizon": result.trajectory.horizon,
    }
    with open(os.path.join(dirpath, "result.json"), "w") as f:
        json.dump(meta, f, sort_keys=True, indent=1)
        f.write("\n")
    result.ledger.to_csv(os.path.join(dirpath, "ledger.csv"))
    save_trajectory(
        os.path.join(dirpath, "trajectory"),
        result.trajectory,
        stride if stride is not None else result.config.snapshot_stride,
    )


def load_run(dirpath: str) -> RunResult:
    with open(os.path.join(dirpath, "result.json")) as f:
        meta = json.load(f)
    if meta.get("schema") != "plap-run-1":
        raise ValueError(f"{dirpath}: unknown run schema")
    params = ProblemParams(**meta["params"])
    config = SolveConfig(**meta["config"])
    ledger = EnergyLedger.from_csv(
        os.path.join(dirpath, "ledger.csv"),
        dt=config.dt,
        kinetic_start=meta["kinetic_start"],
        linf_start=meta["linf_start"],
    )
    traj = load_trajectory(os.path.join(dirpath, "trajectory"))
    return RunResult(traj, ledger, params, config, list(meta["iterations"]), meta["audits"])
