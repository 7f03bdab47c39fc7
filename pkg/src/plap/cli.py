"""Command-line front end: config ingestion, run orchestration, audit
gating, artifact emission.

One declarative TOML file configures everything; flags override the
output directory, seed, snapshot stride, and worker count.  Artifacts
are deterministic for a fixed config and seed: JSON is key-sorted,
numbers are written in round-trip decimal form, and wall-clock
information lives only in sidecar.json, which is the single file
excluded from reproducibility comparisons.

Exit codes: 0 all enabled audits pass; 1 an audit budget was exceeded
(the message names the budget and the measured value); 2 configuration
or input-format error; 3 solver failure; 4 a sweep completed only
partially.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .cascade import (
    SweepPlan,
    cascade_bank,
    ibp_identity_check,
    mu_sweep,
    nu_sweep,
    save_cascade_report,
)
from .dual import (
    build_dual_coefficients,
    duality_identity,
    l1_audit,
    linf_certificate,
    save_dual_run,
    solve_dual,
)
from .mesh import GridSpec, Linf, Lp, Trajectory, VectorField, gradient, norm
from .mollify import bump_kernel, mollify_space, time_bump_kernel
from .operators import (
    ProblemParams,
    coercivity_certificate,
    gradient_lp_control,
    growth_certificate,
    monotonicity_gap,
    smooth_random_bank,
)
from .solver import (
    SolveConfig,
    SolverError,
    initial_datum,
    load_run,
    save_run,
    solve_inviscid,
    solve_limit,
    solve_regularized,
)

EXIT_OK = 0
EXIT_AUDIT = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_PARTIAL = 4


class ConfigError(Exception):
    """Configuration problem; the message names the field and rule."""


# ---------------------------------------------------------------- config


def _load_toml(path: str) -> dict:
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        # the decoder's message carries line/column information
        raise ConfigError(f"{path}: {exc}")


def _get(cfg: dict, table: str, key: str, kind, default):
    src = cfg.get(table, {})
    if not isinstance(src, dict):
        raise ConfigError(f"{table}: expected a table")
    if key not in src:
        return default
    val = src[key]
    if kind is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if kind is not None and not isinstance(val, kind):
        raise ConfigError(f"{table}.{key}: expected {kind.__name__}, got {type(val).__name__}")
    return val


def _build_grid(cfg: dict) -> GridSpec:
    n = _get(cfg, "grid", "n", list, [64, 64])
    extent = _get(cfg, "grid", "extent", list, [1.0] * len(n))
    try:
        return GridSpec.from_extent(n=tuple(int(v) for v in n), extent=tuple(float(v) for v in extent))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"grid: {exc}")


def _build_params(cfg: dict) -> ProblemParams:
    try:
        return ProblemParams(
            p=_get(cfg, "problem", "p", float, 1.5),
            mu=_get(cfg, "problem", "mu", float, 0.1),
            nu=_get(cfg, "problem", "nu", float, 0.1),
            eps_conv=_get(cfg, "problem", "eps_conv", float, None),
            eta=_get(cfg, "problem", "eta", float, 0.0),
        )
    except ValueError as exc:
        raise ConfigError(f"problem: {exc}")


def _build_solve_config(cfg: dict, args) -> SolveConfig:
    stride = args.snapshot_stride or _get(cfg, "solve", "snapshot_stride", int, 1)
    try:
        return SolveConfig(
            dt=_get(cfg, "solve", "dt", float, 1e-3),
            t_end=_get(cfg, "solve", "t_end", float, 0.25),
            picard_tol=_get(cfg, "solve", "picard_tol", float, 1e-10),
            picard_max_iter=_get(cfg, "solve", "picard_max_iter", int, 50),
            linear_tol=_get(cfg, "solve", "linear_tol", float, 1e-12),
            linear_max_iter=_get(cfg, "solve", "linear_max_iter", int, 20000),
            convection=_get(cfg, "solve", "convection", str, "implicit"),
            snapshot_stride=stride,
        )
    except ValueError as exc:
        raise ConfigError(f"solve: {exc}")


def _build_datum(cfg: dict, grid: GridSpec, seed: int) -> VectorField:
    preset = _get(cfg, "datum", "preset", str, "bump")
    amplitude = _get(cfg, "datum", "amplitude", float, 0.5)
    try:
        return initial_datum(grid, preset=preset, amplitude=amplitude, seed=seed)
    except ValueError as exc:
        raise ConfigError(f"datum: {exc}")


def _seed(cfg: dict, args, table: str, required: bool = False) -> int:
    if args.seed is not None:
        return args.seed
    val = _get(cfg, table, "seed", int, None)
    if val is None:
        val = _get(cfg, "datum", "seed", int, None)
    if val is None:
        if required:
            raise ConfigError(f"{table}.seed: required (randomized banks need an explicit seed)")
        return 0
    return val


def _out_dir(cfg: dict, args) -> Path:
    env = os.environ.get("PLAP_OUT")
    out = env or args.out or _get(cfg, "output", "dir", str, "plap-out")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _echo_config(cfg: dict, resolved: dict, out: Path) -> None:
    """Self-describing artifact: raw config plus every resolved default.
    The output location is deliberately omitted (it lives in the
    sidecar) so artifacts compare bit-identical across directories."""
    payload = {"raw": {k: v for k, v in cfg.items() if k != "output"}, "resolved": resolved}
    (out / "config.json").write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def _sidecar(out: Path, argv: list[str]) -> None:
    payload = {"written_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "argv": argv}
    (out / "sidecar.json").write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def _emit(line: str) -> None:
    print(line)


def _gate(failures: list[str], name: str, ok: bool, measured, budget) -> None:
    status = "pass" if ok else "FAIL"
    _emit(f"{status:4s}  {name}: measured {measured!r}, budget {budget!r}")
    if not ok:
        failures.append(f"{name}: measured {measured!r} exceeds budget {budget!r}")


# ---------------------------------------------------------------- solve


def _select_scheme(params: ProblemParams):
    if params.nu > 0.0 and params.mu > 0.0:
        return solve_regularized, "regularized"
    if params.nu == 0.0 and params.mu > 0.0:
        return solve_inviscid, "inviscid"
    if params.nu == 0.0 and params.mu == 0.0:
        return solve_limit, "limit"
    raise ConfigError(
        "problem: nu > 0 with mu = 0 is not a supported regime "
        "(the viscous route needs a positive coefficient floor)"
    )


def cmd_solve(cfg: dict, args) -> int:
    grid = _build_grid(cfg)
    params = _build_params(cfg)
    config = _build_solve_config(cfg, args)
    seed = _seed(cfg, args, "datum")
    v0 = _build_datum(cfg, grid, seed)
    solve, scheme = _select_scheme(params)
    out = _out_dir(cfg, args)

    try:
        result = solve(v0, params, config)
    except SolverError as err:
        _emit(f"solver failure in {scheme} run: {err}")
        return EXIT_SOLVER

    save_run(str(out), result, stride=config.snapshot_stride)
    resolved = {
        "scheme": scheme,
        "grid": {"n": list(grid.n), "h": list(grid.h)},
        "params": {"p": params.p, "mu": params.mu, "nu": params.nu, "eps_conv": params.eps_conv},
        "config": {
            "dt": config.dt,
            "t_end": config.t_end,
            "convection": config.convection,
            "snapshot_stride": config.snapshot_stride,
        },
        "datum": {"preset": _get(cfg, "datum", "preset", str, "bump"), "seed": seed},
    }
    _echo_config(cfg, resolved, out)
    _sidecar(out, sys.argv[1:])

    audits = result.audits
    failures: list[str] = []
    overshoot_budget = _get(cfg, "audits", "overshoot", float, 0.02)
    _gate(failures, "ledger rows", len(result.ledger) == config.steps, len(result.ledger), config.steps)
    _gate(
        failures,
        "per-step energy inequality violations",
        audits["energy_violation_count"] == 0,
        audits["energy_violation_count"],
        0,
    )
    _gate(
        failures,
        "max-principle overshoot",
        audits["overshoot"] <= overshoot_budget,
        audits["overshoot"],
        overshoot_budget,
    )
    if "energy_bound_max_ratio" in audits:
        _gate(
            failures,
            "local energy bound ratio",
            audits["energy_bound_max_ratio"] <= 1.01,
            audits["energy_bound_max_ratio"],
            1.01,
        )
    if failures:
        _emit("audit failures: " + "; ".join(failures))
        return EXIT_AUDIT
    _emit(f"run complete: {len(result.ledger)} steps, artifacts in {out}")
    return EXIT_OK


# ---------------------------------------------------------------- dual


def cmd_dual_audit(cfg: dict, args) -> int:
    run_dir = _get(cfg, "dual", "run", str, None)
    if run_dir is None:
        raise ConfigError("dual.run: required (directory of a stored forward run)")
    try:
        stored = load_run(run_dir)
    except FileNotFoundError as exc:
        raise ConfigError(f"dual.run: {exc}")
    except ValueError as exc:
        raise ConfigError(f"dual.run: {exc}")

    traj = stored.trajectory
    params = stored.params
    if not (params.mu > 0.0):
        raise ConfigError("dual.run: stored run has mu = 0; the backward sweep needs a positive floor")
    if not (params.nu > 0.0):
        raise ConfigError("dual.run: stored run has nu = 0; the backward sweep needs viscosity")
    t = _get(cfg, "dual", "t", float, traj.horizon)
    eta = _get(cfg, "dual", "eta", float, 4.0 * max(traj.grid.h))
    ratio_budget = _get(cfg, "dual", "budget_ratio", float, 1.01)
    resid_budget = _get(cfg, "dual", "budget_residual", float, 5e-2)
    seed = _seed(cfg, args, "dual")
    out = _out_dir(cfg, args)

    try:
        coeffs = build_dual_coefficients(traj, t, params.mu, params.p, eta, eps_conv=params.eps_conv)
        probe_preset = _get(cfg, "dual", "probe", str, "bump")
        probe = initial_datum(traj.grid, preset=probe_preset, amplitude=1.0, seed=seed)
        mass = norm(probe, Lp(1.0))
        if mass > 0.0:
            probe = probe * (1.0 / mass)
        run = solve_dual(probe, coeffs, params.nu)
        lhs, rhs, gap = duality_identity(traj, run, t, params.mu, params.p, eta, probe)
        cert = linf_certificate(
            traj, t, params.mu, params.p, params.nu, eta, seed=seed, eps_conv=params.eps_conv
        )
    except ValueError as exc:
        raise ConfigError(f"dual: {exc}")
    except SolverError as err:
        _emit(f"solver failure in backward sweep: {err}")
        return EXIT_SOLVER

    save_dual_run(out / "dual", run)
    scale = max(abs(lhs), abs(rhs), 1e-300)
    rel = abs(lhs - rhs) / scale if max(abs(lhs), abs(rhs)) > 0 else 0.0
    payload = {
        "schema": "plap-duality-1",
        "t": t,
        "eta": eta,
        "lhs": lhs,
        "rhs": rhs,
        "gap_integral": gap,
        "relative_residual": rel,
        "l1_max_ratio": l1_audit(run),
        "mmatrix": run.mmatrix,
        "certificate": {
            "lower": cert.lower,
            "upper": cert.upper,
            "measured": cert.measured,
            "max_l1_ratio": cert.max_l1_ratio,
            "probes": cert.probes,
        },
    }
    (out / "duality.json").write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
    _echo_config(cfg, {"t": t, "eta": eta, "seed": seed}, out)
    _sidecar(out, sys.argv[1:])

    failures: list[str] = []
    _gate(failures, "L1 max ratio", payload["l1_max_ratio"] <= ratio_budget, payload["l1_max_ratio"], ratio_budget)
    _gate(failures, "duality relative residual", rel <= resid_budget, rel, resid_budget)
    _gate(failures, "step matrices M-structured", run.mmatrix["ok"], run.mmatrix, "offdiag <= 0, colsum >= 1")
    _gate(failures, "certificate bracket", cert.lower <= cert.upper, (cert.lower, cert.upper), "lower <= upper")
    if failures:
        _emit("audit failures: " + "; ".join(failures))
        return EXIT_AUDIT
    _emit(f"dual audit complete, artifacts in {out}")
    return EXIT_OK


# ---------------------------------------------------------------- cascade


def _build_plan(cfg: dict, args, swept: str) -> SweepPlan:
    grid = _build_grid(cfg)
    config = _build_solve_config(cfg, args)
    seed = _seed(cfg, args, "cascade")
    schedule = _get(cfg, "cascade", "schedule", list, None)
    if schedule is None:
        start = _get(cfg, "cascade", "start", float, 0.1)
        halvings = _get(cfg, "cascade", "halvings", int, 5)
        schedule = [start / 2**k for k in range(halvings)]
    try:
        return SweepPlan(
            grid=grid,
            config=config,
            p=_get(cfg, "problem", "p", float, 1.5),
            schedule=tuple(float(v) for v in schedule),
            mu=_get(cfg, "cascade", "mu", float, 0.01),
            preset=_get(cfg, "datum", "preset", str, "bump"),
            amplitude=_get(cfg, "datum", "amplitude", float, 0.5),
            seed=seed,
            bank_seed=seed,
            eps_conv=_get(cfg, "problem", "eps_conv", float, None),
        )
    except ValueError as exc:
        raise ConfigError(f"cascade: {exc}")


def cmd_cascade(cfg: dict, args, swept: str) -> int:
    plan = _build_plan(cfg, args, swept)
    out = _out_dir(cfg, args)
    mapper = None
    pool = None
    if args.jobs and args.jobs > 1:
        pool = ThreadPoolExecutor(max_workers=args.jobs)
        mapper = pool.map
    try:
        report = nu_sweep(plan, mapper) if swept == "nu" else mu_sweep(plan, mapper)
    finally:
        if pool is not None:
            pool.shutdown()

    save_cascade_report(out, report)
    _echo_config(cfg, {"swept": swept, "schedule": list(plan.schedule), "seed": plan.seed}, out)
    _sidecar(out, sys.argv[1:])

    if report.partial:
        done = len(report.aggregates)
        _emit(
            f"partial sweep: {done}/{len(plan.schedule)} points completed, "
            f"failed at index {report.failed_at}: {report.failure}"
        )
        return EXIT_PARTIAL

    failures: list[str] = []
    D = report.distances
    cauchy_ok = all(D[i] > D[i + 1] for i in range(1, len(D) - 1)) if len(D) >= 3 else True
    _gate(failures, "Cauchy distances strictly decreasing (from the second increment)", cauchy_ok, list(D), "D[k] > D[k+1]")
    if report.aggregates:
        spread = (max(report.aggregates) - min(report.aggregates)) / max(report.aggregates)
        _gate(failures, "stability aggregate spread", spread < 0.10, spread, 0.10)
    overshoot_budget = _get(cfg, "audits", "overshoot", float, 0.02)
    worst_over = max(report.overshoots) if report.overshoots else 0.0
    _gate(failures, "max-principle overshoot at every point", worst_over <= overshoot_budget, worst_over, overshoot_budget)
    if report.minty_gaps:
        scale = max(1.0, max(abs(g) for g in report.minty_gaps))
        worst_gap = min(report.minty_gaps)
        _gate(failures, "convexity gaps", worst_gap >= -1e-10 * scale, worst_gap, -1e-10 * scale)
    probes = np.asarray(report.rate_probes)
    if swept == "nu":
        ok = True
        worst = 0.0
        for j in range(probes.shape[1]):
            col = probes[:, j]
            for k in range(len(col) - 1):
                if col[k] > 1e-14 * max(1.0, float(np.max(col))):
                    ratio = float(col[k + 1] / col[k])
                    worst = max(worst, ratio)
                    ok = ok and ratio <= (2.0 ** -0.5) * 1.05
        _gate(failures, "viscous probe halving rate", ok, worst, (2.0 ** -0.5) * 1.05)
    else:
        growth = float(np.max(probes[1:] - probes[:-1])) if probes.size and len(probes) > 1 else 0.0
        _gate(failures, "flux-collapse probe worst increase", growth <= 1e-15, growth, 1e-15)
        if report.cross_check_distance is not None and D:
            _gate(
                failures,
                "limit cross-check distance",
                report.cross_check_distance <= 4.0 * D[-1],
                report.cross_check_distance,
                4.0 * D[-1],
            )
        if report.limit_overshoot is not None:
            _gate(failures, "limit-run overshoot", report.limit_overshoot <= overshoot_budget, report.limit_overshoot, overshoot_budget)
    if failures:
        _emit("audit failures: " + "; ".join(failures))
        return EXIT_AUDIT
    _emit(f"sweep complete: {len(report.aggregates)} points, artifacts in {out}")
    return EXIT_OK


# ---------------------------------------------------------------- certify


def _random_fields(grid: GridSpec, count: int, seed: int, label: str) -> list[VectorField]:
    return smooth_random_bank(grid, count, seed, label=label)


def cmd_certify(cfg: dict, args) -> int:
    seed = _seed(cfg, args, "certify", required=True)
    p_cfg = _get(cfg, "problem", "p", float, 1.5)
    mu_cfg = _get(cfg, "certify", "mu", float, 0.01)
    allow_floor = _get(cfg, "certify", "allow_floor", bool, False)
    if mu_cfg == 0.0 and not allow_floor:
        raise ConfigError(
            "certify.mu: mu = 0 makes the coefficient singular for p < 2; "
            "set certify.allow_floor = true to opt into the 1e-14 floor substitution"
        )
    if mu_cfg == 0.0:
        mu_cfg = 1e-14
    pairs = _get(cfg, "certify", "pairs", int, 100)
    out = _out_dir(cfg, args)
    grid = GridSpec.from_extent(n=(16, 16), extent=(1.0, 1.0))
    rows: list[dict] = []

    def record(name: str, measured, budget, ok: bool):
        rows.append({"check": name, "measured": measured, "budget": budget, "pass": bool(ok)})

    fields = _random_fields(grid, 32, seed, "certify")
    rough = []
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
    for _ in range(100):
        rough.append(VectorField(grid, rng.standard_normal((grid.d,) + grid.n)))

    # smoothing: non-expansiveness in three exponents
    worst = 0.0
    radius = 6.0 * max(grid.h)
    for v in rough:
        sm = mollify_space(v, radius)
        for q in (1.0, p_cfg, 2.0):
            denom = norm(v, Lp(q))
            if denom > 0:
                worst = max(worst, norm(sm, Lp(q)) / denom)
    record("smoothing non-expansive (L1/Lp/L2)", worst, 1.0 + 1e-12, worst <= 1.0 + 1e-12)

    # smoothing: sup bound is exact (convex combination of values and zeros)
    worst = -math.inf
    for v in rough:
        worst = max(worst, norm(mollify_space(v, radius), Linf()) - norm(v, Linf()))
    record("smoothing sup-norm exact", worst, 0.0, worst <= 0.0)

    # smoothing: L2 -> sup gain with the reported kernel constant
    kernel = bump_kernel(grid.h, radius)
    violations = 0
    for v in rough:
        if norm(mollify_space(v, radius, kernel=kernel), Linf()) > kernel.l2_constant * norm(v, Lp(2.0)) * (1 + 1e-12):
            violations += 1
    record("smoothing L2->sup gain violations", violations, 0, violations == 0)

    # smoothing: residual nonincreasing over radius halvings on smooth fields
    ok = True
    for v in fields[:8]:
        prev = None
        for halv in range(4):
            r = radius / 2**halv
            res = norm(mollify_space(v, r) - v, Lp(2.0))
            if prev is not None and res > prev * (1 + 1e-12):
                ok = False
            prev = res
    record("smoothing residual nonincreasing over 4 halvings", ok, True, ok)

    # time kernel: linear-in-time data halves its residual with the radius
    dt = 2e-3
    base = fields[0]
    traj = Trajectory(tuple(base * (n * dt) for n in range(161)), dt)
    from .mollify import time_kernel_limit_check

    res = time_kernel_limit_check(traj, [0.32, 0.16, 0.08, 0.04])
    ratios = [res[i] / res[i + 1] for i in range(len(res) - 1)]
    ok = all(abs(r - 2.0) <= 0.4 for r in ratios)
    record("time-kernel residual halving within 20%", [round(r, 4) for r in ratios], "2 +- 0.4", ok)

    # convexity gap of the flux, across p and the floor
    gaps = []
    for pp in (1.1, 1.5, 1.9):
        for mm in (1e-4, 1e-2, 1.0):
            for i in range(max(1, pairs // 9)):
                u = rough[(2 * i) % len(rough)]
                w = rough[(2 * i + 1) % len(rough)]
                gaps.append(monotonicity_gap(u, w, mm, pp))
    floor = -1e-12 * max(1.0, max(abs(g) for g in gaps))
    record("flux convexity gap nonnegative", min(gaps), floor, min(gaps) >= floor)

    # gradient control bracket
    violations = 0
    for v in rough:
        lhs, rhs = gradient_lp_control(v, mu_cfg, p_cfg)
        if lhs > rhs:
            violations += 1
    record("gradient-control bracket violations", violations, 0, violations == 0)

    # growth and coercivity certificates on the (nu, mu) grid
    g_viol = 0
    c_viol = 0
    for nu_c in (0.1, 1.0):
        for mu_c in (0.1, 1.0):
            pr = ProblemParams(p=p_cfg, mu=mu_c, nu=nu_c)
            for v in rough[:25]:
                proxy, bound = growth_certificate(v, pr)
                if proxy > bound:
                    g_viol += 1
                pairing, lower = coercivity_certificate(v, pr)
                if pairing < lower:
                    c_viol += 1
    record("growth certificate violations", g_viol, 0, g_viol == 0)
    record("coercivity certificate violations", c_viol, 0, c_viol == 0)

    # product-rule identity
    worst = 0.0
    rng2 = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(2,)))
    small = GridSpec.from_extent(n=(8, 8), extent=(1.0, 1.0))
    for _ in range(20):
        fu = tuple(VectorField(small, rng2.standard_normal((2, 8, 8))) for _ in range(5))
        fw = tuple(VectorField(small, rng2.standard_normal((2, 8, 8))) for _ in range(5))
        worst = max(worst, ibp_identity_check(Trajectory(fu, 0.01), Trajectory(fw, 0.01)))
    record("product-rule identity residual", worst, 1e-12, worst <= 1e-12)

    (out / "certify.json").write_text(json.dumps({"schema": "plap-certify-1", "seed": seed, "rows": rows}, sort_keys=True, indent=1) + "\n")
    _sidecar(out, sys.argv[1:])
    width = max(len(r["check"]) for r in rows)
    for r in rows:
        _emit(f"{'pass' if r['pass'] else 'FAIL':4s}  {r['check']:<{width}}  measured={r['measured']!r}  budget={r['budget']!r}")
    bad = [r for r in rows if not r["pass"]]
    if bad:
        _emit(f"{len(bad)} certificate check(s) failed")
        return EXIT_AUDIT
    _emit(f"all {len(rows)} certificate checks passed, table in {out / 'certify.json'}")
    return EXIT_OK


# ---------------------------------------------------------------- ibp


def cmd_ibp_test(cfg: dict, args) -> int:
    seed = _seed(cfg, args, "ibp")
    pairs = _get(cfg, "ibp", "pairs", int, 100)
    steps = _get(cfg, "ibp", "steps", int, 6)
    n = _get(cfg, "ibp", "n", list, [8, 8])
    out = _out_dir(cfg, args)
    try:
        grid = GridSpec.from_extent(n=tuple(int(v) for v in n), extent=tuple(1.0 for _ in n))
    except ValueError as exc:
        raise ConfigError(f"ibp.n: {exc}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(3,)))
    worst = 0.0
    for _ in range(pairs):
        fu = tuple(VectorField(grid, rng.standard_normal((grid.d,) + grid.n)) for _ in range(steps))
        fw = tuple(VectorField(grid, rng.standard_normal((grid.d,) + grid.n)) for _ in range(steps))
        worst = max(worst, ibp_identity_check(Trajectory(fu, 0.01), Trajectory(fw, 0.01)))
    payload = {"schema": "plap-ibp-1", "pairs": pairs, "worst_residual": worst, "budget": 1e-12}
    (out / "ibp.json").write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
    _sidecar(out, sys.argv[1:])
    failures: list[str] = []
    _gate(failures, "product-rule identity residual", worst <= 1e-12, worst, 1e-12)
    return EXIT_AUDIT if failures else EXIT_OK


# ---------------------------------------------------------------- entry


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="TOML configuration file")
    common.add_argument("--jobs", type=int, default=1, help="worker bound for independent sweep points")
    common.add_argument("--seed", type=int, default=None, help="seed override for randomized banks")
    common.add_argument("--out", default=None, help="output directory (PLAP_OUT env overrides)")
    common.add_argument("--snapshot-stride", type=int, default=None, dest="snapshot_stride", help="store every Nth snapshot")
    ap = argparse.ArgumentParser(prog="plap", description="quasilinear diffusion solver and audit harness")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="forward run with audit gates")
    sub.add_parser("dual-audit", parents=[common], help="backward sweep audits of a stored run")
    sub.add_parser("cascade-nu", parents=[common], help="vanishing-viscosity sweep")
    sub.add_parser("cascade-mu", parents=[common], help="vanishing-floor sweep")
    sub.add_parser("certify", parents=[common], help="inequality certificate table")
    sub.add_parser("ibp-test", parents=[common], help="product-rule identity check")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _load_toml(args.config) if args.config else {}
        if args.jobs is not None and args.jobs < 1:
            raise ConfigError("--jobs: must be >= 1")
        if args.snapshot_stride is not None and args.snapshot_stride < 1:
            raise ConfigError("--snapshot-stride: must be >= 1")
        if args.command == "solve":
            return cmd_solve(cfg, args)
        if args.command == "dual-audit":
            return cmd_dual_audit(cfg, args)
        if args.command == "cascade-nu":
            return cmd_cascade(cfg, args, "nu")
        if args.command == "cascade-mu":
            return cmd_cascade(cfg, args, "mu")
        if args.command == "certify":
            return cmd_certify(cfg, args)
        if args.command == "ibp-test":
            return cmd_ibp_test(cfg, args)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        _emit(f"config error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
