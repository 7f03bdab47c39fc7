import math

import numpy as np
import pytest

from plap.mesh import GridSpec, Linf, Lp, VectorField, norm
from plap.operators import ProblemParams
from plap.solver import (
    SolveConfig,
    SolverError,
    energy_bound,
    initial_datum,
    load_run,
    local_horizon,
    save_run,
    solve_inviscid,
    solve_limit,
    solve_regularized,
    step,
)

GRID = GridSpec.from_extent(n=(16, 16), extent=(1.0, 1.0))
PARAMS = ProblemParams(p=1.5, mu=0.1, nu=0.1, eps_conv=0.1)


def quick_config(**kw):
    base = dict(dt=2e-3, t_end=0.02, convection="implicit")
    base.update(kw)
    return SolveConfig(**base)


class TestClosedForms:
    def test_horizon_oracle(self):
        # nu mu^(3/2) / (2 ||v0||^2): 2 * 8 / (2 * 1) = 8
        assert local_horizon(2.0, 4.0, 1.0) == pytest.approx(8.0, rel=1e-15)

    def test_horizon_accepts_field(self):
        g = GridSpec.from_extent(n=(1,), extent=(1.0,))
        v = VectorField(g, np.array([[2.0]]))  # ||v||_2^2 = 0.5 * 4 = 2
        assert local_horizon(1.0, 1.0, v) == pytest.approx(0.25, rel=1e-14)

    def test_horizon_zero_datum(self):
        assert local_horizon(1.0, 1.0, 0.0) == math.inf

    def test_bound_initial_value_and_doubling(self):
        # at t = 0 the bound is the initial energy; at the horizon it has
        # exactly doubled
        n2 = 0.7
        nu, mu = 0.3, 0.5
        assert energy_bound(0.0, nu, mu, n2) == pytest.approx(n2, rel=1e-15)
        t_half = local_horizon(nu, mu, n2)
        assert energy_bound(t_half, nu, mu, n2) == pytest.approx(2.0 * n2, rel=1e-14)

    def test_bound_void_beyond_blowup(self):
        with pytest.raises(ValueError, match="void"):
            energy_bound(10.0, 0.1, 0.1, 1.0)

    def test_bound_validation(self):
        with pytest.raises(ValueError):
            energy_bound(0.1, 0.0, 0.1, 1.0)
        with pytest.raises(ValueError):
            energy_bound(-0.1, 0.1, 0.1, 1.0)


class TestDatum:
    @pytest.mark.parametrize("preset", ["bump", "box", "random-smooth"])
    def test_amplitude_is_measured_sup(self, preset):
        v = initial_datum(GRID, preset=preset, amplitude=0.75, seed=3)
        assert norm(v, Linf()) == pytest.approx(0.75, rel=1e-12)

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            initial_datum(GRID, preset="vortex")

    def test_zero_amplitude(self):
        v = initial_datum(GRID, preset="bump", amplitude=0.0)
        assert norm(v, Linf()) == 0.0


class TestHeatOracle:
    def test_matches_implicit_heat_recurrence(self):
        # p = 2 collapses the flux to the plain gradient and transport is
        # disabled, so each component of the lowest sine mode decays per
        # step by exactly 1/(1 + dt (nu + 1) lambda_h)
        g = GridSpec.from_extent(n=(15, 15), extent=(1.0, 1.0))
        v0 = VectorField.from_function(
            g, lambda x, y: tuple(0.3 * np.sin(np.pi * x) * np.sin(np.pi * y) for _ in range(2))
        )
        nu, dt, steps = 0.4, 1e-3, 10
        params = ProblemParams(p=2.0, mu=0.5, nu=nu)
        config = SolveConfig(dt=dt, t_end=steps * dt, convection="none")
        res = solve_regularized(v0, params, config)
        lam = sum(4.0 / hk**2 * math.sin(math.pi * hk / 2.0) ** 2 for hk in g.h)
        factor = 1.0 / (1.0 + dt * (nu + 1.0) * lam)
        for n in (1, 5, 10):
            want = v0.values * factor**n
            assert np.allclose(res.trajectory[n].values, want, rtol=0, atol=1e-10)


class TestRegularizedRun:
    def test_audit_gates_on_standard_run(self):
        v0 = initial_datum(GRID, preset="bump", amplitude=0.5)
        res = solve_regularized(v0, PARAMS, quick_config(t_end=0.05))
        a = res.audits
        assert a["scheme"] == "regularized"
        assert a["energy_violation_count"] == 0
        assert a["overshoot"] <= 0.0  # diffusion-dominated: sup decays
        assert a["energy_bound_max_ratio"] <= 1.01
        assert a["energy_bound_violations"] == 0
        assert a["t_star"] == pytest.approx(
            local_horizon(0.1, 0.1, norm(v0, Lp(2.0)) ** 2), rel=1e-12
        )
        assert len(res.ledger) == 25
        assert len(res.iterations) == 25

    def test_ledger_row_identities(self):
        v0 = initial_datum(GRID, preset="bump", amplitude=0.5)
        res = solve_regularized(v0, PARAMS, quick_config())
        led = res.ledger
        for i in (0, len(led) - 1):
            u = res.trajectory[i + 1]
            assert led.kinetic[i] == pytest.approx(0.5 * norm(u, Lp(2.0)) ** 2, rel=1e-12)
            assert led.linf[i] == pytest.approx(norm(u, Linf()), rel=1e-12)
        assert np.all(led.viscous >= 0.0)
        assert np.all(led.pdiss >= 0.0)

    def test_single_step_matches_driver(self):
        v0 = initial_datum(GRID, preset="bump", amplitude=0.5)
        cfg = quick_config()
        v1, info = step(v0, PARAMS, cfg)
        res = solve_regularized(v0, PARAMS, cfg)
        assert np.allclose(v1.values, res.trajectory[1].values, rtol=0, atol=1e-14)
        assert info["residual"] >= 0.0

    def test_explicit_transport_runs(self):
        v0 = initial_datum(GRID, preset="bump", amplitude=0.5)
        res = solve_regularized(v0, PARAMS, quick_config(convection="explicit"))
        assert res.audits["energy_violation_count"] == 0

    def test_inner_iteration_failure(self):
        v0 = initial_datum(GRID, preset="bump", amplitude=0.5)
        bad = quick_config(picard_tol=1e-15, picard_max_iter=1)
        with pytest.raises(SolverError) as exc:
            solve_regularized(v0, PARAMS, bad)
        assert exc.value.step_index == 1


class TestOtherSchemes:
    def test_inviscid_drops_horizon_audit(self):
        v0 = initial_datum(GRID, preset="bump", amplitude=0.5)
        res = solve_inviscid(v0, ProblemParams(p=1.5, mu=0.1, nu=0.0, eps_conv=0.1), quick_config())
        assert res.audits["scheme"] == "inviscid"
        assert "t_star" not in res.audits
        assert res.audits["energy_violation_count"] == 0

    def test_inviscid_rejects_positive_nu(self):
        v0 = initial_datum(GRID, preset="bump", amplitude=0.5)
        with pytest.raises(ValueError):
            solve_inviscid(v0, PARAMS, quick_config())

    def test_limit_floors_coefficient(self):
        v0 = initial_datum(GRID, preset="bump", amplitude=0.5)
        res = solve_limit(v0, ProblemParams(p=1.5, mu=0.0, nu=0.0), quick_config())
        assert res.audits["scheme"] == "floored-limit"
        assert res.audits["mu_floor"] > 0.0
        assert res.audits["conv_radius"] == 0.0  # unsmoothed transport
        assert res.audits["energy_violation_count"] == 0


class TestRunStorage:
    def test_roundtrip_bit_exact(self, tmp_path):
        v0 = initial_datum(GRID, preset="bump", amplitude=0.5)
        res = solve_regularized(v0, PARAMS, quick_config())
        save_run(str(tmp_path / "run"), res)
        back = load_run(str(tmp_path / "run"))
        assert back.params == res.params
        assert back.config == res.config
        assert len(back.trajectory) == len(res.trajectory)
        for a, b in zip(back.trajectory.fields, res.trajectory.fields):
            assert np.array_equal(a.values, b.values)
        assert np.array_equal(back.ledger.kinetic, res.ledger.kinetic)
        assert back.audits == res.audits

    def test_snapshot_stride_thins_dump(self, tmp_path):
        import os

        v0 = initial_datum(GRID, preset="bump", amplitude=0.5)
        res = solve_regularized(v0, PARAMS, quick_config(t_end=0.02))
        save_run(str(tmp_path / "run"), res, stride=5)
        stored = sorted(os.listdir(tmp_path / "run" / "trajectory"))
        assert stored == [
            "snapshot_00000.plap",
            "snapshot_00005.plap",
            "snapshot_00010.plap",
            "trajectory.json",
        ]
        # a thinned dump cannot be rehydrated into a full run
        with pytest.raises(ValueError, match="stride"):
            load_run(str(tmp_path / "run"))

    def test_missing_directory(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_run(str(tmp_path / "nothing"))
