import math

import numpy as np
import pytest

from plap.dual import (
    build_dual_coefficients,
    duality_identity,
    l1_audit,
    linf_certificate,
    load_dual_run,
    save_dual_run,
    solve_dual,
)
from plap.mesh import GridSpec, Linf, Lp, Trajectory, VectorField, norm
from plap.operators import ProblemParams
from plap.solver import SolveConfig, initial_datum, solve_regularized

GRID = GridSpec.from_extent(n=(16, 16), extent=(1.0, 1.0))
P, MU, NU, ETA = 1.5, 0.1, 0.1, 0.01


@pytest.fixture(scope="module")
def forward_run():
    params = ProblemParams(p=P, mu=MU, nu=NU, eps_conv=0.1)
    config = SolveConfig(dt=1e-3, t_end=0.05, convection="implicit")
    v0 = initial_datum(GRID, preset="bump", amplitude=0.5)
    return solve_regularized(v0, params, config)


@pytest.fixture(scope="module")
def backward_run(forward_run):
    traj = forward_run.trajectory
    coeffs = build_dual_coefficients(traj, 0.05, MU, P, ETA, eps_conv=0.1)
    probe = initial_datum(GRID, preset="bump", amplitude=1.0)
    probe = probe * (1.0 / norm(probe, Lp(1.0)))
    return coeffs, solve_dual(probe, coeffs, NU), probe


def zero_trajectory(grid, steps, dt):
    return Trajectory(tuple(VectorField.zeros(grid) for _ in range(steps + 1)), dt)


class TestCoefficients:
    def test_time_reversal_matches_forward_levels(self, forward_run):
        # coefficient block idx is built from the forward gradient at
        # step N - idx, so with a tiny smoothing radius the first block
        # reproduces the final forward diffusivity almost exactly
        traj = forward_run.trajectory
        coeffs = build_dual_coefficients(traj, 0.05, MU, P, eta=1e-3, eps_conv=0.1)
        from plap.mesh import gradient
        from plap.operators import face_diffusivity

        want = face_diffusivity(gradient(traj[-1]), MU, P)
        for a, b in zip(coeffs.b[0], want):
            assert np.allclose(a, b, rtol=1e-10, atol=1e-12)

    def test_bounded_by_floor_power(self, forward_run):
        coeffs = build_dual_coefficients(forward_run.trajectory, 0.05, MU, P, ETA, eps_conv=0.1)
        cap = MU ** ((P - 2.0) / 2.0) * (1.0 + 1e-12)
        for blocks in coeffs.b:
            for arr in blocks:
                assert np.all(arr > 0.0)
                assert np.all(arr <= cap)

    def test_validation(self, forward_run):
        traj = forward_run.trajectory
        with pytest.raises(ValueError):
            build_dual_coefficients(traj, 0.05, 0.0, P, ETA)
        with pytest.raises(ValueError):
            build_dual_coefficients(traj, 0.05, MU, P, eta=0.0)
        with pytest.raises(ValueError):
            build_dual_coefficients(traj, 0.0505, MU, P, ETA)  # off-lattice t
        with pytest.raises(ValueError):
            build_dual_coefficients(traj, 1.0, MU, P, ETA)  # beyond horizon


class TestBackwardSweep:
    def test_step_matrices_certified(self, backward_run):
        _, run, _ = backward_run
        assert run.mmatrix["ok"]
        assert run.mmatrix["max_offdiagonal"] <= 1e-15
        assert run.mmatrix["min_column_sum"] >= 1.0 - 1e-12

    def test_l1_never_grows(self, backward_run):
        _, run, _ = backward_run
        assert l1_audit(run) <= 1.0 + 1e-12
        hist = np.asarray(run.l1_history)
        assert np.all(hist[1:] <= hist[:-1] * (1.0 + 1e-12))

    def test_residual_history_small(self, backward_run):
        _, run, _ = backward_run
        assert max(run.residual_history) <= 1e-6

    def test_positive_probe_stays_positive(self, backward_run):
        # M-matrix inverses are nonnegative, so a nonnegative probe keeps
        # its sign through the whole sweep
        coeffs, _, _ = backward_run
        probe = initial_datum(GRID, preset="box", amplitude=1.0)
        probe = probe * (1.0 / norm(probe, Lp(1.0)))
        run = solve_dual(probe, coeffs, NU)
        assert all(float(np.min(f.values)) >= -1e-15 for f in run.trajectory.fields)

    def test_requires_viscosity(self, backward_run):
        coeffs, _, probe = backward_run
        with pytest.raises(ValueError):
            solve_dual(probe, coeffs, 0.0)


class TestHeatOracle:
    def test_zero_state_matches_heat_recurrence(self):
        # frozen coefficients on a zero trajectory equal mu^((p-2)/2), so
        # the sweep is an implicit heat recurrence; the lowest sine mode
        # contracts per step by 1/(1 + ds (nu + mu^((p-2)/2)) lambda_h)
        g = GridSpec.from_extent(n=(256,), extent=(1.0,))
        ds, steps = 1e-3, 100
        traj = zero_trajectory(g, steps, ds)
        coeffs = build_dual_coefficients(traj, steps * ds, 0.25, 1.5, eta=ds)
        phi0 = VectorField.from_function(g, lambda x: (np.sin(np.pi * x),))
        run = solve_dual(phi0, coeffs, 0.1)
        lam = 4.0 / g.h[0] ** 2 * math.sin(math.pi * g.h[0] / 2.0) ** 2
        a = 0.1 + 0.25 ** -0.25
        factor = 1.0 / (1.0 + ds * a * lam)
        want = phi0.values * factor**steps
        got = run.trajectory[-1].values
        assert np.allclose(got, want, rtol=0, atol=1e-12)
        # and the continuum-eigenvalue recurrence agrees to < 1%
        cont = phi0.values * (1.0 / (1.0 + ds * a * math.pi**2)) ** steps
        rel = np.max(np.abs(got - cont)) / np.max(np.abs(cont))
        assert rel <= 1e-2


class TestDualityPairing:
    def test_identity_on_forward_run(self, forward_run, backward_run):
        _, run, probe = backward_run
        lhs, rhs, gap = duality_identity(
            forward_run.trajectory, run, 0.05, MU, P, ETA, probe
        )
        scale = max(abs(lhs), abs(rhs))
        assert scale > 0.0
        assert abs(lhs - rhs) / scale <= 5e-2

    def test_identity_gap_shrinks_with_eta(self, forward_run):
        traj = forward_run.trajectory
        probe = initial_datum(GRID, preset="bump", amplitude=1.0)
        probe = probe * (1.0 / norm(probe, Lp(1.0)))
        gaps = []
        for eta in (0.02, 0.01, 0.005):
            coeffs = build_dual_coefficients(traj, 0.05, MU, P, eta, eps_conv=0.1)
            run = solve_dual(probe, coeffs, NU)
            _, _, gap = duality_identity(traj, run, 0.05, MU, P, eta, probe)
            gaps.append(abs(gap))
        assert gaps[0] > gaps[1] > gaps[2]

    def test_provenance_checks(self, forward_run, backward_run):
        _, run, probe = backward_run
        with pytest.raises(ValueError):
            duality_identity(forward_run.trajectory, run, 0.04, MU, P, ETA, probe)
        with pytest.raises(ValueError):
            duality_identity(forward_run.trajectory, run, 0.05, MU, P, ETA, 2.0 * probe)


class TestCertificate:
    def test_bracket_on_forward_run(self, forward_run):
        cert = linf_certificate(forward_run.trajectory, 0.05, MU, P, NU, ETA, eps_conv=0.1)
        assert cert.lower <= cert.measured <= cert.upper
        assert cert.max_l1_ratio <= 1.0 + 1e-12
        # on a grid this small the probe bank contains every unit point
        # mass, so the certified lower bound IS the measured sup
        assert cert.lower == pytest.approx(cert.measured, rel=1e-12)
        assert cert.measured == pytest.approx(
            norm(forward_run.trajectory[-1], Linf()), rel=1e-12
        )

    def test_zero_trajectory_collapses(self):
        traj = zero_trajectory(GRID, 30, 1e-3)
        cert = linf_certificate(traj, 0.03, MU, P, NU, eta=5e-3)
        assert cert.lower == 0.0
        assert cert.measured == 0.0
        assert cert.upper == 0.0

    def test_probe_mass_validation(self, forward_run):
        bad = [initial_datum(GRID, preset="bump", amplitude=1.0)]  # mass != 1
        with pytest.raises(ValueError):
            linf_certificate(forward_run.trajectory, 0.05, MU, P, NU, ETA, bank=bad)


class TestStorage:
    def test_roundtrip_bit_exact(self, tmp_path, backward_run):
        _, run, _ = backward_run
        save_dual_run(str(tmp_path / "dual"), run)
        back = load_dual_run(str(tmp_path / "dual"))
        assert back.eta == run.eta
        assert back.nu == run.nu
        assert back.l1_history == run.l1_history
        assert back.linf_history == run.linf_history
        assert back.residual_history == run.residual_history
        assert back.mmatrix == run.mmatrix
        for a, b in zip(back.trajectory.fields, run.trajectory.fields):
            assert np.array_equal(a.values, b.values)

    def test_reloaded_run_has_no_coefficients(self, tmp_path, backward_run):
        _, run, _ = backward_run
        save_dual_run(str(tmp_path / "dual"), run)
        assert load_dual_run(str(tmp_path / "dual")).coefficients is None
