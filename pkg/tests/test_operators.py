import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plap.mesh import GridSpec, Linf, Lp, VectorField, gradient, inner, norm
from plap.operators import (
    MU_FLOOR,
    ProblemParams,
    apply_operator,
    coercivity_certificate,
    convective,
    diffusivity,
    face_diffusivity,
    gradient_lp_control,
    growth_certificate,
    monotonicity_gap,
    p_flux,
    sine_bank,
    smooth_random_bank,
)

GRID = GridSpec.from_extent(n=(12, 12), extent=(1.0, 1.0))


def rough(grid, seed, count=1):
    rng = np.random.default_rng(seed)
    out = [VectorField(grid, rng.standard_normal((grid.d,) + grid.n)) for _ in range(count)]
    return out[0] if count == 1 else out


class TestParams:
    def test_exponent_range(self):
        ProblemParams(p=2.0, mu=0.1, nu=0.1)
        for bad in (1.0, 2.5, 0.0):
            with pytest.raises(ValueError):
                ProblemParams(p=bad, mu=0.1, nu=0.1)

    def test_nonnegative_regularization(self):
        with pytest.raises(ValueError):
            ProblemParams(p=1.5, mu=-0.1, nu=0.1)
        with pytest.raises(ValueError):
            ProblemParams(p=1.5, mu=0.1, nu=math.inf)

    def test_transport_radius_default_and_override(self):
        g = GridSpec.from_extent(n=(4, 4), extent=(2.0, 1.0))
        assert ProblemParams(p=1.5, mu=0.25, nu=0.1).conv_radius(g) == pytest.approx(1.0)
        assert ProblemParams(p=1.5, mu=0.25, nu=0.1, eps_conv=0.05).conv_radius(g) == 0.05

    def test_floor_constant(self):
        assert 0.0 < MU_FLOOR < 1e-10


class TestDiffusivity:
    def test_frozen_values(self):
        # (0.04 + 0.16)^(-1/4) at p = 1.5; and mu + g2 = 4 gives 4^(-1/4)
        assert diffusivity(0.16, 0.04, 1.5) == pytest.approx(0.2 ** -0.25, rel=1e-15)
        assert diffusivity(3.96, 0.04, 1.5) == pytest.approx(4.0 ** -0.25, rel=1e-15)

    def test_p2_is_unit(self):
        assert diffusivity(7.3, 0.5, 2.0) == 1.0
        assert np.all(diffusivity(np.array([0.0, 1.0]), 0.0, 2.0) == 1.0)

    def test_bounded_by_floor_power(self):
        g2 = np.linspace(0.0, 10.0, 50)
        a = diffusivity(g2, 0.09, 1.5)
        assert np.all(a <= 0.09 ** -0.25 + 1e-15)
        assert np.all(np.diff(a) <= 0.0)  # nonincreasing in |g|^2 for p < 2

    def test_singularity_rejected(self):
        with pytest.raises(ValueError):
            diffusivity(0.0, 0.0, 1.5)

    def test_face_arrays_match_scalar_rule(self):
        v = rough(GRID, 11)
        G = gradient(v)
        a = face_diffusivity(G, 0.2, 1.7)
        for part, ak in zip(G.parts, a):
            g2 = np.sum(part * part, axis=0)
            assert np.allclose(ak, (0.2 + g2) ** (-0.15), rtol=1e-14)


class TestFlux:
    def test_single_node_oracle(self):
        # one node at h = 1/2 with value 1: both faces carry gradient
        # +-2, |g|^2 = 4, so at mu = 0, p = 1.5 the flux is 4^(-1/4) g
        g = GridSpec.from_extent(n=(1,), extent=(1.0,))
        v = VectorField(g, np.array([[1.0]]))
        F = p_flux(v, 0.0, 1.5)
        want = 4.0 ** -0.25 * np.array([[2.0, -2.0]])
        assert np.allclose(F.parts[0], want, rtol=1e-14)

    def test_zero_gradient_extension(self):
        g = GridSpec.from_extent(n=(3, 3), extent=(1.0, 1.0))
        F = p_flux(VectorField.zeros(g), 0.0, 1.5)
        assert all(np.all(part == 0.0) for part in F.parts)

    def test_floor_continuity(self):
        v = rough(GRID, 12)
        F0 = p_flux(v, 0.0, 1.5)
        F1 = p_flux(v, 1e-12, 1.5)
        for a, b in zip(F0.parts, F1.parts):
            assert np.allclose(a, b, rtol=0, atol=1e-6)

    def test_rejects_bad_arguments(self):
        v = rough(GRID, 13)
        with pytest.raises(ValueError):
            p_flux(v, -1.0, 1.5)
        with pytest.raises(ValueError):
            p_flux(v, 0.1, 2.5)


class TestMonotonicity:
    @given(
        seed=st.integers(0, 10_000),
        p=st.sampled_from([1.1, 1.5, 1.9, 2.0]),
        mu=st.sampled_from([0.0, 1e-4, 1e-2, 1.0]),
    )
    @settings(max_examples=80, deadline=None)
    def test_gap_nonnegative(self, seed, p, mu):
        g = GridSpec.from_extent(n=(6, 5), extent=(1.0, 1.0))
        rng = np.random.default_rng(seed)
        u = VectorField(g, rng.standard_normal((2, 6, 5)))
        w = VectorField(g, rng.standard_normal((2, 6, 5)))
        gap = monotonicity_gap(u, w, mu, p)
        assert gap >= -1e-12 * max(1.0, abs(gap))

    def test_gap_vanishes_on_diagonal(self):
        v = rough(GRID, 14)
        assert monotonicity_gap(v, v, 0.01, 1.5) == 0.0

    def test_gap_symmetric(self):
        u, w = rough(GRID, 15, count=2)
        assert monotonicity_gap(u, w, 0.01, 1.5) == pytest.approx(
            monotonicity_gap(w, u, 0.01, 1.5), rel=1e-12
        )

    def test_quadratic_case_exact(self):
        # p = 2 makes the flux the identity: gap = |grad(u - w)|^2 summed
        u, w = rough(GRID, 16, count=2)
        gap = monotonicity_gap(u, w, 0.0, 2.0)
        G = gradient(u - w)
        want = sum(float(np.sum(part * part)) for part in G.parts) * GRID.cell_volume
        assert gap == pytest.approx(want, rel=1e-12)


class TestGradientControl:
    def test_single_node_oracle(self):
        # one node at h = 1/2, value 1, mu = 0.04, p = 1.5:
        #   lhs = 0.5 * (2^1.5 + 2^1.5)
        #   rhs = 2^(1/4) * 0.5 * 2 * (4.04)^(-1/4) * 4 + 0.04^(3/4) * 1
        g = GridSpec.from_extent(n=(1,), extent=(1.0,))
        v = VectorField(g, np.array([[1.0]]))
        lhs, rhs = gradient_lp_control(v, 0.04, 1.5)
        assert lhs == pytest.approx(0.5 * 2.0 * 2.0 ** 1.5, rel=1e-14)
        want = 2.0 ** 0.25 * 0.5 * 2.0 * 4.04 ** -0.25 * 4.0 + 0.04 ** 0.75
        assert rhs == pytest.approx(want, rel=1e-14)
        assert lhs <= rhs

    @given(seed=st.integers(0, 10_000), p=st.sampled_from([1.1, 1.5, 1.9, 2.0]),
           mu=st.sampled_from([1e-4, 1e-2, 1.0]))
    @settings(max_examples=80, deadline=None)
    def test_bracket_holds(self, seed, p, mu):
        g = GridSpec.from_extent(n=(6, 6), extent=(1.0, 1.0))
        rng = np.random.default_rng(seed)
        v = VectorField(g, 3.0 * rng.standard_normal((2, 6, 6)))
        lhs, rhs = gradient_lp_control(v, mu, p)
        assert lhs <= rhs

    def test_requires_floor(self):
        with pytest.raises(ValueError):
            gradient_lp_control(rough(GRID, 17), 0.0, 1.5)


class TestConvective:
    def test_quadratic_transport_exact(self):
        # centered differences are exact on quadratics; x(1-x) extends by
        # zero to the boundary, so every node sees the true derivative
        g = GridSpec.from_extent(n=(15,), extent=(1.0,))
        v = VectorField.from_function(g, lambda x: (x * (1.0 - x),))
        w = VectorField(g, np.full((1, 15), 2.0))
        out = convective(w, v)
        x = g.axes()[0]
        assert np.allclose(out.values[0], 2.0 * (1.0 - 2.0 * x), atol=1e-13)

    def test_grid_mismatch(self):
        a = VectorField.zeros(GridSpec.from_extent(n=(4, 4), extent=(1.0, 1.0)))
        b = VectorField.zeros(GridSpec.from_extent(n=(5, 5), extent=(1.0, 1.0)))
        with pytest.raises(ValueError):
            convective(a, b)

    def test_skew_pairing_small_for_divergence_free(self):
        # rotational velocity (y - c, c - x) is divergence free; the
        # centered transport pairing against the field itself is then a
        # pure boundary effect, tiny for fields vanishing near the edge
        g = GridSpec.from_extent(n=(24, 24), extent=(1.0, 1.0))
        bump = VectorField.from_function(
            g, lambda x, y: ((x * (1 - x) * y * (1 - y)) ** 2,) * 2
        )
        w = VectorField.from_function(g, lambda x, y: (y - 0.5, 0.5 - x))
        val = inner(convective(w, bump), bump)
        assert abs(val) <= 1e-12


class TestOperatorPairing:
    def test_linear_in_test_field(self):
        params = ProblemParams(p=1.5, mu=0.1, nu=0.2)
        v = rough(GRID, 18)
        f = apply_operator(v, params)
        w1, w2 = rough(GRID, 19, count=2)
        assert f(w1 + w2) == pytest.approx(f(w1) + f(w2), rel=1e-12)
        assert f(3.0 * w1) == pytest.approx(3.0 * f(w1), rel=1e-12)

    def test_p2_reduces_to_weighted_laplacian(self):
        # p = 2 turns the flux into the plain gradient: the pairing
        # against w is (1 + nu)(grad v, grad w) plus transport
        params = ProblemParams(p=2.0, mu=0.3, nu=0.7)
        v, w = rough(GRID, 20, count=2)
        f = apply_operator(v, params, transport=False)
        from plap.mesh import inner_grad

        want = (1.0 + 0.7) * inner_grad(gradient(v), gradient(w))
        assert f(w) == pytest.approx(want, rel=1e-12)

    def test_requires_positive_regularization(self):
        with pytest.raises(ValueError):
            apply_operator(rough(GRID, 21), ProblemParams(p=1.5, mu=0.0, nu=0.1))


class TestCertificates:
    @pytest.mark.parametrize("nu", [0.1, 1.0])
    @pytest.mark.parametrize("mu", [0.1, 1.0])
    def test_growth_bound_holds(self, nu, mu):
        params = ProblemParams(p=1.5, mu=mu, nu=nu)
        for v in smooth_random_bank(GRID, 8, seed=22, label="growth-test"):
            proxy, bound = growth_certificate(v, params)
            assert proxy <= bound

    @pytest.mark.parametrize("nu", [0.1, 1.0])
    @pytest.mark.parametrize("mu", [0.1, 1.0])
    def test_coercivity_bound_holds(self, nu, mu):
        params = ProblemParams(p=1.5, mu=mu, nu=nu)
        for v in smooth_random_bank(GRID, 8, seed=23, label="coercive-test"):
            pairing, lower = coercivity_certificate(v, params)
            assert pairing >= lower

    def test_growth_scales_with_amplitude(self):
        # doubling the state grows the proxy at most like the bound's
        # quadratic envelope; both sides stay ordered along the ray
        params = ProblemParams(p=1.5, mu=0.5, nu=0.5)
        v = smooth_random_bank(GRID, 1, seed=24, label="ray-test")[0]
        for lam in (0.5, 1.0, 2.0, 4.0):
            proxy, bound = growth_certificate(lam * v, params)
            assert proxy <= bound


class TestBanks:
    def test_sine_bank_count_and_boundary_modes(self):
        bank = sine_bank(GRID, 16)
        assert len(bank) == 16
        with pytest.raises(ValueError):
            sine_bank(GRID, 17)

    def test_sine_bank_linearly_independent(self):
        bank = sine_bank(GRID, 8)
        M = np.stack([v.values.ravel() for v in bank])
        gram = M @ M.T
        assert np.linalg.matrix_rank(gram) == 8

    def test_random_bank_deterministic(self):
        a = smooth_random_bank(GRID, 4, seed=5, label="det-test")
        b = smooth_random_bank(GRID, 4, seed=5, label="det-test")
        c = smooth_random_bank(GRID, 4, seed=6, label="det-test")
        for x, y in zip(a, b):
            assert np.array_equal(x.values, y.values)
        assert not np.array_equal(a[0].values, c[0].values)

    def test_random_bank_label_separates_streams(self):
        a = smooth_random_bank(GRID, 1, seed=5, label="stream-a")[0]
        b = smooth_random_bank(GRID, 1, seed=5, label="stream-b")[0]
        assert not np.array_equal(a.values, b.values)
