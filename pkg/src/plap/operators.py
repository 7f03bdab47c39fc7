"""Quasilinear diffusion coefficient, fluxes, convection, and the
inequality audits the well-posedness argument rests on.

Coefficient convention: the diffusivity is evaluated independently per
axis from the vector of component derivatives native to that axis's
faces, a_k(e) = (mu + |g_k(e)|^2)^((p-2)/2).  Nothing is interpolated
across axes, so the pointwise convexity behind the monotonicity gap and
the dissipation identity survives discretization exactly.  (In the
continuum limit this is an orthotropic approximation of the isotropic
law; the audits quantify it, none assume isotropy.)
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np

from .mesh import (
    GradientField,
    GridSpec,
    Lp,
    VectorField,
    W1pSeminorm,
    _raw_centered,
    gradient,
    inner,
    inner_grad,
    norm,
)
from .mollify import bump_kernel, mollify_space

__all__ = [
    "MU_FLOOR",
    "ProblemParams",
    "diffusivity",
    "face_diffusivity",
    "p_flux",
    "convective",
    "apply_operator",
    "monotonicity_gap",
    "gradient_lp_control",
    "growth_certificate",
    "coercivity_certificate",
    "sine_bank",
    "smooth_random_bank",
]

# floor substituted for mu = 0 in coefficient evaluations (the p < 2 law
# is singular at zero gradient); every use is flagged in run reports
MU_FLOOR = 1e-14


@dataclass(frozen=True)
class ProblemParams:
    """Exponent and regularization parameters of one problem instance.

    ``eps_conv`` is the smoothing radius for the transport velocity.  It
    defaults (when None) to sqrt(mu) times the largest box extent, the
    coupling under which the smoothing gain costs a factor mu^(-d/4) and
    the local-horizon formula below is meaningful; it stays overridable
    because the two roles (coefficient floor, velocity smoothing) are
    genuinely independent knobs.  ``eta`` is the space-time smoothing
    radius for the frozen dual coefficients.
    """

    p: float
    mu: float
    nu: float
    eps_conv: float | None = None
    eta: float = 0.0

    def __post_init__(self):
        if not (1.0 < self.p <= 2.0):
            raise ValueError(f"p must lie in (1, 2], got {self.p}")
        if not (self.mu >= 0.0 and math.isfinite(self.mu)):
            raise ValueError("mu must be finite and >= 0")
        if not (self.nu >= 0.0 and math.isfinite(self.nu)):
            raise ValueError("nu must be finite and >= 0")
        if self.eps_conv is not None and not self.eps_conv > 0.0:
            raise ValueError("eps_conv must be positive when given")
        if not self.eta >= 0.0:
            raise ValueError("eta must be >= 0")

    def conv_radius(self, grid: GridSpec) -> float:
        """Transport smoothing radius; 0 means no smoothing."""
        if self.eps_conv is not None:
            return self.eps_conv
        return math.sqrt(self.mu) * max(grid.extent)


def diffusivity(g2, mu: float, p: float):
    """(mu + g2)^((p-2)/2) for g2 = squared gradient magnitude >= 0.

    Scalar in, scalar out; arrays broadcast.  For p < 2 the zero-gradient
    zero-floor case is singular and rejected; callers that need mu = 0
    use the flux (which extends continuously) or the MU_FLOOR policy.
    """
    if not (1.0 < p <= 2.0):
        raise ValueError(f"p must lie in (1, 2], got {p}")
    if p == 2.0:
        return np.ones_like(np.asarray(g2, dtype=np.float64)) if np.ndim(g2) else 1.0
    g2 = np.asarray(g2, dtype=np.float64)
    if np.any(g2 < 0):
        raise ValueError("squared gradient magnitude must be >= 0")
    if mu <= 0.0 and np.any(g2 == 0.0):
        raise ValueError("diffusivity is singular at mu = 0, zero gradient (p < 2)")
    out = (mu + g2) ** ((p - 2.0) / 2.0)
    return float(out) if out.ndim == 0 else out


def _grad_of(obj) -> GradientField:
    if isinstance(obj, GradientField):
        return obj
    if isinstance(obj, VectorField):
        return gradient(obj)
    raise TypeError(f"expected VectorField or GradientField, got {type(obj).__name__}")


def face_diffusivity(G, mu: float, p: float) -> tuple[np.ndarray, ...]:
    """Per-axis coefficient arrays a_k(e) from the native face gradients."""
    G = _grad_of(G)
    return tuple(
        diffusivity(np.sum(part * part, axis=0), mu, p) for part in G.parts
    )


def _flux_parts(G: GradientField, mu: float, p: float) -> tuple[np.ndarray, ...]:
    # continuous extension at mu = 0: |g|^(p-2) g -> 0 as g -> 0 (p > 1)
    out = []
    for part in G.parts:
        g2 = np.sum(part * part, axis=0)
        if mu > 0.0 or p == 2.0:
            a = diffusivity(g2, mu, p)
        else:
            with np.errstate(divide="ignore"):
                a = np.where(g2 > 0.0, g2 ** ((p - 2.0) / 2.0), 0.0)
        out.append(a[None] * part)
    return tuple(out)


def p_flux(v, mu: float, p: float) -> GradientField:
    """a(mu, .) grad v at the gradient points; accepts a field or a
    precomputed GradientField.  At mu = 0 the flux is the continuous
    limit |g|^(p-2) g with value 0 at g = 0."""
    if not (1.0 < p <= 2.0):
        raise ValueError(f"p must lie in (1, 2], got {p}")
    if mu < 0.0:
        raise ValueError("mu must be >= 0")
    G = _grad_of(v)
    return GradientField(G.grid, _flux_parts(G, mu, p))


def convective(w: VectorField, v: VectorField) -> VectorField:
    """(w . grad) v with centered differences at nodes, zero ghosts."""
    if w.grid != v.grid:
        raise ValueError("fields live on different grids")
    out = np.zeros_like(v.values)
    for k, hk in enumerate(v.grid.h):
        out += w.values[k] * _raw_centered(v.values, k, hk)
    return VectorField(v.grid, out)


def apply_operator(v: VectorField, params: ProblemParams, transport: bool = True):
    """The stationary part of the evolution at state v, as a functional.

    Returns f with f(w) = nu (grad v, grad w) + (a(mu,v) grad v, grad w)
    + ((J v . grad) v, w), the three terms evaluated with the mesh
    pairings.  Linear in w; coefficients frozen at v.  ``transport=False``
    drops the third term (linear sanity cases only).
    """
    if not (params.mu > 0.0 and params.nu > 0.0):
        raise ValueError("operator pairing requires mu > 0 and nu > 0")
    G = gradient(v)
    flux = GradientField(v.grid, _flux_parts(G, params.mu, params.p))
    if transport:
        radius = params.conv_radius(v.grid)
        velocity = mollify_space(v, radius) if radius > 0.0 else v
        conv = convective(velocity, v)
    else:
        conv = VectorField.zeros(v.grid)

    def pairing(w: VectorField) -> float:
        Gw = gradient(w)
        return (
            params.nu * inner_grad(G, Gw)
            + inner_grad(flux, Gw)
            + inner(conv, w)
        )

    return pairing


def monotonicity_gap(u, w, mu: float, p: float) -> float:
    """Integral of (flux(u) - flux(w)) . (grad u - grad w); >= 0 in exact
    arithmetic because the flux is the gradient of a convex potential.
    Accepts fields or precomputed GradientFields."""
    Gu, Gw = _grad_of(u), _grad_of(w)
    if Gu.grid != Gw.grid:
        raise ValueError("fields live on different grids")
    Fu = _flux_parts(Gu, mu, p)
    Fw = _flux_parts(Gw, mu, p)
    acc = 0.0
    for k in range(Gu.grid.d):
        acc += float(np.sum((Fu[k] - Fw[k]) * (Gu.parts[k] - Gw.parts[k])))
    return acc * Gu.grid.cell_volume


def gradient_lp_control(v, mu: float, p: float, measure: float | None = None):
    """The pair (lhs, rhs) of the gradient-control inequality

        sum |g|^p * h  <=  2^((2-p)/2) sum (mu+|g|^2)^((p-2)/2) |g|^2 * h
                           + mu^(p/2) * measure.

    Holds for every field: pointwise, s^(p/2) is below the first bracket
    for s >= mu and below mu^(p/2) for s < mu, and the per-point surplus
    peaks below 0.17 mu^(p/2) (worst near p = 1), far under the volume
    budget even after summing over the d face lattices."""
    if not mu > 0.0:
        raise ValueError("mu must be positive")
    G = _grad_of(v)
    if measure is None:
        measure = G.grid.measure
    hvol = G.grid.cell_volume
    lhs = 0.0
    bracket = 0.0
    for part in G.parts:
        g2 = np.sum(part * part, axis=0)
        lhs += float(np.sum(g2 ** (p / 2.0)))
        bracket += float(np.sum((mu + g2) ** ((p - 2.0) / 2.0) * g2))
    lhs *= hvol
    rhs = 2.0 ** ((2.0 - p) / 2.0) * bracket * hvol + mu ** (p / 2.0) * measure
    return lhs, rhs


# ---------------------------------------------------------------------------
# fixed test-field banks

_MODE_TABLE = [
    (1, 1, 1), (2, 1, 1), (1, 2, 1), (2, 2, 1),
    (3, 1, 1), (1, 3, 1), (3, 2, 2), (2, 3, 1),
    (3, 3, 1), (4, 1, 2), (1, 4, 1), (4, 2, 1),
    (2, 4, 2), (4, 3, 1), (3, 4, 1), (4, 4, 1),
]


def sine_bank(grid: GridSpec, count: int = 16) -> list[VectorField]:
    """Fixed bank of tensor-product sine fields (unit amplitude).

    Component i of field j uses the mode row (j + i) mod table size, so
    components are linearly independent across the bank."""
    if not (1 <= count <= len(_MODE_TABLE)):
        raise ValueError(f"count must lie in [1, {len(_MODE_TABLE)}]")
    coords = grid.meshgrid()
    L = grid.extent
    fields = []
    for j in range(count):
        comps = []
        for i in range(grid.d):
            modes = _MODE_TABLE[(j + i) % len(_MODE_TABLE)]
            prof = np.ones(grid.n)
            for k in range(grid.d):
                prof = prof * np.sin(modes[k] * math.pi * coords[k] / L[k])
            comps.append(prof)
        fields.append(VectorField(grid, np.stack(comps)))
    return fields


def smooth_random_bank(
    grid: GridSpec, count: int, seed: int, label: str = "bank"
) -> list[VectorField]:
    """Seeded noise fields smoothed at four grid spacings, unit L2 norm."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(zlib.crc32(label.encode()),))
    rng = np.random.default_rng(ss)
    radius = 4.0 * max(grid.h)
    out = []
    for _ in range(count):
        raw = VectorField(grid, rng.standard_normal((grid.d,) + grid.n))
        sm = mollify_space(raw, radius)
        n2 = norm(sm, Lp(2.0))
        out.append(sm * (1.0 / n2) if n2 > 0 else sm)
    return out


# ---------------------------------------------------------------------------
# certificates

def _full_w12(v: VectorField) -> float:
    return math.sqrt(norm(v, Lp(2.0)) ** 2 + norm(v, W1pSeminorm(2.0)) ** 2)


def growth_certificate(v: VectorField, params: ProblemParams):
    """Operator-norm proxy against the growth bound.

    proxy = max over 16 sine test fields (normalized in the full
    W^{1,2} norm) of |pairing(v, w)|; bound = (1 + |||v|||) *
    (2 + c ||v||_2) with |||.||| the full W^{1,2} norm and c the
    transport kernel's discrete smoothing gain.  The bound's constants
    absorb unit-box measure and require nu <= 1 (the regime audited)."""
    pairing = apply_operator(v, params)
    proxy = 0.0
    for w in sine_bank(v.grid, 16):
        s = _full_w12(w)
        wn = w * (1.0 / s)
        proxy = max(proxy, abs(pairing(wn)))
    c_mu = bump_kernel(v.grid.h, params.conv_radius(v.grid)).l2_constant
    bound = (1.0 + _full_w12(v)) * (2.0 + c_mu * norm(v, Lp(2.0)))
    return proxy, bound


def coercivity_certificate(v: VectorField, params: ProblemParams):
    """Pairing against state vs. the coercivity lower bound.

    pairing = <operator(v), v>; bound = (nu/2) ||grad v||_2^2
    - c ||v||_2^4 with c = l2_constant^2 / (2 nu) (Young's inequality on
    the transport term through the discrete smoothing gain; the gradient
    norm is the seminorm)."""
    pairing = apply_operator(v, params)(v)
    c_mu = bump_kernel(v.grid.h, params.conv_radius(v.grid)).l2_constant
    c = c_mu * c_mu / (2.0 * params.nu)
    bound = 0.5 * params.nu * norm(v, W1pSeminorm(2.0)) ** 2 - c * norm(v, Lp(2.0)) ** 4
    return pairing, bound
