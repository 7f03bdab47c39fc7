"""Discrete convolution smoothers.

Two smoothers are provided: a spatial one acting on node fields (used to
regularize the transport velocity) and a separable space-time one acting
on face-gradient histories (used to build the frozen dual coefficients).
Both sample the standard bump exp(-1/(1-r^2)) on its support and
renormalize the samples to sum exactly 1, which makes the convex-weight
properties (non-expansiveness in every l^p, exact max bound) hold
discretely rather than up to quadrature error.

Spatial convolution extends fields by zero outside the box (Dirichlet);
time convolution clamps to the first/last snapshot.  Radii at or below
one grid spacing degenerate to the identity kernel; that is flagged on
the kernel, never raised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .mesh import (
    Bochner,
    GradientField,
    GridSpec,
    Lp,
    Trajectory,
    VectorField,
    gradient,
    norm,
)

__all__ = [
    "Kernel",
    "SpaceTimeKernel",
    "bump_kernel",
    "time_bump_kernel",
    "mollify_space",
    "mollify_spacetime",
    "time_kernel_limit_check",
    "coefficient_convergence_check",
]


@dataclass(frozen=True)
class Kernel:
    """Sampled spatial bump on a node stencil.

    ``weights`` has odd length 2r_k+1 per axis, is nonnegative, sums to
    exactly 1, and vanishes outside the ball of radius ``radius``.
    ``l2_constant`` is the discrete smoothing gain: for every field,
    max |smoothed| <= l2_constant * ||field||_2 (Cauchy-Schwarz with the
    quadrature weight folded in); it scales like radius^(-d/2).
    """

    radius: float
    h: tuple[float, ...]
    weights: np.ndarray
    l2_constant: float
    degenerate: bool

    @property
    def half_width(self) -> tuple[int, ...]:
        return tuple((s - 1) // 2 for s in self.weights.shape)


@lru_cache(maxsize=64)
def _bump_kernel_cached(h: tuple[float, ...], radius: float) -> Kernel:
    half = [max(1, math.ceil(radius / hk)) for hk in h]
    grids = np.meshgrid(
        *[np.arange(-r, r + 1) * hk for r, hk in zip(half, h)], indexing="ij"
    )
    rho2 = sum((g / radius) ** 2 for g in grids)
    with np.errstate(divide="ignore", over="ignore"):
        w = np.where(rho2 < 1.0, np.exp(-1.0 / np.maximum(1.0 - rho2, 1e-300)), 0.0)
    # trim all-zero outer shells (radius landing exactly on a node ring)
    for ax in range(w.ndim):
        while w.shape[ax] > 1:
            edge = [slice(None)] * w.ndim
            edge[ax] = [0, -1]
            if np.any(w[tuple(edge)]):
                break
            keep = [slice(None)] * w.ndim
            keep[ax] = slice(1, -1)
            w = w[tuple(keep)]
    w = w / float(np.sum(w))
    hvol = 1.0
    for hk in h:
        hvol *= hk
    l2c = float(np.sqrt(np.sum(w * w))) / math.sqrt(hvol)
    w = np.ascontiguousarray(w)
    w.setflags(write=False)
    return Kernel(radius, h, w, l2c, degenerate=int(np.count_nonzero(w)) == 1)


def bump_kernel(h, radius: float) -> Kernel:
    """Spatial kernel for spacings ``h`` (a GridSpec is also accepted)."""
    if isinstance(h, GridSpec):
        h = h.h
    if not radius > 0:
        raise ValueError("kernel radius must be positive")
    return _bump_kernel_cached(tuple(float(x) for x in h), float(radius))


def time_bump_kernel(radius: float, dt: float, causal: bool = False) -> np.ndarray:
    """1-D time weights, normalized to sum 1.

    Symmetric (default): odd length 2r+1 centered at lag 0.  Causal:
    length r+1 where entry j weighs lag j (past values only); its first
    moment is nonzero, so smoothing linear-in-time data leaves a bias
    proportional to the radius, exactly the behaviour the limit check
    below measures.
    """
    if not (radius > 0 and dt > 0):
        raise ValueError("radius and dt must be positive")
    r = max(1, math.ceil(radius / dt))
    lags = np.arange(0, r + 1) if causal else np.arange(-r, r + 1)
    rho2 = (lags * dt / radius) ** 2
    with np.errstate(divide="ignore", over="ignore"):
        w = np.where(rho2 < 1.0, np.exp(-1.0 / np.maximum(1.0 - rho2, 1e-300)), 0.0)
    if causal:
        while len(w) > 1 and w[-1] == 0.0:
            w = w[:-1]
    else:
        while len(w) > 1 and w[0] == 0.0 and w[-1] == 0.0:
            w = w[1:-1]
    return w / float(np.sum(w))


@dataclass(frozen=True)
class SpaceTimeKernel:
    """Separable product of a symmetric time bump and a spatial bump,
    both of the same radius (time measured in the trajectory's units)."""

    radius: float
    time_weights: np.ndarray
    space: Kernel

    @classmethod
    def build(cls, h, dt: float, radius: float) -> "SpaceTimeKernel":
        return cls(radius, time_bump_kernel(radius, dt, causal=False), bump_kernel(h, radius))

    @property
    def time_stencil(self) -> int:
        return len(self.time_weights)


def mollify_space(v: VectorField, radius: float, kernel: Kernel | None = None) -> VectorField:
    """Convolve each component with the bump kernel, zero extension."""
    if kernel is None:
        kernel = bump_kernel(v.grid.h, radius)
    if kernel.degenerate:
        return v
    w = kernel.weights[None]  # size-1 kernel axis over components
    out = ndimage.convolve(v.values, w, mode="constant", cval=0.0)
    return VectorField(v.grid, out)


def _mollify_array_stack(stack: np.ndarray, kernel: SpaceTimeKernel) -> np.ndarray:
    """stack shape (T, m, *spatial): clamped time conv then zero-ext space conv."""
    out = ndimage.convolve1d(stack, kernel.time_weights, axis=0, mode="nearest")
    if not kernel.space.degenerate:
        w = kernel.space.weights[None, None]  # size-1 over (time, component)
        out = ndimage.convolve(out, w, mode="constant", cval=0.0)
    return out


def mollify_spacetime(G, radius: float, dt: float) -> list[GradientField]:
    """Smooth a time sequence of GradientFields in time and space.

    Clamped extension in time, zero extension in space, per-axis face
    arrays smoothed independently (they live on different lattices).
    """
    G = list(G)
    if not G:
        raise ValueError("empty gradient sequence")
    grid = G[0].grid
    kernel = SpaceTimeKernel.build(grid.h, dt, radius)
    if len(G) < kernel.time_stencil:
        raise ValueError(
            f"trajectory of length {len(G)} is shorter than the time stencil "
            f"({kernel.time_stencil}) of radius {radius}"
        )
    out_parts: list[list[np.ndarray]] = [[] for _ in G]
    for k in range(grid.d):
        stack = np.stack([g.parts[k] for g in G])
        sm = _mollify_array_stack(stack, kernel)
        for i in range(len(G)):
            out_parts[i].append(sm[i])
    return [GradientField(grid, tuple(parts)) for parts in out_parts]


def time_kernel_limit_check(f: Trajectory, radii, p: float = 2.0) -> list[float]:
    """Residuals ||phi_r * f - f|| in the Bochner L^p norm, per radius.

    Uses the causal time bump (unit mass, past-looking), clamped at the
    start, so constant data is reproduced exactly and linear data leaves
    a residual proportional to the radius.
    """
    vals = np.stack([fld.values for fld in f.fields])
    residuals = []
    for r in radii:
        w = time_bump_kernel(r, f.dt, causal=True)
        lag = len(w) - 1
        padded = np.concatenate([np.repeat(vals[:1], lag, axis=0), vals]) if lag else vals
        sm = np.zeros_like(vals)
        for j, wj in enumerate(w):
            if wj:
                sm += wj * padded[lag - j : len(padded) - j]
        diff = Trajectory(
            tuple(
                VectorField(f.grid, sm[i] - vals[i]) for i in range(len(f.fields))
            ),
            f.dt,
            f.t_start,
        )
        residuals.append(norm(diff, Bochner(p, Lp(p))))
    return residuals


def coefficient_convergence_check(v: Trajectory, mu: float, p: float, radii) -> list[float]:
    """L^2-in-space-and-time distance between the diffusivity built from
    the space-time-smoothed gradient and the raw one, per radius.

    The caller asserts decrease toward 0 as the radius shrinks.
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    expo = (p - 2.0) / 2.0
    G = [gradient(fld) for fld in v.fields]
    raw = [
        tuple((mu + np.sum(part * part, axis=0)) ** expo for part in g.parts)
        for g in G
    ]
    hvol = v.grid.cell_volume
    out = []
    for r in radii:
        Gs = mollify_spacetime(G, r, v.dt)
        acc = 0.0
        for n in range(1, len(v.fields)):
            for k in range(v.grid.d):
                part = Gs[n].parts[k]
                a_s = (mu + np.sum(part * part, axis=0)) ** expo
                d = a_s - raw[n][k]
                acc += float(np.sum(d * d))
        out.append(math.sqrt(acc * hvol * v.dt))
    return out
