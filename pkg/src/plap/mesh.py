"""Structured-grid fields, summation-by-parts operators, and discrete norms.

The domain is an axis-aligned box with homogeneous Dirichlet data.  Only
interior node values are stored; every difference stencil sees implicit
zero ghost values on the boundary.  Gradients live on faces (forward
differences), the divergence maps face data back to nodes (backward
differences), and the two are exact negative adjoints under the uniform
midpoint quadrature.  That exactness is what the discrete energy audits
elsewhere in the package rely on, so nothing here may interpolate.

All reductions go through ``numpy.sum`` (pairwise, single bit-stable
order); BLAS dot products are avoided on purpose.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GridSpec",
    "VectorField",
    "GradientField",
    "Trajectory",
    "Lp",
    "Linf",
    "W1pSeminorm",
    "Bochner",
    "gradient",
    "divergence",
    "norm",
    "inner",
    "inner_grad",
    "save_field",
    "load_field",
    "save_trajectory",
    "load_trajectory",
]


@dataclass(frozen=True)
class GridSpec:
    """Uniform interior-node grid on a box.

    ``n[k]`` interior nodes along axis k with spacing ``h[k]``; the box
    extent is ``h[k] * (n[k] + 1)`` since the boundary layer of nodes is
    implicit (identically zero).  Spacings are stored, extents derived,
    so a grid reconstructed from a dumped header is bit-identical.
    """

    n: tuple[int, ...]
    h: tuple[float, ...]

    def __post_init__(self):
        if not (1 <= len(self.n) <= 3):
            raise ValueError("grid dimension must be 1, 2 or 3")
        if len(self.h) != len(self.n):
            raise ValueError("n and h must have equal length")
        if any(int(nk) != nk or nk < 1 for nk in self.n):
            raise ValueError("interior node counts must be integers >= 1")
        if any(not (hk > 0.0 and math.isfinite(hk)) for hk in self.h):
            raise ValueError("spacings must be positive and finite")
        object.__setattr__(self, "n", tuple(int(nk) for nk in self.n))
        object.__setattr__(self, "h", tuple(float(hk) for hk in self.h))

    @classmethod
    def from_extent(cls, extent, n) -> "GridSpec":
        """Grid with ``n[k]`` interior nodes on a box of the given extents."""
        n = tuple(int(nk) for nk in n)
        extent = tuple(float(L) for L in extent)
        if len(extent) != len(n):
            raise ValueError("extent and n must have equal length")
        if any(L <= 0 for L in extent):
            raise ValueError("extents must be positive")
        return cls(n, tuple(L / (nk + 1) for L, nk in zip(extent, n)))

    @property
    def d(self) -> int:
        return len(self.n)

    @property
    def extent(self) -> tuple[float, ...]:
        return tuple(hk * (nk + 1) for hk, nk in zip(self.h, self.n))

    @property
    def cell_volume(self) -> float:
        v = 1.0
        for hk in self.h:
            v *= hk
        return v

    @property
    def measure(self) -> float:
        """Volume of the box."""
        v = 1.0
        for L in self.extent:
            v *= L
        return v

    def axes(self) -> list[np.ndarray]:
        """Interior node coordinates per axis."""
        return [
            (np.arange(1, nk + 1)) * hk for nk, hk in zip(self.n, self.h)
        ]

    def meshgrid(self) -> list[np.ndarray]:
        return list(np.meshgrid(*self.axes(), indexing="ij"))


def _check_values(values: np.ndarray, grid: GridSpec, m: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (m,) + grid.n:
        raise ValueError(
            f"values shape {values.shape} does not match (m,)+n = {(m,) + grid.n}"
        )
    if not np.all(np.isfinite(values)):
        raise ValueError("field values must be finite")
    values = np.ascontiguousarray(values)
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class VectorField:
    """d-component field sampled at the interior nodes of ``grid``.

    The component count equals the space dimension (the field advects
    itself).  Instances are immutable; arithmetic returns new fields.
    """

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "values", _check_values(self.values, self.grid, self.grid.d)
        )

    @classmethod
    def zeros(cls, grid: GridSpec) -> "VectorField":
        return cls(grid, np.zeros((grid.d,) + grid.n))

    @classmethod
    def from_function(cls, grid: GridSpec, fn) -> "VectorField":
        """Sample ``fn(*coords) -> sequence of d components`` at the nodes."""
        comps = fn(*grid.meshgrid())
        vals = np.stack([np.broadcast_to(c, grid.n) for c in comps])
        return cls(grid, vals)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def __add__(self, other: "VectorField") -> "VectorField":
        self._same_grid(other)
        return VectorField(self.grid, self.values + other.values)

    def __sub__(self, other: "VectorField") -> "VectorField":
        self._same_grid(other)
        return VectorField(self.grid, self.values - other.values)

    def __mul__(self, a: float) -> "VectorField":
        return VectorField(self.grid, self.values * float(a))

    __rmul__ = __mul__

    def _same_grid(self, other: "VectorField"):
        if self.grid != other.grid:
            raise ValueError("fields live on different grids")


@dataclass(frozen=True)
class GradientField:
    """Per-axis face arrays of a field's gradient.

    ``parts[k]`` holds the derivatives along axis k of all m components,
    shape ``(m, n_1, ..., n_k + 1, ..., n_d)``: one value per k-face,
    including the two boundary faces (fed by the zero ghosts).  The k-th
    column of the gradient tensor is native on k-faces; no cross-axis
    interpolation is ever performed.
    """

    grid: GridSpec
    parts: tuple[np.ndarray, ...]

    def __post_init__(self):
        g = self.grid
        if len(self.parts) != g.d:
            raise ValueError("one part per axis required")
        fixed = []
        for k, part in enumerate(self.parts):
            part = np.asarray(part, dtype=np.float64)
            shape = list((g.d,) + g.n)
            shape[k + 1] += 1
            if part.shape != tuple(shape):
                raise ValueError(f"part {k} has shape {part.shape}, want {tuple(shape)}")
            if not np.all(np.isfinite(part)):
                raise ValueError("gradient values must be finite")
            part = np.ascontiguousarray(part)
            part.setflags(write=False)
            fixed.append(part)
        object.__setattr__(self, "parts", tuple(fixed))

    @classmethod
    def zeros(cls, grid: GridSpec) -> "GradientField":
        parts = []
        for k in range(grid.d):
            shape = list((grid.d,) + grid.n)
            shape[k + 1] += 1
            parts.append(np.zeros(shape))
        return cls(grid, tuple(parts))

    def __add__(self, other: "GradientField") -> "GradientField":
        return GradientField(
            self.grid, tuple(a + b for a, b in zip(self.parts, other.parts))
        )

    def __sub__(self, other: "GradientField") -> "GradientField":
        return GradientField(
            self.grid, tuple(a - b for a, b in zip(self.parts, other.parts))
        )

    def __mul__(self, a: float) -> "GradientField":
        return GradientField(self.grid, tuple(p * float(a) for p in self.parts))

    __rmul__ = __mul__


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled time sequence of fields on one grid."""

    fields: tuple[VectorField, ...]
    dt: float
    t_start: float = 0.0

    def __post_init__(self):
        if len(self.fields) < 2:
            raise ValueError("a trajectory needs at least two snapshots")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive and finite")
        g = self.fields[0].grid
        if any(f.grid != g for f in self.fields):
            raise ValueError("all snapshots must share one grid")
        object.__setattr__(self, "fields", tuple(self.fields))

    @property
    def grid(self) -> GridSpec:
        return self.fields[0].grid

    @property
    def steps(self) -> int:
        return len(self.fields) - 1

    @property
    def horizon(self) -> float:
        return self.steps * self.dt

    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(len(self.fields))

    def __len__(self) -> int:
        return len(self.fields)

    def __getitem__(self, i) -> VectorField:
        return self.fields[i]


# ---------------------------------------------------------------------------
# raw array kernels (used by the solvers; the public API wraps them)

def _raw_gradient(values: np.ndarray, h) -> list[np.ndarray]:
    """Forward differences onto faces, zero ghost values at the boundary."""
    parts = []
    for k, hk in enumerate(h):
        ax = k + 1
        pad = [(0, 0)] * values.ndim
        pad[ax] = (1, 1)
        padded = np.pad(values, pad)
        parts.append(np.diff(padded, axis=ax) / hk)
    return parts

def _raw_divergence(parts, h) -> np.ndarray:
    """Backward differences of face data back to nodes (negative adjoint)."""
    out = None
    for k, hk in enumerate(h):
        contrib = np.diff(parts[k], axis=k + 1) / hk
        out = contrib if out is None else out + contrib
    return out

def _raw_centered(values: np.ndarray, k: int, hk: float) -> np.ndarray:
    """Centered difference along axis k at nodes, zero ghosts."""
    ax = k + 1
    pad = [(0, 0)] * values.ndim
    pad[ax] = (1, 1)
    padded = np.pad(values, pad)
    lo = [slice(None)] * values.ndim
    hi = [slice(None)] * values.ndim
    lo[ax] = slice(0, -2)
    hi[ax] = slice(2, None)
    return (padded[tuple(hi)] - padded[tuple(lo)]) / (2.0 * hk)


def gradient(v: VectorField) -> GradientField:
    """Forward-difference gradient at faces; linear in v."""
    return GradientField(v.grid, tuple(_raw_gradient(v.values, v.grid.h)))


def divergence(F: GradientField) -> VectorField:
    """Exact negative adjoint of :func:`gradient`:

    ``inner(divergence(F), w) == -inner_grad(F, gradient(w))`` for every w,
    up to roundoff of the two reductions.
    """
    return VectorField(F.grid, _raw_divergence(F.parts, F.grid.h))


def inner(u: VectorField, w: VectorField) -> float:
    """Midpoint-quadrature pairing sum(u * w) * cell_volume."""
    if u.grid != w.grid:
        raise ValueError("fields live on different grids")
    return float(np.sum(u.values * w.values)) * u.grid.cell_volume


def inner_grad(F: GradientField, G: GradientField) -> float:
    """Same pairing for face data, all axes summed."""
    if F.grid != G.grid:
        raise ValueError("fields live on different grids")
    s = 0.0
    for a, b in zip(F.parts, G.parts):
        s += float(np.sum(a * b))
    return s * F.grid.cell_volume


# ---------------------------------------------------------------------------
# norms

@dataclass(frozen=True)
class Lp:
    """Entrywise L^p norm over components and nodes, h-weighted."""
    p: float

    def __post_init__(self):
        if not self.p >= 1.0:
            raise ValueError("exponent must be in [1, inf]")


@dataclass(frozen=True)
class Linf:
    """Exact maximum of |value| over all stored component entries."""


@dataclass(frozen=True)
class W1pSeminorm:
    """Entrywise L^p norm of the face gradient."""
    p: float

    def __post_init__(self):
        if not self.p >= 1.0:
            raise ValueError("exponent must be in [1, inf]")


@dataclass(frozen=True)
class Bochner:
    """Time-quadrature composition: outer exponent over per-snapshot
    inner norms.  Finite outer p sums dt * s_n^p over snapshots 1..N
    (the datum at t_start carries no quadrature weight); outer inf takes
    the max over all snapshots including the datum."""
    outer: float
    inner: object

    def __post_init__(self):
        if not self.outer >= 1.0:
            raise ValueError("outer exponent must be in [1, inf]")


def _entry_norm(arrays, hvol: float, p: float) -> float:
    if p == math.inf:
        return max(float(np.max(np.abs(a))) if a.size else 0.0 for a in arrays)
    s = 0.0
    for a in arrays:
        s += float(np.sum(np.abs(a) ** p))
    return (s * hvol) ** (1.0 / p)


def norm(obj, kind) -> float:
    """Discrete norm of a field or trajectory.

    Spatial kinds apply to fields; ``Bochner`` applies to trajectories
    only.  Homogeneous: ``norm(a * v) == |a| * norm(v)``.
    """
    if isinstance(kind, Bochner):
        if not isinstance(obj, Trajectory):
            raise ValueError("Bochner norms apply to trajectories")
        vals = [norm(f, kind.inner) for f in obj.fields]
        if kind.outer == math.inf:
            return max(vals)
        acc = sum(s ** kind.outer for s in vals[1:])
        return (obj.dt * acc) ** (1.0 / kind.outer)
    if not isinstance(obj, VectorField):
        raise ValueError(f"norm kind {kind!r} applies to fields")
    hvol = obj.grid.cell_volume
    if isinstance(kind, Lp):
        return _entry_norm([obj.values], hvol, kind.p)
    if isinstance(kind, Linf):
        return float(np.max(np.abs(obj.values)))
    if isinstance(kind, W1pSeminorm):
        return _entry_norm(gradient(obj).parts, hvol, kind.p)
    raise ValueError(f"unknown norm kind {kind!r}")


# ---------------------------------------------------------------------------
# field dump format
#
# ASCII header "PLAPFIELD 1 <d> <n_1..n_d> <h_1..h_d>\n" followed by the
# raw little-endian float64 node values in row-major order, components
# interleaved per node.  Spacings are written in round-trip decimal, so a
# dump/load cycle is bit-exact.

_MAGIC = "PLAPFIELD"
_VERSION = 1


def save_field(path: str, v: VectorField) -> None:
    g = v.grid
    head = " ".join(
        [_MAGIC, str(_VERSION), str(g.d)]
        + [str(nk) for nk in g.n]
        + [repr(hk) for hk in g.h]
    )
    interleaved = np.ascontiguousarray(np.moveaxis(v.values, 0, -1), dtype="<f8")
    with open(path, "wb") as f:
        f.write(head.encode("ascii") + b"\n")
        f.write(interleaved.tobytes())


def load_field(path: str) -> VectorField:
    with open(path, "rb") as f:
        head = f.readline().decode("ascii").strip().split()
        if len(head) < 3 or head[0] != _MAGIC:
            raise ValueError(f"{path}: not a {_MAGIC} file")
        if head[1] != str(_VERSION):
            raise ValueError(
                f"{path}: unsupported {_MAGIC} version {head[1]} (want {_VERSION})"
            )
        d = int(head[2])
        if len(head) != 3 + 2 * d:
            raise ValueError(f"{path}: malformed header")
        n = tuple(int(x) for x in head[3 : 3 + d])
        h = tuple(float(x) for x in head[3 + d : 3 + 2 * d])
        grid = GridSpec(n, h)
        count = d
        for nk in n:
            count *= nk
        raw = f.read(count * 8)
        if len(raw) != count * 8:
            raise ValueError(f"{path}: truncated payload")
        interleaved = np.frombuffer(raw, dtype="<f8").reshape(n + (d,))
        return VectorField(grid, np.moveaxis(interleaved, -1, 0))


def save_trajectory(dirpath: str, traj: Trajectory, stride: int = 1) -> None:
    """Dump snapshots 0, stride, 2*stride, ... plus the final one."""
    os.makedirs(dirpath, exist_ok=True)
    kept = sorted(set(range(0, len(traj), stride)) | {len(traj) - 1})
    meta = {
        "schema": "plap-trajectory-1",
        "dt": repr(traj.dt),
        "t_start": repr(traj.t_start),
        "count": len(traj),
        "stride": stride,
        "indices": kept,
    }
    with open(os.path.join(dirpath, "trajectory.json"), "w") as f:
        json.dump(meta, f, sort_keys=True, indent=1)
        f.write("\n")
    for i in kept:
        save_field(os.path.join(dirpath, f"snapshot_{i:05d}.plap"), traj[i])


def load_trajectory(dirpath: str) -> Trajectory:
    """Reload a trajectory dump; requires stride 1 (no gaps)."""
    with open(os.path.join(dirpath, "trajectory.json")) as f:
        meta = json.load(f)
    if meta.get("schema") != "plap-trajectory-1":
        raise ValueError(f"{dirpath}: unknown trajectory schema")
    if meta["indices"] != list(range(meta["count"])):
        raise ValueError(f"{dirpath}: trajectory was dumped with gaps (stride > 1)")
    fields = [
        load_field(os.path.join(dirpath, f"snapshot_{i:05d}.plap"))
        for i in range(meta["count"])
    ]
    return Trajectory(tuple(fields), float(meta["dt"]), float(meta["t_start"]))
