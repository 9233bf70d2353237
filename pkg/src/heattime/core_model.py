"""Discrete geometry, potentials, norms and hypothesis checks on Omega = (0, 1).

State vectors are plain ``numpy`` arrays holding values at the interior nodes
``x_i = i*h``; homogeneous Dirichlet values at ``x = 0, 1`` are implied.
Every L2 pairing uses the weighted sum ``h * sum(u * v)``, under which the
3-point Dirichlet Laplacian is exactly self-adjoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError

__all__ = [
    "Grid1D",
    "RegionMask",
    "Potential",
    "ProblemSpec",
    "HypothesisReport",
    "l2_inner",
    "l2_norm",
    "omega_norm",
    "first_eigenvalue",
    "check_hypotheses",
    "sine_mode",
]


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid of ``n_interior`` interior nodes on (0, 1)."""

    n_interior: int

    def __post_init__(self):
        if int(self.n_interior) != self.n_interior or self.n_interior < 3:
            raise ValueError(f"n_interior must be an integer >= 3, got {self.n_interior!r}")

    @property
    def h(self) -> float:
        return 1.0 / (self.n_interior + 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(1, self.n_interior + 1) * self.h

    def laplacian_bands(self) -> tuple[np.ndarray, np.ndarray]:
        """Main and off diagonal of the 3-point Dirichlet Laplacian."""
        n, h2 = self.n_interior, self.h ** 2
        return np.full(n, -2.0 / h2), np.full(n - 1, 1.0 / h2)


@dataclass(frozen=True)
class RegionMask:
    """Indicator of the control region omega = [x_lo, x_hi] on a grid."""

    flags: np.ndarray
    bounds: tuple[float, float]

    def __post_init__(self):
        flags = np.asarray(self.flags, dtype=bool)
        if not flags.any():
            raise ValueError(f"control region {self.bounds} contains no grid node")
        flags.setflags(write=False)
        object.__setattr__(self, "flags", flags)

    @classmethod
    def from_bounds(cls, grid: Grid1D, x_lo: float, x_hi: float) -> "RegionMask":
        if not x_lo < x_hi:
            raise ValueError(f"empty control region ({x_lo}, {x_hi})")
        x = grid.nodes
        # nearest-node inclusion; the 1e-12 guard keeps nodes lying on an endpoint
        tol = 1e-12 * grid.h
        flags = (x >= x_lo - tol) & (x <= x_hi + tol)
        return cls(flags, (float(x_lo), float(x_hi)))

    @classmethod
    def full(cls, grid: Grid1D) -> "RegionMask":
        return cls.from_bounds(grid, 0.0, 1.0)

    @property
    def weights(self) -> np.ndarray:
        return self.flags.astype(float)

    @property
    def is_full(self) -> bool:
        return bool(self.flags.all())


@dataclass(frozen=True)
class Potential:
    """Nodal values of a bounded potential ``a(x)``."""

    values: np.ndarray
    sup_norm: float = field(init=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1:
            raise DimensionError("potential must be one-dimensional")
        if not np.all(np.isfinite(values)):
            raise ValueError("potential values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "sup_norm", float(np.max(np.abs(values))) if values.size else 0.0)

    @classmethod
    def constant(cls, grid: Grid1D, c: float) -> "Potential":
        return cls(np.full(grid.n_interior, float(c)))

    def __add__(self, other: "Potential") -> "Potential":
        return Potential(self.values + other.values)

    def scaled(self, s: float) -> "Potential":
        return Potential(s * self.values)

    @property
    def nonpositive(self) -> bool:
        return bool(np.all(self.values <= 0.0))

    def key(self) -> bytes:
        return self.values.tobytes()


@dataclass(frozen=True)
class ProblemSpec:
    """Data of a time-optimal / minimal-norm problem on the grid.

    ``y0`` is the initial state, ``K`` the radius of the target ball and ``M``
    the pointwise-in-time bound on the control (``None`` when only
    minimal-norm problems are solved).
    """

    grid: Grid1D
    mask: RegionMask
    potential: Potential
    y0: np.ndarray
    K: float
    M: float | None = None

    def __post_init__(self):
        y0 = np.array(self.y0, dtype=float)
        n = self.grid.n_interior
        if y0.shape != (n,):
            raise DimensionError(f"y0 has shape {y0.shape}, expected ({n},)")
        if self.mask.flags.shape != (n,) or self.potential.values.shape != (n,):
            raise DimensionError("mask and potential must match the grid")
        if not self.K > 0:
            raise ValueError("K must be positive")
        if self.M is not None and not self.M > 0:
            raise ValueError("M must be positive")
        y0.setflags(write=False)
        object.__setattr__(self, "y0", y0)

    def with_potential(self, potential: Potential) -> "ProblemSpec":
        return ProblemSpec(self.grid, self.mask, potential, self.y0, self.K, self.M)

    def with_bound(self, M: float) -> "ProblemSpec":
        return ProblemSpec(self.grid, self.mask, self.potential, self.y0, self.K, M)


@dataclass(frozen=True)
class HypothesisReport:
    lambda1: float
    delta0: float
    delta_hat: float
    h2_ok: bool
    h3_ok: bool
    h3_branch: str | None
    norm_y0: float

    @property
    def ok(self) -> bool:
        return self.h2_ok and self.h3_ok

    def summary(self) -> str:
        return (
            f"lambda1={self.lambda1:.6g} delta0={self.delta0:.6g} delta_hat={self.delta_hat:.6g} "
            f"H2={'ok' if self.h2_ok else 'FAIL'} (|y0|={self.norm_y0:.6g}) "
            f"H3={'ok' if self.h3_ok else 'FAIL'}"
            + (f" via {self.h3_branch}" if self.h3_branch else "")
        )


def _check_pair(u, v):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape[-1] != v.shape[-1]:
        raise DimensionError(f"length mismatch: {u.shape[-1]} vs {v.shape[-1]}")
    return u, v


def l2_inner(u, v, grid: Grid1D) -> float:
    """L2(Omega) inner product ``h * sum(u*v)``. Broadcasts over leading axes."""
    u, v = _check_pair(u, v)
    if u.shape[-1] != grid.n_interior:
        raise DimensionError(f"vectors have length {u.shape[-1]}, grid has {grid.n_interior}")
    return grid.h * np.sum(u * v, axis=-1)


def l2_norm(u, grid: Grid1D) -> float:
    u = np.asarray(u, dtype=float)
    return np.sqrt(l2_inner(u, u, grid))


def omega_norm(u, mask: RegionMask, grid: Grid1D) -> float:
    """L2(omega) norm ``sqrt(h * sum_{i in omega} u_i^2)``."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != mask.flags.shape[0]:
        raise DimensionError("vector and mask lengths differ")
    return np.sqrt(grid.h * np.sum(u[..., mask.flags] ** 2, axis=-1))


def first_eigenvalue(grid: Grid1D) -> float:
    """Smallest eigenvalue of the discrete Dirichlet operator ``-Laplacian``."""
    h = grid.h
    return 2.0 / h ** 2 * (1.0 - np.cos(np.pi * h))


def sine_mode(grid: Grid1D, j: int = 1, amplitude: float = 1.0) -> np.ndarray:
    """``amplitude * sqrt(2) * sin(j*pi*x)``, unit L2 norm when amplitude = 1.

    The discrete norm is exactly one for every ``1 <= j <= n_interior``.
    """
    return amplitude * np.sqrt(2.0) * np.sin(j * np.pi * grid.nodes)


def check_hypotheses(spec: ProblemSpec) -> HypothesisReport:
    """Evaluate the ball-exclusion and decay hypotheses for ``spec``.

    The sign branch (``a <= 0``) is preferred when both branches apply, so
    ``a = 0`` reports ``delta0 = lambda1``.
    """
    lam = first_eigenvalue(spec.grid)
    a = spec.potential
    norm_y0 = float(l2_norm(spec.y0, spec.grid))
    if a.nonpositive:
        branch, delta0 = "sign", lam
    elif a.sup_norm < lam:
        branch, delta0 = "smallness", lam - a.sup_norm
    else:
        branch, delta0 = None, float("nan")
    return HypothesisReport(
        lambda1=lam,
        delta0=delta0,
        delta_hat=delta0 / 2.0,
        h2_ok=norm_y0 > spec.K,
        h3_ok=branch is not None,
        h3_branch=branch,
        norm_y0=norm_y0,
    )
