"""Crank-Nicolson stepping of the controlled heat equation and its adjoint.

The semi-discrete operator is ``A = Lap_h + diag(a)``. One step of length
``dt`` maps

    y_{k+1} = P (y_k + dt * chi_omega u_k),   P = (I - dt/2 A)^{-1} (I + dt/2 A).

The control enters at the left end of each step. With the adjoint samples
``phi(t_k) = P^(n-k) phi_T`` this makes the discrete duality identity

    <y(T; u, 0), phi_T> = sum_k dt <u_k, phi(t_k)>_omega

hold to round-off, which the dual minimization relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_banded

from .core_model import Grid1D, Potential, RegionMask, l2_norm
from .errors import DimensionError, StabilityError
from .io import write_csv

__all__ = [
    "TimeGrid",
    "Trajectory",
    "ControlTrajectory",
    "Propagator",
    "propagator",
    "operator_matrix",
    "solve_forward",
    "solve_adjoint",
    "free_decay_entry_time",
    "perturbation_gap",
    "GapReport",
    "DEFAULT_DT",
]

DEFAULT_DT = 2.5e-4


@dataclass(frozen=True)
class TimeGrid:
    t_final: float
    n_steps: int

    def __post_init__(self):
        if not self.t_final > 0:
            raise ValueError("horizon must be positive")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError("n_steps must be a positive integer")

    @property
    def dt(self) -> float:
        return self.t_final / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_final, self.n_steps + 1)

    @classmethod
    def for_horizon(cls, T: float, dt: float = DEFAULT_DT, min_steps: int = 16) -> "TimeGrid":
        """Uniform grid on [0, T] with step at most ``dt``."""
        n = max(int(math.ceil(T / dt - 1e-9)), min_steps)
        return cls(float(T), n)


@dataclass(frozen=True)
class Trajectory:
    """States at ``t_k = k*dt``, ``k = 0..n_steps``, stored row-wise."""

    samples: np.ndarray
    tg: TimeGrid
    grid: Grid1D

    def __post_init__(self):
        if self.samples.shape != (self.tg.n_steps + 1, self.grid.n_interior):
            raise DimensionError("trajectory shape does not match its grids")

    @property
    def final(self) -> np.ndarray:
        return self.samples[-1]

    @property
    def initial(self) -> np.ndarray:
        return self.samples[0]

    def norms(self) -> np.ndarray:
        return l2_norm(self.samples, self.grid)

    def to_csv(self, path, comment: str | None = None):
        cols = ["t"] + [f"x_{i}" for i in range(1, self.grid.n_interior + 1)]
        rows = np.column_stack([self.tg.times, self.samples])
        write_csv(path, cols, rows, comment)


@dataclass(frozen=True)
class ControlTrajectory:
    """Piecewise-constant control, sample ``k`` acting on ``[t_k, t_{k+1})``.

    Samples are zeroed off omega at construction.
    """

    samples: np.ndarray
    tg: TimeGrid
    mask: RegionMask
    grid: Grid1D

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.shape != (self.tg.n_steps, self.grid.n_interior):
            raise DimensionError(
                f"control has shape {s.shape}, expected {(self.tg.n_steps, self.grid.n_interior)}"
            )
        s[:, ~self.mask.flags] = 0.0
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @classmethod
    def zeros(cls, tg: TimeGrid, mask: RegionMask, grid: Grid1D) -> "ControlTrajectory":
        return cls(np.zeros((tg.n_steps, grid.n_interior)), tg, mask, grid)

    @property
    def times(self) -> np.ndarray:
        return self.tg.times[:-1]

    def norms(self) -> np.ndarray:
        return l2_norm(self.samples, self.grid)

    @property
    def sup_norm(self) -> float:
        return float(np.max(self.norms()))

    def scaled(self, s: float) -> "ControlTrajectory":
        return ControlTrajectory(s * self.samples, self.tg, self.mask, self.grid)

    def at(self, t) -> np.ndarray:
        """Linear interpolation of the samples viewed as values at ``t_k``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        ts = self.times
        idx = np.clip(np.searchsorted(ts, t, side="right") - 1, 0, len(ts) - 1)
        nxt = np.minimum(idx + 1, len(ts) - 1)
        span = np.where(nxt > idx, ts[nxt] - ts[idx], 1.0)
        w = np.clip((t - ts[idx]) / span, 0.0, 1.0)[:, None]
        w = np.where((nxt > idx)[:, None], w, 0.0)
        return (1.0 - w) * self.samples[idx] + w * self.samples[nxt]

    def to_csv(self, path, comment: str | None = None):
        cols = ["t", "M(t)"] + [f"x_{i}" for i in range(1, self.grid.n_interior + 1)]
        rows = np.column_stack([self.times, self.norms(), self.samples])
        write_csv(path, cols, rows, comment)


def operator_matrix(grid: Grid1D, a: Potential) -> np.ndarray:
    """Dense ``Lap_h + diag(a)`` (symmetric)."""
    main, off = grid.laplacian_bands()
    A = np.diag(main + a.values) + np.diag(off, 1) + np.diag(off, -1)
    return A


class Propagator:
    """One Crank-Nicolson step for fixed ``(grid, a, dt)``.

    The step matrix is formed once by banded elimination of the implicit
    half-step against the explicit half-step, then symmetrized; stepping is a
    dense mat-vec and works on any stack of row vectors.
    """

    def __init__(self, grid: Grid1D, a: Potential, dt: float):
        if a.values.shape != (grid.n_interior,):
            raise DimensionError("potential does not match grid")
        if not dt > 0:
            raise ValueError("dt must be positive")
        if dt * a.sup_norm >= 2.0:
            raise StabilityError(
                f"dt*sup|a| = {dt * a.sup_norm:.3g} >= 2; Crank-Nicolson system is not definite"
            )
        self.grid, self.a, self.dt = grid, a, dt
        n = grid.n_interior
        main, off = grid.laplacian_bands()
        main = main + a.values
        ab = np.zeros((3, n))
        ab[0, 1:] = -0.5 * dt * off
        ab[1] = 1.0 - 0.5 * dt * main
        ab[2, :-1] = -0.5 * dt * off
        rhs = np.diag(1.0 + 0.5 * dt * main) + np.diag(0.5 * dt * off, 1) + np.diag(0.5 * dt * off, -1)
        P = solve_banded((1, 1), ab, rhs)
        self.matrix = 0.5 * (P + P.T)

    def step(self, v: np.ndarray) -> np.ndarray:
        return v @ self.matrix

    def forward(self, y0: np.ndarray, n_steps: int, sources: np.ndarray | None = None) -> np.ndarray:
        """Stack of states ``(..., n_steps+1, n)``; ``sources`` already scaled by dt."""
        y0 = np.asarray(y0, dtype=float)
        out = np.empty(y0.shape[:-1] + (n_steps + 1, y0.shape[-1]))
        out[..., 0, :] = y0
        P = self.matrix
        if sources is None:
            for k in range(n_steps):
                out[..., k + 1, :] = out[..., k, :] @ P
        else:
            for k in range(n_steps):
                out[..., k + 1, :] = (out[..., k, :] + sources[..., k, :]) @ P
        return out

    def backward(self, phi_T: np.ndarray, n_steps: int) -> np.ndarray:
        """Adjoint samples ``phi(t_k) = P^(n-k) phi_T`` for ``k = 0..n``."""
        phi_T = np.asarray(phi_T, dtype=float)
        out = np.empty(phi_T.shape[:-1] + (n_steps + 1, phi_T.shape[-1]))
        out[..., n_steps, :] = phi_T
        P = self.matrix
        for k in range(n_steps, 0, -1):
            out[..., k - 1, :] = out[..., k, :] @ P
        return out


_CACHE: dict = {}
_CACHE_MAX = 64


def propagator(grid: Grid1D, a: Potential, dt: float) -> Propagator:
    """Memoized :class:`Propagator` keyed on grid size, potential and step."""
    key = (grid.n_interior, a.key(), float(dt))
    prop = _CACHE.get(key)
    if prop is None:
        if len(_CACHE) >= _CACHE_MAX:
            _CACHE.pop(next(iter(_CACHE)))
        prop = _CACHE[key] = Propagator(grid, a, dt)
    return prop


def _grid_for(v: np.ndarray, a: Potential) -> Grid1D:
    n = np.shape(v)[-1]
    if a.values.shape != (n,):
        raise DimensionError(f"state has length {n}, potential {a.values.shape[0]}")
    return Grid1D(n)


def solve_forward(y0, u: ControlTrajectory | None, a: Potential, tg: TimeGrid) -> Trajectory:
    """Trajectory of ``y' = Lap y + a y + chi_omega u`` from ``y0``.

    With ``u=None`` this is the free evolution ``S(t) y0``.
    """
    y0 = np.asarray(y0, dtype=float)
    grid = _grid_for(y0, a)
    prop = propagator(grid, a, tg.dt)
    sources = None
    if u is not None:
        if u.tg.n_steps != tg.n_steps or not np.isclose(u.tg.t_final, tg.t_final):
            raise DimensionError("control time grid differs from the solve grid")
        sources = tg.dt * u.samples
    return Trajectory(prop.forward(y0, tg.n_steps, sources), tg, grid)


def solve_adjoint(phi_T, a: Potential, tg: TimeGrid) -> Trajectory:
    """Backward solution of ``phi_t + Lap phi + a phi = 0``, ``phi(T) = phi_T``."""
    phi_T = np.asarray(phi_T, dtype=float)
    grid = _grid_for(phi_T, a)
    prop = propagator(grid, a, tg.dt)
    return Trajectory(prop.backward(phi_T, tg.n_steps), tg, grid)


def free_decay_entry_time(y0, a: Potential, K: float, t_max: float, dt: float = DEFAULT_DT):
    """First time the uncontrolled state enters the closed ball of radius ``K``.

    Steps with ``dt`` until the norm drops to ``K``, then bisects inside the
    bracketing step using a single Crank-Nicolson sub-step of variable length.
    Returns ``None`` if the ball is not reached by ``t_max``.
    """
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    if not K > 0:
        raise ValueError("K must be positive")
    y = np.asarray(y0, dtype=float)
    grid = _grid_for(y, a)
    if l2_norm(y, grid) <= K:
        return 0.0
    n_steps = int(math.ceil(t_max / dt - 1e-9))
    step = t_max / n_steps
    prop = propagator(grid, a, step)
    t = 0.0
    for _ in range(n_steps):
        y_next = prop.step(y)
        if l2_norm(y_next, grid) <= K:
            break
        y, t = y_next, t + step
    else:
        return None

    lo, hi = 0.0, step
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if l2_norm(Propagator(grid, a, mid).step(y), grid) <= K:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-14 * max(1.0, t):
            break
    return t + hi


class GapReport(NamedTuple):
    gap: float
    bound: float
    within_bound: bool


def perturbation_gap(y: Trajectory, y_eps: Trajectory, a: Potential, a_eps: Potential,
                     slack: float = 0.1) -> GapReport:
    """Sup-in-time distance of two trajectories and its Gronwall bound.

    The bound is ``|a_eps - a|_inf * exp(|a_eps|_inf T) * sum_k dt |y(t_k)|``;
    ``within_bound`` allows ``slack`` relative excess for the discretization.
    """
    if y.samples.shape != y_eps.samples.shape or not np.isclose(y.tg.t_final, y_eps.tg.t_final):
        raise DimensionError("trajectories live on different grids")
    gap = float(np.max(l2_norm(y_eps.samples - y.samples, y.grid)))
    da = float(np.max(np.abs(a_eps.values - a.values)))
    T, dt = y.tg.t_final, y.tg.dt
    bound = da * math.exp(a_eps.sup_norm * T) * dt * float(np.sum(y.norms()[:-1]))
    return GapReport(gap, bound, gap <= (1.0 + slack) * bound + 1e-14)
