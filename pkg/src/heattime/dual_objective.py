"""Dual functional over terminal adjoint data and its certified minimization.

For a horizon ``T`` the functional is

    J(phi_T) = 1/2 N(phi_T)^2 + <y0, phi(0)> + K |phi_T|,
    N(phi_T) = sum_{k<n} dt |phi(t_k)|_omega,

with ``phi`` the discrete adjoint state. The smooth part
``F = 1/2 N^2 + <y0, phi(0)>`` has gradient ``y(T; f, y0)`` where ``f`` is the
control ``N * chi_omega phi / |phi|_omega`` synthesized from ``phi_T``, so one
adjoint and one forward solve give value and gradient. The same code serves
every horizon/potential pair (unperturbed, perturbed, perturbed horizon).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .core_model import Grid1D, Potential, ProblemSpec, RegionMask, l2_inner, l2_norm, omega_norm
from .errors import DimensionError, UniqueContinuationError
from .heat_dynamics import DEFAULT_DT, Propagator, TimeGrid, propagator
from .io import write_csv

__all__ = [
    "DualObjectiveSpec",
    "MinimizerResult",
    "TAU_FLOOR",
    "eval_J",
    "smooth_gradient",
    "prox_target_norm",
    "minimize_J",
    "dual_lower_bound",
    "observed_mass",
]

TAU_FLOOR = 1e-12


@dataclass(frozen=True)
class DualObjectiveSpec:
    grid: Grid1D
    mask: RegionMask
    potential: Potential
    y0: np.ndarray
    K: float
    tg: TimeGrid

    def __post_init__(self):
        if not self.K > 0:
            raise ValueError("K must be positive")
        if np.shape(self.y0) != (self.grid.n_interior,):
            raise DimensionError("y0 does not match grid")

    @property
    def T(self) -> float:
        return self.tg.t_final

    @classmethod
    def from_problem(cls, problem: ProblemSpec, T: float, dt: float = DEFAULT_DT,
                     potential: Potential | None = None) -> "DualObjectiveSpec":
        return cls(
            problem.grid,
            problem.mask,
            problem.potential if potential is None else potential,
            problem.y0,
            problem.K,
            TimeGrid.for_horizon(T, dt),
        )

    @property
    def prop(self) -> Propagator:
        return propagator(self.grid, self.potential, self.tg.dt)

    def free_final_state(self) -> np.ndarray:
        return self.prop.forward(self.y0, self.tg.n_steps)[-1]


class _Point:
    """Adjoint solve at ``phi_T`` with lazily computed gradient of the smooth part."""

    def __init__(self, phi_T: np.ndarray, spec: DualObjectiveSpec):
        self.phi_T = phi_T
        self.spec = spec
        n = spec.tg.n_steps
        self.Phi = spec.prop.backward(phi_T, n)
        self.omega = omega_norm(self.Phi[:n], spec.mask, spec.grid)
        self.N = spec.tg.dt * float(np.sum(self.omega))
        self.c0 = float(l2_inner(spec.y0, self.Phi[0], spec.grid))
        self.norm = float(l2_norm(phi_T, spec.grid))
        self.F = 0.5 * self.N ** 2 + self.c0

    @property
    def J(self) -> float:
        return self.F + self.spec.K * self.norm

    def unit_controls(self) -> np.ndarray:
        n = self.spec.tg.n_steps
        w = self.Phi[:n] * self.spec.mask.weights
        return w / np.maximum(self.omega, TAU_FLOOR)[:, None]

    @cached_property
    def grad(self) -> np.ndarray:
        spec = self.spec
        sources = (spec.tg.dt * self.N) * self.unit_controls()
        return spec.prop.forward(spec.y0, spec.tg.n_steps, sources)[-1]

    def admissible_scale(self, free_T: np.ndarray) -> float:
        """Smallest ``s >= 0`` with ``|y(T; s*f, y0)| <= K`` for the synthesized ``f``.

        ``y(T; s*f, y0) = free_T + s*(grad - free_T)`` is affine in ``s``; returns
        ``inf`` when the ray never meets the ball.
        """
        grid, K = self.spec.grid, self.spec.K
        d = self.grad - free_T
        a = float(l2_inner(d, d, grid))
        b = float(l2_inner(free_T, d, grid))
        c = float(l2_inner(free_T, free_T, grid)) - K * K
        if c <= 0.0:
            return 0.0
        disc = b * b - a * c
        if b >= 0.0 or disc < 0.0:
            return float("inf")
        return float(c / (-b + np.sqrt(disc)))

    def upper_bound(self, free_T: np.ndarray) -> float:
        """Norm of an admissible control, hence an upper bound on the minimal norm."""
        return self.admissible_scale(free_T) * self.N

    def lower_bound(self) -> float:
        if self.N <= TAU_FLOOR:
            return float("nan")
        return max(0.0, (-self.c0 - self.spec.K * self.norm) / self.N)

    def stationarity(self) -> float:
        """``|grad F + K phi/|phi||``, zero exactly at a nonzero minimizer."""
        if self.norm == 0.0:
            return float("inf")
        r = self.grad + self.spec.K * self.phi_T / self.norm
        return float(l2_norm(r, self.spec.grid))


def observed_mass(phi_T, spec: DualObjectiveSpec) -> float:
    """``N(phi_T) = sum_{k<n} dt |phi(t_k)|_omega``."""
    return _Point(np.asarray(phi_T, dtype=float), spec).N


def eval_J(phi_T, spec: DualObjectiveSpec) -> float:
    return _Point(np.asarray(phi_T, dtype=float), spec).J


def smooth_gradient(phi_T, spec: DualObjectiveSpec) -> np.ndarray:
    """Gradient of ``1/2 N^2 + <y0, phi(0)>`` in the L2(Omega) inner product."""
    return _Point(np.asarray(phi_T, dtype=float), spec).grad


def prox_target_norm(v, step: float, K: float, grid: Grid1D | None = None) -> np.ndarray:
    """Block soft-threshold: proximal map of ``step * K * |.|``.

    The norm is the L2(Omega) norm of ``grid`` (Euclidean when ``grid`` is None).
    """
    if not step > 0:
        raise ValueError("step must be positive")
    v = np.asarray(v, dtype=float)
    nv = float(l2_norm(v, grid)) if grid is not None else float(np.linalg.norm(v))
    thresh = step * K
    if nv <= thresh:
        return np.zeros_like(v)
    return v * (1.0 - thresh / nv)


def dual_lower_bound(phi_T, spec: DualObjectiveSpec) -> float:
    """Certified lower bound on the minimal control norm at horizon ``T``.

    For any admissible control ``g`` and any ``phi_T``, duality gives
    ``|g|_inf N(phi_T) >= -<y0, phi(0)> - K |phi_T|``.
    """
    pt = _Point(np.asarray(phi_T, dtype=float), spec)
    if pt.N <= TAU_FLOOR:
        raise UniqueContinuationError(
            f"adjoint state has negligible mass on omega (N = {pt.N:.3g}); bound undefined"
        )
    return pt.lower_bound()


@dataclass
class MinimizerResult:
    phi_hat: np.ndarray
    J_value: float
    M_upper: float
    M_lower: float
    gap: float
    iterations: int
    converged: bool
    mass: float = 0.0
    stationarity: float = 0.0
    observability_ratio: float = float("nan")
    restarts: int = 0
    trace: list = field(default_factory=list, repr=False)

    @property
    def rel_gap(self) -> float:
        return self.gap / max(self.M_upper, TAU_FLOOR) if self.M_upper > 0 else 0.0

    def write_trace(self, path, comment: str | None = None):
        return write_csv(path, ["iter", "J", "M_upper", "M_lower", "gap"], self.trace, comment)


def _power_lipschitz(spec: DualObjectiveSpec, iters: int = 30, seed: int = 0) -> float:
    """Top eigenvalue of ``T * sum_k dt P^(n-k) chi P^(n-k)``, the Hessian of the
    quadratic majorant ``T/2 sum_k dt |phi(t_k)|_omega^2`` of ``N^2/2``."""
    n, dt = spec.tg.n_steps, spec.tg.dt
    prop, grid, chi = spec.prop, spec.grid, spec.mask.weights
    v = np.random.default_rng(seed).standard_normal(grid.n_interior)
    v /= l2_norm(v, grid)
    lam = 0.0
    for _ in range(iters):
        Phi = prop.backward(v, n)
        w = spec.T * prop.forward(np.zeros_like(v), n, dt * Phi[:n] * chi)[-1]
        lam = float(l2_norm(w, grid))
        if lam == 0.0:
            break
        v = w / lam
    return max(lam, TAU_FLOOR)


def minimize_J(spec: DualObjectiveSpec, tol_gap: float = 1e-3, max_iters: int = 5000,
               phi0=None, check_every: int = 1, record_trace: bool = False) -> MinimizerResult:
    """Minimize the dual functional by FISTA with function-value restart.

    Starts from ``-S(T)y0/|S(T)y0|`` unless ``phi0`` is given. ``M_upper`` is the
    norm of the synthesized control rescaled along its ray until the final
    state just reaches the ball, so ``M_lower <= M_T <= M_upper`` holds at every
    iterate. Stops when the
    relative gap ``(M_upper - M_lower)/M_upper`` is at most ``tol_gap`` and the
    stationarity residual ``|grad F + K phi/|phi||`` is at most ``tol_gap*K``.
    If free decay already reaches the ball, returns the zero minimizer.
    """
    if not tol_gap > 0:
        raise ValueError("tol_gap must be positive")
    grid, K = spec.grid, spec.K
    free_T = spec.free_final_state()
    norm_free = float(l2_norm(free_T, grid))
    if norm_free <= K:
        zero = np.zeros(grid.n_interior)
        return MinimizerResult(zero, 0.0, 0.0, 0.0, 0.0, 0, True)

    if phi0 is None:
        x0 = -free_T / norm_free
    else:
        x0 = np.asarray(phi0, dtype=float).copy()
        if l2_norm(x0, grid) == 0.0:
            x0 = -free_T / norm_free
    L = _power_lipschitz(spec)

    x = _Point(x0, spec)
    yk = x
    t = 1.0
    trace = []
    restarts = 0
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        gy = yk.grad
        while True:
            cand = prox_target_norm(yk.phi_T - gy / L, 1.0 / L, K, grid)
            d = cand - yk.phi_T
            new = _Point(cand, spec)
            model = yk.F + float(l2_inner(gy, d, grid)) + 0.5 * L * float(l2_inner(d, d, grid))
            if new.F <= model + 1e-13 * (abs(yk.F) + 1.0):
                break
            L *= 2.0
        if new.J > x.J:
            if yk is x:
                # plain prox step failed to descend: round-off floor reached
                break
            # function-value restart: drop momentum and retry from the last accepted point
            restarts += 1
            t = 1.0
            yk = x
            continue
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / t_next
        x_prev, x = x, new
        t = t_next
        yk = _Point(x.phi_T + beta * (x.phi_T - x_prev.phi_T), spec) if beta > 0 else x

        if it % check_every == 0 and x.norm > 0 and x.N > TAU_FLOOR:
            m_up, m_lo = x.upper_bound(free_T), x.lower_bound()
            gap = m_up - m_lo
            if record_trace:
                trace.append((it, x.J, m_up, m_lo, gap))
            if gap / max(m_up, TAU_FLOOR) <= tol_gap and x.stationarity() <= tol_gap * K:
                converged = True
                break

    final = x
    if final.N > TAU_FLOOR:
        m_up, m_lo = final.upper_bound(free_T), final.lower_bound()
        if not converged:
            converged = (m_up - m_lo) / max(m_up, TAU_FLOOR) <= tol_gap and final.stationarity() <= tol_gap * K
    else:
        m_up, m_lo = float("inf"), 0.0
    return MinimizerResult(
        phi_hat=final.phi_T,
        J_value=final.J,
        M_upper=m_up,
        M_lower=m_lo,
        gap=m_up - m_lo,
        iterations=it,
        converged=converged,
        mass=final.N,
        stationarity=final.stationarity() if final.norm > 0 else float("inf"),
        observability_ratio=float(l2_norm(final.Phi[0], grid)) / final.N if final.N > 0 else float("nan"),
        restarts=restarts,
        trace=trace,
    )
