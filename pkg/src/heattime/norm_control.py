"""Minimal-norm control at a fixed horizon, synthesized from the dual minimizer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_model import l2_inner, l2_norm
from .dual_objective import TAU_FLOOR, DualObjectiveSpec, MinimizerResult, minimize_J
from .errors import NonConvergenceError, UniqueContinuationError
from .heat_dynamics import ControlTrajectory, solve_forward

__all__ = ["NormOptimalResult", "synthesize_control", "minimal_norm"]


@dataclass
class NormOptimalResult:
    """Outcome of the minimal-norm problem at horizon ``T``.

    ``control`` is the bang-bang control with pointwise norm ``M_T``; it is the
    dual-synthesized control rescaled so that its final state lies on the
    target sphere. ``formula_control`` is the unscaled synthesis, whose norm is
    ``minimizer.mass``.
    """

    M_T: float
    control: ControlTrajectory
    phi_hat: np.ndarray
    gap: float
    reach_error: float
    final_state: np.ndarray
    minimizer: MinimizerResult
    formula_control: ControlTrajectory | None = None
    formula_reach_error: float = 0.0
    alignment: float = 1.0
    spec: DualObjectiveSpec | None = None

    @property
    def T(self) -> float:
        return self.control.tg.t_final

    @property
    def converged(self) -> bool:
        return self.minimizer.converged


def synthesize_control(phi_hat, spec: DualObjectiveSpec) -> ControlTrajectory:
    """Control ``N * chi_omega phi(t_k) / |phi(t_k)|_omega`` built from ``phi_hat``.

    Every sample has L2 norm ``N = sum_j dt |phi(t_j)|_omega``.
    """
    phi_hat = np.asarray(phi_hat, dtype=float)
    n = spec.tg.n_steps
    Phi = spec.prop.backward(phi_hat, n)[:n]
    chi = spec.mask.weights
    om = np.sqrt(spec.grid.h * np.sum((Phi * chi) ** 2, axis=1))
    if np.min(om) <= TAU_FLOOR:
        k = int(np.argmin(om))
        raise UniqueContinuationError(
            f"adjoint state vanishes on omega at t_{k} = {k * spec.tg.dt:.6g} (|phi|_omega = {om[k]:.3g})"
        )
    N = spec.tg.dt * float(np.sum(om))
    samples = N * (Phi * chi) / om[:, None]
    return ControlTrajectory(samples, spec.tg, spec.mask, spec.grid)


def minimal_norm(spec: DualObjectiveSpec, tol_gap: float = 1e-3, max_iters: int = 5000,
                 phi0=None, strict: bool = False, record_trace: bool = False) -> NormOptimalResult:
    """Minimal L-infinity(L2) norm of a control steering ``y0`` into the ball at ``T``.

    With ``strict=True`` a non-certified minimization raises
    :class:`NonConvergenceError`; otherwise the result carries ``converged``.
    """
    res = minimize_J(spec, tol_gap=tol_gap, max_iters=max_iters, phi0=phi0, record_trace=record_trace)
    if strict and not res.converged:
        raise NonConvergenceError(
            f"dual minimization did not certify tol_gap={tol_gap:g} within {max_iters} iterations "
            f"at T={spec.T:.6g} (rel gap {res.rel_gap:.3g})",
            T=spec.T,
            result=res,
        )
    grid, K = spec.grid, spec.K
    if res.M_upper == 0.0:
        zero = ControlTrajectory.zeros(spec.tg, spec.mask, grid)
        final = solve_forward(spec.y0, None, spec.potential, spec.tg).final
        reach = max(0.0, float(l2_norm(final, grid)) - K)
        return NormOptimalResult(0.0, zero, res.phi_hat, 0.0, reach, final, res, zero, reach, spec=spec)

    f_T = synthesize_control(res.phi_hat, spec)
    y_f = solve_forward(spec.y0, f_T, spec.potential, spec.tg).final
    M_T = float(res.M_upper if np.isfinite(res.M_upper) else res.mass)
    control = f_T.scaled(M_T / res.mass)
    final = solve_forward(spec.y0, control, spec.potential, spec.tg).final
    nf = float(l2_norm(final, grid))
    cos = -float(l2_inner(final, res.phi_hat, grid)) / (nf * float(l2_norm(res.phi_hat, grid)))
    return NormOptimalResult(
        M_T=M_T,
        control=control,
        phi_hat=res.phi_hat,
        gap=res.gap,
        reach_error=abs(nf - K),
        final_state=final,
        minimizer=res,
        formula_control=f_T,
        formula_reach_error=abs(float(l2_norm(y_f, grid)) - K),
        alignment=cos,
        spec=spec,
    )
