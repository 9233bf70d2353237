"""Time-optimal control through the equivalence with minimal-norm problems.

The minimal norm ``M_T`` decreases strictly in ``T``; the optimal time for a
bound ``M`` is the horizon where ``M_T = M``, found by bisection. The optimal
control is the minimal-norm control at that horizon rescaled to norm ``M``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core_model import ProblemSpec, check_hypotheses, l2_norm
from .dual_objective import DualObjectiveSpec
from .errors import HypothesisError, InfeasibleBracketError, NonConvergenceError
from .heat_dynamics import DEFAULT_DT, ControlTrajectory, free_decay_entry_time, solve_forward
from .norm_control import NormOptimalResult, minimal_norm

__all__ = [
    "TimeOptimalResult",
    "OptimalityReport",
    "bracket_time",
    "optimal_time",
    "verify_optimality",
    "default_t_max",
]


@dataclass
class TimeOptimalResult:
    T_star: float
    M: float
    control: ControlTrajectory
    M_residual: float
    bracket: tuple[float, float]
    norm_result: NormOptimalResult
    history: list = field(default_factory=list, repr=False)
    inner_solves: int = 0

    @property
    def reach_error(self) -> float:
        spec = self.norm_result.spec
        final = solve_forward(spec.y0, self.control, spec.potential, self.control.tg).final
        return abs(float(l2_norm(final, spec.grid)) - spec.K)


def default_t_max(problem: ProblemSpec) -> float:
    """Window long enough for free decay at the guaranteed rate to reach the ball."""
    rep = check_hypotheses(problem)
    rate = rep.delta_hat if rep.h3_ok and rep.delta_hat > 0 else 1.0
    return max(1.0, 4.0 * math.log(max(rep.norm_y0, problem.K * math.e) / problem.K) / rate)


def _require_hypotheses(problem: ProblemSpec):
    rep = check_hypotheses(problem)
    if not rep.h2_ok:
        raise HypothesisError(f"initial state already inside the target ball: {rep.summary()}", rep)
    if not rep.h3_ok:
        raise HypothesisError(f"potential violates the decay hypothesis: {rep.summary()}", rep)
    return rep


class _Solver:
    """Memoized minimal-norm solves along the horizon axis for one problem."""

    def __init__(self, problem: ProblemSpec, dt: float, max_iters: int):
        self.problem, self.dt, self.max_iters = problem, dt, max_iters
        self.solves = 0
        self.warm = None

    def spec(self, T: float) -> DualObjectiveSpec:
        return DualObjectiveSpec.from_problem(self.problem, T, self.dt)

    def free_in_ball(self, T: float) -> bool:
        s = self.spec(T)
        return float(l2_norm(s.free_final_state(), s.grid)) <= s.K

    def __call__(self, T: float, tol_gap: float) -> NormOptimalResult:
        s = self.spec(T)
        self.solves += 1
        res = minimal_norm(s, tol_gap=tol_gap, max_iters=self.max_iters, phi0=self.warm)
        if not res.converged:
            raise NonConvergenceError(
                f"minimal-norm solve at T={T:.8g} not certified (rel gap {res.minimizer.rel_gap:.3g})",
                T=T,
                result=res,
            )
        if res.M_T > 0:
            self.warm = res.phi_hat
        return res


def _bracket(solver: _Solver, M: float, t_max: float, tol_gap: float):
    problem = solver.problem
    if not M > 0:
        raise InfeasibleBracketError("control bound M must be positive")
    a = problem.potential
    entry = free_decay_entry_time(problem.y0, a, problem.K, t_max, dt=solver.dt)
    if entry is None:
        T_hi = t_max
        r_hi = solver(T_hi, tol_gap)
        if r_hi.M_T >= M:
            raise InfeasibleBracketError(
                f"bound M={M:g} is below the minimal norm M_T={r_hi.M_T:.6g} at t_max={t_max:g}"
            )
        M_hi = r_hi.M_T
    else:
        T_hi = entry
        # the stepped free state at T_hi may sit a hair outside the ball
        for _ in range(50):
            if solver.free_in_ball(T_hi):
                break
            T_hi *= 1.0 + 1e-7
        M_hi = 0.0

    T_lo = T_hi / 8.0
    while True:
        M_lo = solver(T_lo, tol_gap).M_T
        if M_lo > M:
            break
        T_lo /= 2.0
        if T_lo < 1e-12:
            raise InfeasibleBracketError("could not find a horizon with M_T > M")
    return T_lo, T_hi, M_lo, M_hi


def bracket_time(problem: ProblemSpec, M: float, t_max: float | None = None, dt: float = DEFAULT_DT,
                 tol_gap: float = 1e-3, max_iters: int = 5000) -> tuple[float, float]:
    """Horizons ``T_lo < T_hi`` with ``M_{T_lo} > M > M_{T_hi}``.

    ``T_hi`` starts at the free-decay entry time (where ``M_T = 0``), or at
    ``t_max`` if the ball is not reached by then; ``T_lo = T_hi/8`` is halved
    until the minimal norm exceeds ``M``.
    """
    _require_hypotheses(problem)
    t_max = default_t_max(problem) if t_max is None else t_max
    T_lo, T_hi, _, _ = _bracket(_Solver(problem, dt, max_iters), M, t_max, tol_gap)
    return T_lo, T_hi


def optimal_time(problem: ProblemSpec, M: float | None = None, tol_T: float = 1e-4,
                 tol_gap: float = 1e-3, dt: float = DEFAULT_DT, t_max: float | None = None,
                 max_iters: int = 5000) -> TimeOptimalResult:
    """Optimal time and bang-bang optimal control for the bound ``M``.

    The inner gap tolerance shrinks geometrically from ``100*tol_gap`` to
    ``tol_gap`` as the bracket narrows. ``T_star`` is the right (feasible)
    end of the final bracket.
    """
    M = problem.M if M is None else M
    if M is None:
        raise ValueError("control bound M is required")
    _require_hypotheses(problem)
    t_max = default_t_max(problem) if t_max is None else t_max
    solver = _Solver(problem, dt, max_iters)
    loose = 100.0 * tol_gap
    lo, hi, M_lo, M_hi = _bracket(solver, M, t_max, loose)
    W0 = hi - lo
    history = [(lo, hi, float("nan"), float("nan"))]
    span = math.log(max(W0 / tol_T, 1.0 + 1e-12))
    while hi - lo > tol_T:
        progress = min(1.0, max(0.0, math.log(W0 / (hi - lo)) / span))
        tol_k = tol_gap * 100.0 ** (1.0 - progress)
        mid = 0.5 * (lo + hi)
        if solver.free_in_ball(mid):
            M_mid = 0.0
        else:
            M_mid = solver(mid, tol_k).M_T
        if M_mid > M:
            lo, M_lo = mid, M_mid
        else:
            hi, M_hi = mid, M_mid
        history.append((lo, hi, mid, M_mid))

    res = solver(hi, tol_gap)
    if res.M_T > 0:
        control = res.control.scaled(M / res.M_T)
    else:
        control = ControlTrajectory.zeros(res.control.tg, res.control.mask, res.control.grid)
    return TimeOptimalResult(
        T_star=hi,
        M=M,
        control=control,
        M_residual=abs(res.M_T - M),
        bracket=(lo, hi),
        norm_result=res,
        history=history,
        inner_solves=solver.solves,
    )


@dataclass
class OptimalityReport:
    bang_bang: bool
    reach: bool
    infeasible_below: bool
    bang_bang_spread: float
    final_norm: float
    M_below: float

    @property
    def passed(self) -> bool:
        return self.bang_bang and self.reach and self.infeasible_below


def verify_optimality(res: TimeOptimalResult, problem: ProblemSpec, tol_T: float = 1e-4,
                      tol_gap: float = 1e-3, dt: float = DEFAULT_DT) -> OptimalityReport:
    """Bang-bang, reach and strict-infeasibility checks on a time-optimal result."""
    norms = res.control.norms()
    spread = float(np.max(norms) - np.min(norms))
    bang = spread <= 1e-10 * res.M and abs(float(np.max(norms)) - res.M) <= 1e-10 * res.M
    final = solve_forward(problem.y0, res.control, problem.potential, res.control.tg).final
    fn = float(l2_norm(final, problem.grid))
    reach = fn <= problem.K * (1.0 + 5.0 * tol_gap)
    T_below = res.T_star - 10.0 * tol_T
    if T_below <= 0:
        M_below = float("inf")
    else:
        spec = DualObjectiveSpec.from_problem(problem, T_below, dt)
        M_below = minimal_norm(spec, tol_gap=tol_gap, phi0=res.norm_result.phi_hat).minimizer.M_lower
    return OptimalityReport(bang, reach, M_below > res.M, spread, fn, M_below)
