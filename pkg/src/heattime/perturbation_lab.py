"""Convergence studies under potential perturbations ``a_eps = a + eps*b``.

Three studies are provided:

* :func:`run_theorem1_study` -- optimal time and control of the perturbed
  time-optimal problem with the same bound ``M``;
* :func:`run_theorem2_study` -- the perturbed problem with the adjusted bound
  ``M_eps`` (minimal norm of the perturbed system at the unperturbed ``T*``),
  whose optimal time should coincide with ``T*``;
* :func:`minimizer_convergence_study` -- distance between dual minimizers for
  perturbed horizon ``T(1+eps)`` and potential ``a_eps``.

Control errors are measured on ``[0, min(T*, T*_eps) - eta]`` only.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .core_model import Potential, ProblemSpec, check_hypotheses, l2_norm
from .dual_objective import DualObjectiveSpec, minimize_J
from .errors import HypothesisError, InfeasibleBracketError, NonConvergenceError
from .heat_dynamics import DEFAULT_DT, ControlTrajectory
from .io import write_csv
from .norm_control import NormOptimalResult, minimal_norm
from .time_control import TimeOptimalResult, optimal_time

__all__ = [
    "PerturbationStudySpec",
    "ConvergenceRow",
    "StudyResult",
    "MinimizerRow",
    "run_theorem1_study",
    "run_theorem2_study",
    "compute_M_eps",
    "minimizer_convergence_study",
    "control_errors",
    "nonincreasing",
]


@dataclass(frozen=True)
class PerturbationStudySpec:
    base: ProblemSpec
    direction: Potential
    epsilons: tuple
    eta: float | None = None
    eta_fraction: float = 0.2
    tol_T: float = 1e-8
    tol_gap: float = 1e-6
    dt: float = DEFAULT_DT
    include_zero: bool = True

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        if not eps:
            raise ValueError("epsilons must be nonempty")
        if any(e <= 0 for e in eps):
            raise ValueError("epsilons must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilons must be strictly decreasing")
        if self.base.M is None:
            raise ValueError("base problem needs a control bound M")
        if not math.isclose(self.direction.sup_norm, 1.0, rel_tol=1e-12):
            raise ValueError("perturbation direction must have sup norm 1")
        if self.eta is not None and not self.eta > 0:
            raise ValueError("eta must be positive")
        object.__setattr__(self, "epsilons", eps)

    def potential(self, eps: float) -> Potential:
        return self.base.potential + self.direction.scaled(eps)

    def eta_for(self, T_star: float) -> float:
        eta = self.eta if self.eta is not None else self.eta_fraction * T_star
        if not 0 < eta < T_star:
            raise ValueError(f"eta={eta:g} must lie in (0, T*={T_star:g})")
        return eta

    def rows_eps(self) -> tuple:
        return ((0.0,) if self.include_zero else ()) + self.epsilons

    def digest(self) -> str:
        h = hashlib.sha256()
        b = self.base
        for arr in (b.y0, b.potential.values, b.mask.flags.astype(np.uint8), self.direction.values):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr((b.grid.n_interior, b.K, b.M, self.epsilons, self.eta, self.eta_fraction,
                       self.tol_T, self.tol_gap, self.dt, self.include_zero)).encode())
        return h.hexdigest()[:16]


@dataclass
class ConvergenceRow:
    eps: float
    T_star_eps: float | None = None
    dT: float | None = None
    err_L2: float | None = None
    err_sup: float | None = None
    M_eps: float | None = None
    dM: float | None = None
    T2_eps: float | None = None
    dT2: float | None = None
    bang_spread: float | None = None
    flag: str = ""

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def values(self) -> list:
        return [getattr(self, c) for c in self.columns()]


@dataclass
class StudyResult:
    kind: str
    T_star: float
    M: float
    eta: float
    rows: list
    digest: str
    base: TimeOptimalResult | None = field(default=None, repr=False)

    def column(self, name: str, positive_only: bool = True) -> np.ndarray:
        rows = [r for r in self.rows if (r.eps > 0 or not positive_only) and not r.flag]
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name) for r in rows], dtype=float)

    def write(self, path, version: str = "", prefix: str = ""):
        comment = f"study={self.kind} spec_hash={self.digest} T_star={self.T_star!r} M={self.M!r} eta={self.eta!r}"
        if version:
            comment += f" version={version}"
        if prefix:
            comment = f"{prefix} {comment}"
        return write_csv(path, ConvergenceRow.columns(), [r.values() for r in self.rows], comment)

    def write_plot_data(self, directory, stem: str, columns, comment: str | None = None) -> list:
        """One two-column ``eps,<column>`` file per column (positive eps only)."""
        out = []
        for name in columns:
            rows = [(r.eps, getattr(r, name)) for r in self.rows
                    if r.eps > 0 and getattr(r, name) is not None and not r.flag]
            out.append(write_csv(f"{directory}/{stem}_{name}.csv", ["eps", name], rows, comment))
        return out


def nonincreasing(values, slack: float = 0.1, floor: float = 0.0) -> bool:
    """``v[i+1] <= (1+slack) v[i] + floor`` along the sequence."""
    v = np.asarray(values, dtype=float)
    return bool(np.all(v[1:] <= (1.0 + slack) * v[:-1] + floor))


def control_errors(u: ControlTrajectory, v: ControlTrajectory, t_end: float) -> tuple[float, float]:
    """L2((0,t_end) x Omega) and sup-in-time L2 distance of two controls.

    Evaluated at the sample times of ``u`` not exceeding ``t_end``; ``v`` is
    interpolated linearly in time onto them.
    """
    ts = u.times
    keep = ts <= t_end + 1e-12 * max(1.0, t_end)
    if not np.any(keep):
        return 0.0, 0.0
    diff = v.at(ts[keep]) - u.samples[keep]
    norms = l2_norm(diff, u.grid)
    return float(np.sqrt(u.tg.dt * np.sum(norms ** 2))), float(np.max(norms))


def _bang_spread(c: ControlTrajectory, bound: float) -> float:
    n = c.norms()
    return float(np.max(n) - np.min(n)) / bound if bound > 0 else 0.0


def _hypotheses_flag(problem: ProblemSpec) -> str:
    rep = check_hypotheses(problem)
    if not rep.h2_ok:
        return "H2"
    if not rep.h3_ok:
        return "H3"
    return ""


def _base_solution(spec: PerturbationStudySpec) -> TimeOptimalResult:
    return optimal_time(spec.base, tol_T=spec.tol_T, tol_gap=spec.tol_gap, dt=spec.dt)


def run_theorem1_study(spec: PerturbationStudySpec, base: TimeOptimalResult | None = None) -> StudyResult:
    """Perturbed time-optimal problems with the unperturbed bound ``M``."""
    base = base or _base_solution(spec)
    T_star, M = base.T_star, spec.base.M
    eta = spec.eta_for(T_star)
    rows = []
    for eps in spec.rows_eps():
        row = ConvergenceRow(eps)
        problem = spec.base.with_potential(spec.potential(eps))
        row.flag = _hypotheses_flag(problem)
        if row.flag:
            rows.append(row)
            continue
        try:
            res = base if eps == 0.0 else optimal_time(problem, tol_T=spec.tol_T, tol_gap=spec.tol_gap, dt=spec.dt)
        except (NonConvergenceError, InfeasibleBracketError, HypothesisError) as exc:
            row.flag = type(exc).__name__
            rows.append(row)
            continue
        row.T_star_eps = res.T_star
        row.dT = abs(res.T_star - T_star)
        row.err_L2, row.err_sup = control_errors(base.control, res.control, min(T_star, res.T_star) - eta)
        row.bang_spread = _bang_spread(res.control, M)
        rows.append(row)
    return StudyResult("theorem1", T_star, M, eta, rows, spec.digest(), base)


def _perturbed_norm(base: ProblemSpec, a_eps: Potential, T_star: float, tol_gap: float,
                    dt: float = DEFAULT_DT, phi0=None) -> NormOptimalResult:
    ds = DualObjectiveSpec.from_problem(base, T_star, dt, potential=a_eps)
    return minimal_norm(ds, tol_gap=tol_gap, phi0=phi0, strict=True)


def compute_M_eps(base: ProblemSpec, a_eps: Potential, T_star: float, tol_gap: float = 1e-6,
                  dt: float = DEFAULT_DT) -> float:
    """Minimal norm of the perturbed system at the unperturbed optimal time.

    Zero when the perturbed free decay already reaches the ball by ``T_star``.
    """
    return _perturbed_norm(base, a_eps, T_star, tol_gap, dt).M_T


def run_theorem2_study(spec: PerturbationStudySpec, base: TimeOptimalResult | None = None) -> StudyResult:
    """Perturbed time-optimal problems with the adjusted bound ``M_eps``."""
    base = base or _base_solution(spec)
    T_star, M = base.T_star, spec.base.M
    eta = spec.eta_for(T_star)
    rows = []
    for eps in spec.rows_eps():
        row = ConvergenceRow(eps)
        a_eps = spec.potential(eps)
        problem = spec.base.with_potential(a_eps)
        row.flag = _hypotheses_flag(problem)
        if row.flag:
            rows.append(row)
            continue
        try:
            nr = _perturbed_norm(spec.base, a_eps, T_star, spec.tol_gap, spec.dt, phi0=base.norm_result.phi_hat)
            row.M_eps = nr.M_T
            row.dM = abs(nr.M_T - M)
            if nr.M_T == 0.0:
                row.flag = "zero_minimizer"
                rows.append(row)
                continue
            res = optimal_time(problem, M=nr.M_T, tol_T=spec.tol_T, tol_gap=spec.tol_gap, dt=spec.dt)
        except (NonConvergenceError, InfeasibleBracketError, HypothesisError) as exc:
            row.flag = type(exc).__name__
            rows.append(row)
            continue
        row.T2_eps = res.T_star
        row.dT2 = abs(res.T_star - T_star)
        # the adjusted-bound control lives on the unperturbed horizon and grid
        row.err_L2, row.err_sup = control_errors(base.control, nr.control, T_star - eta)
        row.bang_spread = _bang_spread(nr.control, nr.M_T)
        rows.append(row)
    return StudyResult("theorem2", T_star, M, eta, rows, spec.digest(), base)


@dataclass
class MinimizerRow:
    T: float
    eps: float
    T_eps: float
    diff: float
    phi_norm: float
    phi_eps_norm: float
    flag: str = ""

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def values(self) -> list:
        return [getattr(self, c) for c in self.columns()]


def minimizer_convergence_study(spec: PerturbationStudySpec, horizons) -> list[MinimizerRow]:
    """``|phi_hat^eps_{T(1+eps)} - phi_hat_T|`` for each horizon and epsilon.

    Horizons whose free decay already reaches the ball are reported with a
    flag and skipped, since their minimizer is zero.
    """
    base = spec.base
    rows = []
    for T in horizons:
        ds = DualObjectiveSpec.from_problem(base, T, spec.dt)
        if float(l2_norm(ds.free_final_state(), base.grid)) <= base.K:
            rows.append(MinimizerRow(T, float("nan"), T, float("nan"), 0.0, 0.0, "H5"))
            continue
        ref = minimize_J(ds, tol_gap=spec.tol_gap)
        ref_norm = float(l2_norm(ref.phi_hat, base.grid))
        for eps in spec.rows_eps():
            T_eps = T * (1.0 + eps)
            de = DualObjectiveSpec.from_problem(base, T_eps, spec.dt, potential=spec.potential(eps))
            r = ref if eps == 0.0 else minimize_J(de, tol_gap=spec.tol_gap, phi0=ref.phi_hat)
            flag = "" if r.converged else "not_converged"
            diff = float(l2_norm(r.phi_hat - ref.phi_hat, base.grid))
            rows.append(MinimizerRow(T, eps, T_eps, diff, ref_norm, float(l2_norm(r.phi_hat, base.grid)), flag))
    return rows
