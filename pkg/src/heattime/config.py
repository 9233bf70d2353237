"""Run configuration: ``key = value`` text with section headers.

Keys are unique across sections, so ``--set key=value`` needs no section
prefix (``section.key`` is also accepted). Nodal potentials and initial
states may be read from single-column CSV files.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .core_model import Grid1D, Potential, ProblemSpec, RegionMask, sine_mode
from .io import read_column

COMMANDS = ("forward", "min-norm", "time-optimal", "study-thm1", "study-thm2", "study-minimizers")
SECTIONS = ("run", "problem", "numerics", "output")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str = ""
    # problem
    n_interior: int = 199
    omega_lo: float = 0.0
    omega_hi: float = 1.0
    potential: str = "0"
    y0: str = "mode:1:1.0"
    K: float | None = None
    M: float | None = None
    T: float = 0.05
    # numerics
    dt: float = 2.5e-4
    tol_gap: float = 1e-3
    tol_T: float = 1e-4
    max_iters: int = 5000
    t_max: float | None = None
    eta: float | None = None
    eta_fraction: float = 0.2
    epsilons: tuple = (0.2, 0.1, 0.05, 0.025)
    direction: str = "1"
    horizons: tuple = (0.05,)
    study_tol_gap: float = 1e-6
    study_tol_T: float = 1e-8
    # output
    out: str = "heattime-out"
    emit_trace: bool = False

    def digest(self) -> str:
        items = sorted((k, repr(v)) for k, v in asdict(self).items() if k != "out")
        return hashlib.sha256(repr(items).encode()).hexdigest()[:16]

    def header(self) -> str:
        return f"config_hash={self.digest()} version={__version__}"

    def build_problem(self, base_dir: Path | None = None) -> ProblemSpec:
        grid = Grid1D(self.n_interior)
        mask = RegionMask.from_bounds(grid, self.omega_lo, self.omega_hi)
        a = Potential(parse_field(self.potential, grid, "potential", base_dir))
        y0 = parse_field(self.y0, grid, "y0", base_dir)
        return ProblemSpec(grid, mask, a, y0, self.K, self.M)

    def build_direction(self, base_dir: Path | None = None) -> Potential:
        grid = Grid1D(self.n_interior)
        b = parse_field(self.direction, grid, "direction", base_dir)
        sup = float(np.max(np.abs(b)))
        if sup == 0.0:
            raise ConfigError("direction must be nonzero")
        return Potential(b / sup)


_DOC = {
    "command": "one of " + ", ".join(COMMANDS),
    "n_interior": "number of interior grid nodes on (0,1)",
    "omega_lo": "left end of the control region",
    "omega_hi": "right end of the control region",
    "potential": "constant value, or file:PATH (single-column CSV of nodal values)",
    "y0": "sum of mode:J:AMP terms joined by '+', or file:PATH; mode:J:AMP = AMP*sqrt(2)*sin(J*pi*x)",
    "K": "radius of the target ball (required)",
    "M": "control bound (required for time-optimal and study commands)",
    "T": "horizon for forward and min-norm",
    "dt": "nominal time step",
    "tol_gap": "relative duality-gap tolerance",
    "tol_T": "bisection tolerance on the optimal time",
    "max_iters": "iteration cap of the dual minimization",
    "t_max": "search window for the optimal time (default: derived from the decay rate)",
    "eta": "control-comparison cutoff for studies (default: eta_fraction * T*)",
    "eta_fraction": "cutoff as a fraction of T* when eta is unset",
    "epsilons": "strictly decreasing positive perturbation sizes, comma separated",
    "direction": "perturbation direction b (constant or file:PATH), rescaled to sup norm 1",
    "horizons": "horizons for study-minimizers, comma separated",
    "study_tol_gap": "gap tolerance used by study commands",
    "study_tol_T": "time tolerance used by study commands",
    "out": "output directory",
    "emit_trace": "write the dual iteration trace (min-norm)",
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_field(text: str, grid: Grid1D, key: str, base_dir: Path | None = None) -> np.ndarray:
    text = text.strip()
    n = grid.n_interior
    if text.startswith("file:"):
        path = Path(text[5:])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        try:
            values = read_column(path)
        except OSError as exc:
            raise ConfigError(f"{key}: cannot read {path}: {exc}") from None
        if values.shape != (n,):
            raise ConfigError(f"{key}: file has {values.size} values, grid needs {n}")
        return values
    if text.startswith("mode:"):
        total = np.zeros(n)
        for term in text.split("+"):
            parts = term.strip().split(":")
            if len(parts) != 3 or parts[0] != "mode":
                raise ConfigError(f"{key}: expected mode:J:AMP terms, got {term!r}")
            try:
                j, amp = int(parts[1]), float(parts[2])
            except ValueError:
                raise ConfigError(f"{key}: bad mode term {term!r}") from None
            if not 1 <= j <= n:
                raise ConfigError(f"{key}: mode index must be in [1, {n}]")
            total += sine_mode(grid, j, amp)
        return total
    try:
        return np.full(n, float(text))
    except ValueError:
        raise ConfigError(f"{key}: expected a number, mode:J:AMP or file:PATH, got {text!r}") from None


def _convert(key: str, raw: str):
    t = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if key in ("epsilons", "horizons"):
            return tuple(float(v) for v in raw.replace(";", ",").split(",") if v.strip())
        if t == "int":
            return int(raw)
        if t == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if t.startswith("float"):
            if raw.lower() in ("", "none") and "None" in t:
                return None
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {t}") from None


def _validate(cfg: RunConfig) -> RunConfig:
    if cfg.command not in COMMANDS:
        raise ConfigError(f"command must be one of {', '.join(COMMANDS)} (got {cfg.command!r})")
    if cfg.K is None:
        raise ConfigError("K is required")
    if not cfg.K > 0:
        raise ConfigError("K must be positive")
    if cfg.M is not None and not cfg.M > 0:
        raise ConfigError("M must be positive")
    if cfg.command in ("time-optimal", "study-thm1", "study-thm2") and cfg.M is None:
        raise ConfigError(f"M is required for {cfg.command}")
    if cfg.n_interior < 3:
        raise ConfigError("n_interior must be at least 3")
    if not 0.0 <= cfg.omega_lo < cfg.omega_hi <= 1.0:
        raise ConfigError("omega bounds must satisfy 0 <= omega_lo < omega_hi <= 1")
    for key in ("dt", "tol_gap", "tol_T", "T", "eta_fraction", "study_tol_gap", "study_tol_T"):
        if not getattr(cfg, key) > 0:
            raise ConfigError(f"{key} must be positive")
    for key in ("t_max", "eta"):
        v = getattr(cfg, key)
        if v is not None and not v > 0:
            raise ConfigError(f"{key} must be positive")
    if cfg.max_iters < 1:
        raise ConfigError("max_iters must be positive")
    if cfg.command.startswith("study"):
        eps = cfg.epsilons
        if not eps:
            raise ConfigError("epsilons must be nonempty for study commands")
        if any(e <= 0 for e in eps):
            raise ConfigError("epsilons must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("epsilons must be strictly decreasing")
    if cfg.command == "study-minimizers" and (not cfg.horizons or any(h <= 0 for h in cfg.horizons)):
        raise ConfigError("horizons must be nonempty and positive")
    return cfg


def parse_config(path=None, overrides=(), command: str | None = None) -> RunConfig:
    """Read ``path`` (optional), apply ``key=value`` overrides and validate."""
    values: dict = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            parser.read_string(text if text.lstrip().startswith("[") else "[run]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}] (expected one of {', '.join(SECTIONS)})")
            for key, raw in parser.items(section):
                key = _known(key)
                values[key] = _convert(key, raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        key = _known(key.strip().split(".")[-1])
        values[key] = _convert(key, raw)
    if command:
        values["command"] = command
    return _validate(RunConfig(**values))


def _known(key: str) -> str:
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown key {key!r}")
    return key


def defaults_reference() -> str:
    """Text listing every key, its default and meaning."""
    default = RunConfig()
    lines = ["# heattime configuration keys and defaults", ""]
    for f in fields(RunConfig):
        v = getattr(default, f.name)
        if isinstance(v, tuple):
            v = ", ".join(repr(x) for x in v)
        lines.append(f"{f.name} = {'' if v is None else v}    # {_DOC[f.name]}")
    return "\n".join(lines) + "\n"
