"""Physical parameters, unit conventions and shared configuration.

Natural units throughout: gamma = 1 sets the clock, times are measured in
1/gamma and detunings in gamma.  The resonant propagation phase phi and the
delay gamma*tau are independent knobs (phi = omega0*tau only modulo 2*pi,
and omega0/gamma is astronomically large, so the two decouple numerically).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

TWO_PI = 2.0 * math.pi

# phi counts as a multiple of pi when within this of one
PHI_MULTIPLE_TOL = 1e-9


class DelayQedError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(DelayQedError):
    """Invalid parameter or configuration value."""


class DomainError(DelayQedError):
    """Input outside the mathematical domain of an operation."""


class ConvergenceError(DelayQedError):
    """An iterative or truncated numerical procedure failed to converge.

    Carries the last two successive estimates when available.
    """

    def __init__(self, message, last_estimates=None):
        super().__init__(message)
        self.last_estimates = last_estimates


class IntegratorError(DelayQedError):
    """A time integrator violated its accuracy contract (e.g. norm drift)."""


class ConsistencyError(DelayQedError):
    """Two supposedly equivalent internal computations disagree."""


@dataclass(frozen=True)
class SystemParams:
    """Physical configuration of the two-atom + waveguide system.

    Attributes
    ----------
    gamma : float
        Decay rate into the guided modes.  Sets the unit system; default 1.
    tau : float
        Field propagation delay between the atoms, in units of 1/gamma.
    phi : float
        Resonant propagation phase, radians, stored reduced to [0, 2*pi).
    t_max : float
        Simulation horizon in units of 1/gamma.
    n_samples : int
        Number of output time samples.
    delay_disabled : bool
        Infinitely-distant-atoms mode: the delay coupling is removed
        entirely (not emulated with a huge tau), reproducing the
        independent-atom Markovian limit exactly.
    """

    gamma: float = 1.0
    tau: float = 0.0
    phi: float = 0.0
    t_max: float = 10.0
    n_samples: int = 400
    delay_disabled: bool = False

    def __post_init__(self):
        for name in ("gamma", "tau", "phi", "t_max"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v)):
                raise ValidationError(f"{name} must be a finite number, got {v!r}")
        if self.gamma <= 0:
            raise ValidationError(f"gamma must be > 0, got {self.gamma}")
        if self.tau < 0:
            raise ValidationError(f"tau must be >= 0, got {self.tau}")
        if self.t_max <= 0:
            raise ValidationError(f"t_max must be > 0, got {self.t_max}")
        if not isinstance(self.n_samples, int) or self.n_samples < 2:
            raise ValidationError(f"n_samples must be an integer >= 2, got {self.n_samples}")
        object.__setattr__(self, "phi", float(self.phi) % TWO_PI)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "t_max", float(self.t_max))

    @property
    def times(self) -> np.ndarray:
        """The uniform output sample grid on [0, t_max]."""
        return np.linspace(0.0, self.t_max, self.n_samples)

    def phi_pi_index(self, tol: float = PHI_MULTIPLE_TOL) -> int | None:
        """Return integer n with phi = n*pi within tol, else None.

        n selects the steady dark state: even n -> antisymmetric Bell state,
        odd n -> symmetric (sign of the steady coherence flips with parity).
        """
        n = round(self.phi / math.pi)
        if abs(self.phi - n * math.pi) <= tol:
            return int(n)
        return None

    def require_phi_pi(self) -> int:
        n = self.phi_pi_index()
        if n is None:
            raise DomainError(
                f"operation requires phi = n*pi within {PHI_MULTIPLE_TOL}; got phi={self.phi}"
            )
        return n


def make_params(gamma, tau, phi, t_max, n_samples, delay_disabled=False) -> SystemParams:
    """Validate and construct a SystemParams (phi reduced mod 2*pi)."""
    return SystemParams(
        gamma=gamma, tau=tau, phi=phi, t_max=t_max, n_samples=int(n_samples),
        delay_disabled=bool(delay_disabled),
    )


def lambert_parameter(params: SystemParams) -> complex:
    """The residue-series parameter r = (gamma*tau/2) exp(gamma*tau/2 + i*phi)."""
    x = 0.5 * params.gamma * params.tau
    return x * np.exp(x + 1j * params.phi)


@dataclass(frozen=True)
class LambertSeriesContext:
    """Branch-sum truncation context for the residue-series evaluators.

    r is the characteristic-equation parameter; k_max the symmetric branch
    truncation (sum over k in [-k_max, k_max]); tail_mode selects whether the
    truncated tail is replaced by its asymptotic-branch estimate.
    """

    r: complex
    k_max: int = 2000
    tail_mode: str = "asymptotic-correction"  # or "none"

    def __post_init__(self):
        if self.k_max < 1:
            raise ValidationError(f"k_max must be >= 1, got {self.k_max}")
        if self.tail_mode not in ("none", "asymptotic-correction"):
            raise ValidationError(f"unknown tail_mode {self.tail_mode!r}")

    @classmethod
    def from_params(cls, params: SystemParams, k_max: int = 2000,
                    tail_mode: str = "asymptotic-correction") -> "LambertSeriesContext":
        return cls(r=lambert_parameter(params), k_max=int(k_max), tail_mode=tail_mode)

    def check_matches(self, params: SystemParams):
        if lambert_parameter(params) != self.r:
            raise ValidationError("context r does not match params")


@dataclass
class TimeSeries:
    """Uniformly sampled observable trajectories plus CSV metadata.

    columns preserves insertion order; that order is the CSV column order.
    """

    times: np.ndarray
    columns: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        for k, v in self.columns.items():
            v = np.asarray(v)
            if v.shape != self.times.shape:
                raise ValidationError(f"column {k!r} length {v.shape} != times {self.times.shape}")
            self.columns[k] = v

    def add(self, name: str, values):
        values = np.asarray(values)
        if values.shape != self.times.shape:
            raise ValidationError(f"column {name!r} has wrong length")
        self.columns[name] = values


def format_float(x: float) -> str:
    """Fixed numeric CSV format: scientific, 17 significant digits."""
    return f"{x:.16e}"


def write_csv(series: TimeSeries, path, time_name: str = "t"):
    """Emit an RFC-4180-style CSV (comma, LF, header row) deterministically."""
    names = [time_name] + list(series.columns)
    lines = [",".join(names)]
    cols = [series.times] + [series.columns[k] for k in series.columns]
    for i in range(len(series.times)):
        lines.append(",".join(format_float(float(c[i])) for c in cols))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


# --- plain-text config files -------------------------------------------------
#
# One `key = value` per line; '#' starts a comment; unknown keys are an error.
# The full key registry (core keys plus the engine keys owned by the other
# modules) lives here so every front end validates identically.

CONFIG_SCHEMA: dict[str, type] = {
    # core
    "gamma": float,
    "tau": float,
    "phi": float,
    "t_max": float,
    "n_samples": int,
    "delay_disabled": bool,
    # engine selection (cli)
    "engine": str,          # dde | series | oracle
    # detuning quadrature (analytic)
    "quad_cutoff": float,   # Lambda, units gamma
    "quad_spacing": float,  # base grid spacing; 0 -> auto pi/(8*t_max)
    "quad_tol": float,      # refinement tolerance
    # Lambert series (lambertw/analytic)
    "lambert_k_max": int,
    "lambert_tail": str,    # none | asymptotic-correction
    # full oracle grid (oracle)
    "oracle_half_width": float,
    "oracle_spacing": float,
    "oracle_dt": float,
    # sweep grids (cli)
    "sweep_tau": str,       # comma-separated gamma*tau values
    "sweep_phi": str,       # comma-separated phi values, units of pi
    # two-photon spectrum (cli)
    "spectrum_half_width": float,
    "spectrum_points": int,
    "spectrum_time": float,
    # worker pool (cli)
    "threads": int,
}

CONFIG_DEFAULTS: dict[str, object] = {
    "gamma": 1.0,
    "tau": 0.895,
    "phi": math.pi,
    "t_max": 10.0,
    "n_samples": 400,
    "delay_disabled": False,
    "engine": "dde",
    "quad_cutoff": 200.0,
    "quad_spacing": 0.0,
    "quad_tol": 1e-4,
    "lambert_k_max": 2000,
    "lambert_tail": "asymptotic-correction",
    "oracle_half_width": 40.0,
    "oracle_spacing": 0.1,
    "oracle_dt": 1e-3,
    "sweep_tau": "0.25,0.375,0.5,0.75,0.895,1.25,2.0",
    "sweep_phi": "0,0.5,1",
    "spectrum_half_width": 6.0,
    "spectrum_points": 61,
    "spectrum_time": 40.0,
    "threads": 1,
}


def _parse_value(key: str, raw: str):
    typ = CONFIG_SCHEMA[key]
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            # allow 'pi' arithmetic-free shorthand in phi-like fields
            if raw.endswith("pi"):
                mult = raw[:-2].strip()
                return (float(mult) if mult not in ("", "+", "-") else float(mult + "1")) * math.pi
            return float(raw)
        return raw
    except ValueError as exc:
        raise ValidationError(f"config key {key!r}: cannot parse {raw!r} as {typ.__name__}") from exc


def parse_config_text(text: str) -> dict:
    """Parse `key = value` lines; unknown keys raise ValidationError."""
    out: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValidationError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in CONFIG_SCHEMA:
            raise ValidationError(f"config line {lineno}: unknown key {key!r}")
        out[key] = _parse_value(key, raw)
    return out


def read_config(path) -> dict:
    with open(path) as fh:
        return parse_config_text(fh.read())


def resolve_config(overrides: dict | None = None, base: dict | None = None) -> dict:
    """Defaults <- config file values <- overrides, validated against the schema."""
    cfg = dict(CONFIG_DEFAULTS)
    for layer in (base, overrides):
        if layer:
            for k, v in layer.items():
                if k not in CONFIG_SCHEMA:
                    raise ValidationError(f"unknown config key {k!r}")
                cfg[k] = v
    return cfg


def config_to_text(cfg: dict) -> str:
    """Serialize a config dict; round-trips through parse_config_text."""
    lines = []
    for key in CONFIG_SCHEMA:
        if key in cfg:
            v = cfg[key]
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


def params_from_config(cfg: dict) -> SystemParams:
    return make_params(cfg["gamma"], cfg["tau"], cfg["phi"], cfg["t_max"],
                       cfg["n_samples"], cfg["delay_disabled"])
