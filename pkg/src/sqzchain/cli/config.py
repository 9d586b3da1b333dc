"""Run configuration: a line-oriented ``[section]`` / ``key = value`` format.

Comments start with ``#`` (whole line or after a value). Unknown sections
and keys are rejected with their line number. Values are validated by the
same domain types the library uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from ..chain import SWEEP_VARIABLES, ChainConfig
from ..core import JITTER_MODELS, DomainError, EfficiencyBudget, PhaseJitter, PumpDrive

BUNDLED = ("paper_table1", "paper_fig5")


class ConfigError(ValueError):
    """Invalid configuration text or value; carries the offending line when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    n_random: int = 1000
    sweep_variable: str = "g_opo"
    sweep_start: float = 1.0
    sweep_stop: float = 20.0
    sweep_points: int = 20
    omega: float = 0.0
    noise_db: float = 0.0
    sigma_db: float = 0.2
    n_bins: int = 1000
    scatter_db: float = 0.2
    bin_duration: float = 1e-3
    dark_rel_shot_db: float | None = None
    amplification_db: float | None = None
    rbw_hz: float | None = None
    vbw_hz: float | None = None
    analysis_freq_hz: float | None = None

    def sweep_values(self) -> list[float]:
        return np.linspace(self.sweep_start, self.sweep_stop, self.sweep_points).tolist()


@dataclass(frozen=True)
class RunConfig:
    """Everything a CLI run needs: chain operating point plus run settings."""

    budget: EfficiencyBudget = field(default_factory=EfficiencyBudget)
    visibility_in_detection: bool = True
    x_opo: PumpDrive = field(default_factory=lambda: PumpDrive.from_gain(10.0))
    x_opa: PumpDrive = field(default_factory=lambda: PumpDrive.from_gain(12.0))
    opa_quadrature: str = "amplify"
    theta_opo: float = 0.033
    theta_opa: float = 0.218
    theta_direct: float = 0.046
    jitter_model: str = "two-point"
    run: RunSettings = field(default_factory=RunSettings)

    def chain(self) -> ChainConfig:
        return ChainConfig(
            budget=self.budget,
            x_opo=self.x_opo,
            x_opa=self.x_opa,
            theta_opo=PhaseJitter(self.theta_opo, self.jitter_model),
            theta_opa=PhaseJitter(self.theta_opa, self.jitter_model),
            opa_quadrature=self.opa_quadrature,
            visibility_in_detection=self.visibility_in_detection,
        )


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _int(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def _finite(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"expected a finite number, got {text!r}")
    return value


def _optional(text: str) -> float | None:
    return None if text.lower() in ("none", "") else _finite(text)


_BUDGET_KEYS = {f.name: _finite for f in fields(EfficiencyBudget)}
_BUDGET_KEYS["visibility_in_detection"] = _bool
_PUMP_KEYS = {"g_opo": _finite, "g_opa": _finite, "x_opo": _finite, "x_opa": _finite, "opa_quadrature": str}
_JITTER_KEYS = {"theta_opo": _finite, "theta_opa": _finite, "theta_direct": _finite, "model": str}
_RUN_TYPES = {"seed": _int, "n_random": _int, "sweep_points": _int, "n_bins": _int, "sweep_variable": str}
_RUN_KEYS = {f.name: _RUN_TYPES.get(f.name, _optional if f.default is None else _finite) for f in fields(RunSettings)}
SCHEMA = {"budget": _BUDGET_KEYS, "pump": _PUMP_KEYS, "jitter": _JITTER_KEYS, "run": _RUN_KEYS}


def _validate_run(run: RunSettings, line_of) -> None:
    checks = [
        ("n_random", run.n_random >= 1, "must be >= 1"),
        ("sweep_points", run.sweep_points >= 1, "must be >= 1"),
        ("sweep_variable", run.sweep_variable in SWEEP_VARIABLES, f"must be one of {SWEEP_VARIABLES}"),
        ("noise_db", run.noise_db >= 0, "must be >= 0"),
        ("sigma_db", run.sigma_db > 0, "must be > 0"),
        ("n_bins", run.n_bins >= 1, "must be >= 1"),
        ("scatter_db", run.scatter_db >= 0, "must be >= 0"),
        ("bin_duration", run.bin_duration > 0, "must be > 0"),
        ("seed", run.seed >= 0, "must be >= 0"),
    ]
    if run.sweep_variable in ("g_opo", "g_opa"):
        low = min(run.sweep_start, run.sweep_stop)
        checks.append(("sweep_start", low >= 1.0, "gain sweeps need values >= 1"))
    elif run.sweep_variable == "omega":
        low = min(run.sweep_start, run.sweep_stop)
        checks.append(("sweep_start", low >= 0.0, "omega sweeps need values >= 0"))
    for key, ok, why in checks:
        if not ok:
            raise ConfigError(f"[run] {key} {why}", line_of("run", key))


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse configuration text on top of ``base`` (the characterised operating point when omitted)."""
    base = base or RunConfig()
    values: dict[str, dict[str, object]] = {k: {} for k in SCHEMA}
    lines: dict[tuple[str, str], int] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno)
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]; expected one of {sorted(SCHEMA)}", lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if section is None:
            raise ConfigError("key outside of any section", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno)
        if (section, key) in lines:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", lineno)
        try:
            values[section][key] = SCHEMA[section][key](value)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}", lineno) from None
        lines[(section, key)] = lineno

    def line_of(section, key):
        return lines.get((section, key))

    def guarded(section, key, build):
        try:
            return build()
        except DomainError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}", line_of(section, key)) from None

    b = values["budget"]
    budget_fields = {k: v for k, v in b.items() if k != "visibility_in_detection"}
    budget = base.budget
    for key, value in budget_fields.items():
        budget = guarded("budget", key, lambda: replace(budget, **{key: value}))

    p = values["pump"]
    pumps = {}
    for stage in ("opo", "opa"):
        g, x = f"g_{stage}", f"x_{stage}"
        if g in p and x in p:
            raise ConfigError(f"give either {g} or {x}, not both", line_of("pump", x))
        if g in p:
            pumps[x] = guarded("pump", g, lambda: PumpDrive.from_gain(p[g]))
        elif x in p:
            pumps[x] = guarded("pump", x, lambda: PumpDrive(p[x]))
        else:
            pumps[x] = getattr(base, x)
    quadrature = p.get("opa_quadrature", base.opa_quadrature)
    if quadrature not in ("amplify", "deamplify"):
        raise ConfigError("[pump] opa_quadrature must be 'amplify' or 'deamplify'", line_of("pump", "opa_quadrature"))

    j = values["jitter"]
    model = j.get("model", base.jitter_model)
    if model not in JITTER_MODELS:
        raise ConfigError(f"[jitter] model must be one of {JITTER_MODELS}", line_of("jitter", "model"))
    thetas = {}
    for key in ("theta_opo", "theta_opa", "theta_direct"):
        value = j.get(key, getattr(base, key))
        guarded("jitter", key, lambda: PhaseJitter(value, model))
        thetas[key] = float(value)

    run = replace(base.run, **values["run"])
    _validate_run(run, line_of)

    return RunConfig(
        budget=budget,
        visibility_in_detection=b.get("visibility_in_detection", base.visibility_in_detection),
        x_opo=pumps["x_opo"],
        x_opa=pumps["x_opa"],
        opa_quadrature=quadrature,
        jitter_model=model,
        run=run,
        **thetas,
    )


def load_config(source: str | None) -> RunConfig:
    """Load a config file, or a bundled one by name (``paper_table1``, ``paper_fig5``)."""
    if source is None:
        return RunConfig()
    if source in BUNDLED:
        text = resources.files("sqzchain.data").joinpath(f"{source}.cfg").read_text()
    else:
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {source!r}: {exc.strerror}") from None
    return parse_config(text)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    return repr(value) if isinstance(value, float) else str(value)


def emit_config(cfg: RunConfig) -> str:
    """Normalised config text; parsing it back gives identical settings."""
    out = ["[budget]"]
    out += [f"{f.name} = {_fmt(getattr(cfg.budget, f.name))}" for f in fields(EfficiencyBudget)]
    out.append(f"visibility_in_detection = {_fmt(cfg.visibility_in_detection)}")
    out += ["", "[pump]"]
    for stage in ("opo", "opa"):
        pump = getattr(cfg, f"x_{stage}")
        out.append(f"# G_{stage} = {pump.gain():.9g}")
        out.append(f"x_{stage} = {_fmt(pump.x)}")
    out.append(f"opa_quadrature = {cfg.opa_quadrature}")
    out += ["", "[jitter]"]
    out += [f"{k} = {_fmt(getattr(cfg, k))}" for k in ("theta_opo", "theta_opa", "theta_direct")]
    out.append(f"model = {cfg.jitter_model}")
    out += ["", "[run]"]
    out += [f"{f.name} = {_fmt(getattr(cfg.run, f.name))}" for f in fields(RunSettings)]
    return "\n".join(out) + "\n"
