"""Flat ``section.key = value`` experiment configuration.

One file fully determines a run. Unknown keys and unresolvable selectors are
rejected; missing keys take their defaults. :func:`serialize` writes the
canonical form (every key, sorted, floats in round-trip precision).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "DEFAULTS",
    "COEFFICIENTS",
    "PROFILES",
    "REACTIONS",
    "FORCINGS",
    "parse_config",
    "load_config",
    "serialize",
]


class ConfigError(ValueError):
    """Malformed configuration text or an unknown selector."""


def a_act(x):
    return 1.0 + 4.0 * x**2 * (1.0 - x) + 0.5 * np.sin(4.0 * np.pi * x)


def q_act(x):
    return 8.0 * x * np.exp(-3.0 * x)


COEFFICIENTS: dict[str, Callable] = {
    "a_act": a_act,
    "q_act": q_act,
    "one": lambda x: np.ones_like(x),
    "zero": lambda x: np.zeros_like(x),
}

PROFILES: dict[str, Callable] = {
    "u0_default": lambda x: x * (1.0 - x) + 1.0,
    "v0_default": lambda x: 1.0 + np.sin(0.5 * np.pi * x),
    "sin_pi": lambda x: np.sin(np.pi * x),
    "one": lambda x: np.ones_like(x),
    "zero": lambda x: np.zeros_like(x),
}

# f(u): identity, Fisher-type u(1-u), combustion-type u^2(1-u)
REACTIONS: dict[str, Callable | None] = {
    "identity": None,
    "quadratic": lambda u: u * (1.0 - u),
    "cubic": lambda u: u * u * (1.0 - u),
}

# r(x, t, u)
FORCINGS: dict[str, Callable | None] = {
    "zero": None,
    "one": lambda x, t, u: np.ones_like(x),
}

_SELECTORS = {
    "problem.a": COEFFICIENTS,
    "problem.q": COEFFICIENTS,
    "problem.u0": PROFILES,
    "problem.v0": PROFILES,
    "problem.reaction": REACTIONS,
    "problem.forcing": FORCINGS,
    "inversion.start_a": COEFFICIENTS,
    "inversion.start_q": COEFFICIENTS,
}

_CHOICES = {
    "problem.mode": ("two_experiments", "two_times", "single"),
    "problem.time_scheme": ("auto", "euler", "cn", "l1"),
    "problem.u.left.kind": ("dirichlet", "impedance"),
    "problem.u.right.kind": ("dirichlet", "impedance"),
    "problem.v.left.kind": ("dirichlet", "impedance"),
    "problem.v.right.kind": ("dirichlet", "impedance"),
    "inversion.scheme": ("parallel", "eliminate_q", "eliminate_a", "potential_only"),
    "inversion.pin_at": ("left", "right"),
}

DEFAULTS: dict[str, Any] = {
    "problem.alpha": 1.0,
    "problem.T": 0.5,
    "problem.n_nodes": 513,
    "problem.n_steps": 2048,
    "problem.time_scheme": "auto",
    "problem.data_refine": 1,
    "problem.mode": "two_experiments",
    "problem.a": "a_act",
    "problem.q": "q_act",
    "problem.u0": "u0_default",
    "problem.v0": "v0_default",
    "problem.reaction": "identity",
    "problem.forcing": "zero",
    "problem.u.left.kind": "dirichlet",
    "problem.u.left.gamma": 0.0,
    "problem.u.left.data": 1.0,
    "problem.u.right.kind": "impedance",
    "problem.u.right.gamma": 0.0,
    "problem.u.right.data": 1.0,
    "problem.v.left.kind": "dirichlet",
    "problem.v.left.gamma": 0.0,
    "problem.v.left.data": 1.0,
    "problem.v.right.kind": "impedance",
    "problem.v.right.gamma": 0.0,
    "problem.v.right.data": -1.0,
    "inversion.scheme": "parallel",
    "inversion.n_centers": 41,
    "inversion.width_factor": 5.0,
    "inversion.sigma": 0.0,
    "inversion.start_a": "one",
    "inversion.start_q": "zero",
    "inversion.tau": 1.1,
    "inversion.k_max": 20,
    "inversion.fixed_iterations": 0,
    "inversion.a_min": 0.5,
    "inversion.a_pinned": 1.0,
    "inversion.pin_at": "left",
    "inversion.rcond": 0.0,
    "noise.delta": 0.01,
    "noise.seed": 1,
}


def _coerce(key: str, raw: Any) -> Any:
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            value = raw if isinstance(raw, bool) else str(raw).strip().lower() in ("1", "true", "yes")
        elif isinstance(default, int):
            value = int(raw)
            if isinstance(raw, float) and raw != value:
                raise ValueError
        elif isinstance(default, float):
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError
        else:
            value = str(raw).strip()
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot read {raw!r} as {type(default).__name__}") from None
    return value


def _validate(values: Mapping[str, Any]) -> None:
    for key, table in _SELECTORS.items():
        if values[key] not in table:
            raise ConfigError(f"{key}: unknown selector {values[key]!r} (choices: {', '.join(sorted(table))})")
    for key, options in _CHOICES.items():
        if values[key] not in options:
            raise ConfigError(f"{key}: {values[key]!r} not one of {', '.join(options)}")
    if not (0.0 < values["problem.alpha"] <= 1.0):
        raise ConfigError("problem.alpha must lie in (0, 1]")
    if not values["problem.T"] > 0:
        raise ConfigError("problem.T must be positive")
    if values["problem.n_nodes"] < 9:
        raise ConfigError("problem.n_nodes must be at least 9")
    if values["problem.n_steps"] < 8:
        raise ConfigError("problem.n_steps must be at least 8")
    if values["problem.data_refine"] < 1:
        raise ConfigError("problem.data_refine must be a positive integer")
    if not (0.0 <= values["noise.delta"] <= 0.2):
        raise ConfigError("noise.delta must lie in [0, 0.2]")
    for side in ("u.left", "u.right", "v.left", "v.right"):
        if values[f"problem.{side}.gamma"] < 0:
            raise ConfigError(f"problem.{side}.gamma must be non-negative")
    if values["inversion.a_min"] <= 0:
        raise ConfigError("inversion.a_min must be positive")
    for key in ("inversion.k_max", "inversion.n_centers"):
        if values[key] < 1:
            raise ConfigError(f"{key} must be positive")
    if values["inversion.fixed_iterations"] < 0:
        raise ConfigError("inversion.fixed_iterations must be non-negative")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated configuration values keyed by dotted name."""

    values: Mapping[str, Any] = field(default_factory=lambda: dict(DEFAULTS))

    def __post_init__(self):
        unknown = set(self.values) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown keys: {', '.join(sorted(unknown))}")
        merged = dict(DEFAULTS)
        merged.update({k: _coerce(k, v) for k, v in self.values.items()})
        _validate(merged)
        object.__setattr__(self, "values", merged)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def with_updates(self, **dotted: Any) -> "ExperimentConfig":
        """Copy with keys replaced; pass dotted names via ``**{"noise.delta": 0.0}``."""
        merged = dict(self.values)
        merged.update(dotted)
        return ExperimentConfig(merged)


def _format(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are ignored."""
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return ExperimentConfig(values)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def serialize(config: ExperimentConfig) -> str:
    """Canonical text: every key in sorted order."""
    return "".join(f"{k} = {_format(config[k])}\n" for k in sorted(config.values))
