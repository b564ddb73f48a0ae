"""Plain-text run configuration.

Format: ``key = value`` lines, ``#`` comments, and matrix blocks::

    [matrix A]
    0.5 0.1
    0.0 0.9
    [end]

Schedules are keys ``schedule.<name> = FFTT`` (``T`` marks vulnerable steps).
Serialisation writes floats with ``repr`` so a parse/serialise round trip is
exact.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .errors import ConfigError
from .safety import ResponseSchedule

MATRIX_NAMES = ("A", "B", "C", "Q", "R", "U", "W", "V")


@dataclass
class RunConfig:
    model: str = "quadruple_tank"
    model_seed: int = 0
    sample_period: float = 1.0
    matrices: dict = field(default_factory=dict)
    T: int = 10
    false_alarm: float = 0.01
    p_d: float = 0.99
    p: float = 0.99
    safety_bound: float = 30.0
    safety_states: tuple = (1, 2, 3, 4)
    schedules: dict = field(default_factory=dict)
    horizon: int = 100
    trials: int = 200
    seed: int = 0
    p1_scale: float = 0.05
    attack: str = "budget"
    sweep_ta: int = 20
    sweep_percentages: tuple = (10.0, 25.0, 50.0, 75.0, 100.0)
    sweep_p: tuple = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 0.995, 0.999)
    out: str = "out"

    def validate(self) -> "RunConfig":
        for name in ("false_alarm", "p_d", "p"):
            val = getattr(self, name)
            if not 0.0 < val < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {val}")
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.safety_bound <= 0:
            raise ConfigError("safety_bound must be positive")
        if self.p1_scale <= 0:
            raise ConfigError("p1_scale must be positive")
        if self.attack not in ("none", "budget", "covert"):
            raise ConfigError(f"attack must be none, budget or covert, got {self.attack!r}")
        if self.model not in ("quadruple_tank", "explicit"):
            raise ConfigError(f"model must be quadruple_tank or explicit, got {self.model!r}")
        if self.model == "explicit":
            missing = [k for k in ("A", "B", "C", "Q", "R", "U") if k not in self.matrices]
            if missing:
                raise ConfigError(f"explicit model is missing matrices: {', '.join(missing)}")
        if not self.safety_states or min(self.safety_states) < 1:
            raise ConfigError("safety_states are 1-based state indices")
        for pct in self.sweep_percentages:
            if not 0.0 < pct <= 100.0:
                raise ConfigError("sweep percentages must lie in (0, 100]")
        for p in self.sweep_p:
            if not 0.0 < p < 1.0:
                raise ConfigError("sweep_p values must lie in (0, 1)")
        return self

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            if f.name in ("matrices", "schedules"):
                continue
            lines.append(f"{f.name} = {_fmt(getattr(self, f.name))}")
        for name in sorted(self.schedules):
            lines.append(f"schedule.{name} = {self.schedules[name].to_string()}")
        for name in MATRIX_NAMES:
            if name in self.matrices:
                lines.append(f"[matrix {name}]")
                for row in np.atleast_2d(self.matrices[name]):
                    lines.append(" ".join(repr(float(v)) for v in row))
                lines.append("[end]")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        # the output directory does not affect results
        text = "\n".join(ln for ln in self.to_text().splitlines() if not ln.startswith("out = "))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _fmt(val) -> str:
    if isinstance(val, tuple):
        return " ".join(_fmt(v) for v in val)
    if isinstance(val, float):
        return repr(val)
    return str(val)


_INT = ("model_seed", "T", "horizon", "trials", "seed", "sweep_ta")
_FLOAT = ("sample_period", "false_alarm", "p_d", "p", "safety_bound", "p1_scale")
_STR = ("model", "attack", "out")


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    block: Optional[str] = None
    rows: list = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if block is not None:
            if line == "[end]":
                try:
                    mat = np.array(rows, dtype=float)
                except ValueError as exc:
                    raise ConfigError(f"matrix {block}: ragged rows") from exc
                if not np.all(np.isfinite(mat)):
                    raise ConfigError(f"matrix {block}: non-finite entry")
                cfg.matrices[block] = mat
                block, rows = None, []
            else:
                try:
                    rows.append([float(tok) for tok in line.split()])
                except ValueError as exc:
                    raise ConfigError(f"line {lineno}: bad number in matrix {block}") from exc
            continue
        if line.startswith("[matrix") and line.endswith("]"):
            name = line[len("[matrix"):-1].strip()
            if name not in MATRIX_NAMES:
                raise ConfigError(f"line {lineno}: unknown matrix {name!r}")
            block = name
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            _assign(cfg, key, val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from exc
    if block is not None:
        raise ConfigError(f"matrix {block} is missing [end]")
    return cfg.validate()


def _assign(cfg: RunConfig, key: str, val: str):
    if key.startswith("schedule."):
        name = key[len("schedule."):]
        if not name:
            raise ValueError("schedule needs a name")
        cfg.schedules[name] = ResponseSchedule.from_string(val)
    elif key in _INT:
        setattr(cfg, key, int(val))
    elif key in _FLOAT:
        setattr(cfg, key, float(val))
    elif key in _STR:
        setattr(cfg, key, val)
    elif key == "safety_states":
        cfg.safety_states = tuple(int(v) for v in val.split())
    elif key in ("sweep_percentages", "sweep_p"):
        setattr(cfg, key, tuple(float(v) for v in val.split()))
    else:
        raise ValueError(f"unknown key {key!r}")


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
