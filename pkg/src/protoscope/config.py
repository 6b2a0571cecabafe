"""Run configuration: a flat ``key = value`` text file plus CLI overrides.

Values are read as JSON when they parse as JSON, otherwise as plain
strings. Lines starting with ``#`` are comments. Recognized keys:

    input, out, seed, cohort, test_fraction, corr_both, corr_single,
    min_cohort_size, models, salt, n_jobs, background_size, n_coalitions,
    trend_threshold, top_k, max_players, quality_weights,
    grid.<KIND>.<param>   e.g. grid.RF.n_trees = [100, 300]
    synth.n               synthetic cohort size
    synth.<physics key>   e.g. synth.label_noise = 0.1
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .errors import BadConfig
from .learners import DEFAULT_GRIDS, ModelKind, normalize_params
from .synth import PhysicsConfig


@dataclass(frozen=True)
class RunConfig:
    input: Optional[str] = None
    out: str = "protoscope_out"
    seed: Optional[int] = None
    cohort: str = "auto"
    test_fraction: float = 0.2
    corr_both: float = 0.7
    corr_single: float = 0.9
    min_cohort_size: int = 50
    models: tuple[str, ...] = ("LR", "DT", "RF", "GB", "MLP")
    salt: str = "protoscope"
    n_jobs: int = 1
    background_size: int = 100
    n_coalitions: Optional[int] = None
    trend_threshold: float = 0.3
    top_k: int = 5
    max_players: int = 12
    quality_weights: tuple[float, float] = (0.5, 0.5)
    grids: dict = field(default_factory=dict)
    synth_n: int = 400
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)

    def __post_init__(self):
        for name in ("corr_both", "corr_single", "trend_threshold"):
            if not 0 < getattr(self, name) <= 1:
                raise BadConfig(f"{name} must lie in (0, 1]")
        if not 0 < self.test_fraction < 1:
            raise BadConfig("test_fraction must lie in (0, 1)")
        for kind in self.models:
            if kind not in ModelKind.__members__:
                raise BadConfig(f"unknown model kind {kind!r}")
        if self.background_size < 1 or self.top_k < 1 or self.n_jobs == 0:
            raise BadConfig("background_size, top_k and n_jobs must be positive")

    def grid(self, kind) -> dict:
        kind = ModelKind(kind)
        merged = dict(DEFAULT_GRIDS[kind])
        merged.update(self.grids.get(kind.value, {}))
        return merged

    def require_seed(self) -> int:
        if self.seed is None:
            raise BadConfig("this command needs a seed (--seed or 'seed' in the config file)")
        return int(self.seed)


def _value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_text(text: str) -> dict:
    pairs = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise BadConfig(f"line {number}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        pairs[key] = _value(value)
    return pairs


def from_pairs(pairs: dict, base: RunConfig = RunConfig()) -> RunConfig:
    simple = {f.name for f in fields(RunConfig)} - {"grids", "physics", "synth_n"}
    updates: dict = {}
    grids = {k: dict(v) for k, v in base.grids.items()}
    physics = {}
    for key, value in pairs.items():
        if key.startswith("grid."):
            try:
                _, kind, param = key.split(".")
                kind = ModelKind(kind).value
            except ValueError as exc:
                raise BadConfig(f"bad grid key {key!r}") from exc
            values = value if isinstance(value, list) else [value]
            for v in values:
                try:
                    normalize_params(kind, {param: v})
                except ValueError as exc:
                    raise BadConfig(str(exc)) from exc
            grids.setdefault(kind, {})[param] = values
        elif key == "synth.n":
            updates["synth_n"] = int(value)
        elif key.startswith("synth."):
            physics[key[len("synth."):]] = value
        elif key in simple:
            if key in ("models", "quality_weights"):
                value = tuple(value) if isinstance(value, list) else tuple(str(value).split(","))
                if key == "quality_weights":
                    value = tuple(float(v) for v in value)
            updates[key] = value
        else:
            raise BadConfig(f"unknown config key {key!r}")
    if physics:
        current = {f.name: getattr(base.physics, f.name) for f in fields(PhysicsConfig)}
        current.update(physics)
        updates["physics"] = PhysicsConfig.from_mapping(current)
    return replace(base, grids=grids, **updates)


def load(path=None, **overrides) -> RunConfig:
    """Read a config file (if any) and apply non-None keyword overrides."""
    pairs = parse_text(Path(path).read_text()) if path else {}
    pairs.update({k: v for k, v in overrides.items() if v is not None})
    return from_pairs(pairs)
