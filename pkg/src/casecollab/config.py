"""Scenario configuration: YAML key tree with mandatory duration units.

Durations are written ``"<number> <unit>"`` with unit one of s, min, h, d
and rates as ``"<number> per <unit>"``; everything is normalized to
seconds on load.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from .collaboration import (
    DEFAULT_DWELL_MEANS,
    DEFAULT_TRANSITIONS,
    CaseStage,
    TransitionTable,
)
from .errors import InvalidTransitionTable, MissingUnit, ParseError, ValidationError
from .record import Role
from .resources import ResourceKind

UNITS = {"s": 1.0, "min": 60.0, "h": 3600.0, "d": 86400.0}
_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_DURATION = re.compile(rf"^\s*({_NUM})\s*([a-z]+)\s*$")
_RATE = re.compile(rf"^\s*({_NUM})\s*(?:per|/)\s*([a-z]+)\s*$")


class Strategy(Enum):
    VCS_MODEL = "VcsModel"
    BASELINE = "Baseline"


@dataclass(frozen=True)
class ResourceSpec:
    name: str
    kind: ResourceKind
    capacity: int
    stages: tuple = ()


DEFAULT_POOL = (
    ("CM1", Role.CASE_MANAGER),
    ("N1", Role.NURSE),
    ("N2", Role.NURSE),
    ("N3", Role.NURSE),
    ("L1", Role.LAB_TECHNICIAN),
    ("L2", Role.LAB_TECHNICIAN),
    ("AH1", Role.ALLIED_HEALTH),
    ("AH2", Role.ALLIED_HEALTH),
    ("PS1", Role.PSYCHO_SOCIAL),
    ("AD1", Role.ADMINISTRATOR),
)

DEFAULT_RESOURCES = (
    ResourceSpec("diagnostics", ResourceKind.EQUIPMENT, 4, (CaseStage.DIAGNOSIS,)),
    ResourceSpec("oncology_clinic", ResourceKind.FACILITY, 2,
                 (CaseStage.TREATMENT_ASSESSMENT,)),
)


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 1
    horizon: float = 120 * 86400.0
    arrival_rate: Optional[float] = 1 / 86400.0
    arrival_times: Optional[tuple] = None
    feedback_latency: float = 15.0
    validation_latency: float = 1440.0
    p_flag: float = 0.1
    transitions: Mapping = field(default_factory=lambda: dict(DEFAULT_TRANSITIONS))
    dwell_means: Mapping = field(default_factory=lambda: dict(DEFAULT_DWELL_MEANS))
    dwell_model: str = "exponential"
    pool: tuple = DEFAULT_POOL
    resources: tuple = DEFAULT_RESOURCES
    strategy: Strategy = Strategy.VCS_MODEL
    baseline_sync_interval: float = 604800.0
    core_fraction: float = 0.2
    contributions_per_stage: int = 1
    response_delay: float = 0.0
    meeting_duration: float = 1800.0
    bottleneck_threshold: float = 0.9
    wait_ceiling: float = 3600.0

    def __post_init__(self):
        validate(self)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def transition_table(self) -> TransitionTable:
        return TransitionTable(dict(self.transitions), dict(self.dwell_means))

    def stage_resources(self) -> dict:
        return {stage: spec.name for spec in self.resources for stage in spec.stages}

    def to_dict(self) -> dict:
        """Normalized, JSON-safe view (durations in seconds)."""
        return {
            "seed": self.seed,
            "horizon_s": self.horizon,
            "arrival_rate_per_s": self.arrival_rate,
            "arrival_times_s": list(self.arrival_times) if self.arrival_times is not None else None,
            "feedback_latency_s": self.feedback_latency,
            "validation_latency_s": self.validation_latency,
            "p_flag": self.p_flag,
            "transitions": {f"{a.value}->{b.value}": p
                            for (a, b), p in sorted(self.transitions.items(),
                                                    key=lambda kv: (kv[0][0].value, kv[0][1].value))},
            "dwell_means_s": {s.value: v for s, v in sorted(self.dwell_means.items(),
                                                            key=lambda kv: kv[0].value)},
            "dwell_model": self.dwell_model,
            "pool": [[s, r.value] for s, r in self.pool],
            "resources": [{"name": r.name, "kind": r.kind.value, "capacity": r.capacity,
                           "stages": [s.value for s in r.stages]} for r in self.resources],
            "strategy": self.strategy.value,
            "baseline_sync_interval_s": self.baseline_sync_interval,
            "core_fraction": self.core_fraction,
            "contributions_per_stage": self.contributions_per_stage,
            "response_delay_s": self.response_delay,
            "meeting_duration_s": self.meeting_duration,
            "bottleneck_threshold": self.bottleneck_threshold,
            "wait_ceiling_s": self.wait_ceiling,
        }

    @property
    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def validate(cfg: ScenarioConfig) -> None:
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or not 0 <= cfg.seed < 2**64:
        raise ValidationError("seed", "must be an unsigned 64-bit integer")
    if not cfg.horizon > 0 or not math.isfinite(cfg.horizon):
        raise ValidationError("horizon", "must be positive")
    for key in ("feedback_latency", "validation_latency", "baseline_sync_interval",
                "response_delay", "meeting_duration", "wait_ceiling"):
        v = getattr(cfg, key)
        if not v >= 0 or not math.isfinite(v):
            raise ValidationError(key, "must be >= 0")
    if cfg.baseline_sync_interval <= 0:
        raise ValidationError("baseline_sync_interval", "must be positive")
    if cfg.arrival_rate is not None and not cfg.arrival_rate >= 0:
        raise ValidationError("arrival.rate", "must be >= 0")
    if cfg.arrival_times is not None and any(t < 0 for t in cfg.arrival_times):
        raise ValidationError("arrival.times", "must be >= 0")
    if (cfg.arrival_rate is None) == (cfg.arrival_times is None):
        raise ValidationError("arrival", "give exactly one of rate or times")
    if not 0.0 <= cfg.p_flag <= 1.0:
        raise ValidationError("p_flag", "must be in [0, 1]")
    if not 0.0 < cfg.core_fraction <= 1.0:
        raise ValidationError("core_fraction", "must be in (0, 1]")
    if not 0.0 < cfg.bottleneck_threshold <= 1.0:
        raise ValidationError("bottleneck_threshold", "must be in (0, 1]")
    if cfg.contributions_per_stage < 0:
        raise ValidationError("contributions_per_stage", "must be >= 0")
    if cfg.dwell_model not in ("exponential", "fixed"):
        raise ValidationError("dwell_model", "must be exponential or fixed")
    if not any(r is Role.CASE_MANAGER for _, r in cfg.pool):
        raise ValidationError("pool", "needs a CaseManager")
    names = [r.name for r in cfg.resources]
    if len(set(names)) != len(names):
        raise ValidationError("resources", "duplicate resource name")
    for r in cfg.resources:
        if r.capacity < 1:
            raise ValidationError(f"resources.{r.name}.capacity", "must be positive")
    staged = [s for r in cfg.resources for s in r.stages]
    if len(set(staged)) != len(staged):
        raise ValidationError("resources", "a stage may use only one resource")
    try:
        cfg.transition_table()
    except InvalidTransitionTable as exc:
        raise ValidationError("transitions", str(exc)) from None


# ---------------------------------------------------------------------------
# parsing


def parse_duration(value: Any, key: str) -> float:
    if isinstance(value, bool) or isinstance(value, (int, float)):
        raise MissingUnit(key, f"duration {value!r} needs a unit (s, min, h, d)")
    m = _DURATION.match(str(value))
    if not m:
        if re.match(rf"^\s*{_NUM}\s*$", str(value)):
            raise MissingUnit(key, f"duration {value!r} needs a unit (s, min, h, d)")
        raise ValidationError(key, f"cannot read duration {value!r}")
    number, unit = float(m.group(1)), m.group(2)
    if unit not in UNITS:
        raise ValidationError(key, f"unknown unit {unit!r}")
    return number * UNITS[unit]


def parse_rate(value: Any, key: str) -> float:
    if isinstance(value, bool) or isinstance(value, (int, float)):
        raise MissingUnit(key, f"rate {value!r} needs a unit, e.g. '1 per d'")
    m = _RATE.match(str(value))
    if not m:
        raise ValidationError(key, f"cannot read rate {value!r}")
    number, unit = float(m.group(1)), m.group(2)
    if unit not in UNITS:
        raise ValidationError(key, f"unknown unit {unit!r}")
    return number / UNITS[unit]


def _enum(cls, value: Any, key: str):
    try:
        return cls(value)
    except ValueError:
        allowed = ", ".join(m.value for m in cls)
        raise ValidationError(key, f"{value!r} is not one of {allowed}") from None


_DURATION_KEYS = ("horizon", "feedback_latency", "validation_latency",
                  "baseline_sync_interval", "response_delay", "meeting_duration",
                  "wait_ceiling")
_PLAIN_KEYS = {"seed": int, "p_flag": float, "core_fraction": float,
               "contributions_per_stage": int, "bottleneck_threshold": float,
               "dwell_model": str}
_KNOWN = set(_DURATION_KEYS) | set(_PLAIN_KEYS) | {
    "arrival", "transitions", "dwell_means", "pool", "resources", "strategy"}


def config_from_mapping(data: Mapping) -> ScenarioConfig:
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise ParseError("<root>", "config must be a key tree")
    for key in data:
        if key not in _KNOWN:
            raise ValidationError(str(key), "unknown key")
    kw: dict[str, Any] = {}
    for key in _DURATION_KEYS:
        if key in data:
            kw[key] = parse_duration(data[key], key)
    for key, typ in _PLAIN_KEYS.items():
        if key in data:
            v = data[key]
            if typ is int and (isinstance(v, bool) or not isinstance(v, int)):
                raise ValidationError(key, "must be an integer")
            if typ is float and (isinstance(v, bool) or not isinstance(v, (int, float))):
                raise ValidationError(key, "must be a number")
            kw[key] = typ(v)

    if "arrival" in data:
        arr = data["arrival"]
        if not isinstance(arr, Mapping):
            raise ValidationError("arrival", "expected rate or times")
        extra = set(arr) - {"rate", "times"}
        if extra:
            raise ValidationError(f"arrival.{sorted(extra)[0]}", "unknown key")
        if "rate" in arr and "times" in arr:
            raise ValidationError("arrival", "give exactly one of rate or times")
        if "rate" in arr:
            kw["arrival_rate"] = parse_rate(arr["rate"], "arrival.rate")
            kw["arrival_times"] = None
        elif "times" in arr:
            times = arr["times"] or []
            kw["arrival_times"] = tuple(sorted(parse_duration(t, f"arrival.times[{i}]")
                                               for i, t in enumerate(times)))
            kw["arrival_rate"] = None
        else:
            raise ValidationError("arrival", "expected rate or times")

    if "strategy" in data:
        kw["strategy"] = _enum(Strategy, data["strategy"], "strategy")

    if "transitions" in data:
        table = data["transitions"]
        if not isinstance(table, Mapping):
            raise ValidationError("transitions", "expected stage -> {stage: probability}")
        probs = {}
        for src, row in table.items():
            a = _enum(CaseStage, src, f"transitions.{src}")
            if not isinstance(row, Mapping):
                raise ValidationError(f"transitions.{src}", "expected {stage: probability}")
            for dst, p in row.items():
                b = _enum(CaseStage, dst, f"transitions.{src}.{dst}")
                if isinstance(p, bool) or not isinstance(p, (int, float)):
                    raise ValidationError(f"transitions.{src}.{dst}", "must be a number")
                probs[(a, b)] = float(p)
        kw["transitions"] = probs

    if "dwell_means" in data:
        means = dict(DEFAULT_DWELL_MEANS)
        dm = data["dwell_means"]
        if not isinstance(dm, Mapping):
            raise ValidationError("dwell_means", "expected stage -> duration")
        for stage, v in dm.items():
            key = f"dwell_means.{stage}"
            means[_enum(CaseStage, stage, key)] = parse_duration(v, key)
        kw["dwell_means"] = means

    if "pool" in data:
        pool = []
        for i, entry in enumerate(data["pool"] or []):
            if not isinstance(entry, Mapping) or "id" not in entry or "role" not in entry:
                raise ValidationError(f"pool[{i}]", "expected {id, role}")
            pool.append((str(entry["id"]), _enum(Role, entry["role"], f"pool[{i}].role")))
        if len({s for s, _ in pool}) != len(pool):
            raise ValidationError("pool", "duplicate subject id")
        kw["pool"] = tuple(pool)

    if "resources" in data:
        specs = []
        for i, entry in enumerate(data["resources"] or []):
            if not isinstance(entry, Mapping) or "name" not in entry:
                raise ValidationError(f"resources[{i}]", "expected {name, kind, capacity}")
            cap = entry.get("capacity", 1)
            if isinstance(cap, bool) or not isinstance(cap, int):
                raise ValidationError(f"resources[{i}].capacity", "must be an integer")
            stages = tuple(_enum(CaseStage, s, f"resources[{i}].stages")
                           for s in entry.get("stages", []) or [])
            specs.append(ResourceSpec(str(entry["name"]),
                                      _enum(ResourceKind, entry.get("kind", "Personnel"),
                                            f"resources[{i}].kind"),
                                      cap, stages))
        kw["resources"] = tuple(specs)

    return ScenarioConfig(**kw)


def load_config(source: str | Path) -> ScenarioConfig:
    """Read and validate a config file."""
    path = Path(source)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(str(path), exc.strerror or str(exc)) from None
    return loads_config(text)


def loads_config(text: str) -> ScenarioConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError("<document>", str(exc).replace("\n", " ")) from None
    return config_from_mapping(data)


def default_config_path() -> Path:
    return Path(__file__).with_name("data") / "default.yaml"


def format_config(cfg: ScenarioConfig) -> str:
    """Human-readable normalized listing used by ``validate``."""
    lines = []
    for key, value in cfg.to_dict().items():
        name = key[:-2] if key.endswith("_s") else key
        if key.endswith("_per_s") and isinstance(value, (int, float)):
            lines.append(f"{key[:-6]}: {value:.12g} per s")
        elif key.endswith("_s") and isinstance(value, (int, float)):
            lines.append(f"{name}: {value:.12g} s")
        elif isinstance(value, (dict, list)):
            lines.append(f"{name}: {json.dumps(value, sort_keys=True)}")
        else:
            lines.append(f"{name}: {value}")
    lines.append(f"digest: {cfg.digest}")
    return "\n".join(lines) + "\n"
