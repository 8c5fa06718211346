"""Scenario files: YAML with one section per subsystem.

Every key is optional and falls back to the bundled defaults, but unknown
keys are rejected. Validation collects every problem before raising, each
tagged with a dotted path such as ``battery.K_b``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .attacks import AttackProfile, AttackSet
from .battery import BatteryParams
from .cacc import CaccGains
from .errors import ConfigError
from .platoon import DriveCycle, bundled_drive_cycle, load_drive_cycle_csv
from .residuals import ObserverConfig
from .rl.ppo import PpoHyperparams


@dataclass(frozen=True)
class SimSettings:
    dt: float = 0.01
    duration: float = 600.0
    seed: int = 0
    drive_cycle: str = "bundled"
    initial_gap_offset: float = 0.0
    transient: float = 5.0


@dataclass(frozen=True)
class PlatoonParams:
    k_lead: float = 1.0
    a_min: float = -10.0
    a_max: float = 10.0


@dataclass(frozen=True)
class DefenderSettings:
    enabled: bool = False
    policy: str | None = None
    gating: bool = True
    decision_ticks: int = 10
    mode: str = "deterministic"


@dataclass(frozen=True)
class TrainingDistribution:
    """Attack scenarios drawn per training episode."""

    p_no_attack: float = 0.2
    p_accel_only: float = 0.2
    p_current_only: float = 0.2
    delta_a_max: float = 15.0
    delta_I_max: float = 40.0
    t_start_max: float = 10.0
    budget: float = 10.0
    nominal_voltage: float = 3.2


@dataclass(frozen=True)
class ScenarioConfig:
    sim: SimSettings = field(default_factory=SimSettings)
    platoon: PlatoonParams = field(default_factory=PlatoonParams)
    cacc: CaccGains = field(default_factory=CaccGains)
    battery: BatteryParams = field(default_factory=BatteryParams)
    observer: ObserverConfig = field(default_factory=ObserverConfig)
    attacks: AttackSet = field(default_factory=AttackSet)
    defender: DefenderSettings = field(default_factory=DefenderSettings)
    ppo: PpoHyperparams = field(default_factory=PpoHyperparams)
    training: TrainingDistribution = field(default_factory=TrainingDistribution)
    base_dir: str = "."

    @property
    def n_ticks(self) -> int:
        return int(round(self.sim.duration / self.sim.dt))

    def drive_cycle(self) -> DriveCycle:
        if self.sim.drive_cycle == "bundled":
            return bundled_drive_cycle()
        return load_drive_cycle_csv(self.resolve(self.sim.drive_cycle))

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def policy_path(self) -> Path | None:
        if self.defender.policy is None:
            return None
        return self.resolve(self.defender.policy)

    def to_tree(self) -> dict:
        tree = {}
        for name in ("sim", "platoon", "cacc", "battery", "observer", "defender", "ppo",
                     "training"):
            section = dataclasses.asdict(getattr(self, name))
            tree[name] = {k: list(v) if isinstance(v, tuple) else v
                          for k, v in section.items()}
        tree["attacks"] = [_profile_tree(p) for p in self.attacks.profiles]
        return tree

    def config_hash(self) -> str:
        blob = json.dumps(self.to_tree(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **sections) -> "ScenarioConfig":
        return dataclasses.replace(self, **sections)


def _profile_tree(p: AttackProfile) -> dict:
    out = {"target": p.target, "shape": p.shape, "magnitude": p.magnitude,
           "t_start": p.t_start, "t_end": p.t_end}
    for key in ("slope", "frequency"):
        if getattr(p, key) is not None:
            out[key] = getattr(p, key)
    if p.shape == "pulse":
        out["duty"] = p.duty
    return out


SECTIONS = {
    "sim": SimSettings,
    "platoon": PlatoonParams,
    "cacc": CaccGains,
    "battery": BatteryParams,
    "observer": ObserverConfig,
    "defender": DefenderSettings,
    "ppo": PpoHyperparams,
    "training": TrainingDistribution,
}
ATTACK_KEYS = {f.name for f in dataclasses.fields(AttackProfile)}

_INT_FIELDS = {("sim", "seed"), ("battery", "n_shells"), ("defender", "decision_ticks"),
               ("ppo", "epochs_per_update"), ("ppo", "minibatch"), ("ppo", "episodes_max"),
               ("ppo", "steps_per_episode"), ("ppo", "seed")}
_BOOL_FIELDS = {("battery", "ideal_actuator"), ("defender", "enabled"),
                ("defender", "gating"), ("ppo", "mirror")}
_STR_FIELDS = {("sim", "drive_cycle"), ("defender", "mode"), ("observer", "residual_norm")}
_OPT_STR_FIELDS = {("defender", "policy")}
_SEQ_FIELDS = {("battery", "ocv_coeffs"), ("observer", "poles_v")}


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _check_value(section, key, value, problems):
    path = f"{section}.{key}"
    if (section, key) in _BOOL_FIELDS:
        if not isinstance(value, bool):
            problems.append((path, "must be true or false"))
            return None
        return value
    if (section, key) in _STR_FIELDS:
        if not isinstance(value, str):
            problems.append((path, "must be a string"))
            return None
        return value
    if (section, key) in _OPT_STR_FIELDS:
        if value is not None and not isinstance(value, str):
            problems.append((path, "must be a string or null"))
            return None
        return value
    if (section, key) in _SEQ_FIELDS:
        if not isinstance(value, list) or not all(_is_number(v) for v in value):
            problems.append((path, "must be a list of numbers"))
            return None
        return tuple(float(v) for v in value)
    if (section, key) in _INT_FIELDS:
        if not (_is_number(value) and float(value).is_integer()):
            problems.append((path, "must be an integer"))
            return None
        return int(value)
    if not _is_number(value):
        problems.append((path, "must be a finite number"))
        return None
    return float(value)


def _validate_section_invariants(name, obj, problems):
    if name == "sim":
        if not obj.dt > 0:
            problems.append(("sim.dt", "must be positive"))
        elif not obj.duration >= obj.dt:
            problems.append(("sim.duration", "must be at least sim.dt"))
        if obj.transient < 0:
            problems.append(("sim.transient", "must be non-negative"))
    elif name == "platoon":
        if not obj.k_lead > 0:
            problems.append(("platoon.k_lead", "must be positive"))
        if not obj.a_min < 0:
            problems.append(("platoon.a_min", "must be negative"))
        if not obj.a_max > 0:
            problems.append(("platoon.a_max", "must be positive"))
    elif name == "defender":
        if obj.decision_ticks < 1:
            problems.append(("defender.decision_ticks", "must be >= 1"))
        if obj.mode not in ("deterministic", "stochastic"):
            problems.append(("defender.mode", "must be 'deterministic' or 'stochastic'"))
    elif name == "training":
        for key in ("p_no_attack", "p_accel_only", "p_current_only"):
            if not 0 <= getattr(obj, key) <= 1:
                problems.append((f"training.{key}", "must lie in [0, 1]"))
        if obj.p_no_attack + obj.p_accel_only + obj.p_current_only > 1 + 1e-12:
            problems.append(("training", "attack-mode probabilities exceed 1"))
        for key in ("delta_a_max", "delta_I_max", "budget", "nominal_voltage"):
            if not getattr(obj, key) > 0:
                problems.append((f"training.{key}", "must be positive"))
        if obj.t_start_max < 0:
            problems.append(("training.t_start_max", "must be non-negative"))


def scenario_from_tree(tree, base_dir=".") -> ScenarioConfig:
    if tree is None:
        tree = {}
    if not isinstance(tree, dict):
        raise ConfigError("scenario must be a mapping of sections",
                          [("<root>", "must be a mapping")])
    problems = []
    built = {}
    for key in tree:
        if key not in SECTIONS and key != "attacks":
            problems.append((str(key), "unknown section"))

    for name, cls in SECTIONS.items():
        raw = tree.get(name) or {}
        if not isinstance(raw, dict):
            problems.append((name, "must be a mapping"))
            continue
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            if key not in known:
                problems.append((f"{name}.{key}", "unknown key"))
                continue
            checked = _check_value(name, key, value, problems)
            if checked is not None or (name, key) in _OPT_STR_FIELDS:
                kwargs[key] = checked
        try:
            obj = cls(**kwargs)
        except ConfigError as exc:
            if exc.problems:
                problems.extend(exc.problems)
            else:
                problems.append((name, str(exc)))
            continue
        except TypeError as exc:
            problems.append((name, str(exc)))
            continue
        _validate_section_invariants(name, obj, problems)
        built[name] = obj

    profiles = []
    raw_attacks = tree.get("attacks") or []
    if not isinstance(raw_attacks, list):
        problems.append(("attacks", "must be a list of attack profiles"))
        raw_attacks = []
    for i, raw in enumerate(raw_attacks):
        path = f"attacks[{i}]"
        if not isinstance(raw, dict):
            problems.append((path, "must be a mapping"))
            continue
        bad = [k for k in raw if k not in ATTACK_KEYS]
        for k in bad:
            problems.append((f"{path}.{k}", "unknown key"))
        if bad:
            continue
        n_before = len(problems)
        for k in ("magnitude", "t_start", "t_end", "slope", "frequency", "duty"):
            if k in raw and raw[k] is not None and not _is_number(raw[k]):
                problems.append((f"{path}.{k}", "must be a finite number"))
        if len(problems) > n_before:
            continue
        if "target" not in raw:
            problems.append((f"{path}.target", "required"))
            continue
        try:
            profiles.append(AttackProfile(**raw))
        except (ConfigError, TypeError) as exc:
            problems.append((path, str(exc)))
    attacks = None
    if not any(p[0].startswith("attacks") for p in problems):
        try:
            attacks = AttackSet(profiles)
        except ConfigError as exc:
            problems.append(("attacks", str(exc)))

    if problems:
        raise ConfigError("invalid scenario:\n" + "\n".join(f"  {p}: {m}" for p, m in problems),
                          problems)

    cfg = ScenarioConfig(attacks=attacks, base_dir=str(base_dir), **built)
    if cfg.sim.drive_cycle != "bundled" and not cfg.resolve(cfg.sim.drive_cycle).exists():
        raise ConfigError(f"sim.drive_cycle: file not found: {cfg.sim.drive_cycle}",
                          [("sim.drive_cycle", "file not found")])
    return cfg


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}",
                          [("<file>", str(exc))]) from None
    try:
        tree = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
        raise ConfigError(f"{path}: parse error{where}: {exc}",
                          [("<file>", f"parse error{where}")]) from None
    return scenario_from_tree(tree, base_dir=path.parent)


def bundled_scenario_path(name: str = "default") -> Path:
    ref = resources.files("caevsim") / "data" / f"{name}.yaml"
    return Path(str(ref))


def default_scenario() -> ScenarioConfig:
    return load_scenario(bundled_scenario_path("default"))
