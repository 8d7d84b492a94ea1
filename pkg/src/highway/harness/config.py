"""Experiment configuration: validation with field paths and env resolution."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from ..envs import TOY_TASKS, build_multiroom, build_threefork
from ..mdp import TabularMdp

KINDS = ("fixed_point", "convergence_iters", "gate_trace", "multiroom", "toy_tasks",
         "retrace_profile", "property_suite")
FIXED_POINT_OPERATORS = ("bellman_optimality", "multistep_bo", "highway_generalized",
                         "highway_optimality", "highway_softmax", "broken_gate")
PLANNERS = ("value_iteration", "policy_iteration", "highway_value_iteration")
AGENT_NAMES = ("highway_q", "q_lambda", "sarsa_lambda", "monte_carlo", "n_step_q")
STOCHASTIC = ("toy_tasks", "retrace_profile")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    experiment: str
    env: dict = field(default_factory=dict)
    spec: dict = field(default_factory=dict)
    seeds: tuple[int, ...] = (0,)
    out: str | None = None
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(self.seeds))
        validate(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("<root>", "config must be an object")
        known = {"kind", "experiment", "env", "spec", "seeds", "out", "workers"}
        for key in doc:
            if key not in known:
                raise ConfigError(key, "unknown field")
        for key in ("kind", "experiment"):
            if key not in doc:
                raise ConfigError(key, "required field missing")
        return cls(**doc)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"invalid JSON: {exc}") from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["seeds"] = list(self.seeds)
        return doc

    def with_(self, **changes) -> "ExperimentConfig":
        doc = self.to_dict()
        doc.update(changes)
        return ExperimentConfig.from_dict(doc)


def _need(spec: dict, key: str, kind: type | tuple, where: str = "spec") -> Any:
    if key not in spec:
        raise ConfigError(f"{where}.{key}", "required field missing")
    value = spec[key]
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ConfigError(f"{where}.{key}", f"expected {getattr(kind, '__name__', kind)}")
    return value


def _int_list(spec: dict, key: str, lo: int = 1) -> list[int]:
    values = _need(spec, key, list)
    if not values:
        raise ConfigError(f"spec.{key}", "must be nonempty")
    for i, v in enumerate(values):
        if not isinstance(v, int) or isinstance(v, bool) or v < lo:
            raise ConfigError(f"spec.{key}[{i}]", f"expected an integer >= {lo}")
    return values


def _names(spec: dict, key: str, allowed: tuple[str, ...]) -> list[str]:
    values = _need(spec, key, list)
    if not values:
        raise ConfigError(f"spec.{key}", "must be nonempty")
    for i, v in enumerate(values):
        if v not in allowed:
            raise ConfigError(f"spec.{key}[{i}]", f"unknown name {v!r}; expected one of {allowed}")
    return values


def validate(cfg: ExperimentConfig) -> None:
    if cfg.kind not in KINDS:
        raise ConfigError("kind", f"unknown kind {cfg.kind!r}; expected one of {KINDS}")
    if not isinstance(cfg.experiment, str) or not cfg.experiment or "," in cfg.experiment:
        raise ConfigError("experiment", "must be a nonempty string without commas")
    if not isinstance(cfg.workers, int) or cfg.workers < 1:
        raise ConfigError("workers", "must be a positive integer")
    for i, s in enumerate(cfg.seeds):
        if not isinstance(s, int) or isinstance(s, bool) or s < 0:
            raise ConfigError(f"seeds[{i}]", "expected a nonnegative integer")
    if cfg.kind in STOCHASTIC and not cfg.seeds:
        raise ConfigError("seeds", "stochastic experiments need at least one seed")
    if not isinstance(cfg.env, dict) or not isinstance(cfg.spec, dict):
        raise ConfigError("env" if not isinstance(cfg.env, dict) else "spec", "must be an object")
    spec = cfg.spec
    if cfg.kind in ("fixed_point", "convergence_iters", "gate_trace"):
        _check_env(cfg.env)
    if cfg.kind in ("fixed_point", "convergence_iters"):
        _names(spec, "operators", FIXED_POINT_OPERATORS)
        _int_list(spec, "depths")
        if "tol" in spec and not (isinstance(spec["tol"], (int, float)) and spec["tol"] > 0):
            raise ConfigError("spec.tol", "must be a positive number")
    elif cfg.kind == "gate_trace":
        _need(spec, "depth", int)
    elif cfg.kind == "multiroom":
        _int_list(spec, "rooms")
        _need(spec, "room_size", int)
        _names(spec, "algorithms", PLANNERS)
    elif cfg.kind == "toy_tasks":
        task = _need(spec, "task", str)
        if task not in TOY_TASKS:
            raise ConfigError("spec.task", f"unknown task {task!r}; expected one of {tuple(TOY_TASKS)}")
        _int_list(spec, "delays", lo=2)
        _names(spec, "agents", AGENT_NAMES)
    elif cfg.kind == "retrace_profile":
        _names_or_numbers(spec, "lams")
        _need(spec, "steps", int)
    elif cfg.kind == "property_suite":
        from .checks import CHECKS
        suite = _need(spec, "suite", str)
        if suite not in CHECKS:
            raise ConfigError("spec.suite", f"unknown suite {suite!r}")


def _names_or_numbers(spec: dict, key: str) -> None:
    values = _need(spec, key, list)
    for i, v in enumerate(values):
        if not isinstance(v, (int, float)) or not 0 <= v <= 1:
            raise ConfigError(f"spec.{key}[{i}]", "expected a number in [0, 1]")


def _check_env(env: dict) -> None:
    if "preset" in env:
        if env["preset"] not in ("threefork",):
            raise ConfigError("env.preset", f"unknown env preset {env['preset']!r}")
    elif "file" in env:
        if not isinstance(env["file"], str):
            raise ConfigError("env.file", "expected a path")
    else:
        raise ConfigError("env", "needs either 'preset' or 'file'")
    probe = env.get("probe")
    if probe is not None and (not isinstance(probe, list) or len(probe) != 2):
        raise ConfigError("env.probe", "expected [state, action]")


@dataclass
class ResolvedEnv:
    name: str
    mdp: TabularMdp
    probe: tuple[int, int]
    policies: dict[str, Any]


def resolve_env(env: dict) -> ResolvedEnv:
    """Materialise a planning env.  ThreeFork carries its named policies."""
    if env.get("preset") == "threefork":
        tf = build_threefork()
        probe = tuple(env.get("probe", (tf.start, 0)))
        return ResolvedEnv("threefork", tf.mdp, probe,
                           {"blue": tf.blue, "orange": tf.orange, "red": tf.red})
    mdp = TabularMdp.load(env["file"])
    probe = tuple(env.get("probe", (0, 0)))
    if not (0 <= probe[0] < mdp.num_states and 0 <= probe[1] < mdp.num_actions):
        raise ConfigError("env.probe", "probe pair outside the MDP")
    return ResolvedEnv(Path(env["file"]).stem, mdp, probe, {})


def multiroom_mdp(rooms: int, room_size: int, discount: float = 0.99):
    return build_multiroom(rooms, room_size, discount)
