"""Experiment configuration files (YAML syntax).

A config names the schema (inline, or by reference to a dataset descriptor),
the action models, the decision model (inline rules or a model file), the
horizon and an optional goal restriction. Relative paths resolve against the
config file's directory. Names without a path separator or suffix resolve to
configs shipped with the package, e.g. ``synthetic_health``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .mdp import ActionSpec, Effect, RecourseMdp
from .models import Condition, DecisionModel, ModelFileError, RuleModel, load_model, model_to_dict
from .schema import FeatureSchema, SchemaError, encode_state


class ConfigError(ValueError):
    def __init__(self, where: str, msg: str):
        super().__init__(f"{where}: {msg}")
        self.where = where


def package_dir() -> Path:
    return Path(str(resources.files("riskrecourse")))


def builtin_config_names() -> list[str]:
    return sorted(p.stem for p in (package_dir() / "configs").glob("*.cfg"))


def resolve_config_path(ref: str | Path) -> Path:
    p = Path(ref)
    if p.exists():
        return p
    if p.suffix == "" and len(p.parts) == 1:
        cand = package_dir() / "configs" / f"{p.name}.cfg"
        if cand.exists():
            return cand
    raise ConfigError(str(ref), "config file not found")


def read_yaml(path: Path) -> Any:
    try:
        return yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark else str(path)
        raise ConfigError(where, f"invalid YAML ({getattr(exc, 'problem', exc)})") from None


@dataclass
class ExperimentConfig:
    path: Path | None
    name: str
    schema: FeatureSchema
    actions: list[ActionSpec]
    model: DecisionModel
    horizon: int
    goal_restriction: list[int] | None
    initial_state: int | None
    raw: dict

    def build(self, horizon: int | None = None) -> RecourseMdp:
        return RecourseMdp(self.schema, self.actions, self.model,
                           horizon or self.horizon, self.goal_restriction, self.name)

    def hash(self) -> str:
        """Content hash over everything that changes the MDP, not over paths."""
        payload = {
            "schema": self.schema.to_dict(),
            "actions": [_action_to_dict(a) for a in self.actions],
            "model": model_to_dict(self.model),
            "horizon": self.horizon,
            "goal_restriction": self.goal_restriction,
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _action_to_dict(a: ActionSpec) -> dict:
    def eff(e):
        return None if e is None else {"feature": e.feature, "mode": e.mode, "level": e.level}

    return {
        "name": a.name,
        "cost": a.cost,
        "effect": eff(a.effect),
        "success_prob": a.success_prob,
        "side_effects": [eff(e) for e in a.side_effects],
        "failure_effect": eff(a.failure_effect),
        "requires": [list(r) for r in a.requires],
    }


def _effect(d: Any, where: str) -> Effect:
    if not isinstance(d, dict) or "feature" not in d or "mode" not in d:
        raise ConfigError(where, "effect needs 'feature' and 'mode'")
    try:
        return Effect(str(d["feature"]), str(d["mode"]),
                      None if d.get("level") is None else str(d["level"]))
    except SchemaError as exc:
        raise ConfigError(where, str(exc)) from None


def parse_action(d: Any, where: str) -> ActionSpec:
    if not isinstance(d, dict):
        raise ConfigError(where, "action must be a mapping")
    for key in ("name", "cost", "effect"):
        if key not in d:
            raise ConfigError(where, f"missing field '{key}'")
    sp = d.get("success_prob", 1.0)
    if isinstance(sp, dict):
        sp = {str(k): float(v) for k, v in sp.items()}
    try:
        return ActionSpec(
            name=str(d["name"]),
            cost=float(d["cost"]),
            effect=_effect(d["effect"], f"{where}.effect"),
            success_prob=sp,
            side_effects=tuple(_effect(e, f"{where}.side_effects[{i}]")
                               for i, e in enumerate(d.get("side_effects") or [])),
            failure_effect=(_effect(d["failure_effect"], f"{where}.failure_effect")
                            if d.get("failure_effect") else None),
            requires=tuple((str(k), str(v)) for k, v in (d.get("requires") or {}).items()),
        )
    except (SchemaError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(where, str(exc)) from None


def _parse_model(d: Any, schema: FeatureSchema, base: Path, where: str) -> DecisionModel:
    if not isinstance(d, dict):
        raise ConfigError(where, "model must be a mapping with 'rules' or 'file'")
    if "rules" in d:
        try:
            rules = [[Condition(str(c[0]), str(c[1]), str(c[2])) for c in rule]
                     for rule in d["rules"]]
            return RuleModel(schema, rules)
        except (SchemaError, IndexError, TypeError) as exc:
            raise ConfigError(f"{where}.rules", str(exc)) from None
    if "file" in d:
        path = base / d["file"]
        if not path.exists():
            raise ConfigError(f"{where}.file", f"model file {path} not found "
                              "(train it with `riskrecourse train`)")
        try:
            return load_model(schema, path)
        except ModelFileError as exc:
            raise ConfigError(f"{where}.file", str(exc)) from None
    raise ConfigError(where, "model must define 'rules' or 'file'")


def _parse_schema(d: Any, base: Path, where: str) -> FeatureSchema:
    if isinstance(d, dict) and "descriptor" in d:
        from .datasets import load_descriptor

        return load_descriptor(base / d["descriptor"]).schema
    if not isinstance(d, dict):
        raise ConfigError(where, "schema must be a mapping")
    try:
        return FeatureSchema.from_dict(d)
    except (SchemaError, TypeError) as exc:
        raise ConfigError(where, str(exc)) from None


def parse_config(raw: dict, base: Path, path: Path | None = None,
                 model: DecisionModel | None = None,
                 model_path: str | Path | None = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError(str(path), "config must be a mapping")
    for key in ("schema", "actions", "horizon"):
        if key not in raw:
            raise ConfigError(f"{path}", f"missing top-level field '{key}'")
    schema = _parse_schema(raw["schema"], base, "schema")
    actions = [parse_action(a, f"actions[{i}]") for i, a in enumerate(raw["actions"] or [])]
    for i, a in enumerate(actions):
        try:
            a.validate(schema)
        except SchemaError as exc:
            raise ConfigError(f"actions[{i}]", str(exc)) from None
    if model is None and model_path is not None:
        model = _parse_model({"file": str(Path(model_path).resolve())}, schema, base, "--model")
    if model is None:
        if "model" not in raw:
            raise ConfigError(str(path), "missing top-level field 'model'")
        model = _parse_model(raw["model"], schema, base, "model")
    horizon = raw["horizon"]
    if not isinstance(horizon, int) or horizon < 1:
        raise ConfigError("horizon", "must be a positive integer")

    def state_ref(v, where):
        try:
            if isinstance(v, int):
                if not 0 <= v < schema.cardinality:
                    raise SchemaError(f"state index {v} out of range")
                return v
            return encode_state(schema, schema.state(v))
        except (SchemaError, TypeError) as exc:
            raise ConfigError(where, str(exc)) from None

    goals = raw.get("goal_restriction")
    if goals is not None:
        goals = [state_ref(g, f"goal_restriction[{i}]") for i, g in enumerate(goals)]
    init = raw.get("initial_state")
    if init is not None:
        init = state_ref(init, "initial_state")
    return ExperimentConfig(path, str(raw.get("name") or (path.stem if path else "inline")),
                            schema, actions, model, horizon, goals, init, raw)


def load_config(ref: str | Path, model: DecisionModel | None = None,
                model_path: str | Path | None = None) -> ExperimentConfig:
    """Load a config file or a shipped config by name. ``model`` (or a model
    file at ``model_path``) overrides the configured decision model, e.g. when
    no trained model file ships with the config."""
    path = resolve_config_path(ref)
    raw = read_yaml(path)
    return parse_config(raw, path.parent, path, model, model_path)
