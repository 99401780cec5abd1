"""Dataset descriptors, preprocessing into discrete states, instance files and
the built-in hand-made domains."""
from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from .config import ConfigError, ExperimentConfig, load_config, package_dir, read_yaml
from .models import Condition, DecisionModel, RuleModel
from .schema import FeatureSchema, FeatureSpec, SchemaError, encode_many, decode_many

log = logging.getLogger(__name__)

INSTANCES_FORMAT = "riskrecourse-instances"
INSTANCES_VERSION = 1


@dataclass(frozen=True)
class FeatureRule:
    name: str
    column: str
    bins: tuple[float, ...] | None  # half-open numeric edges, len(levels) - 1 of them
    mapping: dict[str, str] | None  # raw value -> level label


@dataclass
class DatasetDescriptor:
    name: str
    schema: FeatureSchema
    columns: list[str] | None  # None: the file has a header row
    delimiter: str
    missing: tuple[str, ...]
    rules: list[FeatureRule]
    label_column: str
    favorable: tuple[str, ...] | None
    favorable_below: float | None


def load_descriptor(ref: str | Path) -> DatasetDescriptor:
    path = Path(ref)
    if not path.exists():
        cand = package_dir() / "descriptors" / f"{ref}.yaml"
        if not cand.exists():
            raise ConfigError(str(ref), "descriptor not found")
        path = cand
    d = read_yaml(path)
    try:
        src = d.get("source", {})
        feats, rules = [], []
        for i, f in enumerate(d["features"]):
            levels = tuple(str(x) for x in f["levels"])
            feats.append(FeatureSpec(f["name"], f["kind"], levels, f["mutability"]))
            bins = f.get("bins")
            mapping = None
            if "map" in f:
                mapping = {}
                for label, raws in f["map"].items():
                    if str(label) not in levels:
                        raise ConfigError(f"{path}: features[{i}].map", f"unknown level {label!r}")
                    for raw in raws:
                        mapping[str(raw)] = str(label)
            if bins is not None and len(bins) != len(levels) - 1:
                raise ConfigError(f"{path}: features[{i}].bins",
                                  "need exactly one edge fewer than levels")
            if (bins is None) == (mapping is None):
                raise ConfigError(f"{path}: features[{i}]", "define exactly one of 'bins' or 'map'")
            rules.append(FeatureRule(f["name"], str(f["column"]),
                                     tuple(float(b) for b in bins) if bins else None, mapping))
        lab = d["label"]
        schema = FeatureSchema(tuple(feats), str(d.get("target_label", "favorable")))
    except (KeyError, TypeError) as exc:
        raise ConfigError(str(path), f"malformed descriptor: {exc}") from None
    except SchemaError as exc:
        raise ConfigError(str(path), str(exc)) from None
    return DatasetDescriptor(
        name=str(d.get("name", path.stem)),
        schema=schema,
        columns=src.get("columns"),
        delimiter=src.get("delimiter", ","),
        missing=tuple(str(m) for m in src.get("missing", [])),
        rules=rules,
        label_column=str(lab["column"]),
        favorable=tuple(str(v) for v in lab["favorable"]) if "favorable" in lab else None,
        favorable_below=float(lab["favorable_below"]) if "favorable_below" in lab else None,
    )


@dataclass
class Instances:
    """Discrete instances: level vectors, state indices, labels and source row ids."""

    schema: FeatureSchema
    levels: np.ndarray
    labels: np.ndarray  # 1 favorable, 0 unfavorable, -1 unknown
    ids: np.ndarray

    @property
    def states(self) -> np.ndarray:
        return encode_many(self.schema, self.levels) if len(self.levels) else np.zeros(0, np.int64)

    def __len__(self):
        return len(self.ids)

    def subset(self, idx) -> "Instances":
        idx = np.asarray(idx, dtype=np.int64)
        return Instances(self.schema, self.levels[idx], self.labels[idx], self.ids[idx])


def read_raw(desc: DatasetDescriptor, source) -> pd.DataFrame:
    kw = dict(dtype=str, keep_default_na=False, skipinitialspace=True)
    if desc.delimiter == "whitespace":
        kw["sep"] = r"\s+"
    else:
        kw["sep"] = desc.delimiter
    if desc.columns is not None:
        kw.update(header=None, names=desc.columns)
    if isinstance(source, str) and "\n" in source:
        source = io.StringIO(source)
    try:
        df = pd.read_csv(source, **kw)
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise ConfigError(str(source), f"cannot parse CSV: {exc}") from None
    needed = {r.column for r in desc.rules} | {desc.label_column}
    absent = needed - set(df.columns)
    if absent:
        raise ConfigError(str(source), f"missing columns {sorted(absent)}")
    return df


def bin_value(edges: Sequence[float], x: float) -> int:
    """Level index for half-open bins: level i covers [edges[i-1], edges[i])."""
    return int(np.searchsorted(np.asarray(edges), x, side="right"))


def preprocess(desc: DatasetDescriptor, source) -> tuple[FeatureSchema, Instances]:
    df = read_raw(desc, source)
    df = df.apply(lambda col: col.str.strip())
    used = [r.column for r in desc.rules] + [desc.label_column]
    missing = df[used].isin(list(desc.missing) + [""]).any(axis=1)
    if missing.any():
        log.info("%s: dropped %d rows with missing values", desc.name, int(missing.sum()))
    df = df[~missing]
    n = len(df)
    levels = np.zeros((n, len(desc.rules)), dtype=np.int64)
    ok = np.ones(n, dtype=bool)
    for j, rule in enumerate(desc.rules):
        spec = desc.schema.features[j]
        col = df[rule.column]
        if rule.bins is not None:
            vals = pd.to_numeric(col, errors="coerce").to_numpy(dtype=float)
            bad = ~np.isfinite(vals)
            levels[~bad, j] = np.searchsorted(np.asarray(rule.bins), vals[~bad], side="right")
        else:
            mapped = col.map(rule.mapping)
            bad = mapped.isna().to_numpy()
            levels[~bad, j] = [spec.levels.index(v) for v in mapped[~bad]]
        if bad.any():
            for raw in sorted(set(col[bad]))[:5]:
                log.warning("%s: rejected rows with unmappable %s=%r", desc.name, rule.column, raw)
        ok &= ~bad
    lab = df[desc.label_column]
    if desc.favorable is not None:
        labels = lab.isin(desc.favorable).to_numpy().astype(np.int64)
    else:
        labels = (pd.to_numeric(lab, errors="coerce").to_numpy() < desc.favorable_below).astype(np.int64)
    ids = df.index.to_numpy(dtype=np.int64)
    return desc.schema, Instances(desc.schema, levels[ok], labels[ok], ids[ok])


def select_instances(inst: Instances, predicate: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
                     sample: int | None = None, seed: int = 0) -> Instances:
    """Stable-order subset matching ``predicate(levels, labels)``, optionally a
    seeded random sample of it (returned in original order)."""
    mask = np.ones(len(inst), dtype=bool) if predicate is None else np.asarray(
        predicate(inst.levels, inst.labels), dtype=bool)
    idx = np.nonzero(mask)[0]
    if sample is not None and sample < len(idx):
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(idx, size=sample, replace=False))
    if len(idx) == 0:
        log.warning("instance selection is empty")
    return inst.subset(idx)


def where(schema: FeatureSchema, *conditions: str | tuple[str, str, str] | Condition):
    """Predicate from conditions such as ``"Gender==Female"`` or ``"Age<=<30"``."""
    conds = [c if isinstance(c, Condition) else parse_condition(c) if isinstance(c, str) else Condition(*c)
             for c in conditions]
    rule = RuleModel(schema, [conds])
    return lambda levels, labels: rule.predict(levels)


def parse_condition(text: str) -> Condition:
    for op in ("==", "!=", ">=", "<=", ">", "<"):
        if op in text:
            feat, level = text.split(op, 1)
            return Condition(feat.strip(), op, level.strip())
    raise SchemaError(f"cannot parse condition {text!r}")


def predicted(model: DecisionModel, favorable: bool = False):
    return lambda levels, labels: model.predict(levels) == favorable


def label_is(value: int):
    return lambda levels, labels: labels == value


# ---------------------------------------------------------------------------
# instance files


def save_instances(inst: Instances, path: str | Path) -> None:
    doc = {
        "format": INSTANCES_FORMAT,
        "version": INSTANCES_VERSION,
        "schema_hash": inst.schema.hash(),
        "features": inst.schema.names,
        "instances": [
            {"id": int(i), "state": int(s), "label": int(lb)}
            for i, s, lb in zip(inst.ids, inst.states, inst.labels)
        ],
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n")


def load_instances(path: str | Path, schema: FeatureSchema) -> Instances:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"malformed instances file: {exc}") from None
    if doc.get("format") != INSTANCES_FORMAT or doc.get("version") != INSTANCES_VERSION:
        raise ConfigError(str(path), "not a version-1 instances file")
    if doc.get("schema_hash") != schema.hash():
        raise ConfigError(str(path), "instances were built for a different schema")
    rows = doc["instances"]
    states = np.array([r["state"] for r in rows], dtype=np.int64)
    return Instances(
        schema,
        decode_many(schema, states) if len(rows) else np.zeros((0, len(schema)), np.int64),
        np.array([r.get("label", -1) for r in rows], dtype=np.int64),
        np.array([r["id"] for r in rows], dtype=np.int64),
    )


def instances_from_states(schema: FeatureSchema, states: Sequence[int], labels=None) -> Instances:
    states = np.asarray(states, dtype=np.int64)
    lab = np.full(len(states), -1, np.int64) if labels is None else np.asarray(labels, np.int64)
    return Instances(schema, decode_many(schema, states), lab, np.arange(len(states)))


# ---------------------------------------------------------------------------
# built-in domains

BUILTIN_DOMAINS = ("synthetic_health", "loan_figure1")


def builtin_domain(name: str) -> tuple[ExperimentConfig, int]:
    """Config and initial state of a shipped hand-made domain."""
    if name not in BUILTIN_DOMAINS:
        raise ValueError(f"unknown built-in domain {name!r}; choose from {BUILTIN_DOMAINS}")
    cfg = load_config(name)
    return cfg, int(cfg.initial_state)
