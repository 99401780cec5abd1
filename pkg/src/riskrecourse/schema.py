"""Feature schemas, factored discrete states and their flat indices.

States are vectors of level indices, one per feature. The flat index is a
mixed-radix number with the first feature most significant, so index order
equals lexicographic order of the level vectors.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np


class SchemaError(ValueError):
    """A state, feature or schema definition violates the schema contract."""


class FeatureKind(str, Enum):
    NOMINAL = "nominal"
    ORDINAL = "ordinal"


class Mutability(str, Enum):
    IMMUTABLE = "immutable"
    ACTIONABLE = "actionable"
    MUTABLE_NON_ACTIONABLE = "mutable_non_actionable"


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: FeatureKind
    levels: tuple[str, ...]
    mutability: Mutability

    def __post_init__(self):
        object.__setattr__(self, "kind", FeatureKind(self.kind))
        object.__setattr__(self, "mutability", Mutability(self.mutability))
        object.__setattr__(self, "levels", tuple(str(lv) for lv in self.levels))
        if not self.name:
            raise SchemaError("feature name must be non-empty")
        if len(self.levels) < 2:
            raise SchemaError(f"feature {self.name!r} needs at least two levels")
        if any(not lv for lv in self.levels):
            raise SchemaError(f"feature {self.name!r} has an empty level label")
        if len(set(self.levels)) != len(self.levels):
            raise SchemaError(f"feature {self.name!r} has duplicate level labels")

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def level_index(self, label: str | int) -> int:
        if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
            if not 0 <= label < self.n_levels:
                raise SchemaError(f"level {label} out of range for {self.name!r}")
            return int(label)
        try:
            return self.levels.index(str(label))
        except ValueError:
            raise SchemaError(f"unknown level {label!r} for feature {self.name!r}") from None


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[FeatureSpec, ...]
    target_label: str = "favorable"

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        if not self.features:
            raise SchemaError("schema has no features")
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("feature names must be unique")
        if self.cardinality >= 2**63:
            raise SchemaError("state space does not fit a 64-bit count")

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def radices(self) -> tuple[int, ...]:
        return tuple(f.n_levels for f in self.features)

    @property
    def cardinality(self) -> int:
        n = 1
        for r in self.radices:
            n *= r
        return n

    def __len__(self):
        return len(self.features)

    def index_of(self, name: str) -> int:
        for i, f in enumerate(self.features):
            if f.name == name:
                return i
        raise SchemaError(f"unknown feature {name!r}")

    def feature(self, name: str) -> FeatureSpec:
        return self.features[self.index_of(name)]

    def state(self, values: dict[str, str | int] | Sequence[str | int]) -> tuple[int, ...]:
        """Build a validated level-index vector from labels or indices."""
        if isinstance(values, dict):
            unknown = set(values) - set(self.names)
            if unknown:
                raise SchemaError(f"unknown features {sorted(unknown)}")
            missing = set(self.names) - set(values)
            if missing:
                raise SchemaError(f"missing features {sorted(missing)}")
            values = [values[f.name] for f in self.features]
        if len(values) != len(self.features):
            raise SchemaError(
                f"state has {len(values)} entries, schema has {len(self.features)} features"
            )
        return tuple(f.level_index(v) for f, v in zip(self.features, values))

    def labels(self, state: Sequence[int]) -> dict[str, str]:
        self.validate(state)
        return {f.name: f.levels[i] for f, i in zip(self.features, state)}

    def validate(self, state: Sequence[int]) -> None:
        if len(state) != len(self.features):
            raise SchemaError(
                f"state has {len(state)} entries, schema has {len(self.features)} features"
            )
        for f, lv in zip(self.features, state):
            if not 0 <= int(lv) < f.n_levels:
                raise SchemaError(f"level {lv} out of range for feature {f.name!r}")

    def to_dict(self) -> dict:
        return {
            "target_label": self.target_label,
            "features": [
                {
                    "name": f.name,
                    "kind": f.kind.value,
                    "levels": list(f.levels),
                    "mutability": f.mutability.value,
                }
                for f in self.features
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        try:
            feats = tuple(
                FeatureSpec(
                    name=str(f["name"]),
                    kind=f["kind"],
                    levels=tuple(f["levels"]),
                    mutability=f["mutability"],
                )
                for f in d["features"]
            )
        except KeyError as exc:
            raise SchemaError(f"feature definition missing field {exc}") from None
        except ValueError as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(str(exc)) from None
        return cls(feats, str(d.get("target_label", "favorable")))

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def encode_state(schema: FeatureSchema, state: Sequence[int]) -> int:
    schema.validate(state)
    idx = 0
    for r, lv in zip(schema.radices, state):
        idx = idx * r + int(lv)
    return idx


def decode_state(schema: FeatureSchema, index: int) -> tuple[int, ...]:
    index = int(index)
    if not 0 <= index < schema.cardinality:
        raise SchemaError(f"state index {index} outside [0, {schema.cardinality})")
    out = []
    for r in reversed(schema.radices):
        index, lv = divmod(index, r)
        out.append(lv)
    return tuple(reversed(out))


def encode_many(schema: FeatureSchema, states: np.ndarray) -> np.ndarray:
    states = np.asarray(states, dtype=np.int64)
    if states.ndim != 2 or states.shape[1] != len(schema):
        raise SchemaError("expected an (n, n_features) array of level indices")
    radices = np.asarray(schema.radices)
    if np.any(states < 0) or np.any(states >= radices):
        raise SchemaError("level index out of range")
    return np.ravel_multi_index(tuple(states.T), schema.radices).astype(np.int64)


def decode_many(schema: FeatureSchema, indices: Iterable[int] | np.ndarray) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    if np.any(indices < 0) or np.any(indices >= schema.cardinality):
        raise SchemaError("state index out of range")
    return np.stack(np.unravel_index(indices, schema.radices), axis=-1).astype(np.int64)


def all_states(schema: FeatureSchema) -> np.ndarray:
    """Level vectors of every state, row i holding the state with index i."""
    return decode_many(schema, np.arange(schema.cardinality))


def feature_distance(
    schema: FeatureSchema, s1: Sequence[int], s2: Sequence[int]
) -> tuple[int, float]:
    """Sparsity (changed-feature count) and proximity between two states.

    Proximity adds 1 per changed nominal feature and the absolute level
    difference per ordinal feature.
    """
    schema.validate(s1)
    schema.validate(s2)
    sparsity = 0
    proximity = 0.0
    for f, a, b in zip(schema.features, s1, s2):
        if a == b:
            continue
        sparsity += 1
        proximity += abs(int(a) - int(b)) if f.kind is FeatureKind.ORDINAL else 1.0
    return sparsity, float(proximity)


def feature_distance_many(
    schema: FeatureSchema, s1: np.ndarray, s2: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    s1 = np.atleast_2d(s1)
    s2 = np.atleast_2d(s2)
    if s1.shape[-1] != len(schema) or s2.shape[-1] != len(schema):
        raise SchemaError("schema mismatch in feature_distance")
    diff = s1 != s2
    ordinal = np.array([f.kind is FeatureKind.ORDINAL for f in schema.features])
    per_feature = np.where(ordinal, np.abs(s1 - s2), diff).astype(float)
    return diff.sum(axis=-1), per_feature.sum(axis=-1)
