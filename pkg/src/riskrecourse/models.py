"""Black-box decision functions over discrete states.

Solvers and evaluation only ever call ``classify`` / ``predict``; nothing
downstream reads model internals.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Sequence

import numpy as np

from .schema import FeatureKind, FeatureSchema, SchemaError

MODEL_FORMAT = "riskrecourse-model"
MODEL_VERSION = 1

OP_LE = 0  # ordinal split: left branch when level <= split level
OP_EQ = 1  # nominal split: left branch when level == split level


class Outcome(IntEnum):
    UNFAVORABLE = 0
    FAVORABLE = 1


class ModelFileError(ValueError):
    pass


class DegenerateDataError(ValueError):
    pass


class DecisionModel:
    """Interface: a deterministic map from states to outcomes."""

    schema: FeatureSchema

    def predict(self, states: np.ndarray) -> np.ndarray:
        """Boolean favorable mask for an (n, n_features) array of level indices."""
        raise NotImplementedError

    def classify(self, state: Sequence[int]) -> Outcome:
        self.schema.validate(state)
        fav = bool(self.predict(np.asarray([state], dtype=np.int64))[0])
        return Outcome.FAVORABLE if fav else Outcome.UNFAVORABLE


def classify(model: DecisionModel, state: Sequence[int]) -> Outcome:
    return model.classify(state)


_COMPARATORS = {
    "==": np.equal,
    "!=": np.not_equal,
    ">=": np.greater_equal,
    "<=": np.less_equal,
    ">": np.greater,
    "<": np.less,
}


@dataclass(frozen=True)
class Condition:
    feature: str
    comparator: str
    level: str


class RuleModel(DecisionModel):
    """Favorable iff any rule matches; a rule is a conjunction of conditions.

    Comparators on ordinal features compare level indices, so ``Savings >= Rich``
    holds for Rich and anything above it.
    """

    def __init__(self, schema: FeatureSchema, rules: Sequence[Sequence[Condition]]):
        self.schema = schema
        self.rules = [tuple(Condition(*c) if not isinstance(c, Condition) else c for c in r)
                      for r in rules]
        self._compiled = []
        for rule in self.rules:
            compiled = []
            for cond in rule:
                if cond.comparator not in _COMPARATORS:
                    raise SchemaError(f"unknown comparator {cond.comparator!r}")
                fi = schema.index_of(cond.feature)
                compiled.append((fi, _COMPARATORS[cond.comparator],
                                 schema.features[fi].level_index(cond.level)))
            self._compiled.append(compiled)

    def predict(self, states):
        states = np.asarray(states, dtype=np.int64)
        out = np.zeros(len(states), dtype=bool)
        for compiled in self._compiled:
            match = np.ones(len(states), dtype=bool)
            for fi, op, lv in compiled:
                match &= op(states[:, fi], lv)
            out |= match
        return out

    def to_dict(self) -> dict:
        return {
            "type": "rules",
            "rules": [[[c.feature, c.comparator, c.level] for c in r] for r in self.rules],
        }


@dataclass
class Tree:
    feature: np.ndarray
    op: np.ndarray
    level: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_class: np.ndarray  # -1 for internal nodes

    def predict(self, states: np.ndarray) -> np.ndarray:
        node = np.zeros(len(states), dtype=np.int64)
        active = self.leaf_class[node] < 0
        while active.any():
            idx = np.nonzero(active)[0]
            nd = node[idx]
            x = states[idx, self.feature[nd]]
            go_left = np.where(self.op[nd] == OP_LE, x <= self.level[nd], x == self.level[nd])
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active[idx] = self.leaf_class[node[idx]] < 0
        return self.leaf_class[node]

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist()
                for k in ("feature", "op", "level", "left", "right", "leaf_class")}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(**{k: np.asarray(d[k], dtype=np.int64)
                      for k in ("feature", "op", "level", "left", "right", "leaf_class")})


class TreeEnsembleModel(DecisionModel):
    """Majority vote of binary trees; favorable iff the favorable vote fraction
    strictly exceeds ``threshold`` (exact ties go to unfavorable)."""

    def __init__(self, schema: FeatureSchema, trees: list[Tree], threshold: float = 0.5,
                 metadata: dict | None = None):
        if not trees:
            raise ValueError("ensemble needs at least one tree")
        self.schema = schema
        self.trees = trees
        self.threshold = float(threshold)
        self.metadata = dict(metadata or {})
        radices = np.asarray(schema.radices)
        for t in trees:
            internal = t.leaf_class < 0
            if np.any(t.feature[internal] >= len(schema)) or np.any(
                t.level[internal] >= radices[t.feature[internal]]
            ):
                raise SchemaError("tree split references an invalid feature or level")

    @property
    def holdout_accuracy(self) -> float | None:
        return self.metadata.get("holdout_accuracy")

    def votes(self, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=np.int64)
        total = np.zeros(len(states), dtype=np.int64)
        for t in self.trees:
            total += t.predict(states)
        return total

    def predict(self, states):
        votes = self.votes(states)
        # integer comparison keeps the tie rule exact
        return votes * 1.0 > self.threshold * len(self.trees)

    def to_dict(self) -> dict:
        return {
            "type": "tree_ensemble",
            "threshold": self.threshold,
            "metadata": self.metadata,
            "trees": [t.to_dict() for t in self.trees],
        }


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class EnsembleConfig:
    n_trees: int = 50
    max_depth: int = 8
    feature_subsample: float | None = None  # fraction of features per split; None = sqrt
    seed: int = 0
    test_fraction: float = 0.2
    min_samples_split: int = 2


def _gini(pos: np.ndarray, n: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(n > 0, pos / n, 0.0)
    return 2.0 * p * (1.0 - p)


def _best_split(x: np.ndarray, y: np.ndarray, features: np.ndarray, kinds: list[FeatureKind],
                radices: Sequence[int]):
    n = len(y)
    best = None
    best_score = np.inf
    for f in features:
        k = radices[f]
        counts = np.bincount(x[:, f], minlength=k)
        pos = np.bincount(x[:, f], weights=y, minlength=k)
        if kinds[f] is FeatureKind.ORDINAL:
            n_left = np.cumsum(counts)[:-1]
            pos_left = np.cumsum(pos)[:-1]
            op = OP_LE
        else:
            n_left = counts
            pos_left = pos
            op = OP_EQ
        n_right = n - n_left
        pos_right = pos.sum() - pos_left
        valid = (n_left > 0) & (n_right > 0)
        if not valid.any():
            continue
        score = n_left * _gini(pos_left, n_left) + n_right * _gini(pos_right, n_right)
        score = np.where(valid, score, np.inf)
        lv = int(np.argmin(score))
        if score[lv] < best_score - 1e-12:
            best_score = float(score[lv])
            best = (int(f), op, lv)
    return best, best_score


def _grow_tree(x, y, schema: FeatureSchema, cfg: EnsembleConfig, rng: np.random.Generator) -> Tree:
    kinds = [f.kind for f in schema.features]
    radices = schema.radices
    d = len(schema)
    if cfg.feature_subsample is None:
        m = max(1, int(round(math.sqrt(d))))
    else:
        m = max(1, int(round(cfg.feature_subsample * d)))
    feature, op, level, left, right, leaf = [], [], [], [], [], []

    def new_node():
        for lst in (feature, op, level, left, right):
            lst.append(0)
        leaf.append(-1)
        return len(leaf) - 1

    stack = [(new_node(), np.arange(len(y)), 0)]
    while stack:
        node, rows, depth = stack.pop()
        yr = y[rows]
        n_pos = int(yr.sum())
        majority = 1 if 2 * n_pos > len(rows) else 0
        if depth >= cfg.max_depth or len(rows) < cfg.min_samples_split or n_pos in (0, len(rows)):
            leaf[node] = majority
            continue
        feats = np.sort(rng.choice(d, size=m, replace=False))
        split, score = _best_split(x[rows], yr, feats, kinds, radices)
        parent = len(rows) * _gini(np.array([n_pos]), np.array([len(rows)]))[0]
        if split is None or score >= parent - 1e-12:
            leaf[node] = majority
            continue
        f, o, lv = split
        col = x[rows, f]
        mask = col <= lv if o == OP_LE else col == lv
        feature[node], op[node], level[node] = f, o, lv
        lnode, rnode = new_node(), new_node()
        left[node], right[node] = lnode, rnode
        stack.append((rnode, rows[~mask], depth + 1))
        stack.append((lnode, rows[mask], depth + 1))
    return Tree(*(np.asarray(a, dtype=np.int64) for a in (feature, op, level, left, right, leaf)))


def train_tree_ensemble(
    schema: FeatureSchema, x: np.ndarray, y: np.ndarray, config: EnsembleConfig = EnsembleConfig()
) -> TreeEnsembleModel:
    """Bagged gini trees over level indices, with a seeded held-out split.

    The held-out accuracy is stored in ``model.metadata["holdout_accuracy"]``.
    """
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[1] != len(schema) or len(x) != len(y):
        raise SchemaError("training rows do not match the schema")
    if np.any(x < 0) or np.any(x >= np.asarray(schema.radices)):
        raise SchemaError("training rows contain out-of-range level indices")
    if len(np.unique(y)) < 2:
        raise DegenerateDataError("training data contains a single class")
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(len(y))
    n_test = int(round(config.test_fraction * len(y)))
    test, train = perm[:n_test], perm[n_test:]
    xt, yt = x[train], y[train]
    if len(np.unique(yt)) < 2:
        raise DegenerateDataError("training split contains a single class")
    trees = []
    for _ in range(config.n_trees):
        boot = rng.integers(0, len(yt), size=len(yt))
        trees.append(_grow_tree(xt[boot], yt[boot], schema, config, rng))
    meta = {
        "n_trees": config.n_trees,
        "max_depth": config.max_depth,
        "feature_subsample": config.feature_subsample,
        "seed": config.seed,
        "n_train": int(len(train)),
        "n_test": int(n_test),
    }
    model = TreeEnsembleModel(schema, trees, 0.5, meta)
    if n_test:
        acc = float(np.mean(model.predict(x[test]) == (y[test] == 1)))
        model.metadata["holdout_accuracy"] = acc
    return model


# ---------------------------------------------------------------------------
# persistence


def model_to_dict(model: DecisionModel) -> dict:
    body = model.to_dict()
    return {"format": MODEL_FORMAT, "version": MODEL_VERSION,
            "schema_hash": model.schema.hash(), **body}


def model_from_dict(schema: FeatureSchema, d: dict) -> DecisionModel:
    if not isinstance(d, dict) or d.get("format") != MODEL_FORMAT:
        raise ModelFileError("not a model file")
    if d.get("version") != MODEL_VERSION:
        raise ModelFileError(f"unsupported model file version {d.get('version')!r}")
    if d.get("schema_hash") not in (None, schema.hash()):
        raise ModelFileError("model was built for a different schema")
    try:
        if d["type"] == "rules":
            return RuleModel(schema, [[Condition(*c) for c in r] for r in d["rules"]])
        if d["type"] == "tree_ensemble":
            trees = [Tree.from_dict(t) for t in d["trees"]]
            return TreeEnsembleModel(schema, trees, d["threshold"], d.get("metadata"))
    except (KeyError, TypeError) as exc:
        raise ModelFileError(f"malformed model file: {exc}") from None
    raise ModelFileError(f"unknown model type {d.get('type')!r}")


def save_model(model: DecisionModel, path: str | Path) -> None:
    text = json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":"))
    Path(path).write_text(text + "\n")


def load_model(schema: FeatureSchema, path: str | Path) -> DecisionModel:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"malformed model file {path}: {exc}") from None
    return model_from_dict(schema, d)
