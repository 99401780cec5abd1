"""Finite-horizon recourse MDPs built from a schema, action models and a
decision model.

Every action changes one actionable feature. It succeeds with probability p
(primary effect plus success-conditioned side effects) and otherwise leaves
the state unchanged, unless the action declares an explicit failure effect.
The action cost is paid on every attempt. Favorable states carry a single
zero-cost self-loop (``noop``).

Solvers work on :class:`TabularMdp`, a dense array view with one row per
action (noop last), a fixed number of outcome branches and per-state costs.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .models import DecisionModel
from .schema import (
    FeatureKind,
    FeatureSchema,
    Mutability,
    SchemaError,
    all_states,
    decode_state,
    encode_many,
    encode_state,
)

log = logging.getLogger(__name__)

NOOP = "noop"


class ContractError(ValueError):
    """An operation was called outside its precondition."""


@dataclass(frozen=True)
class Effect:
    feature: str
    mode: str  # "set" | "increment" | "decrement"
    level: str | None = None

    def __post_init__(self):
        if self.mode not in ("set", "increment", "decrement"):
            raise SchemaError(f"unknown effect mode {self.mode!r}")
        if self.mode == "set" and self.level is None:
            raise SchemaError(f"set effect on {self.feature!r} needs a level")


@dataclass(frozen=True)
class ActionSpec:
    name: str
    cost: float
    effect: Effect
    success_prob: float | Mapping[str, float] = 1.0
    side_effects: tuple[Effect, ...] = ()
    failure_effect: Effect | None = None
    requires: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "side_effects", tuple(self.side_effects))
        object.__setattr__(self, "requires", tuple(tuple(r) for r in self.requires))
        if isinstance(self.success_prob, Mapping):
            object.__setattr__(self, "success_prob", dict(self.success_prob))
            probs = list(self.success_prob.values())
        else:
            object.__setattr__(self, "success_prob", float(self.success_prob))
            probs = [self.success_prob]
        if not self.name or self.name == NOOP:
            raise SchemaError(f"invalid action name {self.name!r}")
        if not self.cost > 0:
            raise SchemaError(f"action {self.name!r}: cost must be positive")
        if not probs or any(not 0.0 < float(p) <= 1.0 for p in probs):
            raise SchemaError(f"action {self.name!r}: probabilities must lie in (0, 1]")

    def validate(self, schema: FeatureSchema) -> None:
        prim = schema.feature(self.effect.feature)
        if prim.mutability is not Mutability.ACTIONABLE:
            raise SchemaError(
                f"action {self.name!r} targets non-actionable feature {prim.name!r}")
        if self.effect.mode == "set":
            prim.level_index(self.effect.level)
        elif prim.kind is not FeatureKind.ORDINAL:
            raise SchemaError(f"action {self.name!r}: step effects need an ordinal feature")
        if isinstance(self.success_prob, dict):
            for lv in self.success_prob:
                prim.level_index(lv)
        for eff in self.side_effects + ((self.failure_effect,) if self.failure_effect else ()):
            f = schema.feature(eff.feature)
            if f.mutability is Mutability.IMMUTABLE:
                raise SchemaError(f"action {self.name!r} changes immutable feature {f.name!r}")
            if eff.mode == "set":
                f.level_index(eff.level)
            elif f.kind is not FeatureKind.ORDINAL:
                raise SchemaError(f"action {self.name!r}: step effects need an ordinal feature")
        for fname, lv in self.requires:
            schema.feature(fname).level_index(lv)


@dataclass(frozen=True)
class TransitionOutcome:
    successor: int
    probability: float
    step_cost: float


@dataclass
class TabularMdp:
    """Dense solver view.

    ``succ``/``prob`` have shape (A, K, S): K outcome branches per action and
    state (zero-probability branches are padding). ``cost`` is (A, S) and
    ``applicable`` is (A, S). Action ``A - 1`` is the noop.
    """

    succ: np.ndarray
    prob: np.ndarray
    cost: np.ndarray
    applicable: np.ndarray
    goal: np.ndarray
    action_names: list[str]

    @property
    def n_states(self) -> int:
        return self.succ.shape[2]

    @property
    def n_actions(self) -> int:
        return self.succ.shape[0]

    @property
    def noop(self) -> int:
        return self.n_actions - 1

    def applicable_actions(self, s: int) -> list[int]:
        return [int(a) for a in np.nonzero(self.applicable[:, s])[0]]

    def outcomes(self, s: int, a: int) -> list[TransitionOutcome]:
        if not self.applicable[a, s]:
            raise ContractError(f"action {self.action_names[a]!r} not applicable in state {s}")
        merged: dict[int, float] = {}
        for k in range(self.succ.shape[1]):
            p = float(self.prob[a, k, s])
            if p > 0.0:
                nxt = int(self.succ[a, k, s])
                merged[nxt] = merged.get(nxt, 0.0) + p
        c = float(self.cost[a, s])
        return [TransitionOutcome(n, p, c) for n, p in merged.items()]

    def check(self, atol: float = 1e-12) -> None:
        totals = self.prob.sum(axis=1)
        bad = self.applicable & (np.abs(totals - 1.0) > atol)
        if bad.any():
            a, s = map(int, np.argwhere(bad)[0])
            raise ContractError(f"probabilities of ({s}, {self.action_names[a]}) sum to {totals[a, s]}")


class RecourseMdp:
    """The recourse MDP for one schema, action model, decision model and horizon.

    Goal detection runs once for the whole state space at construction, so all
    later queries are read-only.
    """

    def __init__(
        self,
        schema: FeatureSchema,
        actions: Sequence[ActionSpec],
        model: DecisionModel,
        horizon: int,
        goal_restriction: Iterable[int] | None = None,
        name: str = "",
    ):
        if horizon < 1:
            raise SchemaError("horizon must be >= 1")
        names = [a.name for a in actions]
        if len(set(names)) != len(names):
            raise SchemaError("action names must be unique")
        for a in actions:
            a.validate(schema)
        self.schema = schema
        self.actions = list(actions)
        self.model = model
        self.horizon = int(horizon)
        self.name = name
        self.goal_restriction = (
            None if goal_restriction is None else frozenset(int(s) for s in goal_restriction)
        )
        self.levels = all_states(schema)
        fav = np.asarray(model.predict(self.levels), dtype=bool)
        if self.goal_restriction is not None:
            allowed = np.zeros(schema.cardinality, dtype=bool)
            allowed[list(self.goal_restriction)] = True
            fav &= allowed
        self.goal = fav
        self.tab = self._build_tables()
        self.dead_end = ~self.goal & ~self.tab.applicable[:-1].any(axis=0)
        if self.dead_end.any():
            log.info("%s: %d non-goal states have no applicable action; "
                        "they self-loop at the cheapest action cost",
                        name or "mdp", int(self.dead_end.sum()))

    @property
    def n_states(self) -> int:
        return self.schema.cardinality

    @property
    def action_names(self) -> list[str]:
        return self.tab.action_names

    @property
    def noop(self) -> int:
        return self.tab.noop

    def action_id(self, name: str) -> int:
        try:
            return self.action_names.index(name)
        except ValueError:
            raise SchemaError(f"unknown action {name!r}") from None

    def _apply(self, levels: np.ndarray, eff: Effect) -> np.ndarray:
        fi = self.schema.index_of(eff.feature)
        f = self.schema.features[fi]
        out = levels.copy()
        if eff.mode == "set":
            out[:, fi] = f.level_index(eff.level)
        elif eff.mode == "increment":
            out[:, fi] = np.minimum(out[:, fi] + 1, f.n_levels - 1)
        else:
            out[:, fi] = np.maximum(out[:, fi] - 1, 0)
        return out

    def _build_tables(self) -> TabularMdp:
        n = self.schema.cardinality
        m = len(self.actions)
        idx = np.arange(n, dtype=np.int64)
        succ = np.empty((m + 1, 2, n), dtype=np.int64)
        prob = np.zeros((m + 1, 2, n))
        cost = np.zeros((m + 1, n))
        applicable = np.zeros((m + 1, n), dtype=bool)
        lv = self.levels
        for a, spec in enumerate(self.actions):
            fi = self.schema.index_of(spec.effect.feature)
            f = self.schema.features[fi]
            cur = lv[:, fi]
            if spec.effect.mode == "set":
                target = np.full(n, f.level_index(spec.effect.level))
                ok = cur != target
            elif spec.effect.mode == "increment":
                target = cur + 1
                ok = cur < f.n_levels - 1
            else:
                target = cur - 1
                ok = cur > 0
            for fname, req in spec.requires:
                ok &= lv[:, self.schema.index_of(fname)] == self.schema.feature(fname).level_index(req)
            if isinstance(spec.success_prob, dict):
                table = np.zeros(f.n_levels)
                for label, pv in spec.success_prob.items():
                    table[f.level_index(label)] = pv
                p = table[np.clip(target, 0, f.n_levels - 1)]
                # targets without a listed probability are not attemptable
                ok &= p > 0
            else:
                p = np.full(n, spec.success_prob)
            ok &= ~self.goal
            after = lv.copy()
            after[:, fi] = np.clip(target, 0, f.n_levels - 1)
            for eff in spec.side_effects:
                after = self._apply(after, eff)
            fail = idx
            if spec.failure_effect is not None:
                fail = encode_many(self.schema, self._apply(lv, spec.failure_effect))
            succ[a, 0] = encode_many(self.schema, after)
            succ[a, 1] = fail
            prob[a, 0] = np.where(ok, p, 0.0)
            prob[a, 1] = np.where(ok, 1.0 - p, 0.0)
            cost[a] = np.where(ok, spec.cost, 0.0)
            applicable[a] = ok
        any_action = applicable[:m].any(axis=0)
        dead = ~self.goal & ~any_action
        min_cost = min((s.cost for s in self.actions), default=1.0)
        succ[m, 0] = idx
        succ[m, 1] = idx
        prob[m, 0] = np.where(self.goal | dead, 1.0, 0.0)
        cost[m] = np.where(dead, min_cost, 0.0)
        applicable[m] = self.goal | dead
        names = [s.name for s in self.actions] + [NOOP]
        return TabularMdp(succ, prob, cost, applicable, self.goal.copy(), names)

    def state_index(self, state) -> int:
        if isinstance(state, (int, np.integer)):
            if not 0 <= int(state) < self.n_states:
                raise SchemaError(f"state index {state} out of range")
            return int(state)
        return encode_state(self.schema, self.schema.state(state))

    def describe(self, s: int) -> dict[str, str]:
        return self.schema.labels(decode_state(self.schema, s))


def applicable_actions(mdp: RecourseMdp, s: int) -> list[int]:
    s = mdp.state_index(s)
    if mdp.dead_end[s]:
        log.warning("state %d is a dead end", s)
    return mdp.tab.applicable_actions(s)


def transitions(mdp: RecourseMdp, s: int, a: int | str) -> list[TransitionOutcome]:
    s = mdp.state_index(s)
    if isinstance(a, str):
        a = mdp.action_id(a)
    return mdp.tab.outcomes(s, a)


def is_goal(mdp: RecourseMdp, s: int) -> bool:
    return bool(mdp.goal[mdp.state_index(s)])
