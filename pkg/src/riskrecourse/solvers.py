"""Greedy risk-sensitive value iteration and its variants.

Internal convention: reward = -cost and solvers maximize. A Q-value is the
mean of the branch values ``-cost + V[h+1](s')`` minus ``beta`` times their
standard deviation (``full_sigma``) or their lower partial standard deviation
(``lower_partial``, only below-mean branches count).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .mdp import RecourseMdp, TabularMdp

FULL_SIGMA = "full_sigma"
LOWER_PARTIAL = "lower_partial"
DEVIATION_MODES = (FULL_SIGMA, LOWER_PARTIAL)


class OracleLimitError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    beta: float = 0.0
    horizon: int | None = None  # None: use the MDP's horizon
    deviation_mode: str = FULL_SIGMA

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError("beta must be non-negative")
        if self.horizon is not None and self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.deviation_mode not in DEVIATION_MODES:
            raise ValueError(f"unknown deviation mode {self.deviation_mode!r}")


@dataclass(frozen=True)
class EpisodicConfig:
    initial_state: int
    max_episodes: int = 10_000
    epsilon_decay: float = 0.9995
    initial_epsilon: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.max_episodes < 1:
            raise ValueError("max_episodes must be positive")
        if not 0.0 < self.epsilon_decay < 1.0:
            raise ValueError("epsilon_decay must lie in (0, 1)")
        if not 0.0 <= self.initial_epsilon <= 1.0:
            raise ValueError("initial_epsilon must lie in [0, 1]")

    def epsilon(self, episode: int) -> float:
        return self.initial_epsilon * self.epsilon_decay**episode


@dataclass
class PolicyTable:
    """``pi[h, s]`` is the action at step h+1 (-1 where undefined);
    ``values[h, s]`` is V_{h+1}(s) and ``values[H]`` is all zeros."""

    pi: np.ndarray
    values: np.ndarray
    action_names: list[str]
    beta: float = 0.0
    deviation_mode: str = FULL_SIGMA
    variant: str = "grsvi"
    meta: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.pi.shape[0]

    @property
    def n_states(self) -> int:
        return self.pi.shape[1]

    def action(self, h: int, s: int) -> int:
        return int(self.pi[h, s])


def _tab(mdp: RecourseMdp | TabularMdp) -> TabularMdp:
    return mdp.tab if isinstance(mdp, RecourseMdp) else mdp


def branch_score(values: np.ndarray, probs: np.ndarray, beta: float, mode: str = FULL_SIGMA):
    """Risk-adjusted score over branches along axis 0.

    Returns ``(mu, deviation, score)``. The mean is accumulated relative to the
    first branch so equal-valued branches give exactly zero deviation.
    """
    v0 = values[0]
    mu = v0 + np.sum(probs * (values - v0), axis=0)
    dev = values - mu
    sq = probs * dev * dev
    if mode == LOWER_PARTIAL:
        sq = np.where(values < mu, sq, 0.0)
    elif mode != FULL_SIGMA:
        raise ValueError(f"unknown deviation mode {mode!r}")
    sigma = np.sqrt(np.sum(sq, axis=0))
    return mu, sigma, mu - beta * sigma


def q_value(mdp, s: int, a: int, next_values: np.ndarray, beta: float,
            deviation_mode: str = FULL_SIGMA) -> float:
    tab = _tab(mdp)
    outs = tab.outcomes(s, a)
    v = np.array([-o.step_cost + next_values[o.successor] for o in outs])
    p = np.array([o.probability for o in outs])
    return float(branch_score(v, p, beta, deviation_mode)[2])


def g_rsvi(mdp, config: SolverConfig = SolverConfig()) -> PolicyTable:
    """One backward sweep over steps H..1; ties go to the lowest action id."""
    tab = _tab(mdp)
    horizon = config.horizon or getattr(mdp, "horizon", None)
    if horizon is None:
        raise ValueError("horizon must be given for a bare TabularMdp")
    n, A = tab.n_states, tab.n_actions
    values = np.zeros((horizon + 1, n))
    pi = np.full((horizon, n), -1, dtype=np.int16 if A < 2**15 else np.int64)
    for h in range(horizon - 1, -1, -1):
        nxt = values[h + 1]
        best = np.full(n, -np.inf)
        arg = np.full(n, -1, dtype=np.int64)
        for a in range(A):
            app = tab.applicable[a]
            if not app.any():
                continue
            v = -tab.cost[a] + nxt[tab.succ[a]]
            _, _, q = branch_score(v, tab.prob[a], config.beta, config.deviation_mode)
            q = np.where(app, q, -np.inf)
            better = q > best
            best = np.where(better, q, best)
            arg = np.where(better, a, arg)
        values[h] = best
        pi[h] = arg
    variant = "lpsd" if config.deviation_mode == LOWER_PARTIAL else "grsvi"
    return PolicyTable(pi, values, list(tab.action_names), config.beta,
                       config.deviation_mode, variant)


@dataclass
class EpisodicResult:
    policy: PolicyTable
    episode_costs: np.ndarray
    q: dict


def g_rsevi(mdp, config: SolverConfig, episodic: EpisodicConfig) -> EpisodicResult:
    """Episodic variant exploring from one initial state.

    Each episode rolls forward H steps with epsilon-greedy selection over the
    current Q table and sampled successors, then backs up the visited
    (step, state, action) triples in reverse using the exact model branches.
    Unvisited Q entries are 0.
    """
    tab = _tab(mdp)
    horizon = config.horizon or getattr(mdp, "horizon", None)
    n, A = tab.n_states, tab.n_actions
    s0 = int(episodic.initial_state)
    if not 0 <= s0 < n:
        raise ValueError("initial state out of range")
    rng = np.random.Generator(np.random.Philox(episodic.rng_seed))
    q: dict[tuple[int, int], np.ndarray] = {}
    v: dict[tuple[int, int], float] = {}
    pi = np.full((horizon, n), -1, dtype=np.int16 if A < 2**15 else np.int64)
    acts_cache: dict[int, np.ndarray] = {}
    K = tab.succ.shape[1]

    def acts(s):
        if s not in acts_cache:
            acts_cache[s] = np.nonzero(tab.applicable[:, s])[0]
        return acts_cache[s]

    def greedy(h, s):
        qs = q.get((h, s))
        av = acts(s)
        if qs is None:
            return int(av[0])
        return int(av[int(np.argmax(qs[av]))])

    costs = np.empty(episodic.max_episodes)
    for k in range(episodic.max_episodes):
        eps = episodic.epsilon(k)
        s = s0
        trace = []
        total = 0.0
        for h in range(horizon):
            av = acts(s)
            if rng.random() < eps:
                a = int(av[rng.integers(len(av))])
            else:
                a = greedy(h, s)
            trace.append((s, a))
            total += tab.cost[a, s]
            u = rng.random()
            acc = 0.0
            nxt = int(tab.succ[a, K - 1, s])
            for b in range(K):
                p = tab.prob[a, b, s]
                if p <= 0.0:
                    continue
                acc += p
                nxt = int(tab.succ[a, b, s])
                if u < acc:
                    break
            s = nxt
        costs[k] = total
        for h in range(horizon - 1, -1, -1):
            s, a = trace[h]
            branch_v = np.array([-tab.cost[a, s] + v.get((h + 1, int(tab.succ[a, b, s])), 0.0)
                                 for b in range(K)])
            score = branch_score(branch_v, tab.prob[a, :, s], config.beta,
                                 config.deviation_mode)[2]
            qs = q.setdefault((h, s), np.zeros(A))
            qs[a] = float(score)
            av = acts(s)
            best = int(av[int(np.argmax(qs[av]))])
            v[(h, s)] = float(qs[best])
            pi[h, s] = best
    values = np.zeros((horizon + 1, n))
    for (h, s), val in v.items():
        values[h, s] = val
    variant = "grsevi"
    policy = PolicyTable(pi, values, list(tab.action_names), config.beta,
                         config.deviation_mode, variant,
                         {"episodes": episodic.max_episodes, "epsilon_decay": episodic.epsilon_decay,
                          "initial_epsilon": episodic.initial_epsilon, "seed": episodic.rng_seed,
                          "initial_state": s0})
    return EpisodicResult(policy, costs, q)


def resolve_action(tab: TabularMdp, policy: PolicyTable, h: int, s: int) -> int:
    """Policy action, falling back to the lowest applicable action id (the
    greedy choice over an all-zero Q row) where the policy is undefined."""
    a = int(policy.pi[h, s])
    if a < 0 or not tab.applicable[a, s]:
        a = int(np.argmax(tab.applicable[:, s]))
    return a


# ---------------------------------------------------------------------------
# exact small-instance evaluation (test oracles)


def cost_distribution(mdp, policy: PolicyTable | np.ndarray, s0: int,
                      exact: bool = False) -> dict:
    """Exact distribution of total cost over the horizon, ``{cost: prob}``.

    With ``exact=True`` probabilities and costs are carried as Fractions of
    the stored floats, so the result has no rounding.
    """
    tab = _tab(mdp)
    pi = policy.pi if isinstance(policy, PolicyTable) else np.asarray(policy)
    conv = Fraction if exact else float
    frontier = {(int(s0), conv(0)): conv(1)}
    for h in range(pi.shape[0]):
        nxt: dict = {}
        for (s, c), p in frontier.items():
            a = int(pi[h, s])
            if a < 0 or not tab.applicable[a, s]:
                a = int(np.argmax(tab.applicable[:, s]))
            step = conv(float(tab.cost[a, s]))
            for b in range(tab.succ.shape[1]):
                pb = float(tab.prob[a, b, s])
                if pb <= 0.0:
                    continue
                key = (int(tab.succ[a, b, s]), c + step)
                nxt[key] = nxt.get(key, conv(0)) + p * conv(pb)
        frontier = nxt
    dist: dict = {}
    for (_, c), p in frontier.items():
        dist[c] = dist.get(c, 0) + p
    return dist


def distribution_moments(dist: dict):
    mean = sum(c * p for c, p in dist.items())
    var = sum(p * (c - mean) ** 2 for c, p in dist.items())
    return mean, var


def objective(mean_cost: float, var_cost: float, beta: float) -> float:
    """Mean-minus-beta-sigma value of the total reward (= -cost)."""
    return -mean_cost - beta * math.sqrt(max(var_cost, 0.0))


@dataclass
class OracleResult:
    policy: PolicyTable
    objective: float
    mean_cost: float
    var_cost: float
    n_policies: int


def _reachable(tab: TabularMdp, s0: int, horizon: int) -> list[set[int]]:
    reach = [{int(s0)}]
    for _ in range(horizon - 1):
        nxt = set()
        for s in reach[-1]:
            for a in np.nonzero(tab.applicable[:, s])[0]:
                for b in range(tab.succ.shape[1]):
                    if tab.prob[a, b, s] > 0:
                        nxt.add(int(tab.succ[a, b, s]))
        reach.append(nxt)
    return reach


_ORACLE_TIE_TOL = 1e-6
_ORACLE_MAX_CANDIDATES = 64


def enumerate_policies_oracle(mdp, s0: int, beta: float, horizon: int | None = None,
                              max_policies: int = 2_000_000, chunk: int = 50_000) -> OracleResult:
    """Exhaustive search over per-step deterministic policies for the best
    mean-minus-beta-sigma objective of the total cost from ``s0``.

    Only (step, state) pairs reachable from ``s0`` under some policy are
    enumerated; elsewhere the lowest applicable action is used.
    """
    tab = _tab(mdp)
    horizon = horizon or getattr(mdp, "horizon", None)
    n_real = tab.n_actions - 1
    if tab.n_states > 8 or n_real > 3 or horizon > 4:
        raise OracleLimitError("oracle is limited to |S| <= 8, |A| <= 3, H <= 4")
    reach = _reachable(tab, s0, horizon)
    base = np.argmax(tab.applicable, axis=0)
    points, choices = [], []
    for h in range(horizon):
        for s in sorted(reach[h]):
            av = np.nonzero(tab.applicable[:, s])[0]
            if len(av) > 1:
                points.append((h, s))
                choices.append(av)
    total = 1
    for c in choices:
        total *= len(c)
    if total > max_policies:
        raise OracleLimitError(f"{total} policies exceed the enumeration limit")
    radices = [len(c) for c in choices]
    cands: list = []
    K = tab.succ.shape[1]
    for start in range(0, total, chunk):
        ids = np.arange(start, min(total, start + chunk))
        B = len(ids)
        pis = np.broadcast_to(base, (B, horizon, tab.n_states)).copy()
        if points:
            digits = np.unravel_index(ids, radices) if radices else ()
            for j, (h, s) in enumerate(points):
                pis[:, h, s] = choices[j][digits[j]]
        m1 = np.zeros((B, tab.n_states))
        m2 = np.zeros((B, tab.n_states))
        states = np.arange(tab.n_states)
        for h in range(horizon - 1, -1, -1):
            a = pis[:, h, :]
            c = tab.cost[a, states]
            n1 = np.zeros_like(m1)
            n2 = np.zeros_like(m2)
            for b in range(K):
                pb = tab.prob[a, b, states]
                nx = tab.succ[a, b, states]
                f1 = np.take_along_axis(m1, nx, axis=1)
                f2 = np.take_along_axis(m2, nx, axis=1)
                n1 += pb * (c + f1)
                n2 += pb * (c * c + 2 * c * f1 + f2)
            m1, m2 = n1, n2
        mean = m1[:, s0]
        var = np.maximum(m2[:, s0] - mean**2, 0.0)
        obj = -mean - beta * np.sqrt(var)
        # the square root magnifies rounding in var near zero, so keep every
        # near-best policy and rank the survivors exactly at the end
        near = np.nonzero(obj >= obj.max() - _ORACLE_TIE_TOL)[0]
        near = near[np.lexsort((near, -obj[near]))][:_ORACLE_MAX_CANDIDATES]
        cands += [(float(obj[i]), int(ids[i]), pis[i].copy()) for i in near]
        top = max(c[0] for c in cands)
        cands = sorted((c for c in cands if c[0] >= top - _ORACLE_TIE_TOL),
                       key=lambda c: (-c[0], c[1]))[:_ORACLE_MAX_CANDIDATES]
    best = None
    for _, _, cand in cands:
        m, v = distribution_moments(cost_distribution(tab, cand, s0, exact=True))
        o = objective(float(m), float(v), beta)
        if best is None or o > best[0]:
            best = (o, cand, float(m), float(v))
    obj, pi, mean, var = best
    values = np.full((horizon + 1, tab.n_states), np.nan)
    values[horizon] = 0.0
    policy = PolicyTable(pi.astype(np.int16), values, list(tab.action_names), beta,
                         FULL_SIGMA, "oracle", {"initial_state": int(s0)})
    return OracleResult(policy, obj, mean, var, total)


def enumerate_all_policies(mdp, s0: int, horizon: int):
    """Yield every policy array the oracle considers (small instances only)."""
    tab = _tab(mdp)
    reach = _reachable(tab, s0, horizon)
    base = np.argmax(tab.applicable, axis=0)
    points = [(h, s) for h in range(horizon) for s in sorted(reach[h])
              if tab.applicable[:, s].sum() > 1]
    options = [np.nonzero(tab.applicable[:, s])[0] for _, s in points]
    for combo in itertools.product(*options):
        pi = np.broadcast_to(base, (horizon, tab.n_states)).copy()
        for (h, s), a in zip(points, combo):
            pi[h, s] = a
        yield pi
