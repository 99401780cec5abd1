"""Monte-Carlo evaluation of recourse policies and the risk measures reported
on the simulated cost samples.

Random numbers come from numpy's counter-based Philox generator. Instance i of
an evaluation (its position in the instance list) draws from
``Generator(Philox(seed + i))``: one uniform per step and trial, as an
``(n_trials, H)`` matrix. A rollout takes the success branch when its uniform
is below the success probability. The result is therefore independent of how
instances are split across workers.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .mdp import RecourseMdp, TabularMdp
from .schema import feature_distance_many
from .solvers import PolicyTable

log = logging.getLogger(__name__)

DEFAULT_ALPHAS = (0.80, 0.95)
MEASURES = ("rho_H", "mu_cost", "sigma2_cost", "sparsity", "proximity")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


# ---------------------------------------------------------------------------
# risk measures


def var_alpha(costs: Sequence[float], alpha: float) -> float:
    """Smallest sample value whose empirical CDF reaches ``alpha``."""
    x = np.sort(np.asarray(costs, dtype=float))
    if x.size == 0:
        raise ValueError("VaR of an empty sample")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    # round first so that e.g. 0.8 * 10 counts as exactly 8 samples
    k = max(1, math.ceil(round(alpha * x.size, 9)))
    return float(x[k - 1])


def cvar_alpha(costs: Sequence[float], alpha: float) -> float | None:
    """Mean of the samples strictly above VaR, or None if there are none."""
    x = np.asarray(costs, dtype=float)
    var = var_alpha(x, alpha)
    tail = x[x > var]
    if tail.size == 0:
        return None
    return float(tail.mean())


# ---------------------------------------------------------------------------
# rollouts


@dataclass
class RolloutRecord:
    initial: int
    trace: list[tuple[int, int, float, int]]  # (state, action, step cost, successor)
    total_cost: float
    succeeded: bool
    steps_to_goal: int | None


def _tab(mdp) -> TabularMdp:
    return mdp.tab if isinstance(mdp, RecourseMdp) else mdp


def resolved_actions(tab: TabularMdp, policy: PolicyTable) -> np.ndarray:
    """The policy with undefined or inapplicable entries replaced by the
    lowest applicable action (the greedy pick over an all-zero Q row)."""
    if policy.n_states != tab.n_states:
        raise ValueError(f"policy covers {policy.n_states} states, MDP has {tab.n_states}")
    pi = policy.pi.astype(np.int64)
    fallback = np.argmax(tab.applicable, axis=0)
    cols = np.arange(tab.n_states)
    ok = (pi >= 0) & tab.applicable[np.clip(pi, 0, None), cols[None, :]]
    return np.where(ok, pi, fallback[None, :])


def rollout(mdp, policy: PolicyTable, s0: int, rng: np.random.Generator,
            horizon: int | None = None) -> RolloutRecord:
    """One simulated recourse attempt. Draws ``rng.random(H)`` up front, the
    same stream layout as :func:`simulate`."""
    tab = _tab(mdp)
    H = horizon or policy.horizon
    u = rng.random(H)
    s = int(s0)
    trace = []
    total = 0.0
    steps = 0 if tab.goal[s] else None
    for h in range(H):
        if tab.goal[s]:
            break
        a = int(policy.pi[h, s])
        if a < 0 or not tab.applicable[a, s]:
            a = int(np.argmax(tab.applicable[:, s]))
        c = float(tab.cost[a, s])
        nxt = int(tab.succ[a, 0, s] if u[h] < tab.prob[a, 0, s] else tab.succ[a, 1, s])
        trace.append((s, a, c, nxt))
        total += c
        s = nxt
        if tab.goal[s]:
            steps = h + 1
    return RolloutRecord(int(s0), trace, total, bool(tab.goal[s]), steps)


def simulate(tab: TabularMdp, pi: np.ndarray, starts: np.ndarray, u: np.ndarray):
    """Vectorized rollouts. ``pi`` must be resolved (see :func:`resolved_actions`),
    ``u`` has one row of H uniforms per start. Returns final states, total
    costs and the step at which the goal was first reached (-1 if never)."""
    s = np.asarray(starts, dtype=np.int64).copy()
    cost = np.zeros(len(s))
    hit = np.where(tab.goal[s], 0, -1)
    for h in range(u.shape[1]):
        a = pi[h, s]
        cost += np.where(tab.goal[s], 0.0, tab.cost[a, s])
        ok = u[:, h] < tab.prob[a, 0, s]
        s = np.where(ok, tab.succ[a, 0, s], tab.succ[a, 1, s])
        hit = np.where((hit < 0) & tab.goal[s], h + 1, hit)
    return s, cost, hit


# ---------------------------------------------------------------------------
# reports


@dataclass
class RiskReport:
    rho_H: float
    mu_cost: float
    sigma2_cost: float
    var_at: dict[float, float]
    cvar_at: dict[float, float | None]
    sparsity: float | None
    proximity: float | None
    n_trials: int
    rng_seed: int
    instance: int | None = None  # state index, None for aggregates

    def value(self, measure: str) -> float | None:
        """Look up a measure by column name (``var_95``, ``cvar_80``, ``mu_cost``...)."""
        if measure.startswith(("var_", "cvar_")):
            kind, pct = measure.split("_")
            alpha = _alpha_from_pct(pct, self.var_at)
            return (self.var_at if kind == "var" else self.cvar_at)[alpha]
        return getattr(self, measure)

    def columns(self) -> list[str]:
        cols = ["rho_H", "mu_cost", "sigma2_cost"]
        for a in self.var_at:
            cols += [f"var_{alpha_tag(a)}", f"cvar_{alpha_tag(a)}"]
        return cols + ["sparsity", "proximity"]


def alpha_tag(alpha: float) -> str:
    pct = round(alpha * 100, 6)
    return f"{pct:g}".replace(".", "p")


def _alpha_from_pct(tag: str, keys) -> float:
    for a in keys:
        if alpha_tag(a) == tag:
            return a
    raise KeyError(f"no alpha matching {tag!r}")


@dataclass
class Evaluation:
    """Per-instance reports plus their unweighted mean."""

    instances: list[RiskReport]
    aggregate: RiskReport
    alphas: tuple[float, ...]
    skipped: list[int] = field(default_factory=list)
    costs: np.ndarray | None = None  # (n_instances, n_trials) cost samples


def _instance_report(costs, final, start_levels, final_levels, hit, alphas, schema, s0, seed):
    ok = hit >= 0
    if ok.any():
        sp, px = feature_distance_many(schema, start_levels, final_levels[ok])
        sparsity, proximity = float(sp.mean()), float(px.mean())
    else:
        sparsity = proximity = None
    return RiskReport(
        rho_H=float(ok.mean()),
        mu_cost=float(costs.mean()),
        sigma2_cost=float(costs.var()),
        var_at={a: var_alpha(costs, a) for a in alphas},
        cvar_at={a: cvar_alpha(costs, a) for a in alphas},
        sparsity=sparsity,
        proximity=proximity,
        n_trials=len(costs),
        rng_seed=seed,
        instance=int(s0),
    )


def aggregate(reports: Sequence[RiskReport], alphas: Sequence[float], seed: int) -> RiskReport:
    def mean(vals):
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    if not reports:
        nan = float("nan")
        return RiskReport(nan, nan, nan, {a: nan for a in alphas}, {a: None for a in alphas},
                          None, None, 0, seed)
    return RiskReport(
        rho_H=mean([r.rho_H for r in reports]),
        mu_cost=mean([r.mu_cost for r in reports]),
        sigma2_cost=mean([r.sigma2_cost for r in reports]),
        var_at={a: mean([r.var_at[a] for r in reports]) for a in alphas},
        cvar_at={a: mean([r.cvar_at[a] for r in reports]) for a in alphas},
        sparsity=mean([r.sparsity for r in reports]),
        proximity=mean([r.proximity for r in reports]),
        n_trials=reports[0].n_trials,
        rng_seed=seed,
    )


def evaluate(mdp: RecourseMdp, policy: PolicyTable, instances: Sequence[int],
             n_trials: int = 100, alphas: Sequence[float] = DEFAULT_ALPHAS, seed: int = 0,
             jobs: int = 1, chunk: int = 256, keep_costs: bool = False) -> Evaluation:
    """Roll out ``policy`` ``n_trials`` times from every instance.

    Instances already classified favorable are skipped with a warning. Failed
    rollouts keep their accrued cost in the cost sample and are left out of
    the sparsity and proximity means.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    alphas = tuple(float(a) for a in alphas)
    for a in alphas:
        if not 0.0 < a < 1.0:
            raise ValueError(f"alpha {a} outside (0, 1)")
    tab = mdp.tab
    states = np.asarray(list(instances), dtype=np.int64)
    if states.size == 0:
        raise ValueError("no instances to evaluate")
    if (states < 0).any() or (states >= tab.n_states).any():
        raise ValueError("instance state index out of range")
    pi = resolved_actions(tab, policy)
    H = policy.horizon
    positions = np.arange(len(states))
    skipped = positions[tab.goal[states]]
    if len(skipped):
        log.warning("skipping %d instances that already receive the favorable outcome",
                    len(skipped))
    todo = positions[~tab.goal[states]]

    def run(block: np.ndarray):
        u = np.concatenate([make_rng(seed + int(i)).random((n_trials, H)) for i in block])
        starts = np.repeat(states[block], n_trials)
        final, cost, hit = simulate(tab, pi, starts, u)
        out = []
        for j, i in enumerate(block):
            sl = slice(j * n_trials, (j + 1) * n_trials)
            out.append((_instance_report(cost[sl], final[sl], mdp.levels[states[i]],
                                         mdp.levels[final[sl]], hit[sl], alphas, mdp.schema,
                                         states[i], seed + int(i)), cost[sl]))
        return out

    blocks = [todo[k:k + chunk] for k in range(0, len(todo), chunk)]
    if jobs > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = [r for part in pool.map(run, blocks) for r in part]
    else:
        results = [r for b in blocks for r in run(b)]
    reports = [r for r, _ in results]
    costs = np.stack([c for _, c in results]) if keep_costs and results else None
    return Evaluation(reports, aggregate(reports, alphas, seed), alphas,
                      [int(i) for i in skipped], costs)


# ---------------------------------------------------------------------------
# Mann-Whitney U and group disparity


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    xs = x[order]
    i = 0
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


EXACT_MAX_SMALL = 7  # exact null distribution when the smaller sample has <= 7 values


def _exact_u_distribution(ranks: np.ndarray, n_a: int) -> tuple[np.ndarray, np.ndarray]:
    """Null distribution of U_a given the pooled midranks: subset count of each
    achievable value, by dynamic programming over subsets of size n_a."""
    doubled = np.rint(ranks * 2).astype(np.int64)
    top = int(np.sort(doubled)[-n_a:].sum()) if n_a else 0
    dp = np.zeros((n_a + 1, top + 1))
    dp[0, 0] = 1.0
    for r in doubled:
        # add item r to subsets, larger sizes first so each item is used once
        for k in range(n_a, 0, -1):
            dp[k, r:] += dp[k - 1, :top + 1 - r]
    counts = dp[n_a]
    sums = np.nonzero(counts)[0]
    u = sums / 2.0 - n_a * (n_a + 1) / 2.0
    return u, counts[sums]


def mann_whitney_u(sample_a: Sequence[float], sample_b: Sequence[float]) -> tuple[float, float]:
    """Two-sided Mann-Whitney U test; returns (U of sample a, p-value).

    The null distribution is exact (conditional on ties) when the smaller
    sample has at most 7 values, otherwise a normal approximation with
    tie-corrected variance and continuity correction.
    """
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("Mann-Whitney U needs two non-empty samples")
    n_a, n_b = a.size, b.size
    pooled = np.concatenate([a, b])
    ranks = _midranks(pooled)
    u = float(ranks[:n_a].sum() - n_a * (n_a + 1) / 2.0)
    if np.all(pooled == pooled[0]):
        return u, 1.0
    mean = n_a * n_b / 2.0
    if min(n_a, n_b) <= EXACT_MAX_SMALL:
        # U_b = n_a n_b - U_a has the same deviation from the mean, so count
        # subsets of the smaller sample
        if n_a <= n_b:
            values, counts = _exact_u_distribution(ranks, n_a)
        else:
            values, counts = _exact_u_distribution(ranks[::-1].copy(), n_b)
        dev = abs(u - mean)
        # dividing summed counts keeps p exactly 1 when every value is in the tail
        p = float(counts[np.abs(values - mean) >= dev - 1e-9].sum() / counts.sum())
        return u, min(1.0, p)
    n = n_a + n_b
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float((tie_counts ** 3 - tie_counts).sum()) / (n * (n - 1))
    var = n_a * n_b / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return u, 1.0
    z = max(abs(u - mean) - 0.5, 0.0) / math.sqrt(var)
    return u, min(1.0, math.erfc(z / math.sqrt(2.0)))


@dataclass
class MeasureComparison:
    measure: str
    value_a: float | None
    value_b: float | None
    delta: float | None
    u_statistic: float | None
    p_value: float | None


@dataclass
class DisparityReport:
    group_a: str
    group_b: str
    report_a: RiskReport
    report_b: RiskReport
    comparisons: list[MeasureComparison]

    def delta(self, measure: str) -> float | None:
        for c in self.comparisons:
            if c.measure == measure:
                return c.delta
        raise KeyError(measure)

    def comparison(self, measure: str) -> MeasureComparison:
        for c in self.comparisons:
            if c.measure == measure:
                return c
        raise KeyError(measure)


def disparity(eval_a: Evaluation, eval_b: Evaluation, group_a: str = "a",
              group_b: str = "b") -> DisparityReport:
    """Absolute differences of the aggregate measures between two groups, with
    a U test per measure over the per-instance values."""
    if tuple(eval_a.alphas) != tuple(eval_b.alphas):
        raise ValueError("the two evaluations use different alpha sets")
    ra, rb = eval_a.aggregate, eval_b.aggregate
    comps = []
    for m in ra.columns():
        va, vb = ra.value(m), rb.value(m)
        delta = None if va is None or vb is None or math.isnan(va) or math.isnan(vb) \
            else abs(va - vb)
        xa = [r.value(m) for r in eval_a.instances if r.value(m) is not None]
        xb = [r.value(m) for r in eval_b.instances if r.value(m) is not None]
        u = p = None
        if xa and xb:
            u, p = mann_whitney_u(xa, xb)
        comps.append(MeasureComparison(m, va, vb, delta, u, p))
    return DisparityReport(group_a, group_b, ra, rb, comps)
