"""Acceptance criteria 1-9. Each test prints one PASS/FAIL line, then asserts."""
from __future__ import annotations

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import HIPD_SAMPLE, RAW_AID, RAW_GCD
from oracles import exact_cost_distribution, mann_whitney_brute, plain_value_iteration, random_tabular_mdp
from riskrecourse.cli import main
from riskrecourse.datasets import (
    instances_from_states,
    load_descriptor,
    preprocess,
    save_instances,
    select_instances,
)
from riskrecourse.evaluation import cvar_alpha, evaluate, make_rng, mann_whitney_u, var_alpha
from riskrecourse.solvers import (
    LOWER_PARTIAL,
    EpisodicConfig,
    OracleLimitError,
    SolverConfig,
    cost_distribution,
    distribution_moments,
    enumerate_all_policies,
    enumerate_policies_oracle,
    g_rsevi,
    g_rsvi,
    objective,
    q_value,
)
from test_solvers import two_branch


def verdict(capsys, k: int, failures: list[str], detail: str = ""):
    ok = not failures
    with capsys.disabled():
        msg = detail if ok else "; ".join(failures)
        print(f"\ncriterion {k}: {'PASS' if ok else 'FAIL'}  {msg}")
    assert ok, "; ".join(failures)


def check(failures, ok, what):
    if not ok:
        failures.append(what)


# ---------------------------------------------------------------------------


def test_criterion_1_synthetic_reproduction(synthetic, capsys):
    _, mdp, s0 = synthetic
    t0 = time.perf_counter()
    rep = {}
    for beta in (0.0, 0.5, 1.0):
        pol = g_rsvi(mdp, SolverConfig(beta=beta))
        rep[beta] = evaluate(mdp, pol, [s0], n_trials=1000, seed=0).aggregate
    elapsed = time.perf_counter() - t0
    f: list[str] = []
    r = rep[0.0]
    check(f, 1.75 <= r.mu_cost <= 2.05, f"b=0 mu {r.mu_cost:.3f}")
    check(f, 1.3 <= r.sigma2_cost <= 2.1, f"b=0 var {r.sigma2_cost:.3f}")
    check(f, r.var_at[0.95] == 5.0, f"b=0 VaR95 {r.var_at[0.95]}")
    check(f, r.cvar_at[0.95] is not None and 6.0 <= r.cvar_at[0.95] <= 7.2, f"b=0 CVaR95 {r.cvar_at[0.95]}")
    check(f, r.rho_H >= 0.995, f"b=0 rho {r.rho_H:.3f}")
    r = rep[0.5]
    check(f, 2.1 <= r.mu_cost <= 2.35, f"b=0.5 mu {r.mu_cost:.3f}")
    check(f, 0.12 <= r.sigma2_cost <= 0.40, f"b=0.5 var {r.sigma2_cost:.3f}")
    check(f, r.var_at[0.95] == 3.0, f"b=0.5 VaR95 {r.var_at[0.95]}")
    check(f, r.cvar_at[0.95] is not None and 3.7 <= r.cvar_at[0.95] <= 4.5, f"b=0.5 CVaR95 {r.cvar_at[0.95]}")
    check(f, r.rho_H == 1.0, f"b=0.5 rho {r.rho_H}")
    r = rep[1.0]
    check(f, r.mu_cost == 3.0 and r.sigma2_cost == 0.0, f"b=1 mu/var {r.mu_cost}/{r.sigma2_cost}")
    check(f, r.var_at[0.95] == 3.0 and r.cvar_at[0.95] is None, f"b=1 VaR/CVaR {r.var_at[0.95]}/{r.cvar_at[0.95]}")
    check(f, r.rho_H == 1.0, f"b=1 rho {r.rho_H}")
    check(f, elapsed < 5.0, f"runtime {elapsed:.2f}s")
    verdict(capsys, 1, f, "  ".join(
        f"b={b:g}: mu={x.mu_cost:.3f} var={x.sigma2_cost:.3f} VaR95={x.var_at[0.95]:g} "
        f"CVaR95={'n/a' if x.cvar_at[0.95] is None else round(x.cvar_at[0.95], 3)} rho={x.rho_H:.3f}" for b, x in rep.items()) + f" ({elapsed:.2f}s)")


def _exact_mean(tab, pi, s0):
    return sum(c * p for c, p in exact_cost_distribution(tab, pi, s0).items())


def test_criterion_2_oracle_equivalence(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    f: list[str] = []
    done = regenerated = 0
    while done < 50:
        S, A, H = int(rng.integers(2, 7)), int(rng.integers(1, 4)), int(rng.integers(1, 5))
        tab = random_tabular_mdp(rng, S, A)
        if tab.goal.all():
            regenerated += 1
            continue
        s0 = int(np.nonzero(~tab.goal)[0][0])
        try:
            oracles = {b: enumerate_policies_oracle(tab, s0, b, horizon=H) for b in (0.0, 0.25, 0.5)}
        except OracleLimitError:
            regenerated += 1
            continue
        done += 1
        greedy0 = g_rsvi(tab, SolverConfig(beta=0.0, horizon=H))
        err = float(np.max(np.abs(greedy0.values - plain_value_iteration(tab, H))))
        check(f, err <= 1e-10, f"mdp {done}: VI gap {err:.2e}")
        m_greedy = _exact_mean(tab, greedy0.pi, s0)
        m_oracle = _exact_mean(tab, oracles[0.0].policy.pi, s0)
        if m_greedy != m_oracle:
            # the float oracle may have picked a policy that only rounds to optimal
            m_oracle = min(_exact_mean(tab, pi, s0) for pi in enumerate_all_policies(tab, s0, H))
        check(f, m_greedy == m_oracle, f"mdp {done}: exact mean {m_greedy} != {m_oracle}")
        for beta in (0.25, 0.5):
            pol = g_rsvi(tab, SolverConfig(beta=beta, horizon=H))
            m, v = distribution_moments(cost_distribution(tab, pol, s0, exact=True))
            obj = objective(float(m), float(v), beta)
            check(f, obj <= oracles[beta].objective + 1e-10,
                  f"mdp {done} beta {beta}: greedy {obj} beats oracle {oracles[beta].objective}")
    elapsed = time.perf_counter() - t0
    check(f, elapsed < 30.0, f"runtime {elapsed:.1f}s")
    verdict(capsys, 2, f, f"50 MDPs ({regenerated} regenerated: all-goal or over the policy limit), {elapsed:.1f}s")


def test_criterion_3_risk_measures(capsys):
    f: list[str] = []
    x = list(range(1, 11))
    check(f, var_alpha(x, 0.8) == 8.0 and cvar_alpha(x, 0.8) == 9.5, "{1..10} at 0.8")
    check(f, var_alpha(x, 0.95) == 10.0 and cvar_alpha(x, 0.95) is None, "{1..10} at 0.95")
    check(f, var_alpha([3.0] * 5, 0.95) == 3.0 and cvar_alpha([3.0] * 5, 0.95) is None, "point mass")
    values = np.array([1.0, 2.0, 4.0, 8.0, 16.0])
    probs = np.array([0.4, 0.3, 0.15, 0.1, 0.05])
    draws = make_rng(11).choice(values, size=100_000, p=probs)
    cdf = np.cumsum(probs)
    worst = 0.0
    for alpha in (0.5, 0.8, 0.9):
        var = values[np.argmax(cdf >= alpha - 1e-12)]
        tail = values > var
        cvar = float((values[tail] * probs[tail]).sum() / probs[tail].sum())
        for got, want, name in ((var_alpha(draws, alpha), var, "VaR"), (cvar_alpha(draws, alpha), cvar, "CVaR")):
            rel = abs(got - want) / want
            worst = max(worst, rel)
            check(f, rel <= 0.01, f"{name}_{alpha} {got:.4f} vs {want:.4f}")
    verdict(capsys, 3, f, f"hand cases exact; 1e5 draws worst relative error {worst:.4f}")


def _trend_run(mdp, states, betas, mode="full_sigma", n_trials=100):
    out = []
    for beta in betas:
        t0 = time.perf_counter()
        pol = g_rsvi(mdp, SolverConfig(beta=beta, deviation_mode=mode))
        solve_s = time.perf_counter() - t0
        ev = evaluate(mdp, pol, states, n_trials=n_trials, seed=0, keep_costs=True)
        c = ev.costs
        n = c.shape[1]
        mu_i, var_i = c.mean(axis=1), c.var(axis=1)
        m4 = ((c - mu_i[:, None]) ** 4).mean(axis=1)
        k = len(mu_i)
        se_mu = math.sqrt(float(np.sum(var_i / n))) / k
        se_var = math.sqrt(float(np.sum(np.maximum(m4 - var_i ** 2, 0.0) / n))) / k
        out.append((beta, ev.aggregate, se_mu, se_var, solve_s))
    return out


def _trend_failures(tag, runs, f, rho_min=None, distances=True):
    for (b0, r0, sm0, sv0, _), (b1, r1, sm1, sv1, _) in zip(runs, runs[1:]):
        tol_v = 2 * math.hypot(sv0, sv1)
        tol_m = 2 * math.hypot(sm0, sm1)
        check(f, r1.sigma2_cost <= r0.sigma2_cost + tol_v,
              f"{tag} var rises {r0.sigma2_cost:.3f}->{r1.sigma2_cost:.3f} (b {b0}->{b1})")
        check(f, r1.mu_cost >= r0.mu_cost - tol_m,
              f"{tag} mu falls {r0.mu_cost:.3f}->{r1.mu_cost:.3f} (b {b0}->{b1})")
        if distances:
            check(f, r1.sparsity >= r0.sparsity, f"{tag} sparsity falls (b {b0}->{b1})")
            check(f, r1.proximity >= r0.proximity, f"{tag} proximity falls (b {b0}->{b1})")
    for b, r, _, _, solve_s in runs:
        check(f, solve_s <= 120.0, f"{tag} solve at b={b} took {solve_s:.1f}s")
        if rho_min is not None:
            check(f, r.rho_H >= rho_min, f"{tag} rho {r.rho_H:.4f} at b={b}")


def _summary(tag, runs):
    return f"{tag}: " + ", ".join(f"b={b:g} mu={r.mu_cost:.3f} var={r.sigma2_cost:.3f} rho={r.rho_H:.4f}"
                                  for b, r, *_ in runs)


@pytest.mark.skipif(not (RAW_AID.exists() and RAW_GCD.exists()), reason="raw data absent")
def test_criterion_4_dataset_trends(gcd, aid, capsys):
    f: list[str] = []
    betas = (0.0, 0.25, 0.5)
    _, mdp, _, neg = gcd
    g = _trend_run(mdp, neg.states, betas)
    _trend_failures("GCD", g, f, rho_min=0.95)
    _, mdp, _, neg = aid
    sample = select_instances(neg, sample=2000, seed=0)
    a = _trend_run(mdp, sample.states, betas)
    _trend_failures("AID", a, f)
    verdict(capsys, 4, f, _summary("GCD", g) + " | " + _summary("AID", a))


@pytest.mark.skipif(not RAW_GCD.exists(), reason="raw data absent")
def test_criterion_5_lpsd(gcd, capsys):
    f: list[str] = []
    _, mdp, _, neg = gcd
    runs = _trend_run(mdp, neg.states, (0.0, 0.25), mode=LOWER_PARTIAL)
    (_, r0, sm0, _, _), (_, r1, sm1, _, _) = runs
    check(f, r1.sigma2_cost <= r0.sigma2_cost, f"var {r0.sigma2_cost:.3f} -> {r1.sigma2_cost:.3f}")
    check(f, r1.mu_cost >= r0.mu_cost - 2 * math.hypot(sm0, sm1), f"mu {r0.mu_cost:.3f} -> {r1.mu_cost:.3f}")
    tab = two_branch()
    nxt = np.array([0.0, 0.0, -1.0])
    beta = 1.0
    q_lp = q_value(tab, 0, 0, nxt, beta=beta, deviation_mode=LOWER_PARTIAL)
    q_mean = q_value(tab, 0, 0, nxt, beta=0.0)
    sigma_lp = (q_mean - q_lp) / beta
    check(f, abs(sigma_lp - 0.2846) <= 1e-4, f"sigma_LP {sigma_lp:.5f}")
    verdict(capsys, 5, f, _summary("GCD LPSD", runs) + f" | sigma_LP={sigma_lp:.4f}")


def test_criterion_6_grsevi_convergence(synthetic, capsys):
    _, mdp, s0 = synthetic
    f: list[str] = []
    parts, spread = [], {}
    for beta in (0.0, 0.5, 1.0):
        res = g_rsevi(mdp, SolverConfig(beta=beta),
                      EpisodicConfig(initial_state=s0, max_episodes=10_000, epsilon_decay=0.9995))
        tail = res.episode_costs[-500:]
        ref = evaluate(mdp, g_rsvi(mdp, SolverConfig(beta=beta)), [s0], n_trials=1000, seed=0).aggregate
        gap = abs(float(tail.mean()) - ref.mu_cost)
        check(f, gap <= 0.15, f"b={beta}: last-500 mean {tail.mean():.3f} vs {ref.mu_cost:.3f}")
        spread[beta] = float(tail.std())
        parts.append(f"b={beta:g} last500 mean={tail.mean():.3f} (G-RSVI {ref.mu_cost:.3f}) std={tail.std():.3f}")
    check(f, spread[1.0] < spread[0.0], f"band b=1 {spread[1.0]:.3f} not below b=0 {spread[0.0]:.3f}")
    verdict(capsys, 6, f, "; ".join(parts))


def test_criterion_7_mann_whitney(capsys):
    f: list[str] = []
    rng = np.random.default_rng(7)
    pairs = 0
    for na in range(1, 10):
        for nb in range(1, 11 - na):
            for trial in range(4):
                hi = 4 if trial % 2 else 100  # alternate heavy ties and mostly distinct values
                a = rng.integers(0, hi, na).tolist()
                b = rng.integers(0, hi, nb).tolist()
                u, p = mann_whitney_u(a, b)
                u_ref, p_ref = mann_whitney_brute(a, b)
                check(f, u == u_ref and abs(p - p_ref) <= 1e-12, f"n=({na},{nb}) p {p} vs {p_ref}")
            pairs += 1
    same = [2.0, 5.0, 5.0, 9.0]
    check(f, mann_whitney_u(same, same)[1] == 1.0, "identical samples p != 1")
    check(f, mann_whitney_u([3.0] * 4, [3.0] * 6)[1] == 1.0, "constant samples p != 1")
    verdict(capsys, 7, f, f"{pairs} size pairs x 4 samples match enumeration; identical p=1.0")


def test_criterion_8_cardinalities(capsys):
    f: list[str] = []
    found = {}
    for name, source, want in (("aid", RAW_AID, 57600), ("gcd", RAW_GCD, 147456), ("hipd", HIPD_SAMPLE, 3456)):
        if not source.exists():
            f.append(f"{name}: raw data absent")
            continue
        schema, inst = preprocess(load_descriptor(name), source)
        found[name] = schema.cardinality
        check(f, schema.cardinality == want, f"{name} {schema.cardinality} != {want}")
        check(f, len(inst) > 0 and int(inst.states.max()) < schema.cardinality, f"{name} state out of range")
    verdict(capsys, 8, f, ", ".join(f"{k}={v}" for k, v in found.items()))


def _cli_run(root):
    root.mkdir()
    cmds = [
        ["solve", "--config", "synthetic_health", "--beta", "0.5", "--out", "p05.npz"],
        ["solve", "--config", "synthetic_health", "--beta", "0", "--out", "p0.npz"],
        ["solve", "--config", "synthetic_health", "--beta", "0", "--variant", "grsevi",
         "--episodes", "500", "--out", "pe.npz"],
        ["evaluate", "--policy", "p0.npz", "p05.npz", "--trials", "300", "--seed", "3", "--out", "ev.csv"],
        ["evaluate", "--policy", "p0.npz", "--trials", "300", "--seed", "3", "--out", "ev.json"],
        ["disparity", "--policy", "p05.npz", "--instances", "inst.json", "--group", "Region",
         "--trials", "60", "--out", "d.csv"],
        ["disparity", "--policy", "p05.npz", "--instances", "inst.json", "--group", "Region",
         "--trials", "60", "--out", "d.json"],
        ["viz", "--policy", "p0.npz", "p05.npz", "--top-k", "6", "--out", "v.svg"],
        ["preprocess", "--descriptor", "hipd", "--data", str(HIPD_SAMPLE), "--out", "h.json"],
        ["train", "--descriptor", "hipd", "--data", str(HIPD_SAMPLE), "--trees", "5", "--out", "m.json"],
        ["select", "--config", "hipd", "--model", "m.json", "--instances", "h.json",
         "--where", "Gender==Male", "--sample", "5", "--out", "sel.json"],
    ]
    return cmds


def test_criterion_9_reproducibility(tmp_path, capsys, monkeypatch):
    from riskrecourse.datasets import builtin_domain

    f: list[str] = []
    cfg, _ = builtin_domain("synthetic_health")
    mdp = cfg.build()
    states = np.nonzero(~mdp.goal)[0][::2]
    outputs = {}
    for run in ("one", "two"):
        root = tmp_path / run
        cmds = _cli_run(root)
        monkeypatch.chdir(root)
        save_instances(instances_from_states(cfg.schema, states), root / "inst.json")
        for cmd in cmds:
            code = main(cmd)
            check(f, code == 0, f"{run}: {cmd[0]} exit {code}")
        outputs[run] = {p.name: p.read_bytes() for p in sorted(root.iterdir())
                        if not p.name.endswith(".manifest.json")}
    differ = [k for k in outputs["one"] if outputs["one"][k] != outputs["two"].get(k)]
    check(f, not differ, f"outputs differ: {differ}")
    verdict(capsys, 9, f, f"{len(outputs['one'])} files byte-identical across two runs")
