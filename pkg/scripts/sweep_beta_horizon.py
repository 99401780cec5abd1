"""Sweep risk aversion and horizon on a dataset config and write one CSV row
per (beta, H) with the aggregate risk report over the unfavorable instances."""
from __future__ import annotations

import argparse
import time
from pathlib import Path

from riskrecourse import load_config
from riskrecourse.datasets import load_descriptor, predicted, preprocess, select_instances
from riskrecourse.evaluation import evaluate
from riskrecourse.io import write_report_csv
from riskrecourse.solvers import FULL_SIGMA, LOWER_PARTIAL, SolverConfig, g_rsvi

ROOT = Path(__file__).resolve().parents[1]
RAW = {"aid": ROOT / "data" / "raw" / "adult.data", "gcd": ROOT / "data" / "raw" / "german.data"}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dataset", choices=sorted(RAW), default="gcd")
    ap.add_argument("--config", help="config name or path (default: the dataset's own)")
    ap.add_argument("--betas", type=float, nargs="+", default=[0.0, 0.25, 0.5])
    ap.add_argument("--horizons", type=int, nargs="+", default=[12])
    ap.add_argument("--lpsd", action="store_true", help="penalize only below-mean deviation")
    ap.add_argument("--sample", type=int, help="evaluate a random sample of this many instances")
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()

    cfg = load_config(args.config or args.dataset)
    _, inst = preprocess(load_descriptor(args.dataset), RAW[args.dataset])
    neg = select_instances(inst, predicted(cfg.model, False), args.sample, args.seed)
    print(f"{cfg.name}: {len(neg)} unfavorable instances")
    mode = LOWER_PARTIAL if args.lpsd else FULL_SIGMA
    rows = []
    for H in args.horizons:
        mdp = cfg.build(H)
        for beta in args.betas:
            t0 = time.perf_counter()
            pol = g_rsvi(mdp, SolverConfig(beta=beta, deviation_mode=mode))
            solve_s = time.perf_counter() - t0
            r = evaluate(mdp, pol, neg.states, n_trials=args.trials, seed=args.seed, jobs=args.jobs).aggregate
            rows.append(({"config": cfg.name, "beta": beta, "horizon": H, "mode": mode}, r))
            print(f"H={H:2d} beta={beta:4.2f} rho={r.rho_H:.4f} mu={r.mu_cost:.3f} var={r.sigma2_cost:.3f} "
                  f"sparsity={r.sparsity:.3f} proximity={r.proximity:.3f} solve={solve_s:.1f}s")
    out = args.out or Path("results") / f"sweep_{cfg.name}{'_lpsd' if args.lpsd else ''}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report_csv(out, rows, (0.8, 0.95))
    print(f"-> {out}")


if __name__ == "__main__":
    main()
