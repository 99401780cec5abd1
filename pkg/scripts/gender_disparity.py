"""Risk disparity between female and male unfavorable instances under the same
policy, for several risk-aversion levels."""
from __future__ import annotations

import argparse
from pathlib import Path

from riskrecourse import load_config
from riskrecourse.datasets import load_descriptor, predicted, preprocess, select_instances, where
from riskrecourse.evaluation import disparity, evaluate
from riskrecourse.io import disparity_to_dict, write_json
from riskrecourse.solvers import SolverConfig, g_rsvi

ROOT = Path(__file__).resolve().parents[1]
RAW = {"aid": ROOT / "data" / "raw" / "adult.data", "gcd": ROOT / "data" / "raw" / "german.data"}
MEASURES = ("mu_cost", "sigma2_cost", "var_95", "cvar_95")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dataset", choices=sorted(RAW), default="gcd")
    ap.add_argument("--betas", type=float, nargs="+", default=[0.0, 0.25, 0.5])
    ap.add_argument("--sample", type=int, help="random sample size per group")
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()

    cfg = load_config(args.dataset)
    mdp = cfg.build()
    _, inst = preprocess(load_descriptor(args.dataset), RAW[args.dataset])
    neg = select_instances(inst, predicted(cfg.model, False))
    groups = [select_instances(neg, where(cfg.schema, f"Gender=={g}"), args.sample, args.seed)
              for g in ("Female", "Male")]
    print(f"{cfg.name}: {len(groups[0])} female, {len(groups[1])} male unfavorable instances")
    docs = []
    for beta in args.betas:
        pol = g_rsvi(mdp, SolverConfig(beta=beta))
        evs = [evaluate(mdp, pol, g.states, n_trials=args.trials, seed=args.seed) for g in groups]
        rep = disparity(evs[0], evs[1], "Female", "Male")
        parts = []
        for m in MEASURES:
            c = rep.comparison(m)
            parts.append(f"{m} {c.value_a:.3f}/{c.value_b:.3f} d={c.delta:.3f} p={c.p_value:.3g}")
        print(f"beta={beta:4.2f}  " + "  ".join(parts))
        docs.append(disparity_to_dict(rep, {"beta": beta, "config": cfg.name, "n_trials": args.trials,
                                            "seed": args.seed}))
    out = args.out or Path("results") / f"disparity_{cfg.name}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_json(out, {"reports": docs})
    print(f"-> {out}")


if __name__ == "__main__":
    main()
