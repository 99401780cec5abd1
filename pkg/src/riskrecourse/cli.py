"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 config/schema error, 3 runtime error.
The default worker count for evaluation comes from ``RISKRECOURSE_JOBS``.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config, resolve_config_path
from .datasets import (
    load_descriptor,
    load_instances,
    parse_condition,
    predicted,
    preprocess,
    save_instances,
    select_instances,
    where,
)
from .evaluation import DEFAULT_ALPHAS, disparity, evaluate
from .io import (
    PolicyFileError,
    RunManifest,
    disparity_to_dict,
    evaluation_to_dict,
    load_policy,
    save_policy,
    write_disparity_csv,
    write_json,
    write_report_csv,
)
from .models import DegenerateDataError, EnsembleConfig, ModelFileError, save_model, train_tree_ensemble
from .schema import Mutability, SchemaError, decode_state, encode_state
from .solvers import FULL_SIGMA, LOWER_PARTIAL, EpisodicConfig, SolverConfig, g_rsevi, g_rsvi
from .viz import enumerate_traces, render_svg

log = logging.getLogger("riskrecourse")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
VARIANTS = ("grsvi", "grsevi", "lpsd")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("RISKRECOURSE_JOBS", "1")))
    except ValueError:
        return 1


def _config_ref(ref: str) -> str:
    """What a policy file records to find its config again: the bare name for
    shipped configs, otherwise an absolute path."""
    p = resolve_config_path(ref)
    if not Path(ref).exists():
        return ref
    return str(p.resolve())


def _load(ref: str, model_path: str | None) -> ExperimentConfig:
    return load_config(ref, model_path=model_path)


def _parse_state(cfg: ExperimentConfig, text: str) -> int:
    text = text.strip()
    if text.lstrip("-").isdigit():
        s = int(text)
        if not 0 <= s < cfg.schema.cardinality:
            raise SchemaError(f"state index {s} out of range")
        return s
    values = {}
    for part in text.split(","):
        if "=" not in part:
            raise SchemaError(f"cannot parse state assignment {part!r}")
        k, v = part.split("=", 1)
        values[k.strip()] = v.strip()
    return encode_state(cfg.schema, cfg.schema.state(values))


def _policy_context(path: str, config_override: str | None = None):
    lp = load_policy(path)
    meta = lp.policy.meta
    ref = config_override or meta.get("config_ref")
    if not ref:
        raise ConfigError(path, "policy file does not name its config; pass --config")
    cfg = _load(ref, meta.get("model_path"))
    horizon = lp.policy.horizon
    if cfg.hash() != lp.config_hash and config_override is None:
        raise ConfigError(path, "config has changed since the policy was solved "
                          f"({cfg.hash()} != {lp.config_hash})")
    if cfg.schema.hash() != lp.schema_hash:
        raise ConfigError(path, "policy and config schemas differ")
    mdp = cfg.build(horizon)
    if lp.policy.action_names != mdp.action_names:
        raise ConfigError(path, "policy and config action sets differ")
    return lp, cfg, mdp


def _instances(cfg: ExperimentConfig, args) -> tuple[list[int], list[int]]:
    """State indices and source ids from --instances and/or --state."""
    states, ids = [], []
    if getattr(args, "instances", None):
        inst = load_instances(args.instances, cfg.schema)
        states += [int(s) for s in inst.states]
        ids += [int(i) for i in inst.ids]
    for i, text in enumerate(getattr(args, "state", None) or []):
        states.append(_parse_state(cfg, text))
        ids.append(i)
    if not states and cfg.initial_state is not None and not getattr(args, "instances", None):
        states, ids = [cfg.initial_state], [0]
    if not states:
        raise ConfigError(getattr(args, "instances", None) or "instances", "no instances given")
    return states, ids


# ---------------------------------------------------------------------------
# commands


def cmd_solve(args) -> int:
    man = RunManifest("solve").start()
    cfg = _load(args.config, args.model)
    horizon = args.horizon or cfg.horizon
    mdp = cfg.build(horizon)
    mode = LOWER_PARTIAL if args.variant == "lpsd" else FULL_SIGMA
    sc = SolverConfig(beta=args.beta, horizon=horizon, deviation_mode=mode)
    t0 = time.perf_counter()
    if args.variant == "grsevi":
        s0 = _parse_state(cfg, args.state) if args.state else cfg.initial_state
        if s0 is None:
            raise ConfigError(args.config, "grsevi needs --state or an initial_state in the config")
        ep = EpisodicConfig(initial_state=s0, max_episodes=args.episodes,
                            epsilon_decay=args.epsilon_decay, rng_seed=args.seed)
        policy = g_rsevi(mdp, sc, ep).policy
    else:
        policy = g_rsvi(mdp, sc)
    elapsed = time.perf_counter() - t0
    policy.variant = args.variant
    policy.meta = dict(policy.meta, config_ref=_config_ref(args.config),
                       model_path=str(Path(args.model).resolve()) if args.model else None)
    save_policy(policy, args.out, cfg.hash(), cfg.schema.hash(), cfg.name)
    print(f"solved {cfg.name} beta={args.beta:g} H={horizon} variant={args.variant} "
          f"states={mdp.n_states} in {elapsed:.2f}s -> {args.out}")
    man.config_paths = [args.config]
    man.config_hashes = [cfg.hash()]
    man.betas = [args.beta]
    man.horizon = horizon
    man.variant = args.variant
    man.seed = args.seed
    man.outputs = [args.out]
    man.extra = {"solve_seconds": round(elapsed, 3)}
    man.write(args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    man = RunManifest("evaluate").start()
    alphas = tuple(args.alpha or DEFAULT_ALPHAS)
    rows, docs = [], []
    for path in args.policy:
        lp, cfg, mdp = _policy_context(path, args.config)
        states, ids = _instances(cfg, args)
        ev = evaluate(mdp, lp.policy, states, n_trials=args.trials, alphas=alphas,
                      seed=args.seed, jobs=args.jobs)
        if not ev.instances:
            raise ConfigError(args.instances or "instances",
                              "every instance already receives the favorable outcome")
        label = {"policy": Path(path).name, "config": cfg.name, "beta": lp.policy.beta,
                 "horizon": lp.policy.horizon, "variant": lp.policy.variant}
        rows.append((dict(label, instance="AGGREGATE"), ev.aggregate))
        if not args.aggregate_only:
            kept = [ids[i] for i in range(len(states)) if i not in set(ev.skipped)]
            for iid, rep in zip(kept, ev.instances):
                rows.append((dict(label, instance=iid), rep))
        docs.append(evaluation_to_dict(ev, dict(label, config_hash=lp.config_hash,
                                                seed=args.seed, n_trials=args.trials)))
        man.config_hashes.append(lp.config_hash)
        man.betas.append(lp.policy.beta)
        man.horizon = lp.policy.horizon
    if str(args.out).endswith(".json"):
        write_json(args.out, {"evaluations": docs})
    else:
        write_report_csv(args.out, rows, alphas)
    print(f"wrote {args.out} ({len(args.policy)} policies, {args.trials} trials)")
    man.alphas = list(alphas)
    man.n_trials = args.trials
    man.seed = args.seed
    man.outputs = [args.out]
    man.extra = {"policies": list(args.policy), "instances": args.instances}
    man.write(args.out)
    return EXIT_OK


def cmd_disparity(args) -> int:
    man = RunManifest("disparity").start()
    lp, cfg, mdp = _policy_context(args.policy, args.config)
    states, _ = _instances(cfg, args)
    spec = cfg.schema.feature(args.group)
    if spec.n_levels != 2:
        raise UsageError(f"group feature {args.group!r} has {spec.n_levels} levels; "
                         "only two groups are supported")
    if spec.mutability is not Mutability.IMMUTABLE:
        log.warning("group feature %s is not immutable", args.group)
    fi = cfg.schema.index_of(args.group)
    levels = mdp.levels[np.asarray(states)]
    alphas = tuple(args.alpha or DEFAULT_ALPHAS)
    evs = []
    for g in range(2):
        group_states = [s for s, lv in zip(states, levels) if lv[fi] == g]
        if not group_states:
            raise ConfigError(args.instances or "instances", f"group {spec.levels[g]!r} is empty")
        evs.append(evaluate(mdp, lp.policy, group_states, n_trials=args.trials, alphas=alphas,
                            seed=args.seed, jobs=args.jobs))
    rep = disparity(evs[0], evs[1], spec.levels[0], spec.levels[1])
    meta = {"policy": Path(args.policy).name, "config": cfg.name, "config_hash": lp.config_hash,
            "beta": lp.policy.beta, "horizon": lp.policy.horizon, "group": args.group,
            "seed": args.seed, "n_trials": args.trials}
    if str(args.out).endswith(".json"):
        write_json(args.out, disparity_to_dict(rep, meta))
    else:
        write_disparity_csv(args.out, rep)
    print(f"wrote {args.out}")
    man.config_hashes = [lp.config_hash]
    man.betas = [lp.policy.beta]
    man.alphas = list(alphas)
    man.n_trials = args.trials
    man.seed = args.seed
    man.outputs = [args.out]
    man.write(args.out)
    return EXIT_OK


def cmd_viz(args) -> int:
    if args.top_k < 1:
        raise UsageError("--top-k must be >= 1")
    man = RunManifest("viz").start()
    panels = []
    for path in args.policy:
        lp, cfg, mdp = _policy_context(path, args.config)
        s0 = _parse_state(cfg, args.state) if args.state else cfg.initial_state
        if s0 is None:
            raise ConfigError(path, "pass --state")
        if mdp.goal[s0]:
            raise ConfigError("--state", "initial state already receives the favorable outcome")
        ts = enumerate_traces(mdp, lp.policy, s0, args.top_k)
        ts.title = f"{cfg.name}  beta={lp.policy.beta:g}  H={lp.policy.horizon}  {lp.policy.variant}"
        panels.append(ts)
        man.config_hashes.append(lp.config_hash)
        man.betas.append(lp.policy.beta)
    Path(args.out).write_text(render_svg(panels))
    print(f"wrote {args.out}")
    man.outputs = [args.out]
    man.write(args.out)
    return EXIT_OK


def cmd_preprocess(args) -> int:
    desc = load_descriptor(args.descriptor)
    schema, inst = preprocess(desc, args.data)
    save_instances(inst, args.out)
    print(f"{desc.name}: {len(inst)} instances, {schema.cardinality} states -> {args.out}")
    return EXIT_OK


def cmd_select(args) -> int:
    cfg = _load(args.config, args.model)
    inst = load_instances(args.instances, cfg.schema)
    preds = []
    if args.where:
        preds.append(where(cfg.schema, *[parse_condition(c) for c in args.where]))
    if args.unfavorable:
        preds.append(predicted(cfg.model, favorable=False))

    def predicate(levels, labels):
        mask = np.ones(len(levels), dtype=bool)
        for p in preds:
            mask &= p(levels, labels)
        return mask

    out = select_instances(inst, predicate, args.sample, args.seed)
    save_instances(out, args.out)
    print(f"selected {len(out)} of {len(inst)} instances -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    desc = load_descriptor(args.descriptor)
    schema, inst = preprocess(desc, args.data)
    cfg = EnsembleConfig(n_trees=args.trees, max_depth=args.max_depth, seed=args.seed)
    model = train_tree_ensemble(schema, inst.levels, inst.labels, cfg)
    save_model(model, args.out)
    print(f"trained {args.trees} trees on {len(inst)} rows, held-out accuracy "
          f"{model.holdout_accuracy:.3f} -> {args.out}")
    return EXIT_OK


def cmd_describe(args) -> int:
    cfg = _load(args.config, args.model)
    mdp = cfg.build(args.horizon)
    print(f"{cfg.name}: {mdp.n_states} states, {len(cfg.actions)} actions, H={mdp.horizon}, "
          f"{int(mdp.goal.sum())} favorable states, hash {cfg.hash()}")
    for f in cfg.schema.features:
        print(f"  {f.name:14s} {f.kind.value:8s} {f.mutability.value:24s} {', '.join(f.levels)}")
    if cfg.initial_state is not None:
        lv = decode_state(cfg.schema, cfg.initial_state)
        print(f"  initial state {cfg.initial_state}: {cfg.schema.labels(lv)}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="riskrecourse", description="Risk-averse recourse policies.")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--jobs", type=int, default=_default_jobs(),
                   help="worker threads for evaluation (default $RISKRECOURSE_JOBS or 1)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="compute a policy")
    s.add_argument("--config", required=True, help="config file or shipped config name")
    s.add_argument("--model", help="decision model file overriding the config's model")
    s.add_argument("--beta", type=float, default=0.0)
    s.add_argument("--horizon", type=int)
    s.add_argument("--variant", choices=VARIANTS, default="grsvi")
    s.add_argument("--state", help="initial state for grsevi (index or Feature=Level,...)")
    s.add_argument("--episodes", type=int, default=10000)
    s.add_argument("--epsilon-decay", type=float, default=0.9995)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_solve)

    def eval_args(e, multi=True):
        e.add_argument("--policy", required=True, nargs="+" if multi else None)
        e.add_argument("--config", help="use this config instead of the one recorded in the policy")
        e.add_argument("--instances", help="instances file (JSON)")
        e.add_argument("--state", action="append", help="extra initial state (repeatable)")
        e.add_argument("--trials", type=int, default=100)
        e.add_argument("--alpha", type=float, nargs="+")
        e.add_argument("--seed", type=int, default=0)
        e.add_argument("--out", required=True)

    e = sub.add_parser("evaluate", help="Monte-Carlo risk report (CSV or JSON by suffix)")
    eval_args(e)
    e.add_argument("--aggregate-only", action="store_true")
    e.set_defaults(func=cmd_evaluate)

    d = sub.add_parser("disparity", help="compare two groups of instances")
    eval_args(d, multi=False)
    d.add_argument("--group", required=True, help="binary feature splitting the instances")
    d.set_defaults(func=cmd_disparity)

    v = sub.add_parser("viz", help="SVG of the most probable outcome traces")
    v.add_argument("--policy", required=True, nargs="+")
    v.add_argument("--config")
    v.add_argument("--state")
    v.add_argument("--top-k", type=int, default=8)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_viz)

    pp = sub.add_parser("preprocess", help="raw CSV -> instances file")
    pp.add_argument("--descriptor", required=True)
    pp.add_argument("--data", required=True)
    pp.add_argument("--out", required=True)
    pp.set_defaults(func=cmd_preprocess)

    se = sub.add_parser("select", help="filter and sample an instances file")
    se.add_argument("--config", required=True)
    se.add_argument("--model")
    se.add_argument("--instances", required=True)
    se.add_argument("--where", nargs="+", help="conditions such as Gender==Female")
    se.add_argument("--unfavorable", action="store_true",
                    help="keep instances the decision model classifies unfavorable")
    se.add_argument("--sample", type=int)
    se.add_argument("--seed", type=int, default=0)
    se.add_argument("--out", required=True)
    se.set_defaults(func=cmd_select)

    t = sub.add_parser("train", help="train a tree-ensemble decision model")
    t.add_argument("--descriptor", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--trees", type=int, default=50)
    t.add_argument("--max-depth", type=int, default=8)
    t.add_argument("--seed", type=int, default=7)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    de = sub.add_parser("describe", help="summarize a config")
    de.add_argument("--config", required=True)
    de.add_argument("--model")
    de.add_argument("--horizon", type=int)
    de.set_defaults(func=cmd_describe)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"riskrecourse: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, SchemaError, ModelFileError, PolicyFileError) as exc:
        print(f"riskrecourse: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DegenerateDataError as exc:
        print(f"riskrecourse: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        log.debug("unhandled error", exc_info=True)
        print(f"riskrecourse: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
