"""Command line entry point: ``csvx train|explain|table|axioms|bench``."""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace

from .core import CapacityError, StructureError
from .cvf import BINDINGS, METHODS, SOURCES, CvfEvaluationError
from .envs import BUILDERS, make_env
from .report import (
    FORMATS,
    ExplanationReport,
    RunConfig,
    axiom_suite,
    default_players,
    default_states,
    explain,
    parse_state,
    render,
    required_coalitions,
)
from .solver import ContractError, ConvergenceError, IntegrityError, UnobservedTransitionError
from .store import MissingArtifactError, UnconvergedArtifactError

EXIT_OK, EXIT_VALIDATION, EXIT_CONVERGENCE, EXIT_INTEGRITY = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--env", choices=sorted(BUILDERS) + [f"{b}+dummy" for b in sorted(BUILDERS)])
    common.add_argument("--config", help="JSON file mirroring RunConfig; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--cache", help="artifact cache directory")
    common.add_argument("--force", action="store_true", default=None,
                        help="accept artifacts that fail the convergence gate")
    common.add_argument("--backend", choices=("qlearning", "abstract"),
                        help="coalition solver (default qlearning)")

    query = argparse.ArgumentParser(add_help=False)
    query.add_argument("--state", action="append", help="state as 0,4,4,1 or a label such as s1")
    query.add_argument("--method", choices=METHODS + ("all",))
    query.add_argument("--source", choices=SOURCES)
    query.add_argument("--actions", help="rank pair i,j for a single CD row")
    query.add_argument("--action-binding", dest="binding", choices=BINDINGS)
    query.add_argument("--format", choices=FORMATS)

    p = argparse.ArgumentParser(prog="csvx", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    t = sub.add_parser("train", parents=[common], help="train or load every coalition artifact")
    t.add_argument("--state", action="append", help="only the coalitions these states need (grouped envs)")
    sub.add_parser("explain", parents=[common, query], help="Shapley rows for one or more states")
    t = sub.add_parser("table", help="render a saved JSON report")
    t.add_argument("report", help="report JSON file ('-' for stdin)")
    t.add_argument("--format", choices=FORMATS, default="markdown")
    sub.add_parser("axioms", parents=[common, query], help="run the axiom suite")
    sub.add_parser("bench", parents=[common, query], help="time training and explanation")
    return p


def config_from_args(args) -> RunConfig:
    data = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            data = json.load(fh)
    cfg = RunConfig.from_dict(data) if data else RunConfig()
    over = {}
    if args.env:
        over["env"] = args.env
    if args.seed is not None:
        over["seed"] = args.seed
    if args.cache:
        over["cache_dir"] = args.cache
    if args.force:
        over["force"] = True
    if args.backend:
        over["train"] = replace(cfg.train, backend=args.backend)
    if getattr(args, "method", None):
        over["methods"] = METHODS if args.method == "all" else (args.method,)
    if getattr(args, "source", None):
        over["source"] = args.source
    if getattr(args, "binding", None):
        over["binding"] = args.binding
    if getattr(args, "format", None):
        over["format"] = args.format
    if getattr(args, "actions", None):
        try:
            i, j = (int(x) for x in args.actions.split(","))
        except ValueError:
            raise ValueError(f"--actions expects i,j, got {args.actions!r}") from None
        over["actions"] = (i, j)
    return replace(cfg, **over).validate()


def _states(cfg: RunConfig, args, fallback: bool = False):
    env = make_env(cfg.env)
    if args.state:
        return [parse_state(env, s) for s in args.state]
    if env.meta.get("labels"):
        return default_states(env)
    if fallback:
        return [env.nonterminal_states[0]]
    raise ValueError(f"--state is required for {cfg.env}")


def cmd_train(cfg: RunConfig, states=None, out=None) -> int:
    """Train or load artifacts; grouped envs (minesweeper) need explicit states."""
    out = out or sys.stdout
    store = cfg.store()
    store.autotrain = True
    env = store.env
    if states:
        coalitions = required_coalitions(env, states)
    elif default_players(env, env.nonterminal_states[0]) is not None:
        raise ValueError(f"{env.name} explains grouped players; pass --state to train what it needs")
    else:
        coalitions = store.required()
    store.populate(coalitions)
    failed = []
    print(f"env {cfg.env}: {len(coalitions)} coalitions + exact full-feature artifact", file=out)
    for c in coalitions:
        d = store.get(c).diagnostics
        ok = bool(d.get("converged"))
        if not ok:
            failed.append(c)
        print(f"  {c.key:<16} residual={d.get('bellman_residual', 0.0):.3g} "
              f"max_td_last100={d.get('max_td_last100', 0.0):.3g} unvisited={d.get('unvisited_pairs', 0)} "
              f"{'ok' if ok else 'FAILED'}", file=out)
    print(f"trained: {store.trained}, cached: {store.loaded}", file=out)
    if failed and not cfg.force:
        print("convergence gate failed for: " + ", ".join(c.key for c in failed), file=sys.stderr)
        return EXIT_CONVERGENCE
    return EXIT_OK


def cmd_explain(cfg: RunConfig, states, out=None) -> int:
    out = out or sys.stdout
    store = cfg.store()
    for s in states:
        out.write(render(explain(cfg, s, store), cfg.format))
    return EXIT_OK


def cmd_table(path: str, fmt: str, out=None) -> int:
    out = out or sys.stdout
    text = sys.stdin.read() if path == "-" else open(path).read()
    try:
        report = ExplanationReport.from_dict(json.loads(text))
    except (json.JSONDecodeError, KeyError) as exc:
        raise ValueError(f"{path} is not a report: {exc}") from None
    out.write(render(report, fmt))
    return EXIT_OK


def cmd_axioms(cfg: RunConfig, states, out=None) -> int:
    out = out or sys.stdout
    results = axiom_suite(cfg, states)
    json.dump({"results": results, "pass": all(r["pass"] for r in results)}, out, indent=2, sort_keys=True)
    out.write("\n")
    return EXIT_OK if all(r["pass"] for r in results) else 1


def cmd_bench(cfg: RunConfig, states, out=None) -> int:
    out = out or sys.stdout
    store = cfg.store()
    store.autotrain = True
    t0 = time.perf_counter()
    store.populate(required_coalitions(store.env, states))
    t1 = time.perf_counter()
    for s in states:
        explain(cfg, s, store)
    t2 = time.perf_counter()
    json.dump({"env": cfg.env, "coalitions": len(required_coalitions(store.env, states)), "states": len(states),
               "train_seconds": round(t1 - t0, 3), "explain_seconds": round(t2 - t1, 3)}, out, indent=2)
    out.write("\n")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "table":
            return cmd_table(args.report, args.format)
        cfg = config_from_args(args)
        if args.command == "train":
            env = make_env(cfg.env)
            return cmd_train(cfg, [parse_state(env, s) for s in args.state or ()])
        states = _states(cfg, args, fallback=args.command == "bench")
        if args.command == "explain":
            return cmd_explain(cfg, states)
        if args.command == "axioms":
            return cmd_axioms(cfg, states)
        return cmd_bench(cfg, states)
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (UnconvergedArtifactError, ConvergenceError) as exc:
        print(f"convergence error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except MissingArtifactError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_VALIDATION
    except (ValueError, StructureError, CapacityError, ContractError, KeyError, LookupError,
            UnobservedTransitionError, CvfEvaluationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
