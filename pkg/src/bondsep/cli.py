"""Command-line entry point: ``bondsep {run, verify, env, report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

from . import experiments as ex
from .environment import Environment, LatticeWindow, Law, gamma_convergence_report, generate

EXIT_FAIL = 1
EXIT_ERROR = 3


def _module_of(err: BaseException) -> str:
    """Innermost ``bondsep`` module in the traceback, for tagged diagnostics."""
    name = "bondsep"
    for frame in traceback.extract_tb(err.__traceback__):
        p = Path(frame.filename)
        if p.parent.name == "bondsep":
            name = p.stem.lstrip("_")
    return name


def _param(text: str) -> tuple[str, object]:
    key, sep, val = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError("parameters take the form key=value")
    try:
        return key, json.loads(val)
    except json.JSONDecodeError:
        return key, val


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bondsep", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress of Monte Carlo chunks")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one named experiment")
    r.add_argument("experiment", nargs="?", choices=ex.EXPERIMENTS)
    r.add_argument("--config", help="JSON experiment configuration; flags override its fields")
    r.add_argument("--N", type=int)
    r.add_argument("--replicas", type=int)
    r.add_argument("--horizon", type=float)
    r.add_argument("--sample-every", type=float)
    r.add_argument("--profile")
    r.add_argument("--law")
    r.add_argument("--epsilon", type=float)
    r.add_argument("--seed", type=int, help="master seed")
    r.add_argument("--env-seed", type=int, help="pin the environment seed")
    r.add_argument("--env-file", help="take seed, law and epsilon from an environment JSON file")
    r.add_argument("--cutoff", help="fixed:<l> or quarter-power")
    r.add_argument("--threads", type=int)
    r.add_argument("--output", default="results")
    r.add_argument("--cache", help="Monte Carlo cache directory")
    r.add_argument("--param", action="append", type=_param, default=[], metavar="KEY=VALUE",
                   help="experiment-specific parameter (JSON value)")

    v = sub.add_parser("verify", help="run the verification suite")
    v.add_argument("level", choices=("fast", "full"))
    v.add_argument("--threads", type=int, default=1)
    v.add_argument("--cache")
    v.add_argument("--json", help="write the suite report here")

    e = sub.add_parser("env", help="generate and inspect an environment")
    e.add_argument("--N", type=int, default=64)
    e.add_argument("--half-width", type=float, default=2.0)
    e.add_argument("--boundary", choices=("periodic", "frozen-buffer"), default="frozen-buffer")
    e.add_argument("--law", default=ex.DEFAULT_LAW)
    e.add_argument("--epsilon", type=float, default=0.25)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--env-file", help="inspect this environment file instead")
    e.add_argument("--out", help="write the environment (with values) to this JSON file")

    rep = sub.add_parser("report", help="render a JSON report as text")
    rep.add_argument("path")
    return p


def _config(args) -> ex.ExperimentConfig:
    base: dict = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            base = json.load(fh)
    if args.experiment:
        base["experiment"] = args.experiment
    if "experiment" not in base:
        raise SystemExit("bondsep run: an experiment id is required (argument or config file)")
    if args.env_file:
        env = Environment.from_json(args.env_file)
        base.update(env_seed=env.seed, law=_law_text(env.law), epsilon=env.epsilon)
    flags = {"N": args.N, "replicas": args.replicas, "horizon": args.horizon, "sample_every": args.sample_every,
             "profile": args.profile, "law": args.law, "epsilon": args.epsilon, "master_seed": args.seed,
             "env_seed": args.env_seed, "cutoff": args.cutoff, "threads": args.threads, "cache": args.cache}
    base.update({k: v for k, v in flags.items() if v is not None})
    base["output"] = args.output
    params = dict(base.get("params", {}))
    params.update(dict(args.param))
    base["params"] = params
    return ex.ExperimentConfig.from_dict(base)


def _law_text(law: Law) -> str:
    if law.kind == "constant":
        return f"constant:{law.a}"
    if law.kind == "uniform":
        return f"uniform:{law.a},{law.b}"
    return f"two-point:{law.a},{law.b},{law.p}"


def cmd_run(args) -> int:
    try:
        cfg = _config(args)
    except ValueError as err:
        print(f"bondsep run: {err}", file=sys.stderr)
        return 2
    try:
        report = ex.run(cfg)
    except Exception as err:
        print(f"error [{_module_of(err)}]: {err}", file=sys.stderr)
        return EXIT_ERROR
    print(ex.render(report))
    print(f"report written to {Path(cfg.output) / (cfg.experiment + '.json')}")
    return 0 if report["pass"] else EXIT_FAIL


def cmd_verify(args) -> int:
    from .acceptance import verify

    results = verify(args.level, cache=args.cache, threads=args.threads)
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} passed")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump([{"key": r.key, "title": r.title, "pass": r.passed, "summary": r.summary,
                        "runtime_s": r.runtime_s, "checks": r.details, "error": r.error} for r in results],
                      fh, indent=2, default=ex._jsonable)
    return 0 if passed == len(results) else EXIT_FAIL


def cmd_env(args) -> int:
    if args.env_file:
        env = Environment.from_json(args.env_file)
    else:
        w = LatticeWindow.symmetric(args.N, args.half_width, args.boundary)
        try:
            env = generate(args.seed, Law.parse(args.law), w, args.epsilon)
        except ValueError as err:
            print(f"error [environment]: {err}", file=sys.stderr)
            return EXIT_ERROR
    w = env.window
    print(f"seed {env.seed}  law {_law_text(env.law)}  epsilon {env.epsilon}")
    print(f"window N={w.N} sites {w.x_min}..{w.x_max} ({w.size}) boundary {w.boundary}")
    print(f"gamma (law) {env.gamma_law:.6f}   gamma (window) {env.gamma_hat:.6f}")
    print(f"xi range [{env.xi.min():.4f}, {env.xi.max():.4f}]")
    for row in gamma_convergence_report(env, [2**k for k in range(4, 14) if 2**k <= w.x_max]):
        print(f"  K={row['K']:>6}  right {row['right']:.5f}  left {row['left']:.5f}")
    if args.out:
        env.to_json(args.out, include_values=True)
        print(f"written to {args.out}")
    return 0


def cmd_report(args) -> int:
    with open(args.path, encoding="utf-8") as fh:
        data = json.load(fh)
    if isinstance(data, list):  # suite report
        for r in data:
            print(f"[{'PASS' if r['pass'] else 'FAIL'}] {r['key']:>4}  {r['title']}: {r['summary']}")
    else:
        print(ex.render(data))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    return {"run": cmd_run, "verify": cmd_verify, "env": cmd_env, "report": cmd_report}[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
