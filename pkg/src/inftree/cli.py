"""Command-line entry point: ``inftree run|compare|resume``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="inftree", description="Inference-tree experiments")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one configured experiment")
    r.add_argument("--config", required=True, type=Path)
    r.add_argument("--seed", type=int)
    r.add_argument("--budget", type=int)
    r.add_argument("--out", type=Path)

    c = sub.add_parser("compare", help="replicate several configs and summarize quantile traces")
    c.add_argument("--config", required=True, type=Path, action="append",
                   help="repeat once per algorithm")
    c.add_argument("--seed", type=int)
    c.add_argument("--budget", type=int)
    c.add_argument("--out", type=Path, required=True)
    c.add_argument("--replications", type=int, default=10)

    s = sub.add_parser("resume", help="continue a run from its checkpoint")
    s.add_argument("--checkpoint", type=Path,
                   help="checkpoint.json (defaults to <out>/checkpoint.json)")
    s.add_argument("--config", type=Path, help="config whose `out` holds the checkpoint")
    s.add_argument("--seed", type=int, help="must match the checkpoint if given")
    s.add_argument("--budget", type=int, help="new total budget")
    s.add_argument("--out", type=Path)
    return p


def _resume(args):
    ckpt = args.checkpoint
    if ckpt is None:
        if args.out is not None:
            ckpt = args.out / "checkpoint.json"
        elif args.config is not None:
            ckpt = Path(harness.load_config(args.config).out) / "checkpoint.json"
        else:
            raise harness.ConfigError("resume needs --checkpoint, --out or --config")
    if not ckpt.exists():
        raise harness.ConfigError(f"no checkpoint at {ckpt}")
    if args.seed is not None:
        seed = json.loads(ckpt.read_text(encoding="utf-8"))["config"]["seed"]
        if args.seed != seed:
            raise harness.ConfigError(f"--seed {args.seed} does not match checkpoint seed {seed}")
    return harness.resume(ckpt, budget=args.budget, out=args.out)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = harness.load_config(args.config, seed=args.seed, budget=args.budget,
                                      out=None if args.out is None else str(args.out))
            s = harness.run(cfg)
            print(f"{cfg.label}: {s.iteration} iterations, {s.evals_used} evals, "
                  f"log ML {s.trace[-1][2]:.6g} -> {cfg.out}")
        elif args.command == "compare":
            cfgs = [harness.load_config(p, seed=args.seed, budget=args.budget) for p in args.config]
            path = harness.compare(cfgs, args.replications, args.out)
            print(f"summary written to {path}")
        else:
            s = _resume(args)
            print(f"resumed to {s.iteration} iterations, {s.evals_used} evals")
    except harness.ConfigError as exc:
        print(f"inftree: config error: {exc}", file=sys.stderr)
        return 2
    except FloatingPointError as exc:
        print(f"inftree: numerical failure ({exc}); checkpoint written", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
