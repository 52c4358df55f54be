"""Command-line entry point: ``cien-marl <verb> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import env as envlib
from . import harness
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, load_config
from .gradcheck import run_gradcheck

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_ABORTED = 4
EXIT_CHECK_FAILED = 5

GRADCHECK_TOLERANCE = 1e-5


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cien-marl", description=__doc__)
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="YAML/JSON run config")
            sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                            help="dotted-path override, repeatable")
            sp.add_argument("--seed", type=int, help="run this single seed instead of config seeds")
        sp.add_argument("--out", help="output directory (file for export-trace)")
        sp.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("train", help="train every configured seed"))
    ev = sub.add_parser("evaluate", help="noiseless deterministic evaluation of a checkpoint")
    common(ev, config=False)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--episodes", type=int, default=10)
    common(sub.add_parser("fine-tune", help="continue a checkpoint under observation noise"))
    gc = sub.add_parser("gradcheck", help="finite-difference audit of the training objectives")
    gc.add_argument("--n-networks", type=int, default=20)
    gc.add_argument("--width", type=int, default=16)
    gc.add_argument("-v", "--verbose", action="store_true")
    ex = sub.add_parser("export-trace", help="write one deterministic episode as CSV")
    common(ex, config=False)
    ex.add_argument("--checkpoint", required=True)
    ex.add_argument("--episode-seed", type=int, default=0)
    return p


def _run_config(args):
    cfg = load_config(args.config, args.overrides)
    if args.seed is not None:
        cfg = cfg.with_(seeds=(args.seed,))
    if args.out is not None:
        cfg = cfg.with_(output_dir=args.out)
    return cfg


def _print(obj):
    print(json.dumps(obj, sort_keys=True))


def run(argv: list[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "train":
            results = harness.train(_run_config(args))
            for m in results:
                _print(m.summary())
            return EXIT_ABORTED if any(m.aborted for m in results) else EXIT_OK
        if args.verb == "fine-tune":
            cfg = _run_config(args)
            m = harness.fine_tune(cfg)
            _print(m.summary())
            return EXIT_ABORTED if m.aborted else EXIT_OK
        if args.verb == "evaluate":
            summary = harness.evaluate(args.checkpoint, args.episodes, out_dir=_checked_out(args))
            _print(summary)
            return EXIT_OK
        if args.verb == "export-trace":
            agents, meta = load_checkpoint(args.checkpoint)
            rows = harness.run_policy_episode(agents, meta["mode"], envlib.EnvConfig.from_dict(meta["env"]),
                                              seed=args.episode_seed)
            out = Path(args.out or "trace.csv")
            out.parent.mkdir(parents=True, exist_ok=True)
            envlib.write_trace(out, rows)
            _print({"trace": str(out), "steps": len(rows) - 1})
            return EXIT_OK
        if args.verb == "gradcheck":
            errors = run_gradcheck(args.n_networks, args.width)
            worst = max(errors.values())
            _print({"max_relative_error": worst, "per_family": errors, "tolerance": GRADCHECK_TOLERANCE})
            return EXIT_OK if worst < GRADCHECK_TOLERANCE else EXIT_CHECK_FAILED
    except (ConfigError, FileNotFoundError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_USAGE


def _checked_out(args):
    # out dir is created only after the checkpoint is known to exist
    if not Path(args.checkpoint).is_file():
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    return args.out


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
