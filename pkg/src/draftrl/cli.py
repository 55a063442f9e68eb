"""Command-line entry point: ``draftrl {train,validate,export,eval,gen-suite,defaults}``.

Exit codes: 0 success, 1 invalid drafts (validate only), 2 usage or config
error, 3 runtime failure. Set ``DRAFTRL_LOG_LEVEL`` (e.g. ``DEBUG``) for
more logging on standard error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from .cod import DraftFormatError, parse_drafts, validate_draft
from .config import ConfigInvalid, TrainingConfig, dump_config, load_config, from_flat, parse_overrides
from .env import generate_suite, write_suite
from .orchestrator import SuiteNotFound, load_suite, train, validate
from .runio import (EXPORT_KINDS, RunIncomplete, RunLocked, latest_checkpoint, load_checkpoint,
                    load_run_config, export, run_lock, write_manifest)

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("draftrl")

EXPORT_HELP = """\
learning_curve:    iteration,mean_task_reward,validation_reward
reward_components: stage,task,peer,coherence,diversity,combined (five equal stages)
ablation_summary:  run,num_agents,drafts_per_query,peer_eval,use_reward_model,rl_training,
                   iterations_run,final_mean_task_reward,final_validation_reward,steps_to_threshold
"""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="draftrl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="run the training loop")
    t.add_argument("--config", help="key = value config file (defaults if omitted)")
    t.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key; repeatable")
    t.add_argument("--run-dir", default="runs/latest", help="output directory")

    v = sub.add_parser("validate", help="check drafts in a text file against the step rule")
    v.add_argument("path")

    e = sub.add_parser("export", help="write a CSV summary of a run to stdout",
                       epilog=EXPORT_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    e.add_argument("run_dir")
    e.add_argument("--kind", required=True, help=f"one of: {', '.join(EXPORT_KINDS)}")

    ev = sub.add_parser("eval", help="score a checkpoint on a suite without learning")
    ev.add_argument("run_dir")
    ev.add_argument("--checkpoint", help="checkpoint directory (latest in run_dir by default)")
    ev.add_argument("--suite", help="suite path or 'dev500' (validation suite by default)")

    g = sub.add_parser("gen-suite", help="write a synthetic task suite as JSONL")
    g.add_argument("--n", type=int, default=500)
    g.add_argument("--depth", type=int, default=3)
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--out", default="-")

    sub.add_parser("defaults", help="print the default config file")
    return p


def cmd_train(args) -> int:
    try:
        cfg = (load_config(args.config, args.overrides) if args.config
               else from_flat(parse_overrides(args.overrides)))
        load_suite(cfg.suite)
    except (ConfigInvalid, SuiteNotFound) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    run_dir = Path(args.run_dir)
    try:
        with run_lock(run_dir):
            started = time.time()
            write_manifest(run_dir, cfg, started, None, [])
            result = train(cfg, run_dir)
            artifacts = ["config.cfg", "metrics.csv", "events.jsonl", "updates.csv",
                         "timing.jsonl"] + [str(p.relative_to(run_dir)) for p in result.checkpoints]
            write_manifest(run_dir, cfg, started, time.time(), artifacts)
    except RunLocked as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - report any failure as a runtime error
        log.debug("training failed", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    rep = result.report
    print(json.dumps({"iterations": len(result.history), "steps_to_threshold": rep.steps_to_threshold,
                      "final_validation_reward": rep.final_mean_reward, "run_dir": str(run_dir)}))
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        text = Path(args.path).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        drafts = parse_drafts(text)
    except DraftFormatError as exc:
        print(f"parse error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    all_valid = True
    for i, d in enumerate(drafts):
        rep = validate_draft(d)
        all_valid &= rep.valid
        status = "valid" if rep.valid else "INVALID"
        print(f"draft {i}: {status}")
        for where, reason in rep.violations:
            loc = f"step {where}" if isinstance(where, int) else where
            detail = d.steps[where].text if isinstance(where, int) else ""
            print(f"  {loc}: {reason} {detail!r}" if detail else f"  {loc}: {reason}")
    return EXIT_OK if all_valid else EXIT_INVALID


def cmd_export(args) -> int:
    try:
        sys.stdout.write(export(args.run_dir, args.kind))
    except (ValueError, RunIncomplete, ConfigInvalid, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        cfg = load_run_config(args.run_dir)
        ckpt = Path(args.checkpoint) if args.checkpoint else latest_checkpoint(args.run_dir)
        if ckpt is None:
            raise ConfigInvalid(f"no checkpoints in {args.run_dir}")
        queries = load_suite(args.suite) if args.suite else None
    except (ConfigInvalid, SuiteNotFound, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        from .orchestrator import validation_suite
        state = load_checkpoint(cfg, ckpt)
        reward = validate(state, queries if queries is not None else validation_suite(cfg))
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps({"checkpoint": str(ckpt), "mean_reward": reward}))
    return EXIT_OK


def cmd_gen_suite(args) -> int:
    try:
        suite = generate_suite(args.n, args.depth, args.seed)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.out == "-":
        for q in suite:
            sys.stdout.write(json.dumps(q.to_record(), sort_keys=True) + "\n")
    else:
        write_suite(suite, args.out)
    return EXIT_OK


def cmd_defaults(args) -> int:
    sys.stdout.write(dump_config(TrainingConfig()))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "validate": cmd_validate, "export": cmd_export, "eval": cmd_eval,
            "gen-suite": cmd_gen_suite, "defaults": cmd_defaults}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("DRAFTRL_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
