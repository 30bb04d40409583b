"""Command-line entry point: ``fsdetr <subcommand>``.

Every subcommand prints line-delimited JSON records to stdout and exits
with 0 on success and 1 on any failed check.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .harness.config import load_config


def _emit(record: dict) -> None:
    print(json.dumps(record, sort_keys=True), flush=True)


def cmd_gradcheck(args) -> int:
    from .harness.gradsuite import run_grad_suite

    report = run_grad_suite(load_config(args.config))
    sys.stdout.write(report.to_jsonl())
    _emit({"summary": "gradcheck", "passed": report.passed, "checks": len(report.records), "seconds": report.seconds})
    return report.exit_code


def cmd_train(args) -> int:
    from .harness.ablation import model_ap
    from .harness.train import train_toy, write_curve

    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        model, result = train_toy(cfg, log_every=args.log_every)
    except FloatingPointError as exc:
        _emit({"summary": "train", "passed": False, "error": str(exc)})
        return 1
    write_curve(out / "loss.csv", result.curve)
    np.savez(out / "checkpoint.npz", **result.state)
    (out / "config.txt").write_text(cfg.to_text())
    first, last = result.smoothed(cfg.smooth)
    record = {
        "summary": "train",
        "steps": cfg.steps,
        "params": result.param_count,
        "smoothed_initial": first,
        "smoothed_final": last,
        "ratio": last / first,
        "ap": model_ap(model, cfg),
        "passed": True,
    }
    (out / "report.jsonl").write_text(json.dumps(record, sort_keys=True) + "\n")
    _emit(record)
    return 0


def cmd_ablate(args) -> int:
    from .harness.ablation import format_table, run_ablation

    cfg = load_config(args.config)
    progress = (lambda m: print(m, file=sys.stderr, flush=True)) if args.verbose else None
    rows = run_ablation(cfg, seeds=range(cfg.seed, cfg.seed + args.seeds), progress=progress)
    for r in rows:
        _emit(r.as_record())
    print(format_table(rows), file=sys.stderr)
    return 0


def _read_boxsets(path: str) -> list:
    from .harness.scenes import Detection

    scenes = json.loads(Path(path).read_text())
    return [[Detection.from_list(row) for row in scene] for scene in scenes]


def cmd_eval(args) -> int:
    from .harness.matching import evaluate_ap

    preds, gts = _read_boxsets(args.pred), _read_boxsets(args.gt)
    ap = evaluate_ap(preds, gts, args.iou)
    _emit({"summary": "eval", "ap": ap, "iou": args.iou, "scenes": len(gts)})
    return 0


def cmd_reparam_verify(args) -> int:
    from .harness.reparam import verify_reparameterization

    report = verify_reparameterization(args.trials, args.seed)
    _emit(report.as_record())
    return 0 if report.passed else 1


def cmd_dump_fixtures(args) -> int:
    from .harness.fixtures import dump_fixtures

    paths = dump_fixtures(args.dir)
    _emit({"summary": "dump-fixtures", "files": len(paths), "dir": str(args.dir)})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fsdetr", description="Toy small-object detector tooling.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference checks of every differentiable op")
    p.add_argument("--config")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", help="toy training run")
    p.add_argument("--config")
    p.add_argument("--out", default="run")
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="six-row toggle ablation")
    p.add_argument("--config")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("eval", help="average precision of stored detections")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reparam-verify", help="train vs deployed RepConv/RepC3 outputs")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_reparam_verify)

    p = sub.add_parser("dump-fixtures", help="write golden tensors for the CFSB branches")
    p.add_argument("dir")
    p.set_defaults(func=cmd_dump_fixtures)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
