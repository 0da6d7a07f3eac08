"""Command line entry point: ``clever score`` and ``clever compare``."""

from __future__ import annotations

import argparse
import logging
import sys

from .attack import AttackParams
from .harness import (
    TARGET_MODES,
    ExperimentConfig,
    compare_transforms,
    emit_aggregates,
    emit_report,
    run_experiment,
    write_report,
)


def _csv_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", required=True, help="model JSON file")
    p.add_argument("--data", required=True, help="dataset JSON file")
    p.add_argument("--targets", default=",".join(TARGET_MODES),
                   help="comma list of runner_up, random, least_likely")
    p.add_argument("--nb", type=int, default=100, help="number of batches N_b")
    p.add_argument("--ns", type=int, default=200, help="samples per batch N_s")
    p.add_argument("--radius", type=float, default=2.0, help="ball radius R")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-inputs", type=int, default=None)
    p.add_argument("--power-iters", type=int, default=100)
    p.add_argument("--power-tol", type=float, default=1e-5)
    p.add_argument("--bpda-mode", choices=("center", "sample"), default="center",
                   help="sample the ball around h(x0) (center) or transform each sample (sample)")
    p.add_argument("--workers", type=int, default=1, help="threads evaluating EVT batches")
    p.add_argument("--out", default=None, help="output file (default: stdout)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clever", description="CLEVER robustness scores")
    sub = parser.add_subparsers(dest="command", required=True)

    score = sub.add_parser("score", help="score a dataset")
    _common(score)
    score.add_argument("--transform", default="identity", help="identity or bitdepth:k")
    score.add_argument("--order", default="first,second", help="comma list of first, second")
    score.add_argument("--attack", action="store_true", help="also run the targeted l2 attack")
    score.add_argument("--attack-steps", type=int, default=5, help="binary search steps")
    score.add_argument("--attack-iters", type=int, default=500)
    score.add_argument("--attack-const", type=float, default=0.01)
    score.add_argument("--attack-lr", type=float, default=0.01)
    score.add_argument("--confidence", type=float, default=0.0)
    score.add_argument("--format", choices=("csv", "json"), default="csv")

    cmp_ = sub.add_parser("compare", help="compare first-order scores across transforms")
    _common(cmp_)
    cmp_.add_argument("--transforms", default="identity,bitdepth:3",
                      help="comma list; the first one is the baseline")
    return parser


def _config(args, **extra) -> ExperimentConfig:
    return ExperimentConfig(
        model_path=args.model,
        data_path=args.data,
        targets=tuple(_csv_list(args.targets)),
        n_batches=args.nb,
        n_samples=args.ns,
        radius=args.radius,
        seed=args.seed,
        max_inputs=args.max_inputs,
        power_iters=args.power_iters,
        power_tol=args.power_tol,
        bpda_mode=args.bpda_mode,
        workers=args.workers,
        **extra,
    )


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "score":
            config = _config(
                args,
                transform=args.transform,
                orders=tuple(_csv_list(args.order)),
                run_attack=args.attack,
                attack_params=AttackParams(
                    binary_search_steps=args.attack_steps,
                    max_iterations=args.attack_iters,
                    initial_const=args.attack_const,
                    learning_rate=args.attack_lr,
                    confidence=args.confidence,
                ),
            )
        else:
            config = _config(args)
            transforms = _csv_list(args.transforms)
            if len(transforms) < 2:
                raise ValueError("--transforms needs at least two entries")
    except (ValueError, NotImplementedError) as exc:
        print(f"clever: error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "score":
            report = run_experiment(config)
            if args.out:
                for path in write_report(report, args.out, args.format):
                    print(f"wrote {path}", file=sys.stderr)
            else:
                sys.stdout.write(emit_report(report, args.format))
                if args.format == "csv":
                    sys.stdout.write("\n" + emit_aggregates(report))
            print(f"evaluated {report.evaluated} inputs, skipped {report.skipped}", file=sys.stderr)
        else:
            table = compare_transforms(config, transforms)
            text = table.to_csv()
            if args.out:
                with open(args.out, "w", newline="") as fh:
                    fh.write(text)
            else:
                sys.stdout.write(text)
    except (OSError, ValueError) as exc:
        print(f"clever: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
