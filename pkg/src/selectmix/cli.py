"""Command-line entry point: ``selectmix <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import crossval, datasets
from .datasets import NoiseSpec
from .harness import (
    ExperimentConfig,
    compute_selection,
    prepare_data,
    results_csv,
    run_experiment,
    sweep_alpha,
    theory_check,
)
from .mixing import POOLS, STRATEGIES


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file with ExperimentConfig fields")
    p.add_argument("--dataset", help="'mnist', 'gaussian', or a directory holding IDX files")
    p.add_argument("--noise-kind", choices=datasets.NOISE_KINDS)
    p.add_argument("--noise-rate", type=float)
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--alpha", type=float)
    p.add_argument("--pool", choices=POOLS, help="SelectMix partner pool")
    p.add_argument("--kfold", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--oof-epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--train-subset", type=int)
    p.add_argument("--test-split", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)


def build_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_dict(json.loads(args.config.read_text())) if args.config else ExperimentConfig()
    noise = cfg.noise
    if args.noise_kind is not None:
        noise = replace(noise, kind=args.noise_kind)
    if args.noise_rate is not None:
        noise = replace(noise, rate=args.noise_rate)
    strat = cfg.strategy
    if args.strategy is not None:
        strat = replace(strat, kind=args.strategy)
    if args.alpha is not None:
        strat = replace(strat, alpha=args.alpha)
    if args.pool is not None:
        strat = replace(strat, partner_pool=args.pool)
    overrides = {k: getattr(args, k) for k in
                 ("dataset", "kfold", "epochs", "oof_epochs", "batch_size", "train_subset", "test_split", "seed")
                 if getattr(args, k) is not None}
    return replace(cfg, noise=noise, strategy=strat, **overrides)


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def cmd_inject_noise(args) -> int:
    cfg = build_config(args)
    train, _ = prepare_data(cfg)
    out = args.out or Path("noisy.csv")
    datasets.write_csv(train, out)
    print(f"{len(train)} samples, {int(train.flip_mask.sum())} flipped -> {out}", file=sys.stderr)
    return 0


def cmd_oof_predict(args) -> int:
    cfg = build_config(args)
    train, _ = prepare_data(cfg)
    sel = compute_selection(cfg, train)
    out = args.out or Path("oof.csv")
    crossval.write_oof_csv(sel.oof, out)
    mismatch_path = args.mismatch_out or out.with_suffix(".mismatch.txt")
    crossval.write_mismatch(sel.mismatch, mismatch_path)
    print(f"rho={sel.mismatch.rho:.4f} -> {out}, {mismatch_path}", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    cfg = build_config(args)
    report = run_experiment(cfg)
    _emit(results_csv([(cfg.strategy.alpha, cfg.seed, report)], aggregates=False), args.out)
    if args.report_json is not None:
        args.report_json.write_text(report.to_json())
    print(f"best={report.best_acc:.4f} last10={report.last10_avg:.4f}", file=sys.stderr)
    return 0


def cmd_theory_check(args) -> int:
    cfg = build_config(args)
    if args.dataset is None and not args.config:
        cfg = replace(cfg, dataset="gaussian", epochs=args.epochs or 20,
                      noise=NoiseSpec(args.noise_kind or "symmetric",
                                      0.4 if args.noise_rate is None else args.noise_rate))
    report = theory_check(cfg, args.draws)
    _emit(report.to_json() + "\n", args.out)
    return 0


def cmd_sweep(args) -> int:
    cfg = build_config(args)
    if args.strategy is None and not args.config:
        cfg = replace(cfg, strategy=replace(cfg.strategy, kind="selectmix"))
    result = sweep_alpha(cfg, _floats(args.alphas), _ints(args.seeds))
    _emit(result.to_csv(), args.out)
    for alpha, seed, msg in result.errors:
        print(f"alpha={alpha} seed={seed} failed: {msg}", file=sys.stderr)
    return 1 if result.errors else 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selectmix", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inject-noise", help="write the noisy training set as CSV")
    _common(p)
    p.set_defaults(func=cmd_inject_noise)

    p = sub.add_parser("oof-predict", help="K-fold out-of-fold predictions and mismatch set")
    _common(p)
    p.add_argument("--mismatch-out", type=Path)
    p.set_defaults(func=cmd_oof_predict)

    p = sub.add_parser("train", help="one end-to-end run; prints a results CSV row")
    _common(p)
    p.add_argument("--report-json", type=Path)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("theory-check", help="risk comparison on a trained model (JSON)")
    _common(p)
    p.add_argument("--draws", type=int, default=100_000)
    p.set_defaults(func=cmd_theory_check)

    p = sub.add_parser("sweep", help="alpha x seed grid; results CSV")
    _common(p)
    p.add_argument("--alphas", default="0.1,0.5,1.0,2.0,4.0")
    p.add_argument("--seeds", default="0,1,2")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
