"""Command-line entry point.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
Every subcommand reads and validates all inputs and computes all results
before the first output file is written; files are written atomically.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from smartcal import calibrators, metrics, tempnet, theory
from smartcal.calibrators import TrainConfig
from smartcal.dataio import LogitSet, SplitSpec, atomic_write, load_logits, save_logits, split
from smartcal.errors import DataError, NumericError
from smartcal.softbin import SoftBinConfig

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

log = logging.getLogger("smartcal")


class UsageError(Exception):
    pass


def _g6(x) -> str:
    return f"{x:.6g}"


def _write_text(path, text: str) -> None:
    atomic_write(path, text.encode("utf-8"))


def _probs_csv(probs: np.ndarray, labels: np.ndarray) -> str:
    k = probs.shape[1]
    lines = [f"# {k} probabilities, label"]
    for row, lab in zip(probs, labels):
        lines.append(",".join(repr(float(v)) for v in row) + f",{int(lab)}")
    return "\n".join(lines) + "\n"


def _softbin_from(args) -> SoftBinConfig:
    try:
        return SoftBinConfig(args.bins, args.alpha, args.q)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _train_config(args, indicator: str | None) -> TrainConfig:
    try:
        return TrainConfig(
            loss=args.loss,
            epochs=args.epochs,
            learning_rate=args.lr,
            optimizer=args.optimizer,
            seed=args.seed,
            width=args.width,
            indicator=indicator or "gap",
            softbin=_softbin_from(args),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


# -- subcommands ------------------------------------------------------------


def cmd_synth(args) -> None:
    try:
        cfg = theory.SynthConfig(
            n=args.n, k=args.k, seed=args.seed, scale=args.scale, distortion=args.distortion,
            t_const=args.t_const, affine_a=args.a, affine_b=args.b,
            lo=args.lo, hi=args.hi, mid=args.mid, width=args.width,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    clean, distorted = theory.synthesize(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = args.format
    save_logits(clean, out / f"clean.{ext}", ext)
    save_logits(distorted, out / f"distorted.{ext}", ext)
    print(f"wrote {clean.n} x {clean.n_classes} clean and distorted sets to {out}")


def cmd_split(args) -> None:
    data = load_logits(args.data)
    spec = SplitSpec(val_count=args.val_count, val_fraction=args.val_fraction, seed=args.seed,
                     stratified=args.stratified)
    val, test = split(data, spec)
    save_logits(val, args.out_val)
    save_logits(test, args.out_test)
    print(f"split {data.n} rows: val {val.n}, test {test.n}")


def cmd_calibrate(args) -> None:
    if args.method == "ts" and args.indicator is not None:
        raise UsageError("--indicator only applies to --method smart")
    cfg = _train_config(args, args.indicator)
    val = load_logits(args.val)
    if args.method == "smart":
        model = calibrators.train_smart(val, cfg)
        history = model.history
    else:
        model = calibrators.train_ts(val, cfg)
        history = [model.meta["best_loss"]]
    log_path = args.log or str(Path(args.out).with_suffix("")) + ".log.csv"
    log_text = "epoch,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(history))
    calibrators.save_model(model, args.out)
    _write_text(log_path, log_text)
    if model.method == "ts":
        print(f"ts: T={_g6(model.T)} {cfg.loss}={_g6(model.meta['best_loss'])}")
    else:
        print(f"smart[{model.indicator}]: {cfg.loss} {_g6(history[0])} -> {_g6(model.meta['best_loss'])}"
              f" over {cfg.epochs} epochs")


def cmd_apply(args) -> None:
    model = calibrators.load_model(args.model)
    data = load_logits(args.logits)
    probs = model.apply(data)
    _write_text(args.out, _probs_csv(probs, data.labels))
    print(f"wrote {probs.shape[0]} calibrated rows to {args.out}")


def _load_probs(path) -> tuple[np.ndarray, np.ndarray]:
    ls = load_logits(path)
    probs = ls.logits
    if np.any(probs < 0) or np.any(probs > 1):
        raise DataError("probabilities must lie in [0, 1]")
    bad = np.flatnonzero(np.abs(probs.sum(axis=1) - 1.0) > 1e-6)
    if bad.size:
        raise DataError(f"probabilities do not sum to 1 at row {bad[0]}")
    return probs, ls.labels


def cmd_evaluate(args) -> None:
    if args.probs is None and args.logits is None:
        raise UsageError("supply --probs, or --logits (optionally with --model)")
    if args.probs is not None and (args.logits is not None or args.model is not None):
        raise UsageError("--probs cannot be combined with --logits/--model")
    if args.model is not None and args.logits is None:
        raise UsageError("--model needs --logits")
    if args.gap_split is not None and not 0 < args.gap_split < 100:
        raise UsageError("--gap-split must be a percentile in (0, 100)")
    if args.bins < 1:
        raise UsageError("--bins must be >= 1")

    if args.probs is not None:
        probs, labels = _load_probs(args.probs)
        gaps = tempnet.logit_gap(np.log(np.maximum(probs, metrics.NLL_FLOOR)))
    else:
        data = load_logits(args.logits)
        labels = data.labels
        if args.model is not None:
            probs = calibrators.load_model(args.model).apply(data)
        else:
            probs = metrics.softmax_rows(data.logits)
        gaps = tempnet.logit_gap(data.logits)

    report = metrics.evaluate(probs, labels, args.bins)
    outputs = {}
    if args.out:
        outputs[args.out] = json.dumps(report.to_dict(), indent=2) + "\n"
    if args.reliability:
        outputs[args.reliability] = metrics.reliability_csv(report.bins)
    if args.gap_split is not None:
        if not args.reliability:
            raise UsageError("--gap-split needs --reliability to name the output files")
        cut = float(np.percentile(gaps, args.gap_split))
        low = gaps <= cut
        stem = str(Path(args.reliability).with_suffix(""))
        for name, mask in (("lowgap", low), ("highgap", ~low)):
            conf, correct = metrics.confidence_and_correct(probs[mask], labels[mask])
            _, rows = metrics.binned_error(conf, correct, args.bins)
            outputs[f"{stem}_{name}.csv"] = metrics.reliability_csv(rows)
    for path, text in outputs.items():
        _write_text(path, text)
    print(
        f"n={report.n} acc={_g6(report.accuracy)} ece={_g6(report.ece)} adaece={_g6(report.adaece)} "
        f"cece={_g6(report.cece)} nll={_g6(report.nll)} brier={_g6(report.brier)}"
    )


def cmd_bounds(args) -> None:
    if not 0.5 < args.p < 1.0:
        raise UsageError("--p must lie in (0.5, 1)")
    if args.k < 2 or args.trials < 1:
        raise UsageError("--k must be >= 2 and --trials >= 1")
    records = theory.bounds_trials(args.k, args.p, args.trials, args.seed, args.scale)
    text = theory.BOUNDS_HEADER + "\n" + "".join(r.csv_row() + "\n" for r in records)
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    ok = sum(r.ok for r in records)
    print(f"{ok}/{len(records)} solved temperatures within gap bounds", file=sys.stderr)


def cmd_ablate(args) -> None:
    indicators = args.indicators.split(",")
    losses = args.losses.split(",")
    for name in indicators:
        if name not in tempnet.INDICATORS:
            raise UsageError(f"unknown indicator {name!r}")
    for name in losses:
        if name not in calibrators.LOSSES:
            raise UsageError(f"unknown loss {name!r}")
    base = _train_config(args, None)
    val, test = load_logits(args.val), load_logits(args.test)

    rows = [("none", "-", "-", metrics.evaluate(metrics.softmax_rows(test.logits), test.labels, args.bins))]
    ts = calibrators.train_ts(val, base)
    rows.append(("ts", "-", base.loss, metrics.evaluate(ts.apply(test), test.labels, args.bins)))
    for ind in indicators:
        for loss in losses:
            cfg = TrainConfig(loss, base.epochs, base.learning_rate, base.optimizer, base.seed,
                              base.width, ind, base.softbin)
            model = calibrators.train_smart(val, cfg)
            rows.append(("smart", ind, loss, metrics.evaluate(model.apply(test), test.labels, args.bins)))

    lines = ["method,indicator,loss,ece,adaece,cece,nll,brier,accuracy"]
    for method, ind, loss, r in rows:
        lines.append(f"{method},{ind},{loss},{r.ece!r},{r.adaece!r},{r.cece!r},{r.nll!r},{r.brier!r},{r.accuracy!r}")
    _write_text(args.out, "\n".join(lines) + "\n")
    for method, ind, loss, r in rows:
        print(f"{method:6s} {ind:10s} {loss:8s} ece={_g6(r.ece)}")


# -- parser -----------------------------------------------------------------


def _add_training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--loss", default="softece", choices=calibrators.LOSSES)
    p.add_argument("--bins", type=int, default=15, help="soft-bin count B")
    p.add_argument("--alpha", type=float, default=50.0, help="soft-bin sharpness")
    p.add_argument("--q", type=float, default=1.0, help="soft-ECE norm exponent (1 or 2 for training)")
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--optimizer", default="adam", choices=("adam", "sgd"))
    p.add_argument("--width", type=int, default=tempnet.DEFAULT_WIDTH, help="hidden width d")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smartcal", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate clean and gap-distorted synthetic logits")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=theory.SynthConfig.scale)
    p.add_argument("--distortion", default="logistic", choices=theory.DISTORTIONS)
    p.add_argument("--t-const", type=float, default=0.5)
    p.add_argument("--a", type=float, default=1.0, help="affine intercept")
    p.add_argument("--b", type=float, default=0.0, help="affine slope in the gap")
    p.add_argument("--lo", type=float, default=theory.SynthConfig.lo)
    p.add_argument("--hi", type=float, default=theory.SynthConfig.hi)
    p.add_argument("--mid", type=float, default=theory.SynthConfig.mid)
    p.add_argument("--width", type=float, default=theory.SynthConfig.width)
    p.add_argument("--format", default="bin", choices=("bin", "csv"))
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="seeded validation/test split")
    p.add_argument("--data", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--val-count", type=int)
    g.add_argument("--val-fraction", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stratified", action="store_true")
    p.add_argument("--out-val", required=True)
    p.add_argument("--out-test", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("calibrate", help="fit a SMART or TS calibrator")
    p.add_argument("--method", required=True, choices=calibrators.METHODS)
    p.add_argument("--val", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="training log CSV (default: <out>.log.csv)")
    p.add_argument("--indicator", choices=tempnet.INDICATORS)
    _add_training_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("apply", help="write calibrated probabilities")
    p.add_argument("--model", required=True)
    p.add_argument("--logits", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("evaluate", help="calibration metrics and reliability rows")
    p.add_argument("--probs")
    p.add_argument("--logits")
    p.add_argument("--model")
    p.add_argument("--bins", type=int, default=metrics.DEFAULT_BINS)
    p.add_argument("--out", help="MetricReport JSON")
    p.add_argument("--reliability", help="reliability CSV")
    p.add_argument("--gap-split", type=float, help="percentile splitting low/high logit-gap subsets")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bounds", help="check solved temperatures against logit-gap bounds")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--p", type=float, default=0.8)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("ablate", help="indicator x loss ablation against TS and uncalibrated")
    p.add_argument("--val", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--indicators", default=",".join(tempnet.INDICATORS))
    p.add_argument("--losses", default=",".join(calibrators.LOSSES))
    _add_training_flags(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"smartcal {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"smartcal {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, theory.InfeasibleTarget) as exc:
        print(f"smartcal {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"smartcal {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
