"""Command-line entry point: ``oocytekit <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .errors import OocyteError

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", type=Path, required=True, help="output file or directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="oocytekit", description="Oocyte localization, features and SVM classification.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--n-oocytes", type=int, dest="n_oocytes")
    p.add_argument("--noise-sigma", type=float, dest="noise_sigma")
    p.add_argument("--expert-flip-rate", type=float, dest="expert_flip_rate")

    p = sub.add_parser("localize", parents=[common], help="detect oocytes and crop ROIs")
    p.add_argument("--manifest", type=Path, required=True)

    p = sub.add_parser("extract", parents=[common], help="compute the 24 features per ROI")
    p.add_argument("--rois", type=Path, required=True, help="rois.json written by localize")

    p = sub.add_parser("train", parents=[common], help="grid search and fit the SVM")
    p.add_argument("--features", type=Path, required=True)

    p = sub.add_parser("predict", parents=[common], help="label oocytes with a trained model")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--loo", action="store_true",
                   help="leave-one-out predictions with the model's hyperparameters")

    p = sub.add_parser("evaluate", parents=[common], help="compute the evaluation report")
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--rois", type=Path, required=True)
    p.add_argument("--split", type=Path, help="split.json; restricts classification metrics to test ids")
    p.add_argument("--pred-manifest", type=Path, help="manifest of predicted masks for IoU")

    p = sub.add_parser("ablate", parents=[common], help="leave-one-out accuracy per feature subset")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--C", type=float, dest="C")
    p.add_argument("--gamma", type=float)
    return parser


def _config(args) -> pipeline.RunConfig:
    overrides = {"seed": args.seed}
    for key in ("n_oocytes", "noise_sigma", "expert_flip_rate", "C", "gamma"):
        overrides[key] = getattr(args, key, None)
    return pipeline.RunConfig.from_file(args.config, **overrides)


def run(args) -> None:
    cfg = _config(args)
    cmd = args.command
    if cmd == "synth":
        pipeline.run_synth(cfg, args.out)
    elif cmd == "localize":
        res = pipeline.run_localize(cfg, args.manifest, args.out)
        summary = res["localization"]["summary"]
        print(f"{len(res['rois'])} ROIs; count match {summary['count_match_fraction']}, "
              f"within {summary['radius']} px {summary['within_radius_fraction']}")
    elif cmd == "extract":
        vectors = pipeline.run_extract(cfg, args.rois, args.out)
        print(f"{len(vectors)} feature rows written to {args.out}")
    elif cmd == "train":
        res = pipeline.run_train(cfg, args.features, args.out)
        cv = res["cv"]
        print(f"C={cv.C} gamma={cv.gamma} mean validation accuracy {cv.mean_accuracy:.3f}")
    elif cmd == "predict":
        rows = pipeline.run_predict(cfg, args.model, args.features, args.out, loo=args.loo)
        print(f"{len(rows)} predictions written to {args.out}")
    elif cmd == "evaluate":
        report = pipeline.run_evaluate(cfg, args.predictions, args.manifest, args.rois, args.out,
                                       args.split, args.pred_manifest)
        m = report["classification"]["metrics"]
        print(" ".join(f"{k}={v:.3f}" if v is not None else f"{k}=n/a" for k, v in m.items())
              + (f" auc={report['classification']['auc']:.3f}"
                 if report["classification"]["auc"] is not None else ""))
    elif cmd == "ablate":
        print(pipeline.format_ablation(pipeline.run_ablate(cfg, args.features, args.out)))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except pipeline.ConfigError as exc:
        print(f"oocytekit: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OocyteError as exc:
        print(f"oocytekit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
