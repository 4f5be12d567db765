"""Command-line entry point: ``coughforest <command> ...``."""

import argparse
import json
import logging
import sys

from .dataset import build_combined, load_manifest, materialize, read_feature_csv, write_feature_csv
from .errors import ConfigurationError
from .harness import (
    PipelineOptions,
    StrategyConfig,
    cv_objective,
    evaluate_combined,
    run_cross_dataset,
    run_strategy,
)
from .tuning import SearchSpace, optimize

log = logging.getLogger("coughforest")


def _add_space_args(p):
    p.add_argument("--max-trees", type=int, default=50, help="upper bound of the tree-count range")
    p.add_argument("--max-depth", type=int, default=16, help="upper bound of the depth range")
    p.add_argument("--max-epochs", type=int, default=50, help="upper bound of the epoch range")


def _space(args):
    trees = (1, 1) if args.classifier == "dndt" else (5, args.max_trees)
    return SearchSpace(num_trees=trees, depth=(3, args.max_depth),
                       num_epochs=(5, args.max_epochs))


def _add_pipeline_args(p):
    p.add_argument("--classifier", choices=("dndt", "dndf"), default="dndf")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bo-budget", type=int, default=30)
    p.add_argument("--bo-inner-folds", type=int, default=10)
    p.add_argument("--rfecv-folds", type=int, default=5)
    p.add_argument("--rfecv-step", type=int, default=1)
    p.add_argument("--rfecv-trees", type=int, default=100)
    p.add_argument("--smote-k", type=int, default=5)
    _add_space_args(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel outer folds")


def _options(args, **extra):
    space = _space(args)
    return PipelineOptions(
        bo_budget=args.bo_budget, bo_inner_folds=args.bo_inner_folds,
        rfecv_folds=args.rfecv_folds, rfecv_step=args.rfecv_step,
        rfecv_trees=args.rfecv_trees, smote_k=args.smote_k, search_space=space,
        n_jobs=args.jobs, **extra,
    )


def build_parser():
    parser = argparse.ArgumentParser(prog="coughforest",
                                     description="Cough-recording COVID-19 classification.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract 193-dim features for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("combine", help="merge manifests and extract features")
    p.add_argument("--manifests", required=True, help="comma-separated manifest paths")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("evaluate", help="cross-validated evaluation of a strategy")
    p.add_argument("--features", required=True)
    p.add_argument("--strategy", type=int, choices=range(1, 6), default=5)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--report", required=True)
    p.add_argument("--global-selection", action="store_true",
                   help="select features and tune once on the full dataset")
    p.add_argument("--combined", action="store_true",
                   help="combined-dataset protocol (strategy 5 without feature selection)")
    _add_pipeline_args(p)

    p = sub.add_parser("cross", help="train on one dataset, test on another")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--report", required=True)
    _add_pipeline_args(p)

    p = sub.add_parser("tune", help="Bayesian optimization of forest hyper-parameters")
    p.add_argument("--features", required=True)
    p.add_argument("--budget", type=int, default=30)
    p.add_argument("--trials-log")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--no-smote", action="store_true")
    p.add_argument("--classifier", choices=("dndt", "dndf"), default="dndf")
    p.add_argument("--seed", type=int, default=0)
    _add_space_args(p)
    return parser


def _cmd_extract(args):
    records = load_manifest(args.manifest)
    write_feature_csv(materialize(records, n_jobs=args.jobs), args.out)
    print(f"wrote {len(records)} rows to {args.out}")


def _cmd_combine(args):
    paths = [p for p in args.manifests.split(",") if p]
    records = build_combined([load_manifest(p) for p in paths])
    write_feature_csv(materialize(records, n_jobs=args.jobs), args.out)
    print(f"wrote {len(records)} rows to {args.out}")


def _cmd_evaluate(args):
    features = read_feature_csv(args.features)
    opts = _options(args, folds=args.folds, global_selection=args.global_selection)
    if args.combined:
        cfg = StrategyConfig.without_rfecv(args.classifier, args.seed)
        report = evaluate_combined(features, cfg, opts)
    else:
        cfg = StrategyConfig.for_strategy(args.strategy, args.classifier, args.seed)
        report = run_strategy(features, cfg, opts)
    report.write(args.report)
    print(json.dumps(report.metrics, sort_keys=True))


def _cmd_cross(args):
    cfg = StrategyConfig.without_rfecv(args.classifier, args.seed)
    report = run_cross_dataset(read_feature_csv(args.train), read_feature_csv(args.test),
                               cfg, _options(args))
    report.write(args.report)
    print(json.dumps(report.metrics, sort_keys=True))


def _cmd_tune(args):
    features = read_feature_csv(args.features)
    objective = cv_objective(features.rows, features.labels, args.classifier,
                             not args.no_smote, args.folds, 5, args.seed)
    result = optimize(_space(args), objective, budget=args.budget, seed=args.seed,
                      trials_log=args.trials_log, resume=args.resume)
    print(json.dumps({"best": result.best.as_dict(), "score": result.best_score},
                     sort_keys=True))


COMMANDS = {"extract": _cmd_extract, "combine": _cmd_combine, "evaluate": _cmd_evaluate,
            "cross": _cmd_cross, "tune": _cmd_tune}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on bad usage
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
