"""Training strategies, cross-validated evaluation and report assembly."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
import json
import logging

import numpy as np

from .dataset import build_combined, materialize
from .ensemble import derive_seeds, rfecv
from .errors import ConfigurationError, IntegrityError
from .evaluation import (
    ConfusionMatrix,
    confusion,
    metrics,
    roc_auc,
    select_threshold,
    stratified_kfold,
)
from .neural_trees import DEFAULT_HYPERPARAMS, fit_forest, predict_proba
from .smote import smote_resample
from .tuning import SearchSpace, optimize

log = logging.getLogger(__name__)

REPORT_VERSION = 1
CLASSIFIERS = ("dndt", "dndf")
HP_SOURCES = ("defaults", "bayesian")

# strategy -> (use_rfecv, hp_source, use_smote, use_threshold_moving)
STRATEGY_FLAGS = {
    1: (False, "defaults", False, False),
    2: (False, "defaults", False, True),
    3: (True, "defaults", False, True),
    4: (True, "bayesian", False, True),
    5: (True, "bayesian", True, True),
}
# strategy 5 without feature selection, used for cross-dataset and combined runs
NO_RFECV_FLAGS = (False, "bayesian", True, True)


@dataclass(frozen=True)
class StrategyConfig:
    strategy: int
    classifier: str
    use_rfecv: bool
    hp_source: str
    use_smote: bool
    use_threshold_moving: bool
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGY_FLAGS:
            raise ConfigurationError(f"strategy must be 1-5, got {self.strategy!r}")
        if self.classifier not in CLASSIFIERS:
            raise ConfigurationError(f"classifier must be one of {CLASSIFIERS}")
        if self.hp_source not in HP_SOURCES:
            raise ConfigurationError(f"hp_source must be one of {HP_SOURCES}")
        flags = (self.use_rfecv, self.hp_source, self.use_smote, self.use_threshold_moving)
        allowed = STRATEGY_FLAGS[self.strategy]
        if flags != allowed and not (self.strategy == 5 and flags == NO_RFECV_FLAGS):
            raise ConfigurationError(
                f"flags {flags} do not match strategy {self.strategy} {allowed}"
            )

    @classmethod
    def for_strategy(cls, strategy, classifier="dndf", seed=0):
        if strategy not in STRATEGY_FLAGS:
            raise ConfigurationError(f"strategy must be 1-5, got {strategy!r}")
        return cls(strategy, classifier, *STRATEGY_FLAGS[strategy], seed=seed)

    @classmethod
    def without_rfecv(cls, classifier="dndf", seed=0):
        """Strategy 5 with feature selection disabled."""
        return cls(5, classifier, *NO_RFECV_FLAGS, seed=seed)

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class PipelineOptions:
    """Knobs that are not part of a strategy's identity.

    ``global_selection`` runs feature selection and tuning once on the whole
    dataset instead of inside every outer training fold (this leaks test
    rows into those stages and exists only for comparison).
    """

    folds: int = 10
    bo_budget: int = 30
    bo_inner_folds: int = 10
    search_space: SearchSpace = field(default_factory=SearchSpace)
    rfecv_folds: int = 5
    rfecv_step: int = 1
    rfecv_trees: int = 100
    smote_k: int = 5
    global_selection: bool = False
    n_jobs: int = 1

    def __post_init__(self):
        if self.folds < 2 or self.bo_inner_folds < 2 or self.rfecv_folds < 2:
            raise ConfigurationError("fold counts must be >= 2")
        if self.n_jobs < 1:
            raise ConfigurationError("n_jobs must be >= 1")

    def as_dict(self):
        d = asdict(self)
        d["search_space"] = self.search_space.as_dict()
        return d


@dataclass
class RunReport:
    datasets: list
    config: dict
    options: dict
    confusion: dict
    metrics: dict
    fold_mean_metrics: dict
    folds: list
    seeds: dict
    artifacts: dict = field(default_factory=dict)
    timestamp: str = ""
    version: int = REPORT_VERSION

    def to_dict(self):
        return asdict(self)

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    def write(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


# --------------------------------------------------------------------------
# pipeline stages


class _Standardizer:
    def __init__(self, X):
        self.mean = X.mean(axis=0)
        std = X.std(axis=0)
        self.std = np.where(std > 0, std, 1.0)

    def __call__(self, X):
        return (X - self.mean) / self.std


def _effective_hp(hp, classifier):
    return replace(hp, num_trees=1) if classifier == "dndt" else hp


def _effective_space(space, classifier):
    return replace(space, num_trees=(1, 1)) if classifier == "dndt" else space


def _fit_scores(X_train, y_train, X_eval, hp, use_smote, smote_k, seed):
    """Standardize, optionally balance, train; scores for the original training rows and ``X_eval``."""
    smote_seed, train_seed = derive_seeds(seed, 2)
    scale = _Standardizer(X_train)
    Xs = scale(X_train)
    if use_smote:
        res = smote_resample(Xs, y_train, k=smote_k, seed=smote_seed)
        X_fit, y_fit = res.rows, res.labels
    else:
        X_fit, y_fit = Xs, y_train
    model, _ = fit_forest(X_fit, y_fit, hp, seed=train_seed)
    return predict_proba(model, Xs), predict_proba(model, scale(X_eval))


def cv_objective(X, y, classifier, use_smote, folds, smote_k, seed):
    """Mean stratified k-fold ROC-AUC of the classifier; returns ``f(hp, trial_seed)``."""
    plan = stratified_kfold(y, folds, seed)
    splits = list(plan.splits())

    def objective(hp, trial_seed):
        hp = _effective_hp(hp, classifier)
        aucs = []
        for (tr, te), s in zip(splits, derive_seeds(trial_seed, len(splits))):
            _, scores = _fit_scores(X[tr], y[tr], X[te], hp, use_smote, smote_k, s)
            aucs.append(roc_auc(y[te], scores))
        return float(np.mean(aucs))

    return objective


def _select_features(X, y, cfg, opts, seed):
    if not cfg.use_rfecv:
        return tuple(range(X.shape[1])), None
    sel = rfecv(X, y, folds=opts.rfecv_folds, step=opts.rfecv_step, seed=seed,
                n_estimators=opts.rfecv_trees)
    return sel.selected, sel


def _choose_hp(X, y, cfg, opts, seed):
    if cfg.hp_source == "defaults":
        return _effective_hp(DEFAULT_HYPERPARAMS, cfg.classifier), None
    obj_seed, bo_seed = derive_seeds(seed, 2)
    objective = cv_objective(X, y, cfg.classifier, cfg.use_smote, opts.bo_inner_folds,
                             opts.smote_k, obj_seed)
    result = optimize(_effective_space(opts.search_space, cfg.classifier), objective,
                      budget=opts.bo_budget, seed=bo_seed)
    return _effective_hp(result.best, cfg.classifier), result


def _stage_seeds(seed, *context):
    names = ("rfecv", "tuning", "training")
    return dict(zip(names, derive_seeds(seed, len(names), *context)))


def _fit_selection_and_hp(X, y, cfg, opts, seeds, trace=None, row_ids=None):
    if trace is not None and cfg.use_rfecv:
        trace("rfecv", row_ids)
    features, sel = _select_features(X, y, cfg, opts, seeds["rfecv"])
    if trace is not None and cfg.hp_source == "bayesian":
        trace("tuning", row_ids)
    hp, bo = _choose_hp(X[:, list(features)], y, cfg, opts, seeds["tuning"])
    extra = {}
    if sel is not None:
        extra["rfecv_cv_scores"] = list(sel.cv_scores)
    if bo is not None:
        extra["bo_best_score"] = bo.best_score
        extra["bo_failed_trials"] = sum(t.failed for t in bo.trials)
    return features, hp, extra


def _train_and_evaluate(X_tr, y_tr, X_te, y_te, features, hp, cfg, opts, seed,
                        trace=None, train_ids=None):
    cols = list(features)
    if trace is not None:
        if cfg.use_smote:
            trace("smote", train_ids)
        if cfg.use_threshold_moving:
            trace("threshold", train_ids)
    train_scores, scores = _fit_scores(X_tr[:, cols], y_tr, X_te[:, cols], hp,
                                       cfg.use_smote, opts.smote_k, seed)
    threshold = select_threshold(y_tr, train_scores) if cfg.use_threshold_moving else 0.5
    cm = confusion(y_te, scores >= threshold)
    return scores, threshold, cm


def _fold_metrics(cm, y, scores, threshold):
    m = metrics(cm, threshold=threshold)
    if 0 < y.sum() < y.size:
        m = replace(m, roc_auc=roc_auc(y, scores))
    return m


def _run_fold(X, y, ids, train, test, fold, cfg, opts, shared, trace=None):
    seeds = _stage_seeds(cfg.seed, fold + 1)
    if shared is None:
        features, hp, extra = _fit_selection_and_hp(
            X[train], y[train], cfg, opts, seeds, trace, [ids[i] for i in train])
    else:
        features, hp, extra = shared
    scores, threshold, cm = _train_and_evaluate(
        X[train], y[train], X[test], y[test], features, hp, cfg, opts, seeds["training"],
        trace, [ids[i] for i in train])
    m = _fold_metrics(cm, y[test], scores, threshold)
    return {
        "fold": fold,
        "n_train": int(train.size),
        "n_test": int(test.size),
        "seeds": seeds,
        "selected_features": [int(f) for f in features],
        "hyperparams": hp.as_dict(),
        "threshold": threshold,
        "confusion": cm.as_dict(),
        "metrics": m.as_dict(),
        "details": extra,
    }, scores


def _run_fold_star(args):
    return _run_fold(*args)


def _mean_metrics(fold_records):
    keys = ("accuracy", "precision", "recall", "specificity", "f1", "roc_auc", "threshold")
    out = {}
    for k in keys:
        vals = [f["metrics"][k] for f in fold_records if f["metrics"][k] is not None]
        out[k] = float(np.mean(vals)) if vals else None
    return out


def _timestamp():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run_strategy(features, cfg, options=None, trace=None):
    """Outer stratified k-fold evaluation of ``cfg`` on a feature matrix.

    ``trace(stage, clip_ids)``, when given, is called with the rows that
    reach feature selection, tuning, SMOTE and threshold selection; it forces
    serial execution.
    """
    if not isinstance(cfg, StrategyConfig):
        raise ConfigurationError("cfg must be a StrategyConfig")
    opts = options or PipelineOptions()
    X, y, ids = features.rows, features.labels, features.clip_ids
    plan = stratified_kfold(y, opts.folds, cfg.seed)
    splits = list(plan.splits())

    shared = None
    if opts.global_selection:
        shared = _fit_selection_and_hp(X, y, cfg, opts, _stage_seeds(cfg.seed, 0),
                                       trace, list(ids))
    jobs = [(X, y, ids, tr, te, i, cfg, opts, shared) for i, (tr, te) in enumerate(splits)]
    if trace is None and opts.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=opts.n_jobs) as pool:
            results = list(pool.map(_run_fold_star, jobs))
    else:
        results = [_run_fold(*job, trace=trace) for job in jobs]

    fold_records = [r for r, _ in results]
    pooled_scores = np.zeros(len(y))
    for (_, te), (_, scores) in zip(splits, results):
        pooled_scores[te] = scores
    cm = sum((ConfusionMatrix(**f["confusion"]) for f in fold_records), ConfusionMatrix(0, 0, 0, 0))
    thresholds = [f["threshold"] for f in fold_records]
    pooled = replace(metrics(cm, threshold=float(np.mean(thresholds))),
                     roc_auc=roc_auc(y, pooled_scores))
    artifacts = {"pooled_scores": [float(s) for s in pooled_scores],
                 "fold_assignments": [int(a) for a in plan.assignments],
                 "thresholds": thresholds}
    if shared is not None:
        artifacts["selected_features"] = [int(f) for f in shared[0]]
        artifacts["hyperparams"] = shared[1].as_dict()
    return RunReport(
        datasets=sorted(set(features.groups.tolist())),
        config=cfg.as_dict(),
        options=opts.as_dict(),
        confusion=cm.as_dict(),
        metrics=pooled.as_dict(),
        fold_mean_metrics=_mean_metrics(fold_records),
        folds=fold_records,
        seeds={"strategy": cfg.seed, "fold_plan": cfg.seed},
        artifacts=artifacts,
        timestamp=_timestamp(),
    )


def run_cross_dataset(train_features, test_features, cfg, options=None):
    """Tune and train on one dataset, evaluate once on another."""
    if cfg.use_rfecv:
        raise ConfigurationError("cross-dataset runs do not use feature selection")
    overlap = set(train_features.clip_ids) & set(test_features.clip_ids)
    if overlap:
        sample = ", ".join(sorted(overlap)[:5])
        raise IntegrityError(f"{len(overlap)} clip ids appear in both train and test: {sample}")
    opts = options or PipelineOptions()
    seeds = _stage_seeds(cfg.seed, 0)
    X, y = train_features.rows, train_features.labels
    features, hp, extra = _fit_selection_and_hp(X, y, cfg, opts, seeds)
    scores, threshold, cm = _train_and_evaluate(
        X, y, test_features.rows, test_features.labels, features, hp, cfg, opts,
        seeds["training"])
    m = _fold_metrics(cm, test_features.labels, scores, threshold).as_dict()
    return RunReport(
        datasets=[sorted(set(train_features.groups.tolist())),
                  sorted(set(test_features.groups.tolist()))],
        config=cfg.as_dict(),
        options=opts.as_dict(),
        confusion=cm.as_dict(),
        metrics=m,
        fold_mean_metrics=dict(m),
        folds=[],
        seeds={"strategy": cfg.seed, **seeds},
        artifacts={"hyperparams": hp.as_dict(), "threshold": threshold,
                   "selected_features": [int(f) for f in features], **extra,
                   "scores": [float(s) for s in scores]},
        timestamp=_timestamp(),
    )


def evaluate_combined(features, cfg, options=None, trace=None):
    """Cross-validated run on an already materialized combined matrix."""
    if cfg.use_rfecv:
        raise ConfigurationError("the combined protocol does not use feature selection")
    return run_strategy(features, cfg, options, trace)


def run_combined(manifests, cfg, options=None, cache_path=None):
    """Merge manifests, extract features and evaluate the combined dataset."""
    if cfg.use_rfecv:
        raise ConfigurationError("the combined protocol does not use feature selection")
    records = build_combined(manifests)
    n_jobs = options.n_jobs if options is not None else 1
    matrix = materialize(records, cache_path, n_jobs=n_jobs)
    return evaluate_combined(matrix, cfg, options)


def strip_volatile(report_dict):
    """Copy of a report dict without fields that legitimately differ between runs."""
    d = dict(report_dict)
    d.pop("timestamp", None)
    return d

