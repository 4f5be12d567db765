"""Extra-Trees classifier and recursive feature elimination with CV."""

from dataclasses import dataclass, field
import json
import math

import numpy as np

from ._tree_kernels import LEAF, apply_tree, grow_tree
from .errors import (
    ConfigurationError,
    DegenerateTargetError,
    InvalidSignalError,
    NotFittedError,
)
from .evaluation import roc_auc, stratified_kfold


def derive_seeds(seed, n, *context):
    """``n`` independent 64-bit seeds from ``seed`` and optional context integers."""
    # context goes in spawn_key: a trailing 0 in the entropy list would be ignored
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF,
                                spawn_key=tuple(int(c) for c in context))
    return [int(s) for s in ss.generate_state(n, dtype=np.uint64)]


@dataclass(frozen=True, eq=False)
class DecisionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    gain: np.ndarray

    @property
    def n_nodes(self):
        return self.feature.size

    def apply(self, X):
        return apply_tree(X, self.feature, self.threshold, self.left, self.right)

    def predict_proba(self, X):
        return self.value[self.apply(X)]

    def importances(self, n_features):
        """Gini decrease per feature, normalized to sum 1 (zeros for a lone leaf)."""
        internal = self.feature != LEAF
        imp = np.bincount(self.feature[internal], weights=self.gain[internal],
                          minlength=n_features).astype(np.float64)
        total = imp.sum()
        return imp / total if total > 0 else imp


class ExtraTreesClassifier:
    """Binary extremely-randomized trees.

    Every tree sees all training rows (no bootstrap). At each node
    ``max_features`` non-constant features are drawn in random order, each
    gets a threshold uniform between its node minimum and maximum, and the
    candidate with the largest Gini decrease wins. Trees grow until leaves
    are pure.
    """

    def __init__(self, n_estimators=100, max_features="sqrt", max_depth=None, seed=0):
        if n_estimators < 1:
            raise ConfigurationError("n_estimators must be >= 1")
        self.n_estimators = int(n_estimators)
        self.max_features = max_features
        self.max_depth = max_depth
        self.seed = int(seed)
        self.trees_ = None
        self.n_features_ = None

    def _resolve_max_features(self, n_features):
        mf = self.max_features
        if mf == "sqrt":
            return max(1, math.ceil(math.sqrt(n_features)))
        if mf is None:
            return n_features
        if isinstance(mf, float) and 0 < mf <= 1:
            return max(1, math.ceil(mf * n_features))
        mf = int(mf)
        if mf < 1:
            raise ConfigurationError("max_features must be >= 1")
        return min(mf, n_features)

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ConfigurationError(f"X {X.shape} and y {y.shape} do not align")
        if not np.all(np.isfinite(X)):
            raise InvalidSignalError("X contains non-finite values")
        classes = np.unique(y)
        if classes.size < 2:
            raise DegenerateTargetError("extra-trees needs two classes in y")
        if not set(classes.tolist()) <= {0, 1}:
            raise ConfigurationError("labels must be 0/1")
        y = y.astype(np.int64)
        mf = self._resolve_max_features(X.shape[1])
        depth = -1 if self.max_depth is None else int(self.max_depth)
        self.trees_ = [DecisionTree(*grow_tree(X, y, mf, s, depth))
                       for s in derive_seeds(self.seed, self.n_estimators)]
        self.n_features_ = X.shape[1]
        return self

    def _check(self, X=None):
        if self.trees_ is None:
            raise NotFittedError("ExtraTreesClassifier is not fitted")
        if X is not None:
            X = np.asarray(X, dtype=np.float64)
            if X.ndim != 2 or X.shape[1] != self.n_features_:
                raise ConfigurationError(f"expected {self.n_features_} features, got {X.shape}")
            return X

    def predict_proba(self, X):
        """Probability of class 1 per row (mean of leaf class fractions)."""
        X = self._check(X)
        out = np.zeros(X.shape[0])
        for tree in self.trees_:
            out += tree.predict_proba(X)
        return out / len(self.trees_)

    def predict(self, X):
        return (self.predict_proba(X) > 0.5).astype(np.int64)

    @property
    def feature_importances_(self):
        self._check()
        imp = np.mean([t.importances(self.n_features_) for t in self.trees_], axis=0)
        total = imp.sum()
        if total > 0:
            return imp / total
        return np.full(self.n_features_, 1.0 / self.n_features_)


def fit_extra_trees(X, y, n_estimators=100, max_features="sqrt", seed=0):
    return ExtraTreesClassifier(n_estimators, max_features, seed=seed).fit(X, y)


def feature_importances(model):
    if not isinstance(model, ExtraTreesClassifier):
        raise ConfigurationError("expected an ExtraTreesClassifier")
    return model.feature_importances_


@dataclass(frozen=True)
class FeatureSelection:
    selected: tuple
    cv_scores: tuple
    n_features: tuple = field(default=())  # feature count behind each cv score

    @property
    def n_selected(self):
        return len(self.selected)

    def to_json(self):
        return json.dumps({"selected": list(self.selected), "cv_scores": list(self.cv_scores),
                           "n_features": list(self.n_features)})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(tuple(int(i) for i in d["selected"]),
                   tuple(float(s) for s in d["cv_scores"]),
                   tuple(int(n) for n in d.get("n_features", ())))


def rfecv(X, y, folds=5, step=1, seed=0, n_estimators=100, min_features=1):
    """Recursive feature elimination scored by stratified-CV ROC-AUC.

    Starting from all features: score the current set by mean fold AUC, fit
    on all rows, drop the ``step`` least important features, repeat down to
    ``min_features``. Returns the best-scoring set; ties go to the smaller set.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if folds < 2:
        raise ConfigurationError("folds must be >= 2")
    if step < 1:
        raise ConfigurationError("step must be >= 1")
    if not 1 <= min_features <= X.shape[1]:
        raise ConfigurationError("min_features out of range")
    plan = stratified_kfold(y, folds, seed)
    splits = list(plan.splits())

    current = np.arange(X.shape[1])
    history = []
    round_no = 0
    while True:
        Xc = X[:, current]
        fold_seeds = derive_seeds(seed, folds + 1, round_no)
        scores = []
        for (train, test), s in zip(splits, fold_seeds):
            model = ExtraTreesClassifier(n_estimators, seed=s).fit(Xc[train], y[train])
            scores.append(roc_auc(y[test], model.predict_proba(Xc[test])))
        history.append((current.copy(), float(np.mean(scores))))
        if current.size <= min_features:
            break
        full = ExtraTreesClassifier(n_estimators, seed=fold_seeds[-1]).fit(Xc, y)
        order = np.argsort(full.feature_importances_, kind="stable")
        n_drop = min(step, current.size - min_features)
        current = np.sort(current[np.sort(order[n_drop:])])
        round_no += 1

    best_score = max(score for _, score in history)
    # history runs from most to fewest features: the last maximum is the smallest set
    best = [feats for feats, score in history if score == best_score][-1]
    return FeatureSelection(
        selected=tuple(int(i) for i in best),
        cv_scores=tuple(score for _, score in history),
        n_features=tuple(int(feats.size) for feats, _ in history),
    )
