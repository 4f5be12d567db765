"""Classification metrics, ROC-AUC, stratified folds and threshold moving."""

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigurationError, DegenerateTargetError, StratificationError

THRESHOLD_GRID = np.arange(100, 1001) / 1000.0  # 0.100, 0.101, ..., 1.000


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other):
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)

    def as_dict(self):
        return asdict(self)


def confusion(y_true, y_pred):
    """Confusion counts with label 1 (COVID-19) as the positive class."""
    y_true = np.asarray(y_true).astype(bool)
    y_pred = np.asarray(y_pred).astype(bool)
    if y_true.shape != y_pred.shape:
        raise ConfigurationError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    return ConfusionMatrix(
        tp=int(np.sum(y_true & y_pred)),
        fp=int(np.sum(~y_true & y_pred)),
        tn=int(np.sum(~y_true & ~y_pred)),
        fn=int(np.sum(y_true & ~y_pred)),
    )


@dataclass(frozen=True)
class EvalMetrics:
    accuracy: float
    precision: float
    recall: float
    specificity: float
    f1: float
    roc_auc: float | None
    threshold: float
    degenerate: tuple = field(default=())

    def as_dict(self):
        d = asdict(self)
        d["degenerate"] = list(self.degenerate)
        return d


def _ratio(num, den, name, flags):
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def metrics(cm, scores=None, y_true=None, threshold=0.5):
    """Accuracy, precision, recall, specificity, F1 (and ROC-AUC when scores are given).

    A zero denominator yields 0 and adds the metric's name to ``degenerate``.
    """
    if cm.total <= 0:
        raise ConfigurationError("confusion matrix is empty")
    flags = []
    accuracy = (cm.tp + cm.tn) / cm.total
    precision = _ratio(cm.tp, cm.tp + cm.fp, "precision", flags)
    recall = _ratio(cm.tp, cm.tp + cm.fn, "recall", flags)
    specificity = _ratio(cm.tn, cm.tn + cm.fp, "specificity", flags)
    f1 = _ratio(2.0 * precision * recall, precision + recall, "f1", flags)
    auc = None
    if scores is not None:
        auc = roc_auc(y_true, scores)
    return EvalMetrics(accuracy, precision, recall, specificity, f1, auc,
                       float(threshold), tuple(flags))


def tpr_fpr(cm):
    return cm.tp / (cm.tp + cm.fn), cm.fp / (cm.fp + cm.tn)


def roc_auc(y_true, scores):
    """Mann-Whitney estimate: P(score_pos > score_neg) with ties counted 1/2."""
    y = np.asarray(y_true).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape:
        raise ConfigurationError(f"length mismatch: {y.shape} vs {s.shape}")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateTargetError("ROC-AUC undefined with a single class")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _grid_counts(y_true, scores, grid):
    y = np.asarray(y_true).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    pos = np.sort(s[y])
    neg = np.sort(s[~y])
    if pos.size == 0 or neg.size == 0:
        raise DegenerateTargetError("threshold undefined with a single class")
    tp = pos.size - np.searchsorted(pos, grid, side="left")
    fp = neg.size - np.searchsorted(neg, grid, side="left")
    return tp, fp, pos.size, neg.size


def youden_curve(y_true, scores, grid=THRESHOLD_GRID):
    """TPR(t) - FPR(t) for every threshold in ``grid`` (positive iff score >= t)."""
    tp, fp, n_pos, n_neg = _grid_counts(y_true, scores, grid)
    return tp / n_pos - fp / n_neg


def select_threshold(y_true, scores, grid=THRESHOLD_GRID):
    """Smallest grid threshold maximizing Youden's J."""
    tp, fp, n_pos, n_neg = _grid_counts(y_true, scores, grid)
    # integer numerator of J: equal J values compare equal, so ties go to the smallest t
    return float(grid[int(np.argmax(tp * n_neg - fp * n_pos))])


@dataclass(frozen=True, eq=False)
class FoldPlan:
    k: int
    assignments: np.ndarray
    seed: int

    def splits(self):
        """Yield ``(train_index, test_index)`` for each fold."""
        for fold in range(self.k):
            test = self.assignments == fold
            yield np.flatnonzero(~test), np.flatnonzero(test)

    def fold_counts(self, y):
        y = np.asarray(y)
        return [(int(np.sum(y[self.assignments == f] == 1)),
                 int(np.sum(y[self.assignments == f] == 0))) for f in range(self.k)]


def stratified_kfold(y, k, seed=0):
    """Shuffle each class by ``seed`` and deal it round-robin into ``k`` folds.

    Dealing continues across classes (the second class starts where the
    first stopped) so fold sizes stay within one sample of each other.
    """
    y = np.asarray(y)
    k = int(k)
    if k < 2:
        raise StratificationError(f"need at least 2 folds, got {k}")
    rng = np.random.default_rng(seed)
    assignments = np.empty(y.size, dtype=np.int64)
    offset = 0
    for cls in np.unique(y):
        members = np.flatnonzero(y == cls)
        if members.size < k:
            raise StratificationError(
                f"class {cls!r} has {members.size} members, fewer than {k} folds"
            )
        members = rng.permutation(members)
        assignments[members] = (offset + np.arange(members.size)) % k
        offset = (offset + members.size) % k
    return FoldPlan(k, assignments, seed)
