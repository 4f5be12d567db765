"""SMOTE over-sampling of the minority class."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InsufficientMinorityError

DEFAULT_K = 5


@dataclass(frozen=True, eq=False)
class ResampledSet:
    rows: np.ndarray
    labels: np.ndarray
    synthetic_mask: np.ndarray
    # for synthetic rows: (base row, neighbour row, lambda); -1 / nan for originals
    base_index: np.ndarray = None
    neighbor_index: np.ndarray = None
    lam: np.ndarray = None

    @property
    def n_synthetic(self):
        return int(self.synthetic_mask.sum())


def nearest_neighbors(X, k):
    """Indices of the ``k`` nearest other rows of ``X`` (Euclidean; ties by index)."""
    sq = np.einsum("ij,ij->i", X, X)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


def smote_resample(X, y, k=DEFAULT_K, seed=0):
    """Balance a binary dataset by interpolating minority rows.

    Minority rows are used round-robin as bases; each synthetic row is
    ``x_i + lam * (x_nn - x_i)`` with ``x_nn`` drawn uniformly from the base's
    ``k`` nearest minority neighbours and ``lam ~ U[0, 1]``. Originals come
    first in the output, unmodified, followed by the synthetic rows.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ConfigurationError(f"X {X.shape} and y {y.shape} do not align")
    if k < 1:
        raise ConfigurationError("k must be >= 1")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    n_orig = y.size
    if n_pos == n_neg:
        return ResampledSet(X.copy(), y.copy(), np.zeros(n_orig, dtype=bool),
                            np.full(n_orig, -1), np.full(n_orig, -1), np.full(n_orig, np.nan))
    minority = 1 if n_pos < n_neg else 0
    members = np.flatnonzero(y == minority)
    if members.size <= k:
        raise InsufficientMinorityError(
            f"minority class has {members.size} rows; need more than k={k}"
        )
    n_new = abs(n_pos - n_neg)
    neighbors = nearest_neighbors(X[members], k)

    rng = np.random.default_rng(seed)
    base = np.arange(n_new) % members.size
    pick = rng.integers(0, k, size=n_new)
    lam = rng.random(n_new)
    nn = neighbors[base, pick]
    xb = X[members[base]]
    synthetic = xb + lam[:, None] * (X[members[nn]] - xb)

    return ResampledSet(
        rows=np.vstack([X, synthetic]),
        labels=np.concatenate([y, np.full(n_new, minority, dtype=np.int64)]),
        synthetic_mask=np.concatenate([np.zeros(n_orig, dtype=bool), np.ones(n_new, dtype=bool)]),
        base_index=np.concatenate([np.full(n_orig, -1), members[base]]),
        neighbor_index=np.concatenate([np.full(n_orig, -1), members[nn]]),
        lam=np.concatenate([np.full(n_orig, np.nan), lam]),
    )
